//! Estimators built on regeneration blocks: speed, CLT variance, a
//! Kolmogorov normality check and the first-regeneration-level tail fit.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::regeneration::Block;

pub const MIN_SPEED_BLOCKS: usize = 30;
pub const MIN_CLT_BLOCKS: usize = 100;
pub const MIN_KS_SAMPLES: usize = 100;
pub const MIN_TAIL_SAMPLES: usize = 1000;
const Z95: f64 = 1.959963984540054;

/// Histogram of `(type, Y, Z)` over blocks. Every block estimator is a
/// function of this histogram, so merging is associative and the result
/// does not depend on block order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockSummary {
    counts: BTreeMap<(u8, usize, usize), u64>,
    degree: usize,
}

impl BlockSummary {
    pub fn new(degree: usize) -> Self {
        Self {
            counts: BTreeMap::new(),
            degree,
        }
    }

    pub fn from_blocks(degree: usize, blocks: &[Block]) -> Self {
        let mut s = Self::new(degree);
        s.extend(blocks);
        s
    }

    pub fn extend(&mut self, blocks: &[Block]) {
        for b in blocks {
            *self.counts.entry((b.kind, b.y, b.z)).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &BlockSummary) {
        for (k, c) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += c;
        }
    }

    pub fn len(&self) -> usize {
        self.counts.values().sum::<u64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `(sum Y, sum Z)`.
    pub fn totals(&self) -> (u128, u128) {
        self.counts.iter().fold((0, 0), |(sy, sz), (&(_, y, z), &c)| {
            (sy + c as u128 * y as u128, sz + c as u128 * z as u128)
        })
    }

    pub fn type_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.degree];
        for (&(k, _, _), &c) in &self.counts {
            out[k as usize] += c;
        }
        out
    }

    fn iter(&self) -> impl Iterator<Item = (u8, f64, f64, f64)> + '_ {
        self.counts
            .iter()
            .map(|(&(k, y, z), &c)| (k, y as f64, z as f64, c as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedMethod {
    Blocks,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub v_hat: f64,
    pub ci95: f64,
    /// Blocks (or trajectories, for the endpoint method) used.
    pub n: usize,
    pub method: SpeedMethod,
}

impl SpeedEstimate {
    pub fn excludes_zero(&self) -> bool {
        self.v_hat - self.ci95 > 0.0
    }
}

/// Ratio estimator `sum Z / sum Y` with a delta-method 95% interval.
pub fn estimate_speed(blocks: &BlockSummary) -> Result<SpeedEstimate> {
    let n = blocks.len();
    if n < MIN_SPEED_BLOCKS {
        return Err(Error::InsufficientBlocks {
            have: n,
            need: MIN_SPEED_BLOCKS,
        });
    }
    let (sy, sz) = blocks.totals();
    let v = sz as f64 / sy as f64;
    let nf = n as f64;
    let mean_y = sy as f64 / nf;
    let var_e = residual_variance(blocks, v);
    Ok(SpeedEstimate {
        v_hat: v,
        ci95: Z95 * (var_e / nf).sqrt() / mean_y,
        n,
        method: SpeedMethod::Blocks,
    })
}

/// Sample variance of `Z - v Y`.
fn residual_variance(blocks: &BlockSummary, v: f64) -> f64 {
    let nf = blocks.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (_, y, z, c) in blocks.iter() {
        let e = z - v * y;
        s1 += c * e;
        s2 += c * e * e;
    }
    ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0)
}

/// Mean of `|X_N| / N` over independent trajectories.
pub fn endpoint_speed(end_levels: &[usize], n_steps: usize) -> Result<SpeedEstimate> {
    let m = end_levels.len();
    if m < 2 || n_steps == 0 {
        return Err(Error::InvalidInput(
            "endpoint speed needs >= 2 trajectories of >= 1 step".into(),
        ));
    }
    let xs: Vec<f64> = end_levels.iter().map(|&l| l as f64 / n_steps as f64).collect();
    let (mean, var) = mean_var(&xs);
    Ok(SpeedEstimate {
        v_hat: mean,
        ci95: Z95 * (var / m as f64).sqrt(),
        n: m,
        method: SpeedMethod::Endpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltEstimate {
    pub sigma2_hat: f64,
    /// Standard error of `sigma2_hat` (delta method, `E tau` held fixed).
    pub sigma2_se: f64,
    /// `Var(Z - v Y) / E tau` computed without types.
    pub sigma2_untyped: f64,
    /// Sample covariance of the typed vectors `(W(s))_s`.
    pub sigma_matrix: Vec<Vec<f64>>,
    pub etau_hat: f64,
    pub n_blocks: usize,
    pub ks_distance: Option<f64>,
    pub sample_count: Option<usize>,
}

/// `sigma^2 = 1' Sigma 1 / E tau` from the typed block covariance, where
/// `W(s) = (Z - v Y) 1{type = s}`.
pub fn estimate_sigma2(blocks: &BlockSummary, v_hat: f64) -> Result<CltEstimate> {
    let n = blocks.len();
    if n < MIN_CLT_BLOCKS {
        return Err(Error::InsufficientBlocks {
            have: n,
            need: MIN_CLT_BLOCKS,
        });
    }
    if !(v_hat > 0.0 && v_hat <= 1.0) {
        return Err(Error::InvalidInput(format!("v_hat = {v_hat} is outside (0, 1]")));
    }
    let d = blocks.degree();
    let nf = n as f64;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s4 = 0.0;
    for (k, y, z, c) in blocks.iter() {
        let e = z - v_hat * y;
        s1[k as usize] += c * e;
        s2[k as usize] += c * e * e;
        s4 += c * e.powi(4);
    }
    let mut sigma = vec![vec![0.0; d]; d];
    for s in 0..d {
        for t in 0..d {
            let cross = if s == t { s2[s] } else { 0.0 };
            sigma[s][t] = (cross - s1[s] * s1[t] / nf) / (nf - 1.0);
        }
    }
    let (sy, _) = blocks.totals();
    let etau = sy as f64 / nf;
    let one_sigma_one: f64 = sigma.iter().flatten().sum();
    let var_e = residual_variance(blocks, v_hat);
    let mean_e2: f64 = s2.iter().sum::<f64>() / nf;
    let var_e2 = (s4 / nf - mean_e2 * mean_e2).max(0.0);
    Ok(CltEstimate {
        sigma2_hat: one_sigma_one / etau,
        sigma2_se: (var_e2 / nf).sqrt() / etau,
        sigma2_untyped: var_e / etau,
        sigma_matrix: sigma,
        etau_hat: etau,
        n_blocks: n,
        ks_distance: None,
        sample_count: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub distance: f64,
    pub threshold: f64,
    pub pass: bool,
    pub m: usize,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Asymptotic Kolmogorov critical value `c(alpha)`.
pub fn kolmogorov_critical(alpha: f64) -> f64 {
    const TABLE: [(f64, f64); 4] = [(0.10, 1.22), (0.05, 1.36), (0.025, 1.48), (0.01, 1.63)];
    TABLE
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, c)| c)
        .unwrap_or_else(|| (-(alpha / 2.0).ln() / 2.0).sqrt())
}

/// Slack applied to the critical value when the reference mean and
/// variance were estimated from data.
pub const ESTIMATED_PARAMS_SLACK: f64 = 1.2;

/// Kolmogorov distance between the samples standardised by `(mean0, var0)`
/// and the standard normal; passes iff `D <= c(alpha) / sqrt(m)` (times the
/// slack when `params_estimated`).
pub fn normality_check(samples: &[f64], mean0: f64, var0: f64, params_estimated: bool, alpha: f64) -> Result<KsResult> {
    if !(var0 > 0.0) {
        return Err(Error::InvalidInput(format!("var0 = {var0} must be positive")));
    }
    let m = samples.len();
    if m < MIN_KS_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "normality check needs >= {MIN_KS_SAMPLES} samples, got {m}"
        )));
    }
    let sd = var0.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean0) / sd).collect();
    z.sort_by(f64::total_cmp);
    let mf = m as f64;
    let distance = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            ((i + 1) as f64 / mf - f).max(f - i as f64 / mf)
        })
        .fold(0.0, f64::max);
    let slack = if params_estimated { ESTIMATED_PARAMS_SLACK } else { 1.0 };
    let threshold = slack * kolmogorov_critical(alpha) / mf.sqrt();
    Ok(KsResult {
        distance,
        threshold,
        pass: distance <= threshold,
        m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    /// Slope of log survival per level.
    pub slope: f64,
    pub slope_se: f64,
    /// `exp(slope * stride)`.
    pub gamma_hat: f64,
    pub stride: usize,
    /// `(n, P(l1 >= n * stride))` used in the fit.
    pub points: Vec<(usize, f64)>,
}

impl TailFit {
    pub fn negative_at(&self, z: f64) -> bool {
        self.slope + z * self.slope_se < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TailReport {
    Fit(TailFit),
    Degenerate(String),
}

/// Empirical `P(X >= k)` at every level `k` from 1 to the sample maximum.
pub fn survival_table(samples: &[usize]) -> Vec<(usize, f64)> {
    let max = samples.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; max + 2];
    for &s in samples {
        hist[s] += 1;
    }
    let n = samples.len() as f64;
    let mut above = samples.len();
    let mut out = Vec::with_capacity(max);
    for (k, &h) in hist.iter().enumerate().take(max + 1) {
        if k >= 1 {
            out.push((k, above as f64 / n));
        }
        above -= h;
    }
    out
}

/// Weighted least-squares slope of `log P(l1 >= n * stride)` against `n`,
/// over strides where the survival lies in `[20 / N, 1)`. Weights are the
/// inverse binomial variances of the log survival.
pub fn l1_tail_fit(samples: &[usize], stride: usize) -> Result<TailReport> {
    let n = samples.len();
    if n < MIN_TAIL_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "tail fit needs >= {MIN_TAIL_SAMPLES} samples, got {n}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return Ok(TailReport::Degenerate(format!(
            "all {n} samples equal {}",
            samples[0]
        )));
    }
    let nf = n as f64;
    let floor = 20.0 / nf;
    let max = *samples.iter().max().unwrap();
    let points: Vec<(usize, f64)> = (1..=max / stride)
        .map(|j| {
            let above = samples.iter().filter(|&&s| s >= j * stride).count();
            (j, above as f64 / nf)
        })
        .filter(|&(_, s)| s >= floor && s < 1.0)
        .collect();
    if points.len() < 2 {
        return Ok(TailReport::Degenerate(format!(
            "only {} survival point(s) in [20/N, 1)",
            points.len()
        )));
    }
    let w: Vec<f64> = points.iter().map(|&(_, s)| nf * s / (1.0 - s)).collect();
    let sw: f64 = w.iter().sum();
    let xbar = points.iter().zip(&w).map(|(&(j, _), w)| w * j as f64).sum::<f64>() / sw;
    let ybar = points.iter().zip(&w).map(|(&(_, s), w)| w * s.ln()).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(&(j, _), w)| w * (j as f64 - xbar).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(&w)
        .map(|(&(j, s), w)| w * (j as f64 - xbar) * (s.ln() - ybar))
        .sum();
    let per_stride = sxy / sxx;
    let se_stride = (1.0 / sxx).sqrt();
    Ok(TailReport::Fit(TailFit {
        slope: per_stride / stride as f64,
        slope_se: se_stride / stride as f64,
        gamma_hat: per_stride.exp(),
        stride,
        points,
    }))
}

/// `p`-th sample moment on the first half and on the full sample, with the
/// relative change between them.
pub fn moment_doubling(samples: &[f64], p: i32) -> (f64, f64, f64) {
    let moment = |xs: &[f64]| xs.iter().map(|x| x.powi(p)).sum::<f64>() / xs.len() as f64;
    let half = moment(&samples[..samples.len() / 2]);
    let full = moment(samples);
    (half, full, (full - half).abs() / full.abs().max(f64::MIN_POSITIVE))
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let (mean, _) = mean_var(xs);
    let den: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let num: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    num / den
}

/// Pearson chi-square statistic of observed counts against probabilities.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Two-sample chi-square homogeneity statistic over the same cells.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0)
        .map(|(&x, &y)| {
            let col = (x + y) as f64;
            let ea = col * na as f64 / n;
            let eb = col * nb as f64 / n;
            (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb
        })
        .sum()
}
