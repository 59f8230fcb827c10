//! Regeneration levels and times of a finite trajectory, and the block
//! variables they cut the trajectory into.
//!
//! A level `k` first reached at `T_k` at vertex `y = X_{T_k}` qualifies
//!
//! * in [`RegenMode::Literal`] mode if no later step enters `y` from one of
//!   its children (`R(y)` beyond the horizon);
//! * in [`RegenMode::Strict`] mode if the walk never visits level `k` again
//!   after `T_k`, so it stays strictly inside the subtree of `y`.
//!
//! Strict levels are always literal levels. Because the horizon is finite, a
//! qualifying level is only *confirmed* once the walk has climbed `delta`
//! further levels; later qualifying levels are reported but unconfirmed.

use crate::error::{Error, Result};
use crate::walk::{Trajectory, VisitTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegenMode {
    Literal,
    #[default]
    Strict,
}

impl RegenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RegenMode::Literal => "literal",
            RegenMode::Strict => "strict",
        }
    }
}

pub const DEFAULT_DELTA: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegenEntry {
    /// 1-based index among qualifying levels.
    pub index: usize,
    pub tau: usize,
    pub level: usize,
    /// Type of `X_tau`.
    pub kind: u8,
    pub confirmed: bool,
}

/// One regeneration block `[tau_{i-1}, tau_i)`; block 1 starts at time 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub index: usize,
    pub tau: usize,
    pub level: usize,
    /// Type of the vertex at the closing regeneration time.
    pub kind: u8,
    /// Time increment.
    pub y: usize,
    /// Level increment.
    pub z: usize,
    /// Visits to the block's first vertex within the block.
    pub l_block: usize,
    /// Distinct vertices visited within the block.
    pub d_block: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationRecord {
    pub mode: RegenMode,
    pub delta: usize,
    pub start_level: usize,
    pub entries: Vec<RegenEntry>,
    /// One block per confirmed entry, in order.
    pub blocks: Vec<Block>,
}

impl RegenerationRecord {
    pub fn confirmed(&self) -> impl Iterator<Item = &RegenEntry> {
        self.entries.iter().filter(|e| e.confirmed)
    }

    pub fn first_confirmed(&self) -> Option<&RegenEntry> {
        self.confirmed().next()
    }

    /// Blocks fed to the estimators. Block 1 runs from time 0 and may have a
    /// different law from the rest, so it is opt-in.
    pub fn estimator_blocks(&self, include_first: bool) -> &[Block] {
        if include_first || self.blocks.is_empty() {
            &self.blocks
        } else {
            &self.blocks[1..]
        }
    }

    /// Confirmed regeneration levels.
    pub fn levels(&self) -> Vec<usize> {
        self.confirmed().map(|e| e.level).collect()
    }
}

pub fn detect_regenerations(traj: &Trajectory, mode: RegenMode, delta: usize) -> Result<RegenerationRecord> {
    detect_on_tree(&VisitTree::build(traj), mode, delta)
}

pub fn detect_on_tree(tree: &VisitTree, mode: RegenMode, delta: usize) -> Result<RegenerationRecord> {
    if delta < 1 {
        return Err(Error::InvalidMargin(delta));
    }
    let n = tree.at.len() - 1;
    let levels: Vec<usize> = (0..=n).map(|t| tree.level_at(t)).collect();
    let start_level = levels[0];
    let max_level = *levels.iter().max().unwrap();

    // first_hit[k - start_level - 1] = T_k
    let mut first_hit = vec![usize::MAX; max_level - start_level];
    for (t, &l) in levels.iter().enumerate() {
        if l > start_level && first_hit[l - start_level - 1] == usize::MAX {
            first_hit[l - start_level - 1] = t;
        }
    }

    let qualifies: Box<dyn Fn(usize, usize) -> bool> = match mode {
        RegenMode::Strict => {
            // suffix_min[t] = min level over [t, n]
            let mut suffix_min = levels.clone();
            for t in (0..n).rev() {
                suffix_min[t] = suffix_min[t].min(suffix_min[t + 1]);
            }
            Box::new(move |k, t| t == n || suffix_min[t + 1] > k)
        }
        RegenMode::Literal => {
            let mut entered_from_child = vec![false; tree.nodes.len()];
            for t in 1..=n {
                if levels[t - 1] == levels[t] + 1 {
                    entered_from_child[tree.at[t] as usize] = true;
                }
            }
            let at = tree.at.clone();
            Box::new(move |_, t| !entered_from_child[at[t] as usize])
        }
    };

    let mut entries = Vec::new();
    for (off, &t) in first_hit.iter().enumerate() {
        let k = start_level + off + 1;
        if qualifies(k, t) {
            entries.push(RegenEntry {
                index: entries.len() + 1,
                tau: t,
                level: k,
                kind: tree.nodes[tree.at[t] as usize].kind.expect("level >= 1"),
                confirmed: k + delta <= max_level,
            });
        }
    }

    let blocks = cut_blocks(tree, start_level, &entries);
    Ok(RegenerationRecord {
        mode,
        delta,
        start_level,
        entries,
        blocks,
    })
}

fn cut_blocks(tree: &VisitTree, start_level: usize, entries: &[RegenEntry]) -> Vec<Block> {
    let mut stamp = vec![0usize; tree.nodes.len()];
    let mut blocks = Vec::new();
    let (mut t0, mut l0) = (0usize, start_level);
    for (j, e) in entries.iter().filter(|e| e.confirmed).enumerate() {
        let mark = j + 1;
        let first = tree.at[t0];
        let (mut visits, mut distinct) = (0, 0);
        for &node in &tree.at[t0..e.tau] {
            visits += usize::from(node == first);
            if stamp[node as usize] != mark {
                stamp[node as usize] = mark;
                distinct += 1;
            }
        }
        blocks.push(Block {
            index: mark,
            tau: e.tau,
            level: e.level,
            kind: e.kind,
            y: e.tau - t0,
            z: e.level - l0,
            l_block: visits,
            d_block: distinct,
        });
        t0 = e.tau;
        l0 = e.level;
    }
    blocks
}

/// Per-block rows with the typed sums `sum_i Y_i(s)`, `sum_i Z_i(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTable {
    pub degree: usize,
    pub rows: Vec<Block>,
}

impl BlockTable {
    /// `(sum Y_i(s), sum Z_i(s))` for each type `s`.
    pub fn typed_sums(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.degree];
        for b in &self.rows {
            out[b.kind as usize].0 += b.y;
            out[b.kind as usize].1 += b.z;
        }
        out
    }
}

pub fn block_statistics(rec: &RegenerationRecord, degree: usize, include_first: bool) -> Result<BlockTable> {
    let have = rec.confirmed().count();
    if have < 2 {
        return Err(Error::InsufficientBlocks { have, need: 2 });
    }
    Ok(BlockTable {
        degree,
        rows: rec.estimator_blocks(include_first).to_vec(),
    })
}

/// Occupation statistics: visits to the start and distinct vertices before
/// the first regeneration time.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    /// `L(X_0)` over the whole horizon.
    pub visits_to_start: usize,
    /// Distinct vertices visited strictly before `tau_1`.
    pub distinct_before_tau1: usize,
    pub tau1: usize,
    pub l1: usize,
    /// `(L_block, D_block)` per confirmed block.
    pub per_block: Vec<(usize, usize)>,
}

pub fn occupation_stats(tree: &VisitTree, rec: &RegenerationRecord) -> Result<Occupation> {
    let first = rec
        .first_confirmed()
        .ok_or(Error::InsufficientBlocks { have: 0, need: 1 })?;
    let start = tree.at[0];
    let visits_to_start = tree.at.iter().filter(|&&a| a == start).count();
    Ok(Occupation {
        visits_to_start,
        distinct_before_tau1: rec.blocks[0].d_block,
        tau1: first.tau,
        l1: first.level,
        per_block: rec.blocks.iter().map(|b| (b.l_block, b.d_block)).collect(),
    })
}
