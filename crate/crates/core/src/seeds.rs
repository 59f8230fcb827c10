//! Keyed derivation of random streams.
//!
//! Every random quantity in a run is a pure function of the master seed and
//! a domain-separated index, so results never depend on scheduling.
//!
//! Vertex keys form a hash chain along the root-first letter sequence:
//! `key(e) = H(tag, seed)` and `key(s * x) = H(key(x), s)`. The chain is an
//! injective encoding of the length-prefixed word, and walks can extend or
//! truncate it in O(1) per step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::group::Vertex;

const ENV_ROOT_TAG: &[u8] = b"rwre/env-root/v1";
const VERTEX_TAG: &[u8] = b"rwre/vertex/v1";
const DERIVE_TAG: &[u8] = b"rwre/derive/v1";

/// 256-bit key of a vertex under a given environment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VertexKey([u8; 32]);

impl VertexKey {
    pub fn root(env_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(ENV_ROOT_TAG);
        h.update(env_seed.to_le_bytes());
        Self(h.finalize().into())
    }

    /// Key of `s * x` when `x` has key `self` and `s * x` is a child of `x`.
    #[inline]
    pub fn child(&self, s: u8) -> Self {
        let mut h = Sha256::new();
        h.update(VERTEX_TAG);
        h.update(self.0);
        h.update([s]);
        Self(h.finalize().into())
    }

    pub fn of(env_seed: u64, x: &Vertex) -> Self {
        x.path()
            .iter()
            .fold(Self::root(env_seed), |k, &s| k.child(s))
    }

    /// The vertex's private stream.
    pub fn stream(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.0)
    }
}

/// Derive a 64-bit seed from `(master, domain, index)`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let d = digest(master, domain, index);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Private stream for `(master, domain, index)`, e.g. one per trajectory.
pub fn stream(master: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(master, domain, index))
}

fn digest(master: u64, domain: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DERIVE_TAG);
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}
