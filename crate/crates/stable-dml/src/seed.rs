//! Deterministic randomness discipline.
//!
//! Every randomized operation in this crate draws from a [`Stream`] created
//! through a [`SeedSpec`]: a master seed plus an ordered path of
//! `(tag, index)` elements. Child streams are derived by hashing, never by
//! drawing from a parent stream, so the set of streams a computation uses is
//! independent of scheduling and thread count.
//!
//! The mixing function is fixed: starting from the master seed, each path
//! element folds in an FNV-1a hash of the tag bytes and then the index, each
//! followed by the 64-bit splitmix finalizer. The empty path is the identity,
//! so `derive` of a bare master seed is the master seed itself. This mapping
//! is part of the output contract and must not change between releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in this crate.
///
/// ChaCha is a counter-based stream cipher; its output for a given seed is
/// stable across platforms.
pub type Stream = ChaCha8Rng;

/// 64-bit avalanche finalizer (splitmix64 / Stafford mix 13).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A reproducible location in the crate-wide seed tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSpec {
    master: u64,
    path: Vec<(String, u64)>,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        SeedSpec {
            master,
            path: Vec::new(),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Extend the path by one `(tag, index)` element.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((tag.to_string(), index));
        SeedSpec {
            master: self.master,
            path,
        }
    }

    /// Collapse the spec to a 64-bit seed.
    ///
    /// Pure function of `(master, path)`; the empty path returns the master
    /// seed unchanged.
    pub fn derive(&self) -> u64 {
        let mut h = self.master;
        for (tag, index) in &self.path {
            h = mix64(h ^ fnv1a(tag.as_bytes()));
            h = mix64(h ^ *index);
        }
        h
    }

    /// A fresh value-like RNG stream for this spec.
    pub fn rng(&self) -> Stream {
        Stream::seed_from_u64(self.derive())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn empty_path_is_identity() {
        assert_eq!(SeedSpec::new(0).derive(), 0);
        assert_eq!(SeedSpec::new(7).derive(), 7);
        assert_eq!(SeedSpec::new(u64::MAX).derive(), u64::MAX);
    }

    #[test]
    fn derive_is_deterministic() {
        let a = SeedSpec::new(7).child("rep", 3).derive();
        let b = SeedSpec::new(7).child("rep", 3).derive();
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_indices_differ() {
        let a = SeedSpec::new(7).child("rep", 3).derive();
        let b = SeedSpec::new(7).child("rep", 4).derive();
        assert_ne!(a, b);
    }

    #[test]
    fn tags_and_nesting_distinguish_streams() {
        let root = SeedSpec::new(42);
        let seeds = [
            root.derive(),
            root.child("rep", 0).derive(),
            root.child("bag", 0).derive(),
            root.child("rep", 0).child("bag", 0).derive(),
            root.child("bag", 0).child("rep", 0).derive(),
            root.child("", 0).derive(),
        ];
        for i in 0..seeds.len() {
            for j in (i + 1)..seeds.len() {
                assert_ne!(seeds[i], seeds[j], "collision between {} and {}", i, j);
            }
        }
    }

    #[test]
    fn streams_reproduce_bitwise() {
        let spec = SeedSpec::new(123).child("fit", 1);
        let xs: Vec<u64> = {
            let mut r = spec.rng();
            (0..16).map(|_| r.random()).collect()
        };
        let ys: Vec<u64> = {
            let mut r = spec.rng();
            (0..16).map(|_| r.random()).collect()
        };
        assert_eq!(xs, ys);
    }

    #[test]
    fn mixing_function_is_pinned() {
        // Frozen values guard the documented mixing scheme against silent
        // changes; regenerating them requires a deliberate contract break.
        assert_eq!(SeedSpec::new(7).child("rep", 3).derive(), {
            let h = mix64(7 ^ fnv1a(b"rep"));
            mix64(h ^ 3)
        });
        assert_eq!(fnv1a(b""), 0xCBF2_9CE4_8422_2325);
    }
}
