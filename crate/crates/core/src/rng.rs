//! Deterministic random-number substreams.
//!
//! Every stochastic routine takes a [`Stream`] rather than a live generator.
//! A stream is a 64-bit key; child streams are derived by mixing labels into
//! the key, so the draws used by particle `i` at time `t` depend only on the
//! root seed and on `(t, i)`, never on scheduling. Results are therefore
//! identical at any rayon thread count.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used everywhere in the crate.
pub type Rng = Xoshiro256PlusPlus;

/// A key from which independent generators and child keys are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream(u64);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(splitmix(seed))
    }

    pub fn key(&self) -> u64 {
        self.0
    }

    /// Child stream for `label`.
    pub fn child(&self, label: u64) -> Stream {
        Stream(splitmix(self.0 ^ splitmix(label.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    /// Child stream for a string label (hashed with FNV-1a).
    pub fn named(&self, label: &str) -> Stream {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}
