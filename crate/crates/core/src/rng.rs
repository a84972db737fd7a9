//! Counter-based random streams that split by label.
//!
//! A stream is a 64-bit key plus a draw counter; draw `n` is a SplitMix64
//! finalizer applied to `key + (n + 1) * GOLDEN`. Child streams are derived
//! from the parent key and a label only, never from how many draws the parent
//! has made, so independent consumers (stage 1 vs stage 2, task `i` vs task
//! `j`) cannot perturb each other.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const INDEX_SALT: u64 = 0x632b_e59b_d9b4_e019;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    key: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Child stream for a named consumer.
    pub fn split(&self, label: &str) -> Self {
        Self {
            key: mix64(self.key ^ mix64(fnv1a(label.as_bytes()))),
            counter: 0,
        }
    }

    /// Child stream for the `index`-th item of a family.
    pub fn split_index(&self, index: u64) -> Self {
        Self {
            key: mix64(self.key.wrapping_add(mix64(index ^ INDEX_SALT))),
            counter: 0,
        }
    }

    pub fn draws(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, n)`; `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.below(span) as i64
    }

    /// Samples an index from a probability vector. Falls back to the last
    /// index when rounding leaves the cumulative sum just short of `u`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        assert!(!probs.is_empty());
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}
