//! Deterministic, splittable random number generation.
//!
//! All randomness in the crate flows through [`Rng`], a SplitMix64 generator.
//! Instead of threading mutable generator state through the training loop,
//! every consumer derives a fresh stream from `(seed, label, indices)` with
//! [`Rng::derive`]. That makes each random draw a pure function of its
//! provenance: a resumed run replays the same masks, noise, and shuffles as
//! an uninterrupted one without persisting generator state in checkpoints.

/// SplitMix64 generator. Small state, full 64-bit period, and a finalizer
/// strong enough that derived streams are statistically independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream keyed by `label` and `indices`.
    ///
    /// The derivation hashes the parent seed together with the label bytes
    /// and each index, so `derive("mask", &[epoch, item])` and
    /// `derive("noise", &[epoch, item])` never collide.
    pub fn derive(&self, label: &str, indices: &[u64]) -> Rng {
        let mut h = mix64(self.state ^ GOLDEN_GAMMA);
        for &b in label.as_bytes() {
            h = mix64(h ^ (b as u64).wrapping_mul(GOLDEN_GAMMA));
        }
        for &ix in indices {
            h = mix64(h ^ ix.wrapping_mul(GOLDEN_GAMMA));
        }
        Rng { state: h }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is meaningless");
        // Multiply-shift bounded sampling; bias is < 2^-64 per draw, far
        // below anything observable in this crate's uses.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal draw via the Marsaglia polar method.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
