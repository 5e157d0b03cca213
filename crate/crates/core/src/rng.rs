//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SplitMix64`]. The mapping
//! from 64-bit words to floats and Gaussians is fixed so that any other
//! implementation of the same generator reproduces the same datasets,
//! initializations and covert positions bit for bit:
//!
//! * uniform: `word / 2^64`, giving a value in `[0, 1)`;
//! * Gaussian: Box–Muller on two consecutive words `u1, u2`, returning
//!   `sqrt(-2 ln u1) * cos(2π u2)` (the sine branch is discarded).

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// SplitMix64 generator (Steele, Lea and Flood).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    ///
    /// `word as f64` rounds to nearest, so words within 2^10 of `u64::MAX`
    /// would land on exactly 1.0; those are clamped to the largest double
    /// below 1.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        let u = self.next_u64() as f64 / TWO_POW_64;
        if u < 1.0 {
            u
        } else {
            1.0 - f64::EPSILON / 2.0
        }
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Index in `0..bound`, computed as `floor(word * bound / 2^64)` in exact
    /// integer arithmetic.
    #[inline]
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal draw consuming two words.
    pub fn next_gaussian(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        let u2 = self.next_f64();
        if u1 <= 0.0 {
            u1 = f64::MIN_POSITIVE;
        }
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// The SplitMix64 output function, usable as a stateless 64-bit mixer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one client in one round.
///
/// This is the first output of a SplitMix64 stream seeded with
/// `master ^ client ^ round * GOLDEN_GAMMA`, so adding clients never shifts
/// the streams of existing ones.
pub fn client_round_seed(master: u64, client_id: usize, round_index: usize) -> u64 {
    let base = master ^ client_id as u64 ^ (round_index as u64).wrapping_mul(GOLDEN_GAMMA);
    SplitMix64::new(base).next_u64()
}

/// Derive an independent sub-seed from a parent seed and a purpose tag.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    SplitMix64::new(parent ^ mix(tag.wrapping_add(GOLDEN_GAMMA))).next_u64()
}
