//! Portable splitmix64 generator.
//!
//! Every random decision in a training run (dropout masks, shuffles, data
//! augmentation) is drawn from one of these streams, so the whole run is a
//! function of a handful of 64-bit states that can be checkpointed verbatim.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

/// A splitmix64 state. Equal states produce equal streams forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Rng64 {
    pub state: u64,
}

/// Advance `state` once and return the new state with its output.
#[inline]
pub fn splitmix64_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    (next, mix64(next))
}

/// The splitmix64 finalizer, also usable as a 64-bit hash of a key.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

/// Map a raw 64-bit draw onto `[0, 1)` using its top 53 bits.
#[inline]
pub fn unit_f64(raw: u64) -> f64 {
    (raw >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Rng64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream from a list of key words.
    pub fn keyed(words: &[u64]) -> Self {
        let mut h = 0x6A09_E667_F3BC_C909u64;
        for &w in words {
            h = mix64(h ^ w).wrapping_add(GOLDEN_GAMMA);
        }
        Self::new(h)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let (s, v) = splitmix64_next(self.state);
        self.state = s;
        v
    }

    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform integer in `[0, bound)` by plain modulo reduction.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }

    /// In-place Fisher–Yates shuffle, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
