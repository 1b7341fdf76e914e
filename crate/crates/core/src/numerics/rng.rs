//! Counter-based random stream.
//!
//! Draw `k` of a stream is a pure function of `(seed, k)`: the stream is a
//! ChaCha8 keystream keyed by `seed`, and draw `k` reads the two 64-bit words
//! at word offset `4k`. Uniforms use the top 53 bits of the first word.
//! Gaussians use the cosine branch of Box-Muller on both words:
//! `z = sqrt(-2 ln(1 - u_a)) * cos(2π u_b)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::tensor::Tensor;

const WORDS_PER_DRAW: u128 = 4;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    /// A stream positioned at draw `counter`.
    pub fn at(seed: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_word_pos(counter as u128 * WORDS_PER_DRAW);
        Self {
            seed,
            counter,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    fn next_pair(&mut self) -> (u64, u64) {
        let a = self.inner.next_u64();
        let b = self.inner.next_u64();
        self.counter += 1;
        (a, b)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        let (a, _) = self.next_pair();
        to_unit(a)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + ((self.uniform() * span as f64) as u64).min(span - 1)
    }

    pub fn gaussian(&mut self) -> f64 {
        let (a, b) = self.next_pair();
        let u1 = 1.0 - to_unit(a);
        let u2 = to_unit(b);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// I.i.d. standard-normal tensor; advances the counter by the element count.
    pub fn sample_gaussian(&mut self, shape: &[usize]) -> Tensor {
        assert!(!shape.is_empty(), "sample_gaussian needs a nonempty shape");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.gaussian()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }
}

fn to_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation from a sequence of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stable seed derivation from a base seed and a label (FNV-1a over the bytes).
pub fn derive_seed_str(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(&[seed, h])
}
