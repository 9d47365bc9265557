//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 keystream identified by `(seed, stream)`; the
//! position inside it is the 64-bit word counter. Capturing those three
//! integers is enough to resume a stream bit-exactly on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifier of the generator family, recorded alongside checkpoints.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Resumable random stream.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl PartialEq for RngState {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.stream() == other.stream()
            && self.counter() == other.counter()
    }
}

/// FNV-1a, used to turn a stream name into a stream id.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::from_parts(seed, 0, 0)
    }

    /// Named sub-stream of a root seed ("data", "init-theta1", "train", ...).
    pub fn named(root_seed: u64, name: &str) -> Self {
        Self::from_parts(root_seed, stream_id(name), 0)
    }

    pub fn from_parts(seed: u64, stream: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(u128::from(counter));
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.inner.get_stream()
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    /// `[seed, stream, counter]`, the serialized form.
    pub fn to_words(&self) -> [u64; 3] {
        [self.seed, self.stream(), self.counter()]
    }

    pub fn from_words(words: [u64; 3]) -> Self {
        Self::from_parts(words[0], words[1], words[2])
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: u32, hi: u32) -> u32 {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Access for callers that need a `rand::Rng`.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// I.i.d. standard-normal tensor of the given shape.
pub fn seeded_standard_normal<T: Scalar>(rng: &mut RngState, shape: &[usize]) -> Result<Tensor<T>> {
    let n = crate::tensor::checked_numel(shape)?;
    if shape.is_empty() {
        return Err(Error::InvalidShape("normal draw needs at least one extent".into()));
    }
    let data = (0..n).map(|_| T::lit(rng.standard_normal())).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Tensor<f32> = seeded_standard_normal(&mut RngState::new(3), &[64]).unwrap();
        let b: Tensor<f32> = seeded_standard_normal(&mut RngState::new(3), &[64]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn different_seeds_differ() {
        let a: Tensor<f64> = seeded_standard_normal(&mut RngState::new(1), &[1024]).unwrap();
        let b: Tensor<f64> = seeded_standard_normal(&mut RngState::new(2), &[1024]).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn moments_at_1e5() {
        let t: Tensor<f64> = seeded_standard_normal(&mut RngState::new(11), &[100_000]).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(seeded_standard_normal::<f32>(&mut RngState::new(0), &[3, 0]).is_err());
        assert!(seeded_standard_normal::<f32>(&mut RngState::new(0), &[usize::MAX, 4]).is_err());
    }

    #[test]
    fn resume_from_words() {
        let mut a = RngState::named(5, "train");
        for _ in 0..37 {
            a.standard_normal();
        }
        let mut b = RngState::from_words(a.to_words());
        assert_eq!(a, b);
        for _ in 0..100 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn named_streams_are_distinct() {
        let mut a = RngState::named(5, "train");
        let mut b = RngState::named(5, "data");
        assert_ne!(a.uniform(0.0, 1.0), b.uniform(0.0, 1.0));
    }
}
