//! Deterministic randomness.
//!
//! Every random decision in the system flows from a single `u64` seed through
//! ChaCha8, a counter-based stream cipher PRNG with a documented algorithm,
//! so runs are reproducible across platforms and reimplementable in other
//! languages. Each subsystem draws from its own stream id so that toggling
//! one component never shifts the draws seen by another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per independent consumer of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    SynthSubject,
    SynthStyle,
    ModelInit,
    BatchSampler,
    TripletMining,
    CsaSampling,
    StyleBankInit,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Split => 1,
            Stream::SynthSubject => 2,
            Stream::SynthStyle => 3,
            Stream::ModelInit => 4,
            Stream::BatchSampler => 5,
            Stream::TripletMining => 6,
            Stream::CsaSampling => 7,
            Stream::StyleBankInit => 8,
        }
    }
}

/// ChaCha8 generator bound to `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Like [`stream_rng`] but further keyed by an index (epoch, region, ...).
/// The index perturbs the word position so distinct indices never overlap.
pub fn substream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}

/// In-place Fisher-Yates shuffle with explicit index sampling, so the
/// permutation is a function of the raw ChaCha stream alone and does not
/// depend on library shuffle internals.
pub fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent() {
        let mut a = stream_rng(7, Stream::Split);
        let mut b = stream_rng(7, Stream::BatchSampler);
        let xs: Vec<u64> = (0..4).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.gen()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn shuffle_is_reproducible() {
        let mut v1: Vec<u32> = (0..100).collect();
        let mut v2: Vec<u32> = (0..100).collect();
        fisher_yates(&mut v1, &mut stream_rng(42, Stream::Split));
        fisher_yates(&mut v2, &mut stream_rng(42, Stream::Split));
        assert_eq!(v1, v2);
        let mut v3: Vec<u32> = (0..100).collect();
        fisher_yates(&mut v3, &mut stream_rng(43, Stream::Split));
        assert_ne!(v1, v3);
    }
}
