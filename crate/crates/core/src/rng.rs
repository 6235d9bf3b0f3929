//! Counter-based deterministic random number generation.
//!
//! Simulation noise must not depend on pixel visitation order, otherwise
//! multi-threaded runs would produce different images than single-threaded
//! ones. Instead of one sequential stream, every pixel gets its own
//! generator derived from the pair `(seed, counter)` by an avalanche hash.
//! Two draws from `PixelRng::keyed(s, i)` are reproducible no matter when,
//! where, or on which thread they happen.

/// Golden-ratio increment used by the splitmix64 sequence.
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizing mix of splitmix64: a full-avalanche bijection on `u64`.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A small, fast generator keyed by `(seed, counter)`.
///
/// The initial state hashes both key parts, after which the generator
/// advances as an ordinary splitmix64 stream. Distinct keys give streams
/// that are independent for all practical purposes, and equal keys always
/// reproduce the same stream.
#[derive(Debug, Clone)]
pub struct PixelRng {
    state: u64,
}

impl PixelRng {
    /// Generator for stream `counter` under the global `seed`.
    #[inline]
    pub fn keyed(seed: u64, counter: u64) -> Self {
        let state = mix(seed.wrapping_add(GOLDEN) ^ mix(counter.wrapping_mul(GOLDEN) ^ seed));
        PixelRng { state }
    }

    /// Next 64 uniformly distributed bits.
    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `0..n` without modulo bias (Lemire reduction with
    /// rejection). `n` must be nonzero.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        loop {
            let x = self.next_u64();
            let m = (x as u128).wrapping_mul(n as u128);
            let lo = m as u64;
            if lo >= n || lo >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }
}

impl rand::RngCore for PixelRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        PixelRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&PixelRng::next_u64(self).to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = PixelRng::next_u64(self).to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }
}

/// Deterministic Fisher-Yates permutation of `0..n` keyed by `(seed, n)`.
///
/// Keying by the length (rather than by argument position) means the same
/// collection always receives the same permutation, which keeps operations
/// that shuffle two sets symmetric in their arguments.
pub fn keyed_permutation(seed: u64, n: usize) -> Vec<u32> {
    let mut rng = PixelRng::keyed(seed, n as u64);
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// FNV-1a hash of a byte string; used to derive per-scene seeds from ids.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_streams_are_reproducible() {
        let a: Vec<u64> = {
            let mut r = PixelRng::keyed(7, 123);
            (0..16).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = PixelRng::keyed(7, 123);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn nearby_keys_decorrelate() {
        let mut r0 = PixelRng::keyed(7, 0);
        let mut r1 = PixelRng::keyed(7, 1);
        let mut s0 = PixelRng::keyed(8, 0);
        assert_ne!(r0.next_u64(), r1.next_u64());
        let mut r0b = PixelRng::keyed(7, 0);
        assert_ne!(r0b.next_u64(), s0.next_u64());
    }

    #[test]
    fn unit_interval_draws_stay_in_range() {
        let mut r = PixelRng::keyed(42, 9);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn mean_of_uniform_draws_is_centered() {
        let mut r = PixelRng::keyed(1, 2);
        let n = 100_000;
        let total: f64 = (0..n).map(|_| r.next_f64()).sum();
        let mean = total / n as f64;
        // Standard error is ~1/sqrt(12 n) ~ 9e-4; allow five sigma.
        assert!((mean - 0.5).abs() < 5e-3, "mean {mean}");
    }

    #[test]
    fn bounded_draws_cover_range_without_bias() {
        let mut r = PixelRng::keyed(3, 4);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[r.next_below(5) as usize] += 1;
        }
        for &c in &counts {
            assert!((9_000..11_000).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn permutation_is_keyed_by_length_and_seed() {
        let p1 = keyed_permutation(5, 100);
        let p2 = keyed_permutation(5, 100);
        assert_eq!(p1, p2);
        assert_ne!(keyed_permutation(6, 100), p1);

        let mut sorted = p1.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xAF63_DC4C_8601_EC8C);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171F73967E8);
    }
}
