//! Explicit-state random number generator.
//!
//! The generator is xoshiro256++ seeded through splitmix64, implemented from
//! the published update equations so streams are reproducible on any platform
//! without a library dependency:
//!
//! splitmix64 (seeding):
//!   s    <- s + 0x9E3779B97F4A7C15
//!   z    <- s
//!   z    <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!   z    <- (z ^ (z >> 27)) * 0x94D049BB133111EB
//!   out  <- z ^ (z >> 31)
//!
//! xoshiro256++ (stream):
//!   out  <- rotl(s0 + s3, 23) + s0
//!   t    <- s1 << 17
//!   s2   <- s2 ^ s0;  s3 <- s3 ^ s1;  s1 <- s1 ^ s2;  s0 <- s0 ^ s3
//!   s2   <- s2 ^ t
//!   s3   <- rotl(s3, 45)
//!
//! Floats in [0, 1) take the top 53 bits: (out >> 11) * 2^-53. Normal draws
//! use the Box-Muller transform and consume exactly two uniforms per call.
//! A stream is single-owner: never share one instance across threads.

/// One step of the splitmix64 output function.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
}

fn splitmix64_output(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

/// Deterministic explicit-state generator (xoshiro256++).
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Build a generator whose state is derived from `seed` via splitmix64.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            splitmix64(&mut sm);
            *slot = splitmix64_output(sm);
        }
        // xoshiro must not start from the all-zero state.
        if s == [0, 0, 0, 0] {
            s[0] = 0x9E37_79B9_7F4A_7C15;
        }
        Rng { s }
    }

    /// Independent substream `index` of a master seed. The substream seed is
    /// splitmix64_output(master + (index + 1) * 0x9E3779B97F4A7C15), so any
    /// substream is reachable in O(1).
    pub fn substream(master_seed: u64, index: u64) -> Self {
        let mixed = master_seed
            .wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Rng::from_seed(splitmix64_output(mixed))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = rotl(self.s[0].wrapping_add(self.s[3]), 23).wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = rotl(self.s[3], 45);
        result
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses a plain modulo; the bias is below
    /// n / 2^64 and irrelevant at the scales this crate draws at.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        self.next_u64() % n
    }

    /// Standard normal draw via Box-Muller; consumes exactly two uniforms.
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fill a slice with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    /// Fisher-Yates shuffle of an index slice.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = Rng::from_seed(42);
        let mut b = Rng::from_seed(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = Rng::from_seed(1);
        let mut b = Rng::from_seed(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 4);
    }

    #[test]
    fn substreams_are_independent_of_draw_order() {
        let s5 = Rng::substream(7, 5).next_u64();
        // Creating other substreams first must not change substream 5.
        let _ = Rng::substream(7, 0).next_u64();
        let _ = Rng::substream(7, 1000).next_u64();
        assert_eq!(Rng::substream(7, 5).next_u64(), s5);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = Rng::from_seed(9);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = rng.next_normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::from_seed(11);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
