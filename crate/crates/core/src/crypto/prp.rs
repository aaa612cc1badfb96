//! Small-domain pseudorandom permutations.
//!
//! A four-round Feistel network over the smallest power-of-two domain
//! `2^k >= m`, restricted to `[0, m)` by cycle walking. Odd `k` uses the
//! alternating unbalanced split (halves of `floor(k/2)` and `ceil(k/2)` bits
//! swap roles every round). Round functions are SipHash-2-4 keyed by the
//! 16-byte seed over `(round, input, m)`.

use std::hash::Hasher;

use siphasher::sip::SipHasher24;

use crate::codec::dict::ceil_log2;
use crate::error::{invalid, Result};

pub const ROUNDS: u8 = 4;
/// Cycle-walking bound. The expected walk length is below 2 since
/// `2^k < 2m`; hitting the cap means the permutation is broken.
pub const MAX_WALK: u32 = 10_000;

pub type Seed = [u8; 16];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prp {
    domain: u64,
    seed: Seed,
    bits: u32,
}

#[inline]
fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

impl Prp {
    pub fn new(domain: u64, seed: Seed) -> Result<Self> {
        if domain == 0 {
            return invalid("permutation domain must be >= 1");
        }
        if domain > 1 << 62 {
            return invalid("permutation domain too large");
        }
        Ok(Self {
            domain,
            seed,
            bits: ceil_log2(domain),
        })
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    #[inline]
    fn round(&self, round: u8, x: u64, width: u32) -> u64 {
        let mut h = SipHasher24::new_with_key(&self.seed);
        h.write_u8(round);
        h.write_u64(x);
        h.write_u64(self.domain);
        h.finish() & mask(width)
    }

    fn feistel(&self, x: u64) -> u64 {
        let (mut wa, mut wb) = (self.bits / 2, self.bits - self.bits / 2);
        let (mut a, mut b) = (x >> wb, x & mask(wb));
        for r in 0..ROUNDS {
            let c = a ^ self.round(r, b, wa);
            (a, b) = (b, c);
            (wa, wb) = (wb, wa);
        }
        (a << wb) | b
    }

    fn feistel_inv(&self, y: u64) -> u64 {
        // After an even number of rounds the widths are back to the start.
        let (mut wa, mut wb) = (self.bits / 2, self.bits - self.bits / 2);
        let (mut a, mut b) = (y >> wb, y & mask(wb));
        for r in (0..ROUNDS).rev() {
            // (a, b) = (b0, a0 ^ F(b0)) with widths (wb0, wa0).
            let b0 = a;
            let a0 = b ^ self.round(r, b0, wb);
            (a, b) = (a0, b0);
            (wa, wb) = (wb, wa);
        }
        debug_assert_eq!(wa, self.bits / 2);
        (a << wb) | b
    }

    fn walk(&self, start: u64, step: impl Fn(u64) -> u64) -> Result<u64> {
        let mut x = start;
        for _ in 0..MAX_WALK {
            x = step(x);
            if x < self.domain {
                return Ok(x);
            }
        }
        Err(crate::Error::Protocol(format!(
            "cycle walk exceeded {MAX_WALK} steps"
        )))
    }

    pub fn eval(&self, i: u64) -> Result<u64> {
        if i >= self.domain {
            return invalid(format!("{i} outside permutation domain {}", self.domain));
        }
        if self.bits == 0 {
            return Ok(0);
        }
        self.walk(i, |x| self.feistel(x))
    }

    pub fn invert(&self, j: u64) -> Result<u64> {
        if j >= self.domain {
            return invalid(format!("{j} outside permutation domain {}", self.domain));
        }
        if self.bits == 0 {
            return Ok(0);
        }
        self.walk(j, |x| self.feistel_inv(x))
    }

    /// Number of Feistel evaluations `eval(i)` needs (cycle-walk length).
    pub fn walk_length(&self, i: u64) -> Result<u32> {
        if i >= self.domain {
            return invalid(format!("{i} outside permutation domain {}", self.domain));
        }
        let mut x = i;
        for steps in 1..=MAX_WALK {
            x = if self.bits == 0 { 0 } else { self.feistel(x) };
            if x < self.domain {
                return Ok(steps);
            }
        }
        Ok(MAX_WALK)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn seed(k: u64) -> Seed {
        let mut s = [0u8; 16];
        s[..8].copy_from_slice(&k.to_le_bytes());
        s[8..].copy_from_slice(&(!k).to_le_bytes());
        s
    }

    #[test]
    fn single_element_domain_is_identity() {
        let p = Prp::new(1, seed(3)).unwrap();
        assert_eq!(p.eval(0).unwrap(), 0);
        assert_eq!(p.invert(0).unwrap(), 0);
        assert!(Prp::new(0, seed(3)).is_err());
    }

    #[test]
    fn eight_is_a_permutation() {
        let p = Prp::new(8, seed(42)).unwrap();
        let mut out: Vec<u64> = (0..8).map(|i| p.eval(i).unwrap()).collect();
        out.sort_unstable();
        assert_eq!(out, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_domain_rejected() {
        let p = Prp::new(5, seed(1)).unwrap();
        assert!(matches!(p.eval(5), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(p.invert(9), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn exhaustive_bijection_up_to_4096() {
        for m in (1..=64).chain([100, 255, 256, 257, 1000, 1023, 4095, 4096]) {
            let p = Prp::new(m, seed(m)).unwrap();
            let mut seen = vec![false; m as usize];
            for i in 0..m {
                let j = p.eval(i).unwrap();
                assert!(!seen[j as usize], "m={m}: collision at {j}");
                seen[j as usize] = true;
                assert_eq!(p.invert(j).unwrap(), i);
            }
        }
    }

    #[test]
    fn sampled_inverse_on_large_domains() {
        for m in [(1u64 << 20) + 7, 3_000_017, 1 << 40] {
            let p = Prp::new(m, seed(m)).unwrap();
            for i in (0..m).step_by((m / 997) as usize).take(997) {
                assert_eq!(p.invert(p.eval(i).unwrap()).unwrap(), i);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = Prp::new(1000, seed(5)).unwrap();
        let b = Prp::new(1000, seed(5)).unwrap();
        let c = Prp::new(1000, seed(6)).unwrap();
        let va: Vec<u64> = (0..1000).map(|i| a.eval(i).unwrap()).collect();
        let vb: Vec<u64> = (0..1000).map(|i| b.eval(i).unwrap()).collect();
        let vc: Vec<u64> = (0..1000).map(|i| c.eval(i).unwrap()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn cycle_walk_is_short() {
        // 2^k / m is the expected walk length; 1000 -> 1024 gives 1.024.
        for (m, pow2) in [(1000u64, 1024u64), (513, 1024), (5, 8)] {
            let p = Prp::new(m, seed(77)).unwrap();
            let total: u64 = (0..m).map(|i| p.walk_length(i).unwrap() as u64).sum();
            let mean = total as f64 / m as f64;
            let expected = pow2 as f64 / m as f64;
            assert!(mean <= 1.5 * expected, "m={m}: mean walk {mean}");
            assert!((0..m).all(|i| p.walk_length(i).unwrap() < MAX_WALK));
        }
    }

    #[test]
    fn first_output_uniform_over_seeds() {
        // eval(0) over 10^4 seeds, m = 1000, binned into 20 classes of 50.
        let m = 1000;
        let bins = 20;
        let trials = 10_000;
        let mut hist = vec![0u64; bins];
        for s in 0..trials {
            let p = Prp::new(m, seed(s)).unwrap();
            hist[(p.eval(0).unwrap() * bins as u64 / m) as usize] += 1;
        }
        let expected = trials as f64 / bins as f64;
        let stat: f64 = hist
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p = {p}");
    }
}
