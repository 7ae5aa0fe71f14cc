//! Key selection and record layout for the benchmark workloads.

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDistribution {
    Zipfian { theta: f64 },
    Uniform,
}

/// Picks record indexes in `0..n`. Under the Zipfian distribution index 0
/// is the most popular, with `P(rank r) ∝ 1 / r^theta`.
#[derive(Debug, Clone)]
pub enum KeyChooser {
    Zipfian(Zipf<f64>),
    Uniform(u64),
}

impl KeyChooser {
    pub fn new(n: u64, dist: KeyDistribution) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("key population must be non-empty".into()));
        }
        match dist {
            KeyDistribution::Uniform => Ok(KeyChooser::Uniform(n)),
            KeyDistribution::Zipfian { theta } => Zipf::new(n as f64, theta)
                .map(KeyChooser::Zipfian)
                .map_err(|e| Error::InvalidConfig(format!("zipfian theta {theta}: {e}"))),
        }
    }

    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            KeyChooser::Zipfian(z) => z.sample(rng) as u64 - 1,
            KeyChooser::Uniform(n) => rng.random_range(0..*n),
        }
    }
}

/// Maps record index `i` of `count` onto a key spread evenly over
/// `0..key_space_max`, so key order follows index order.
pub fn record_key(i: u64, count: u64, key_space_max: u64) -> Vec<u8> {
    let stride = (key_space_max / count.max(1)).max(1);
    (i * stride).to_be_bytes().to_vec()
}

/// A value of `len` bytes that names its record and version, so a later
/// pass can check what it reads.
pub fn record_value(i: u64, version: u64, len: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(len.max(16));
    v.extend_from_slice(&i.to_le_bytes());
    v.extend_from_slice(&version.to_le_bytes());
    let mut x = i.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ version;
    while v.len() < len {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        v.push(x as u8);
    }
    v.truncate(len.max(16));
    v
}

/// `(record index, version)` stamped by [`record_value`].
pub fn value_stamp(v: &[u8]) -> Option<(u64, u64)> {
    Some((u64::from_le_bytes(v.get(..8)?.try_into().ok()?), u64::from_le_bytes(v.get(8..16)?.try_into().ok()?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_sequences_repeat() {
        let c = KeyChooser::new(1000, KeyDistribution::Zipfian { theta: 1.0 }).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| c.next(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        assert!(draw(5).iter().all(|&k| k < 1000));
    }

    #[test]
    fn theta_zero_is_uniform() {
        let c = KeyChooser::new(4, KeyDistribution::Zipfian { theta: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 4];
        for _ in 0..40_000 {
            counts[c.next(&mut rng) as usize] += 1;
        }
        assert!(counts.iter().all(|&n| (9_000..11_000).contains(&n)), "{counts:?}");
    }

    #[test]
    fn keys_sort_like_indexes_and_values_carry_stamps() {
        let a = record_key(5, 100, 2_000_000_000);
        let b = record_key(6, 100, 2_000_000_000);
        assert!(a < b);
        let v = record_value(5, 9, 1024);
        assert_eq!(v.len(), 1024);
        assert_eq!(value_stamp(&v), Some((5, 9)));
    }
}
