/// Identifies one dropout application. Masks are a pure function of the key and
/// the element index, so reruns with the same seed reproduce them exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DropoutKey {
    pub seed: u64,
    /// Call site (layer, sublayer, block, ...), packed by the caller.
    pub site: u64,
    /// Optimizer step.
    pub step: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DropoutKey {
    /// Uniform draw in [0, 1) for element `i`.
    pub fn uniform(&self, i: u64) -> f64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.site);
        h = splitmix64(h ^ self.step);
        h = splitmix64(h ^ i);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let k = DropoutKey {
            seed: 7,
            site: 3,
            step: 11,
        };
        let a: Vec<f64> = (0..1000).map(|i| k.uniform(i)).collect();
        let b: Vec<f64> = (0..1000).map(|i| k.uniform(i)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 0.5).abs() < 0.05);
        let other = DropoutKey { step: 12, ..k };
        assert_ne!(a[0], other.uniform(0));
    }
}
