use rayon::prelude::*;

use crate::data::noise::{simulate_ldct, NoiseParams};
use crate::data::phantom::generate_phantom;
use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

/// One normal-dose / low-dose sample, each `(1, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub ndct: FeatureMap,
    pub ldct: FeatureMap,
    pub dose: f64,
    pub seed: u64,
    pub photons: f64,
    pub electronic: f64,
}

impl ImagePair {
    /// Phantom and degradation both derived from `seed`.
    pub fn simulate(seed: u64, size: usize, noise: &NoiseParams) -> Result<Self> {
        let ndct = generate_phantom(seed, size, size)?;
        let ldct = simulate_ldct(&ndct, noise, seed)?;
        Ok(ImagePair {
            ndct,
            ldct,
            dose: noise.dose,
            seed,
            photons: noise.photons,
            electronic: noise.electronic,
        })
    }
}

/// `n` pairs of `size × size` images; pair `i` uses seed `base_seed + i`.
pub fn make_dataset(n: usize, size: usize, noise: &NoiseParams, base_seed: u64) -> Result<Vec<ImagePair>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    noise.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| ImagePair::simulate(base_seed + i, size, noise))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_distinct_and_tagged() {
        let p = NoiseParams::default();
        let d = make_dataset(4, 16, &p, 100).unwrap();
        assert_eq!(d.len(), 4);
        for (i, a) in d.iter().enumerate() {
            assert_eq!(a.dose, p.dose);
            assert_eq!(a.seed, 100 + i as u64);
            for b in &d[i + 1..] {
                assert_ne!(a.ndct, b.ndct);
            }
        }
        let other = make_dataset(4, 16, &p, 200).unwrap();
        for a in &d {
            for b in &other {
                assert_ne!(a.ndct, b.ndct);
                assert_ne!(a.ldct, b.ldct);
            }
        }
        assert_eq!(make_dataset(4, 16, &p, 100).unwrap(), d);
        assert!(make_dataset(0, 16, &p, 0).is_err());
    }
}
