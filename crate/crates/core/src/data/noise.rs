//! Image-domain Poisson–Gaussian dose reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FeatureMap;

/// RNG stream used for noise draws.
pub(crate) const NOISE_STREAM: u64 = 1;

/// Means up to this value are sampled exactly by inversion.
pub const POISSON_INVERSION_MAX_MEAN: f64 = 50.0;

pub const LDCT_MAX: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Dose fraction in `(0, 1]`.
    pub dose: f64,
    /// Photon budget `λ₀` at full dose.
    pub photons: f64,
    /// Electronic noise standard deviation `σ_e` at full dose.
    pub electronic: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            dose: 0.25,
            photons: 1e4,
            electronic: 0.01,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose > 0.0 && self.dose <= 1.0) {
            return Err(Error::Config(format!("dose must lie in (0, 1], got {}", self.dose)));
        }
        if !(self.photons > 0.0 && self.photons.is_finite()) {
            return Err(Error::Config(format!("photon budget must be positive, got {}", self.photons)));
        }
        if !(self.electronic >= 0.0 && self.electronic.is_finite()) {
            return Err(Error::Config(format!(
                "electronic noise must be non-negative, got {}",
                self.electronic
            )));
        }
        Ok(())
    }
}

/// Poisson draw: inversion for small means, rounded normal above.
pub fn sample_poisson(rng: &mut impl Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean <= POISSON_INVERSION_MAX_MEAN {
        let u: f64 = rng.gen();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / f64::from(k);
            cdf += p;
        }
        f64::from(k)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

/// Per pixel: `k ~ Poisson(dose·λ₀·v)`, output `k/(dose·λ₀) + N(0, σ_e/√dose)`,
/// clamped to `[0, 1.5]`.
pub fn simulate_ldct(ndct: &FeatureMap, params: &NoiseParams, seed: u64) -> Result<FeatureMap> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let budget = params.dose * params.photons;
    let sigma = params.electronic / params.dose.sqrt();
    let out = ndct
        .data()
        .iter()
        .map(|&v| {
            let k = sample_poisson(&mut rng, budget * v.max(0.0));
            let e: f64 = rng.sample(StandardNormal);
            (k / budget + sigma * e).clamp(0.0, LDCT_MAX)
        })
        .collect();
    FeatureMap::new(ndct.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::generate_phantom;

    #[test]
    fn huge_budget_is_nearly_lossless() {
        let x = generate_phantom(1, 32, 32).unwrap();
        let p = NoiseParams {
            dose: 1.0,
            photons: 1e9,
            electronic: 0.0,
        };
        let y = simulate_ldct(&x, &p, 4).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-3);
    }

    #[test]
    fn invalid_dose_is_a_config_error() {
        let x = generate_phantom(1, 16, 16).unwrap();
        for dose in [0.0, -0.1, 1.5, f64::NAN] {
            let p = NoiseParams { dose, ..NoiseParams::default() };
            let err = simulate_ldct(&x, &p, 0).unwrap_err();
            assert!(err.to_string().contains("(0, 1]"), "{err}");
        }
    }

    #[test]
    fn lower_dose_means_more_variance() {
        let x = FeatureMap::full(&[1, 1, 100, 100], 0.5);
        let var = |dose: f64| {
            let y = simulate_ldct(&x, &NoiseParams { dose, ..NoiseParams::default() }, 11).unwrap();
            let m = y.mean();
            y.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.numel() - 1) as f64
        };
        assert!(var(0.1) > var(0.25));
    }

    #[test]
    fn poisson_scaling_is_unbiased() {
        let x = generate_phantom(2, 64, 64).unwrap();
        let y = simulate_ldct(&x, &NoiseParams::default(), 3).unwrap();
        assert!((y.mean() - x.mean()).abs() / x.mean() < 0.02);
    }

    #[test]
    fn poisson_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mean in [0.5, 7.0, 49.0, 400.0] {
            let draws: Vec<f64> = (0..20000).map(|_| sample_poisson(&mut rng, mean)).collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            let v = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / draws.len() as f64;
            assert!((m - mean).abs() < 0.05 * mean.max(1.0), "mean {mean}: {m}");
            assert!((v - mean).abs() < 0.1 * mean.max(1.0), "var {mean}: {v}");
        }
    }

    #[test]
    fn same_seed_same_noise() {
        let x = generate_phantom(3, 32, 32).unwrap();
        let p = NoiseParams::default();
        assert_eq!(simulate_ldct(&x, &p, 5).unwrap(), simulate_ldct(&x, &p, 5).unwrap());
        assert_ne!(simulate_ldct(&x, &p, 5).unwrap(), simulate_ldct(&x, &p, 6).unwrap());
    }
}
