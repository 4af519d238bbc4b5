//! Closed-form multi-fidelity evaluator.
//!
//! The true quality is two Gaussian bumps plus a linear tilt over `[0, 1]^d`.
//! A score at fidelity `p` is the true quality plus Gaussian noise with
//! standard deviation `sigma0 / sqrt(p + kappa * G)`, where `G` is the number
//! of units the whole search has consumed so far. `kappa > 0` stands in for a
//! shared policy whose training benefits every later evaluation.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DesignConfig, DesignSpace};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Seed that fixes the default benchmark's coefficients.
pub const SYNTHETIC_DEFAULT_SEED: u64 = 0x5EED_C0DE;

#[derive(Debug, Clone, PartialEq)]
struct Bump {
    center: Vec<f64>,
    height: f64,
    width: f64,
}

impl Bump {
    fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = self.center.iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum();
        self.height * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDesign {
    space: DesignSpace,
    bumps: Vec<Bump>,
    tilt: Vec<f64>,
    optimum: DesignConfig,
    optimum_value: f64,
    /// Noise scale at one resource unit.
    pub sigma0: f64,
    /// Knowledge-sharing coefficient.
    pub kappa: f64,
}

impl SyntheticDesign {
    pub fn space(dim: usize) -> DesignSpace {
        let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        let bounds: Vec<(&str, f64, f64)> = names.iter().map(|n| (n.as_str(), 0.0, 1.0)).collect();
        DesignSpace::from_bounds(&bounds).expect("unit cube")
    }

    /// Benchmark whose coefficients are drawn from `seed`.
    pub fn from_seed(seed: u64, dim: usize, sigma0: f64, kappa: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("synthetic benchmark needs dim >= 1".into()));
        }
        if !(sigma0 >= 0.0 && sigma0.is_finite() && kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma0 ({sigma0}) and kappa ({kappa}) must be finite and non-negative"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(0.15..0.85)).collect()
        };
        let sharp = Bump {
            center: center(&mut rng),
            height: 1.0,
            width: 0.1,
        };
        let broad = Bump {
            center: center(&mut rng),
            height: 0.75,
            width: 0.25,
        };
        let tilt = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let mut bench = Self {
            space: Self::space(dim),
            bumps: vec![sharp, broad],
            tilt,
            optimum: DesignConfig(vec![]),
            optimum_value: f64::NEG_INFINITY,
            sigma0,
            kappa,
        };
        bench.locate_optimum(&mut rng);
        Ok(bench)
    }

    pub fn default_benchmark(sigma0: f64, kappa: f64) -> Self {
        Self::from_seed(SYNTHETIC_DEFAULT_SEED, 2, sigma0, kappa).expect("valid defaults")
    }

    pub fn design_space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn with_noise(mut self, sigma0: f64, kappa: f64) -> Self {
        self.sigma0 = sigma0;
        self.kappa = kappa;
        self
    }

    pub fn f_true(&self, theta: &DesignConfig) -> f64 {
        let x = theta.as_slice();
        let bumps: f64 = self.bumps.iter().map(|b| b.value(x)).sum();
        let tilt: f64 = self.tilt.iter().zip(x).map(|(t, v)| t * v).sum();
        bumps + tilt
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.tilt.clone();
        for b in &self.bumps {
            let v = b.value(x);
            for (k, gk) in g.iter_mut().enumerate() {
                *gk -= v * (x[k] - b.center[k]) / (b.width * b.width);
            }
        }
        g
    }

    /// Multi-start projected gradient ascent from both bump centres and a
    /// batch of random points.
    fn locate_optimum(&mut self, rng: &mut ChaCha8Rng) {
        let dim = self.space.len();
        let mut starts: Vec<Vec<f64>> = self.bumps.iter().map(|b| b.center.clone()).collect();
        starts.extend((0..64).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect::<Vec<_>>()));
        let mut best = (f64::NEG_INFINITY, vec![]);
        for mut x in starts {
            let mut step = 0.01;
            let mut fx = self.f_true(&DesignConfig(x.clone()));
            for _ in 0..20_000 {
                let g = self.gradient(&x);
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .map(|(v, gv)| (v + step * gv).clamp(0.0, 1.0))
                    .collect();
                let fc = self.f_true(&DesignConfig(cand.clone()));
                if fc > fx {
                    x = cand;
                    fx = fc;
                    step *= 1.2;
                } else {
                    step *= 0.5;
                    if step < 1e-14 {
                        break;
                    }
                }
            }
            if fx > best.0 {
                best = (fx, x);
            }
        }
        self.optimum_value = best.0;
        self.optimum = DesignConfig(best.1);
    }

    pub fn optimum(&self) -> &DesignConfig {
        &self.optimum
    }

    pub fn optimum_value(&self) -> f64 {
        self.optimum_value
    }

    /// Noise standard deviation for a score at `p_units` after the search
    /// has consumed `global_units` in total.
    pub fn noise_std(&self, p_units: u64, global_units: u64) -> f64 {
        self.sigma0 / ((p_units as f64) + self.kappa * global_units as f64).sqrt()
    }

    /// One noisy score. Always consumes exactly one normal draw from `rng`.
    pub fn evaluate(
        &self,
        theta: &DesignConfig,
        p_units: u64,
        global_units: u64,
        rng: &mut Rng,
    ) -> Result<f64> {
        if p_units == 0 {
            return Err(Error::Parameter("synthetic evaluation needs p_units >= 1".into()));
        }
        self.space.check(theta)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.f_true(theta) + self.noise_std(p_units, global_units) * z)
    }
}
