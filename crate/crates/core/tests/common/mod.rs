#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vnas_core::rl::cem_maximize_batch;
use vnas_core::rl::{CemConfig, GraspAction};

/// Anisotropic concave quadratic over the translation features.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub centre: [f64; 3],
    pub curvature: [f64; 3],
}

impl Quadratic {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            centre: std::array::from_fn(|_| rng.gen_range(-0.9..0.9)),
            curvature: std::array::from_fn(|_| rng.gen_range(0.5..2.0)),
        }
    }

    pub fn value(&self, t: &[f64; 3]) -> f64 {
        -(0..3).map(|j| self.curvature[j] * (t[j] - self.centre[j]).powi(2)).sum::<f64>()
    }

    /// Best point of a regular grid over `[-1, 1]³` with `steps` intervals
    /// per axis.
    pub fn grid_argmax(&self, steps: usize) -> [f64; 3] {
        let at = |i: usize| -1.0 + 2.0 * i as f64 / steps as f64;
        let mut best = ([0.0; 3], f64::NEG_INFINITY);
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let p = [at(i), at(j), at(k)];
                    let v = self.value(&p);
                    if v > best.1 {
                        best = (p, v);
                    }
                }
            }
        }
        best.0
    }
}

/// L∞ distance between CEM's answer and the grid oracle, one entry per
/// quadratic, all solved in a single batched CEM call.
pub fn cem_quadratic_errors(qs: &[Quadratic], cfg: &CemConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pop = cfg.population;
    let found = cem_maximize_batch(qs.len(), cfg, rng, |acts: &[GraspAction]| {
        Ok(acts.iter().enumerate().map(|(i, a)| qs[i / pop].value(&a.translation)).collect())
    })
    .unwrap();
    qs.iter()
        .zip(&found)
        .map(|(q, a)| {
            let g = q.grid_argmax(80);
            (0..3).map(|j| (a.translation[j] - g[j]).abs()).fold(0.0, f64::max)
        })
        .collect()
}

/// CEM settings for the quadratic recovery check.
pub fn precise_cem() -> CemConfig {
    CemConfig {
        population: 256,
        iterations: 5,
        ..CemConfig::default()
    }
}
