use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the two-blob task and its out-of-distribution companion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Class centers sit at `±class_offset` along the first axis.
    pub class_offset: f64,
    /// Distance of the OOD center from the origin, in units of the blob std.
    pub ood_shift: f64,
    /// Fraction of OOD points drawn from the heavy-tailed component.
    pub heavy_fraction: f64,
    /// Degrees of freedom of the heavy-tailed component.
    pub heavy_dof: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { class_offset: 3.0, ood_shift: 8.0, heavy_fraction: 0.5, heavy_dof: 3.0 }
    }
}

/// Two labeled unit-variance Gaussian blobs (in-distribution) and an OOD set
/// centered `ood_shift` away in a seeded random direction orthogonal to the
/// class axis, half Gaussian and half Student-t. OOD items are labeled with
/// the class on whose side of the boundary they fall.
pub fn synth_ood_pair(seed: u64, n: usize, d: usize) -> Result<(Dataset, Dataset)> {
    synth_ood_pair_with(seed, n, d, &SynthConfig::default())
}

pub fn synth_ood_pair_with(seed: u64, n: usize, d: usize, cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    if n < 2 || d < 2 {
        return Err(Error::invalid(format!("synthetic data needs n >= 2 and d >= 2, got n={n}, d={d}")));
    }
    if !(0.0..=1.0).contains(&cfg.heavy_fraction) || !(cfg.heavy_dof > 0.0) {
        return Err(Error::invalid("heavy_fraction must lie in [0, 1] and heavy_dof be positive"));
    }
    let mut g = rng::seeded(seed);
    let gauss = |g: &mut rng::Rng| -> f64 { g.sample(StandardNormal) };

    // OOD direction: random unit vector in the coordinates after the first.
    let mut dir: Vec<f64> = (0..d).map(|k| if k == 0 { 0.0 } else { gauss(&mut g) }).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut id_x = Vec::with_capacity(n * d);
    let mut id_y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 0 { -1.0 } else { 1.0 };
        for k in 0..d {
            let center = if k == 0 { sign * cfg.class_offset } else { 0.0 };
            id_x.push(center + gauss(&mut g));
        }
        id_y.push(label);
    }

    let student = StudentT::new(cfg.heavy_dof).map_err(|e| Error::invalid(e.to_string()))?;
    let n_heavy = (n as f64 * cfg.heavy_fraction).round() as usize;
    let mut ood_x = Vec::with_capacity(n * d);
    let mut ood_y = Vec::with_capacity(n);
    for i in 0..n {
        let heavy = i < n_heavy;
        let start = ood_x.len();
        for &c in &dir {
            let noise = if heavy { student.sample(&mut g) } else { gauss(&mut g) };
            ood_x.push(cfg.ood_shift * c + noise);
        }
        ood_y.push(usize::from(ood_x[start] > 0.0));
    }

    Ok((Dataset::new("synthetic-blobs", vec![d], id_x, id_y)?, Dataset::new("synthetic-ood", vec![d], ood_x, ood_y)?))
}
