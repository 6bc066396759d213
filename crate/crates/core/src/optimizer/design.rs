use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m` points in `d` dimensions, each inside the box it was drawn for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Latin hypercube: along every dimension the `m` coordinates fall one per
/// equal-width stratum of the bound interval.
pub fn latin_hypercube(m: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Design> {
    if m < 2 {
        return Err(Error::param(format!("design needs at least 2 points, got {m}")));
    }
    for &(lo, hi) in bounds {
        if !(lo <= hi) {
            return Err(Error::param(format!("invalid bounds [{lo}, {hi}]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; bounds.len()]; m];
    let mut strata: Vec<usize> = (0..m).collect();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            let x = lo + (hi - lo) * (s as f64 + u) / m as f64;
            points[i][j] = x.clamp(lo, hi);
        }
    }
    Ok(Design { points })
}

/// Uniform random point in the box.
pub fn uniform_point<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}
