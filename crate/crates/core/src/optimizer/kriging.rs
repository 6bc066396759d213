//! Ordinary Kriging surrogate: constant mean, anisotropic squared-exponential
//! correlation and an optional nugget, with hyperparameters chosen by maximizing
//! the concentrated likelihood in log space.
//!
//! Inputs are rescaled to the unit box and outputs standardized before fitting,
//! so length scales are reported in unit-box coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::EvaluationRecord;

use super::infill::Predictor;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
/// Lower limit on the process variance in standardized units.
const SIGMA2_FLOOR: f64 = 1e-12;
/// Largest residual `|R alpha - (y - mu)|` accepted by a zero-nugget fit, in
/// standardized units.
const INTERPOLATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Nugget {
    /// Nugget held at a fixed value (0 for interpolation).
    Fixed(f64),
    /// Nugget estimated within `[lower, upper]`, relative to the process variance.
    Fitted { lower: f64, upper: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub length_scales: Vec<f64>,
    pub nugget: f64,
}

#[derive(Clone, Debug)]
pub struct SurrogateOptions {
    pub nugget: Nugget,
    /// Length-scale interval in unit-box coordinates.
    pub length_scale_bounds: (f64, f64),
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Optional warm start; used as the first restart.
    pub initial: Option<Hyperparameters>,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            nugget: Nugget::Fitted { lower: 1e-8, upper: 1.0 },
            length_scale_bounds: (1e-2, 1e2),
            restarts: 10,
            max_iterations: 100,
            seed: 0,
            initial: None,
        }
    }
}

impl SurrogateOptions {
    pub fn interpolating() -> Self {
        SurrogateOptions {
            nugget: Nugget::Fixed(0.0),
            ..Default::default()
        }
    }
}

/// Training data after rescaling, plus pairwise squared differences.
struct Data {
    n: usize,
    d: usize,
    y: DVector<f64>,
    // upper-triangle pairs (a < b), row-major, d entries each
    sqdiff: Vec<f64>,
}

impl Data {
    fn new(x: &[Vec<f64>], y: Vec<f64>) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut sqdiff = Vec::with_capacity(n * n.saturating_sub(1) / 2 * d);
        for a in 0..n {
            for b in a + 1..n {
                sqdiff.extend(x[a].iter().zip(&x[b]).map(|(p, q)| (p - q) * (p - q)));
            }
        }
        Data {
            n,
            d,
            y: DVector::from_vec(y),
            sqdiff,
        }
    }

    fn correlation(&self, inv_ls2: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut r = DMatrix::identity(n, n);
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                let s: f64 = self.sqdiff[k..k + self.d]
                    .iter()
                    .zip(inv_ls2)
                    .map(|(q, w)| q * w)
                    .sum();
                let v = (-0.5 * s).exp();
                r[(a, b)] = v;
                r[(b, a)] = v;
                k += self.d;
            }
        }
        r
    }
}

fn factor(base: &DMatrix<f64>, nugget: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut c = base.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += nugget + jitter;
        }
        if let Some(ch) = Cholesky::new(c) {
            return Some((ch, jitter));
        }
        jitter *= 10.0;
    }
    None
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    mu: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    cinv_one: DVector<f64>,
    one_cinv_one: f64,
    nll: f64,
}

fn fit_at(data: &Data, length_scales: &[f64], nugget: f64) -> Option<(Fit, DMatrix<f64>)> {
    let inv_ls2: Vec<f64> = length_scales.iter().map(|l| 1.0 / (l * l)).collect();
    let r = data.correlation(&inv_ls2);
    let (chol, jitter) = factor(&r, nugget)?;
    let n = data.n;
    let ones = DVector::from_element(n, 1.0);
    let cinv_one = chol.solve(&ones);
    let one_cinv_one = cinv_one.sum();
    let mu = cinv_one.dot(&data.y) / one_cinv_one;
    let resid = data.y.add_scalar(-mu);
    let mut alpha = chol.solve(&resid);
    if nugget == 0.0 {
        // Interpolation requires R alpha = resid for the unjittered R; one step of
        // iterative refinement, then reject hyperparameters where the jitter still
        // visibly smooths the data.
        let err = &resid - &r * &alpha;
        alpha += chol.solve(&err);
        let err = &resid - &r * &alpha;
        if err.amax() > INTERPOLATION_TOLERANCE * resid.amax().max(1.0) {
            return None;
        }
    }
    let sigma2 = (resid.dot(&alpha) / n as f64).max(SIGMA2_FLOOR);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nll = 0.5 * n as f64 * sigma2.ln() + 0.5 * log_det;
    if !nll.is_finite() {
        return None;
    }
    Some((
        Fit {
            chol,
            jitter,
            mu,
            sigma2,
            alpha,
            cinv_one,
            one_cinv_one,
            nll,
        },
        r,
    ))
}

/// Negative concentrated log-likelihood and its gradient with respect to
/// `phi = (ln l_1, .., ln l_d [, ln g])`.
fn nll_and_grad(data: &Data, phi: &[f64], fitted_nugget: bool, fixed_nugget: f64) -> Option<(f64, Vec<f64>)> {
    let d = data.d;
    let ls: Vec<f64> = phi[..d].iter().map(|p| p.exp()).collect();
    let g = if fitted_nugget { phi[d].exp() } else { fixed_nugget };
    let (fit, r) = fit_at(data, &ls, g)?;
    let cinv = fit.chol.inverse();
    let n = data.n;
    let inv_ls2: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l)).collect();
    let mut grad = vec![0.0; phi.len()];
    // d nll / d phi = 1/2 sum_ab (C^-1 - alpha alpha' / sigma2)_ab dC_ab
    let mut k = 0;
    for a in 0..n {
        for b in a + 1..n {
            let w = cinv[(a, b)] - fit.alpha[a] * fit.alpha[b] / fit.sigma2;
            let wr = w * r[(a, b)];
            for j in 0..d {
                // factor 2 for (b, a) cancels the 1/2
                grad[j] += wr * data.sqdiff[k + j] * inv_ls2[j];
            }
            k += d;
        }
    }
    if fitted_nugget {
        let diag: f64 = (0..n)
            .map(|a| cinv[(a, a)] - fit.alpha[a] * fit.alpha[a] / fit.sigma2)
            .sum();
        grad[d] = 0.5 * g * diag;
    }
    Some((fit.nll, grad))
}

/// Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking.
fn minimize_box<F>(f: F, x0: Vec<f64>, lower: &[f64], upper: &[f64], max_iter: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let project = |x: &mut [f64]| {
        for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut x = x0;
    project(&mut x);
    let (mut fx, mut gx) = f(&x)?;
    let gnorm: f64 = gx.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut step = if gnorm > 0.0 { 1.0 / gnorm } else { 1.0 };
    for _ in 0..max_iter {
        let mut accepted = None;
        let mut t = step;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(&gx).map(|(xi, gi)| xi - t * gi).collect();
            project(&mut cand);
            let decrease: f64 = gx.iter().zip(&cand).zip(&x).map(|((g, c), xi)| g * (c - xi)).sum();
            if decrease >= 0.0 {
                // projected step does not descend: stationary on the box
                break;
            }
            if let Some((fc, gc)) = f(&cand) {
                if fc <= fx + 1e-4 * decrease {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let max_move = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let improvement = fx - fxn;
        x = xn;
        fx = fxn;
        gx = gn;
        if max_move < 1e-6 || improvement < 1e-10 * (1.0 + fx.abs()) {
            break;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e3) } else { (t * 2.0).min(1e3) };
    }
    Some((x, fx))
}

/// Fitted Kriging predictor.
#[derive(Debug, Clone)]
pub struct Surrogate {
    bounds: Vec<(f64, f64)>,
    raw_x: Vec<Vec<f64>>,
    unit_x: Vec<Vec<f64>>,
    raw_y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: Hyperparameters,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    mu: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    cinv_one: DVector<f64>,
    one_cinv_one: f64,
    nll: f64,
}

fn to_unit(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| {
            let w = hi - lo;
            if w > 0.0 {
                (v - lo) / w
            } else {
                0.0
            }
        })
        .collect()
}

impl Surrogate {
    /// Fits on raw points `x` (inside `bounds`) and observations `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], bounds: &[(f64, f64)], options: &SurrogateOptions) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Fit(format!("{} points but {} observations", x.len(), y.len())));
        }
        let d = bounds.len();
        if x.iter().any(|p| p.len() != d) {
            return Err(Error::Fit("point dimension does not match bounds".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("observations must be finite".into()));
        }
        // collapse exact duplicates to their mean observation
        let mut raw_x: Vec<Vec<f64>> = Vec::new();
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for (p, &v) in x.iter().zip(y) {
            match raw_x.iter().position(|q| q == p) {
                Some(i) => {
                    sums[i].0 += v;
                    sums[i].1 += 1;
                }
                None => {
                    raw_x.push(p.clone());
                    sums.push((v, 1));
                }
            }
        }
        let raw_y: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();
        if raw_x.len() < d + 1 {
            return Err(Error::Fit(format!(
                "need at least {} distinct points for {d} dimensions, have {} ({} observations)",
                d + 1,
                raw_x.len(),
                x.len()
            )));
        }
        let n = raw_y.len();
        let y_mean = raw_y.iter().sum::<f64>() / n as f64;
        let var = raw_y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var.sqrt() > 1e-300 { var.sqrt() } else { 1.0 };
        let unit_x: Vec<Vec<f64>> = raw_x.iter().map(|p| to_unit(p, bounds)).collect();
        let data = Data::new(&unit_x, raw_y.iter().map(|v| (v - y_mean) / y_scale).collect());

        let (fitted_nugget, fixed_nugget, g_bounds) = match options.nugget {
            Nugget::Fixed(g) => (false, g.max(0.0), (0.0, 0.0)),
            Nugget::Fitted { lower, upper } => (true, 0.0, (lower.max(1e-300), upper.max(lower))),
        };
        let (ls_lo, ls_hi) = options.length_scale_bounds;
        let mut lower = vec![ls_lo.ln(); d];
        let mut upper = vec![ls_hi.ln(); d];
        if fitted_nugget {
            lower.push(g_bounds.0.ln());
            upper.push(g_bounds.1.ln());
        }

        let mut starts: Vec<Vec<f64>> = Vec::new();
        match &options.initial {
            Some(h) if h.length_scales.len() == d => {
                let mut s: Vec<f64> = h.length_scales.iter().map(|l| l.ln()).collect();
                if fitted_nugget {
                    s.push(h.nugget.max(g_bounds.0).ln());
                }
                starts.push(s);
            }
            _ => {
                let mut s = vec![(0.5 * (d as f64).sqrt()).clamp(ls_lo, ls_hi).ln(); d];
                if fitted_nugget {
                    s.push(1e-3f64.clamp(g_bounds.0, g_bounds.1).ln());
                }
                starts.push(s);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        while starts.len() < options.restarts.max(1) {
            starts.push(lower.iter().zip(&upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect());
        }

        let objective = |phi: &[f64]| nll_and_grad(&data, phi, fitted_nugget, fixed_nugget);
        let run = |s: &Vec<f64>| minimize_box(objective, s.clone(), &lower, &upper, options.max_iterations);
        #[cfg(feature = "parallel")]
        let results: Vec<Option<(Vec<f64>, f64)>> = {
            use rayon::prelude::*;
            starts.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Option<(Vec<f64>, f64)>> = starts.iter().map(run).collect();

        let best = results
            .into_iter()
            .flatten()
            .filter(|(_, f)| f.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| {
                Error::Fit(format!(
                    "correlation matrix singular for every hyperparameter start ({n} points, jitter up to {JITTER_MAX})"
                ))
            })?;
        let phi = best.0;
        let length_scales: Vec<f64> = phi[..d].iter().map(|p| p.exp()).collect();
        let nugget = if fitted_nugget { phi[d].exp() } else { fixed_nugget };
        let (fit, _) = fit_at(&data, &length_scales, nugget)
            .ok_or_else(|| Error::Fit("correlation matrix singular at the selected hyperparameters".into()))?;
        Ok(Surrogate {
            bounds: bounds.to_vec(),
            raw_x,
            unit_x,
            raw_y,
            y_mean,
            y_scale,
            hyper: Hyperparameters { length_scales, nugget },
            chol: fit.chol,
            jitter: fit.jitter,
            mu: fit.mu,
            sigma2: fit.sigma2,
            alpha: fit.alpha,
            cinv_one: fit.cinv_one,
            one_cinv_one: fit.one_cinv_one,
            nll: fit.nll,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Length scales in unit-box coordinates.
    pub fn length_scales(&self) -> &[f64] {
        &self.hyper.length_scales
    }

    pub fn nugget(&self) -> f64 {
        self.hyper.nugget
    }

    /// Diagonal jitter that was needed for factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Process variance in the units of the observations.
    pub fn process_variance(&self) -> f64 {
        self.sigma2 * self.y_scale * self.y_scale
    }

    pub fn neg_log_likelihood(&self) -> f64 {
        self.nll
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn observations(&self) -> &[f64] {
        &self.raw_y
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    fn correlations(&self, u: &[f64]) -> DVector<f64> {
        let inv_ls2: Vec<f64> = self.hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
        DVector::from_iterator(
            self.unit_x.len(),
            self.unit_x.iter().map(|p| {
                let s: f64 = p
                    .iter()
                    .zip(u)
                    .zip(&inv_ls2)
                    .map(|((a, b), w)| (a - b) * (a - b) * w)
                    .sum();
                (-0.5 * s).exp()
            }),
        )
    }

    /// Predicted mean at a raw point.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let r = self.correlations(&to_unit(x, &self.bounds));
        self.y_mean + self.y_scale * (self.mu + r.dot(&self.alpha))
    }

    /// Predicted mean and standard deviation at a raw point.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let r = self.correlations(&to_unit(x, &self.bounds));
        let mean = self.y_mean + self.y_scale * (self.mu + r.dot(&self.alpha));
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a positive diagonal");
        let u = 1.0 - self.cinv_one.dot(&r);
        let s2 = self.sigma2 * (1.0 - v.norm_squared() + u * u / self.one_cinv_one);
        (mean, self.y_scale * s2.max(0.0).sqrt())
    }
}

impl Predictor for Surrogate {
    fn dimension(&self) -> usize {
        self.bounds.len()
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        Surrogate::predict(self, x)
    }

    fn training_points(&self) -> &[Vec<f64>] {
        &self.raw_x
    }

    fn best_observed(&self) -> f64 {
        self.raw_y.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Fits a surrogate on an evaluation history.
pub fn fit_surrogate(
    history: &[EvaluationRecord],
    bounds: &[(f64, f64)],
    options: &SurrogateOptions,
) -> Result<Surrogate> {
    let x: Vec<Vec<f64>> = history.iter().map(|r| r.vector.clone()).collect();
    let y: Vec<f64> = history.iter().map(|r| r.epsilon).collect();
    Surrogate::fit(&x, &y, bounds, options)
}

/// Negative log-likelihood at explicit hyperparameters (for diagnostics and
/// likelihood-surface scans).
pub fn neg_log_likelihood_at(
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &[(f64, f64)],
    hyper: &Hyperparameters,
) -> Option<f64> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 1e-300 { sd } else { 1.0 };
    let unit: Vec<Vec<f64>> = x.iter().map(|p| to_unit(p, bounds)).collect();
    let data = Data::new(&unit, y.iter().map(|v| (v - mean) / scale).collect());
    fit_at(&data, &hyper.length_scales, hyper.nugget).map(|(f, _)| f.nll)
}
