//! Expected-improvement infill.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use super::design::uniform_point;

/// Anything that predicts a mean and standard deviation over a box.
pub trait Predictor: Sync {
    fn dimension(&self) -> usize;
    fn predict(&self, x: &[f64]) -> (f64, f64);
    fn training_points(&self) -> &[Vec<f64>];
    fn best_observed(&self) -> f64;
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(f_min - Y, 0)]` for `Y ~ N(mean, sd^2)`.
pub fn expected_improvement(mean: f64, sd: f64, f_min: f64) -> f64 {
    let gap = f_min - mean;
    if sd > 0.0 {
        let z = gap / sd;
        (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
    } else {
        gap.max(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct InfillOptions {
    pub starts: usize,
    /// Share of starts drawn around the best training points instead of uniformly.
    pub local_fraction: f64,
    /// Number of best starts refined by pattern search.
    pub refine: usize,
    pub refine_evaluations: usize,
}

impl Default for InfillOptions {
    fn default() -> Self {
        InfillOptions {
            starts: 100,
            local_fraction: 0.3,
            refine: 5,
            refine_evaluations: 400,
        }
    }
}

/// Acquisition score, compared lexicographically: expected improvement first,
/// then lower predicted mean. The second key makes the choice well defined
/// when the predictive deviation vanishes and EI is zero everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Score {
    ei: f64,
    neg_mean: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.ei > other.ei || (self.ei == other.ei && self.neg_mean > other.neg_mean)
    }
}

fn score<P: Predictor + ?Sized>(p: &P, x: &[f64], f_min: f64) -> Score {
    let (m, s) = p.predict(x);
    Score {
        ei: expected_improvement(m, s, f_min),
        neg_mean: -m,
    }
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Compass search on the acquisition score inside the box.
fn refine<P: Predictor + ?Sized>(
    p: &P,
    mut x: Vec<f64>,
    bounds: &[(f64, f64)],
    f_min: f64,
    budget: usize,
) -> (Vec<f64>, Score) {
    let mut best = score(p, &x, f_min);
    let mut step = 0.1;
    let mut used = 0;
    while step > 1e-6 && used < budget {
        let mut improved = false;
        for j in 0..x.len() {
            let (lo, hi) = bounds[j];
            let w = hi - lo;
            if w <= 0.0 {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut c = x.clone();
                c[j] = (c[j] + dir * step * w).clamp(lo, hi);
                if c[j] == x[j] {
                    continue;
                }
                let s = score(p, &c, f_min);
                used += 1;
                if s.better_than(&best) {
                    x = c;
                    best = s;
                    improved = true;
                    break;
                }
            }
            if used >= budget {
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, best)
}

fn is_duplicate(x: &[f64], existing: &[Vec<f64>]) -> bool {
    existing
        .iter()
        .any(|e| e.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9))
}

/// Moves `x` off any existing design point by the smallest tried offset.
fn separate(mut x: Vec<f64>, bounds: &[(f64, f64)], existing: &[Vec<f64>]) -> Vec<f64> {
    let mut delta = 1e-6;
    while is_duplicate(&x, existing) && delta <= 1.0 {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            let w = hi - lo;
            if w <= 0.0 {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            // step toward the interior
            let dir = if *v <= mid { 1.0 } else { -1.0 };
            *v = (*v + dir * delta * w).clamp(lo, hi);
        }
        delta *= 2.0;
    }
    x
}

/// Maximizes expected improvement over the box; never returns an existing
/// design point (within 1e-9 per coordinate).
pub fn propose_infill<P: Predictor + ?Sized>(
    predictor: &P,
    bounds: &[(f64, f64)],
    seed: u64,
    options: &InfillOptions,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_min = predictor.best_observed();
    let existing = predictor.training_points();
    let starts = options.starts.max(1);
    let n_local = if existing.is_empty() {
        0
    } else {
        ((starts as f64) * options.local_fraction).round() as usize
    };

    let mut ranked: Vec<&Vec<f64>> = existing.iter().collect();
    ranked.sort_by(|a, b| predictor.predict(a).0.total_cmp(&predictor.predict(b).0));
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(starts);
    for i in 0..n_local {
        let centre = ranked[i % ranked.len().min(5)];
        let mut c: Vec<f64> = centre
            .iter()
            .zip(bounds)
            .map(|(v, &(lo, hi))| v + 0.05 * (hi - lo) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        clamp_into(&mut c, bounds);
        candidates.push(c);
    }
    while candidates.len() < starts {
        candidates.push(uniform_point(bounds, &mut rng));
    }

    let mut scored: Vec<(Vec<f64>, Score)> = candidates
        .into_iter()
        .map(|c| {
            let s = score(predictor, &c, f_min);
            (c, s)
        })
        .collect();
    scored.sort_by(|a, b| {
        if a.1.better_than(&b.1) {
            std::cmp::Ordering::Less
        } else if b.1.better_than(&a.1) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let mut best: Option<(Vec<f64>, Score)> = None;
    for (c, _) in scored.into_iter().take(options.refine.max(1)) {
        let (x, s) = refine(predictor, c, bounds, f_min, options.refine_evaluations);
        if best.as_ref().is_none_or(|(_, b)| s.better_than(b)) {
            best = Some((x, s));
        }
    }
    let (x, _) = best.expect("at least one start");
    separate(x, bounds, existing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::kriging::{Surrogate, SurrogateOptions};

    struct Flat<F> {
        f: F,
        points: Vec<Vec<f64>>,
        best: f64,
    }

    impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for Flat<F> {
        fn dimension(&self) -> usize {
            1
        }
        fn predict(&self, x: &[f64]) -> (f64, f64) {
            ((self.f)(x), 0.0)
        }
        fn training_points(&self) -> &[Vec<f64>] {
            &self.points
        }
        fn best_observed(&self) -> f64 {
            self.best
        }
    }

    #[test]
    fn ei_closed_form() {
        // mean above f_min, unit sd: EI = -1 * Phi(-1) + phi(-1)
        let expected = -1.0 * 0.158_655_253_931_457_05 + 0.241_970_724_519_143_37;
        assert!((expected_improvement(1.0, 1.0, 0.0) - expected).abs() < 1e-9);
        assert_eq!(expected_improvement(2.0, 0.0, 3.0), 1.0);
        assert_eq!(expected_improvement(4.0, 0.0, 3.0), 0.0);
    }

    #[test]
    fn zero_variance_picks_predicted_minimizer() {
        let p = Flat {
            f: |x: &[f64]| (x[0] - 0.3).powi(2) + 1.0,
            points: vec![vec![0.0], vec![1.0]],
            best: 0.5,
        };
        let x = propose_infill(&p, &[(0.0, 1.0)], 1, &InfillOptions::default());
        assert!((x[0] - 0.3).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn one_dimensional_infill_is_interior() {
        let bounds = [(0.0, 1.0)];
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.4f64).powi(2)).collect();
        let s = Surrogate::fit(&x, &y, &bounds, &SurrogateOptions::interpolating()).unwrap();
        let proposal = propose_infill(&s, &bounds, 3, &InfillOptions::default());
        assert!(proposal[0] > 0.0 && proposal[0] < 1.0);
        // grid oracle over the EI formula
        let f_min = 0.01;
        let grid_best = (0..1000)
            .map(|i| {
                let (m, sd) = s.predict(&[i as f64 / 999.0]);
                expected_improvement(m, sd, f_min)
            })
            .fold(0.0, f64::max);
        let (m, sd) = s.predict(&proposal);
        let got = expected_improvement(m, sd, f_min);
        assert!(got >= grid_best * (1.0 - 1e-3), "{got} vs grid {grid_best}");
        assert!(proposal[0] > 0.2 && proposal[0] < 0.8, "{proposal:?}");
    }

    #[test]
    fn symmetric_endpoints_propose_interior() {
        // equal observations at both ends: EI vanishes there and is positive between
        let bounds = [(0.0, 1.0)];
        let x = vec![vec![0.0], vec![1.0]];
        let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.5f64).powi(2)).collect();
        let s = Surrogate::fit(&x, &y, &bounds, &SurrogateOptions::interpolating()).unwrap();
        let ei = |u: f64| {
            let (m, sd) = s.predict(&[u]);
            expected_improvement(m, sd, 0.25)
        };
        let (grid_arg, grid_best) = (0..1000)
            .map(|i| (i as f64 / 999.0, ei(i as f64 / 999.0)))
            .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!(grid_best > 0.0 && grid_arg > 0.0 && grid_arg < 1.0);
        let proposal = propose_infill(&s, &bounds, 5, &InfillOptions::default());
        assert!(proposal[0] > 1e-3 && proposal[0] < 1.0 - 1e-3, "{proposal:?}");
        assert!(ei(proposal[0]) >= grid_best * (1.0 - 1e-3), "{} vs grid {grid_best}", ei(proposal[0]));
    }

    #[test]
    fn collision_is_perturbed() {
        let p = Flat {
            f: |x: &[f64]| (x[0] - 0.25).powi(2),
            points: vec![vec![0.25], vec![0.9]],
            best: 10.0,
        };
        let x = propose_infill(&p, &[(0.0, 1.0)], 1, &InfillOptions::default());
        assert!((x[0] - 0.25).abs() > 1e-9);
        assert!((x[0] - 0.25).abs() < 1e-3);
    }
}
