//! Ordinary least squares with backward elimination by p value.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::check_log;
use crate::error::{Error, Result};
use crate::objective::EvaluationRecord;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Relative size below which a Gram-Schmidt residual counts as zero.
const COLLINEARITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub removed: String,
    pub p_value: f64,
}

/// Final model of a stepwise regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Intercept first, then the selected variables in registry order.
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residual_std_error: f64,
    pub residual_df: usize,
    pub observations: usize,
    pub alpha: f64,
    /// Variables in the order they were removed.
    pub trace: Vec<EliminationStep>,
    /// How parameter values entered the regression.
    pub scaling: String,
}

impl RegressionReport {
    pub fn intercept(&self) -> &Coefficient {
        &self.coefficients[0]
    }

    pub fn selected(&self) -> Vec<&str> {
        self.coefficients[1..].iter().map(|c| c.name.as_str()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients[1..].iter().find(|c| c.name == name)
    }

    /// Selected variables ordered by increasing p value.
    pub fn by_significance(&self) -> Vec<&Coefficient> {
        let mut v: Vec<&Coefficient> = self.coefficients[1..].iter().collect();
        v.sort_by(|a, b| a.p_value.total_cmp(&b.p_value));
        v
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| | Estimate | Std. Error | t value | Pr(>|t|) |\n");
        s.push_str("|---|---:|---:|---:|---:|\n");
        for c in &self.coefficients {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                c.name,
                fmt_num(c.estimate),
                fmt_num(c.std_error),
                fmt_num(c.t_value),
                fmt_p(c.p_value)
            );
        }
        let _ = writeln!(
            s,
            "\nResidual standard error: {} on {} degrees of freedom  ",
            fmt_num(self.residual_std_error),
            self.residual_df
        );
        let _ = writeln!(
            s,
            "Multiple R-squared: {}, adjusted R-squared: {}  ",
            fmt_num(self.r_squared),
            fmt_num(self.adj_r_squared)
        );
        let _ = writeln!(
            s,
            "Observations: {}; backward elimination at alpha = {}; parameter values: {}",
            self.observations, self.alpha, self.scaling
        );
        if !self.trace.is_empty() {
            s.push_str("\nEliminated, in order:\n\n");
            for (i, step) in self.trace.iter().enumerate() {
                let _ = writeln!(s, "{}. {} (p = {})", i + 1, step.removed, fmt_p(step.p_value));
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "estimate", "std_error", "t_value", "p_value"])?;
        for c in &self.coefficients {
            w.write_record([
                c.name.clone(),
                c.estimate.to_string(),
                c.std_error.to_string(),
                c.t_value.to_string(),
                c.p_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn fmt_p(p: f64) -> String {
    if p < 2e-16 {
        "< 2e-16".into()
    } else {
        fmt_num(p)
    }
}

struct OlsFit {
    beta: Vec<f64>,
    std_error: Vec<f64>,
    t_value: Vec<f64>,
    p_value: Vec<f64>,
    rss: f64,
    df: usize,
    sigma2: f64,
}

/// Finds columns of `x` that are linear combinations of earlier ones and
/// names them together with the columns they depend on.
fn collinear_columns(x: &DMatrix<f64>, names: &[&str]) -> Option<String> {
    let (n, p) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut basis_cols: Vec<usize> = Vec::new();
    let mut problems = Vec::new();
    for j in 0..p {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let c = q.dot(&r);
            r -= q * c;
        }
        let norm = r.norm();
        if norm0 == 0.0 || norm <= COLLINEARITY_TOLERANCE * norm0 {
            // which earlier columns explain it
            let mut partners = Vec::new();
            if !basis_cols.is_empty() {
                let sub = DMatrix::from_fn(n, basis_cols.len(), |i, k| x[(i, basis_cols[k])]);
                if let Ok(coef) = sub.clone().svd(true, true).solve(&col, 1e-12) {
                    let scale = coef.amax().max(1e-300);
                    for (k, &c) in coef.iter().enumerate() {
                        if c.abs() > 1e-8 * scale {
                            partners.push(names[basis_cols[k]]);
                        }
                    }
                }
            }
            if partners.is_empty() {
                problems.push(format!("{} (identically zero)", names[j]));
            } else {
                problems.push(format!("{} ~ {}", names[j], partners.join(" + ")));
            }
        } else {
            basis.push(r / norm);
            basis_cols.push(j);
        }
    }
    if problems.is_empty() {
        None
    } else {
        Some(problems.join("; "))
    }
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>, sigma2_floor: f64) -> OlsFit {
    let (n, p) = x.shape();
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .expect("full-rank design after collinearity check");
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let df = n - p;
    let sigma2 = (rss / df as f64).max(sigma2_floor);
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("full-rank design after collinearity check");
    let cov_diag: Vec<f64> = (0..p).map(|j| rinv.row(j).norm_squared()).collect();
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    let mut std_error = Vec::with_capacity(p);
    let mut t_value = Vec::with_capacity(p);
    let mut p_value = Vec::with_capacity(p);
    for j in 0..p {
        let se = (sigma2 * cov_diag[j]).sqrt();
        let b = beta[j];
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        };
        let pv = if t.is_infinite() {
            0.0
        } else {
            (2.0 * t_dist.cdf(-t.abs())).clamp(0.0, 1.0)
        };
        std_error.push(se);
        t_value.push(t);
        p_value.push(pv);
    }
    OlsFit {
        beta: beta.iter().copied().collect(),
        std_error,
        t_value,
        p_value,
        rss,
        df,
        sigma2,
    }
}

/// Regresses the objective on the raw parameter values, then repeatedly drops
/// the variable with the largest p value until every remaining p value is
/// below `alpha`.
///
/// A noise-free log has zero residual variance, which would make every t
/// statistic undefined; the residual variance is therefore floored at
/// `(1e-10 * scale)^2`, where `scale` is the larger of the response's standard
/// deviation and absolute mean.
pub fn stepwise_regression(records: &[EvaluationRecord], names: &[String], alpha: f64) -> Result<RegressionReport> {
    check_log(records, names)?;
    let d = names.len();
    let n = records.len();
    if n < d + 2 {
        return Err(Error::Analysis(format!(
            "stepwise regression needs at least {} records for {d} variables, got {n}",
            d + 2
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let y = DVector::from_iterator(n, records.iter().map(|r| r.epsilon));
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let sd = (tss / n as f64).sqrt();
    let sigma2_floor = (1e-10 * sd.max(mean.abs())).powi(2).max(f64::MIN_POSITIVE);

    let design = |cols: &[usize]| {
        DMatrix::from_fn(n, cols.len() + 1, |i, k| {
            if k == 0 { 1.0 } else { records[i].vector[cols[k - 1]] }
        })
    };

    let mut active: Vec<usize> = (0..d).collect();
    let full = design(&active);
    let mut labels = vec!["(Intercept)"];
    labels.extend(names.iter().map(String::as_str));
    if let Some(msg) = collinear_columns(&full, &labels) {
        return Err(Error::Analysis(format!("design matrix is rank deficient: {msg}")));
    }

    let mut trace = Vec::new();
    let fit = loop {
        let fit = ols(&design(&active), &y, sigma2_floor);
        // largest p among the variables; first one wins ties
        let worst = (1..fit.p_value.len()).fold(None, |acc: Option<usize>, k| match acc {
            Some(w) if fit.p_value[w] >= fit.p_value[k] => Some(w),
            _ => Some(k),
        });
        match worst {
            Some(k) if fit.p_value[k] >= alpha => {
                let var = active.remove(k - 1);
                trace.push(EliminationStep {
                    removed: names[var].clone(),
                    p_value: fit.p_value[k],
                });
            }
            _ => break fit,
        }
    };

    let mut coefficients = Vec::with_capacity(active.len() + 1);
    for k in 0..fit.beta.len() {
        coefficients.push(Coefficient {
            name: if k == 0 { "(Intercept)".into() } else { names[active[k - 1]].clone() },
            estimate: fit.beta[k],
            std_error: fit.std_error[k],
            t_value: fit.t_value[k],
            p_value: fit.p_value[k],
        });
    }
    let (r_squared, adj_r_squared) = if tss > 0.0 {
        let r2 = 1.0 - fit.rss / tss;
        let adj = 1.0 - (1.0 - r2) * (n - 1) as f64 / fit.df as f64;
        (r2, adj)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RegressionReport {
        coefficients,
        r_squared,
        adj_r_squared,
        residual_std_error: fit.sigma2.sqrt(),
        residual_df: fit.df,
        observations: n,
        alpha,
        trace,
        scaling: "raw (unscaled) parameter values".into(),
    })
}
