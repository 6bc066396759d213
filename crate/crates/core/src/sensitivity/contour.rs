//! Two-variable slices through a fitted surrogate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::Surrogate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub var_x: String,
    pub var_y: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `values[j][i]` is the prediction at `(x[i], y[j])`.
    pub values: Vec<Vec<f64>>,
    /// Every other variable with the value it was held at.
    pub fixed: Vec<(String, f64)>,
}

impl ContourGrid {
    pub fn resolution(&self) -> usize {
        self.x.len()
    }

    /// Grid point with the smallest prediction, as `(x, y, value)`.
    pub fn minimum(&self) -> (f64, f64, f64) {
        let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
        for (j, row) in self.values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if v < best.2 {
                    best = (self.x[i], self.y[j], v);
                }
            }
        }
        best
    }

    /// `x,y,epsilon` triples, x varying fastest.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.var_x.as_str(), self.var_y.as_str(), "epsilon"])?;
        for (j, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                w.write_record([self.x[i].to_string(), self.y[j].to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn axis(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    if g == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..g)
        .map(|k| {
            if k == g - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (g - 1) as f64
            }
        })
        .collect()
}

/// Predicts the surrogate mean on a `g x g` grid spanning the bounds of
/// `var_x` and `var_y`, holding all other coordinates at `anchor`.
pub fn contour_grid(
    surrogate: &Surrogate,
    names: &[String],
    var_x: &str,
    var_y: &str,
    g: usize,
    anchor: &[f64],
) -> Result<ContourGrid> {
    let find = |v: &str| {
        names
            .iter()
            .position(|n| n == v)
            .ok_or_else(|| Error::param(format!("unknown variable `{v}`")))
    };
    let ix = find(var_x)?;
    let iy = find(var_y)?;
    if ix == iy {
        return Err(Error::param("contour variables must differ"));
    }
    if g == 0 {
        return Err(Error::param("contour resolution must be at least 1"));
    }
    let bounds = surrogate.bounds();
    if names.len() != bounds.len() || anchor.len() != bounds.len() {
        return Err(Error::Structural(format!(
            "surrogate has {} inputs, got {} names and an anchor of length {}",
            bounds.len(),
            names.len(),
            anchor.len()
        )));
    }
    let xs = axis(bounds[ix].0, bounds[ix].1, g);
    let ys = axis(bounds[iy].0, bounds[iy].1, g);
    let mut point = anchor.to_vec();
    let values = ys
        .iter()
        .map(|&yv| {
            xs.iter()
                .map(|&xv| {
                    point[ix] = xv;
                    point[iy] = yv;
                    surrogate.predict_mean(&point)
                })
                .collect()
        })
        .collect();
    let fixed = names
        .iter()
        .zip(anchor)
        .enumerate()
        .filter(|&(k, _)| k != ix && k != iy)
        .map(|(_, (n, &v))| (n.clone(), v))
        .collect();
    Ok(ContourGrid {
        var_x: var_x.to_owned(),
        var_y: var_y.to_owned(),
        x: xs,
        y: ys,
        values,
        fixed,
    })
}
