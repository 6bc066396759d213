//! Windowed incidence and reference resource demand derived from case counts.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::arrivals::CaseSeries;
use crate::error::{Error, Result};
use crate::scenario::{Rates, ResourceKind};

/// Number of terms in the incidence window: days `t-14 ..= t`.
pub const WINDOW_TERMS: usize = 15;

/// Per-day demand for each resource kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub start_date: NaiveDate,
    /// Indexed by [`ResourceKind::index`].
    pub values: [Vec<f64>; 3],
}

impl DemandSeries {
    pub fn zeros(start_date: NaiveDate, days: usize) -> Self {
        DemandSeries {
            start_date,
            values: [vec![0.0; days], vec![0.0; days], vec![0.0; days]],
        }
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, kind: ResourceKind) -> &[f64] {
        &self.values[kind.index()]
    }

    pub fn get_mut(&mut self, kind: ResourceKind) -> &mut Vec<f64> {
        &mut self.values[kind.index()]
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    /// Writes `date,bed,icu,vent` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_demand_csv(out, self, None)
    }
}

/// Writes demand as CSV, optionally with `*_min`/`*_max` envelope columns.
pub fn write_demand_csv<W: Write>(
    out: W,
    demand: &DemandSeries,
    envelope: Option<(&DemandSeries, &DemandSeries)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_owned()];
    header.extend(ResourceKind::ALL.iter().map(|k| k.name().to_owned()));
    if envelope.is_some() {
        for k in ResourceKind::ALL {
            header.push(format!("{k}_min"));
            header.push(format!("{k}_max"));
        }
    }
    w.write_record(&header)?;
    for t in 0..demand.len() {
        let mut row = vec![demand.date(t).to_string()];
        row.extend(ResourceKind::ALL.iter().map(|&k| demand.get(k)[t].to_string()));
        if let Some((lo, hi)) = envelope {
            for k in ResourceKind::ALL {
                row.push(lo.get(k)[t].to_string());
                row.push(hi.get(k)[t].to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `U(t) = sum_{i=0}^{14} u_{t-i}` with `u` zero before the first day.
pub fn windowed_incidence(series: &CaseSeries) -> Vec<f64> {
    let u = &series.counts;
    let mut out = Vec::with_capacity(u.len());
    let mut running: u64 = 0;
    for t in 0..u.len() {
        running += u[t] as u64;
        if t >= WINDOW_TERMS {
            running -= u[t - WINDOW_TERMS] as u64;
        }
        out.push(running as f64);
    }
    out
}

/// `R_k(t) = r_k * U(t)` for each resource kind.
pub fn ground_truth_demand(series: &CaseSeries, rates: &Rates) -> Result<DemandSeries> {
    for k in ResourceKind::ALL {
        let r = rates.get(k);
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::param(format!("rate for {k} = {r} outside [0, 1]")));
        }
    }
    let incidence = windowed_incidence(series);
    let scaled = |k: ResourceKind| incidence.iter().map(|u| rates.get(k) * u).collect();
    Ok(DemandSeries {
        start_date: series.start_date,
        values: ResourceKind::ALL.map(scaled),
    })
}
