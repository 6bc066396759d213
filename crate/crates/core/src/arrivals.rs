//! Daily infection counts: synthetic Poisson series with peak events, or
//! ingestion of observed `date,count` files.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ArrivalConfig, Horizon};

/// Infection counts `u_t` for consecutive days starting at `start_date`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSeries {
    pub start_date: NaiveDate,
    pub counts: Vec<u32>,
}

impl CaseSeries {
    pub fn new(start_date: NaiveDate, counts: Vec<u32>) -> Self {
        CaseSeries { start_date, counts }
    }

    pub fn zeros(start_date: NaiveDate, days: usize) -> Self {
        CaseSeries::new(start_date, vec![0; days])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Writes `date,count` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "count"])?;
        for (t, c) in self.counts.iter().enumerate() {
            w.write_record([self.date(t).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Extra infections added on a single day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakEvent {
    pub day_index: usize,
    pub extra_count: u32,
}

/// `days` independent Poisson(`lambda`) draws from a stream seeded by `seed`.
pub fn generate_poisson_series(
    lambda: f64,
    days: usize,
    start_date: NaiveDate,
    seed: u64,
) -> Result<CaseSeries> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("Poisson rate must be > 0, got {lambda}")));
    }
    if days == 0 {
        return Err(Error::param("horizon must be at least one day"));
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = (0..days).map(|_| dist.sample(&mut rng) as u32).collect();
    Ok(CaseSeries::new(start_date, counts))
}

/// Adds every peak's extra count to its day.
pub fn apply_peaks(series: &CaseSeries, peaks: &[PeakEvent]) -> Result<CaseSeries> {
    let mut out = series.clone();
    for p in peaks {
        let slot = out.counts.get_mut(p.day_index).ok_or_else(|| {
            Error::param(format!(
                "peak day {} outside horizon of {} days",
                p.day_index,
                series.len()
            ))
        })?;
        *slot += p.extra_count;
    }
    Ok(out)
}

/// Base Poisson series plus the configured peaks over the scenario horizon.
pub fn synthetic_cases(arrivals: &ArrivalConfig, horizon: &Horizon, seed: u64) -> Result<CaseSeries> {
    let base = generate_poisson_series(arrivals.lambda, horizon.days, horizon.start_date, seed)?;
    apply_peaks(&base, &arrivals.peaks)
}

#[derive(Debug, Deserialize)]
struct CaseRow {
    date: String,
    count: String,
}

/// Reads a `date,count` CSV and aligns it to `[start_date, start_date + days)`.
///
/// Rows outside the window are ignored. Every day inside the window must appear
/// exactly once.
pub fn load_case_series(path: &Path, start_date: NaiveDate, days: usize) -> Result<CaseSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::Ingest {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    read_case_series(file, start_date, days).map_err(|message| Error::Ingest {
        path: path.to_owned(),
        message,
    })
}

/// Reader-based variant of [`load_case_series`]; errors are plain messages.
pub fn read_case_series<R: Read>(
    input: R,
    start_date: NaiveDate,
    days: usize,
) -> std::result::Result<CaseSeries, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "count" {
        return Err(format!("expected header `date,count`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut counts: Vec<Option<u32>> = vec![None; days];
    for (i, row) in reader.deserialize::<CaseRow>().enumerate() {
        // header is row 1
        let row_no = i + 2;
        let row = row.map_err(|e| format!("malformed row {row_no}: {e}"))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| format!("malformed date `{}` at row {row_no}: {e}", row.date))?;
        let count: i64 = row
            .count
            .parse()
            .map_err(|_| format!("malformed count `{}` at row {row_no}", row.count))?;
        if count < 0 {
            return Err(format!("negative count at row {row_no}"));
        }
        let count = u32::try_from(count).map_err(|_| format!("count too large at row {row_no}"))?;
        let offset = (date - start_date).num_days();
        if offset < 0 || offset as usize >= days {
            continue;
        }
        let slot = &mut counts[offset as usize];
        if slot.is_some() {
            return Err(format!("duplicate date {date} at row {row_no}"));
        }
        *slot = Some(count);
    }
    let counts = counts
        .into_iter()
        .enumerate()
        .map(|(t, c)| c.ok_or_else(|| format!("missing day {}", start_date + Duration::days(t as i64))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CaseSeries::new(start_date, counts))
}
