//! Weighted RMSE between reference and simulated demand, and the black-box
//! objective the optimizer minimizes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::arrivals::CaseSeries;
use crate::engine::replicate;
use crate::error::{Error, Result};
use crate::ground_truth::{ground_truth_demand, DemandSeries};
use crate::scenario::{ParameterVector, ResourceKind, ScenarioConfig};

/// Per-resource weights, indexed by [`ResourceKind::index`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub [f64; 3]);

impl Default for Weights {
    fn default() -> Self {
        Weights([1.0 / 3.0; 3])
    }
}

impl Weights {
    pub fn new(bed: f64, icu: f64, vent: f64) -> Result<Self> {
        let w = Weights([bed, icu, vent]);
        if w.0.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("weights must be finite and non-negative"));
        }
        Ok(w)
    }
}

/// Root mean squared error per resource kind.
pub fn rmse_components(truth: &DemandSeries, sim: &DemandSeries) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for k in ResourceKind::ALL {
        let (a, b) = (truth.get(k), sim.get(k));
        if a.len() != b.len() {
            return Err(Error::Structural(format!(
                "{k}: truth has {} days, simulation has {}",
                a.len(),
                b.len()
            )));
        }
        if a.is_empty() {
            return Err(Error::Structural("demand series are empty".into()));
        }
        let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        out[k.index()] = (sse / a.len() as f64).sqrt();
    }
    Ok(out)
}

fn combine(weights: &Weights, rmse: &[f64; 3]) -> f64 {
    weights.0.iter().zip(rmse).map(|(w, r)| w * r).sum()
}

/// `sum_k w_k * sqrt(mean_t (R_k(t) - R̂_k(t))^2)`.
pub fn weighted_rmse(truth: &DemandSeries, sim: &DemandSeries, weights: &Weights) -> Result<f64> {
    Ok(combine(weights, &rmse_components(truth, sim)?))
}

/// The unit of data shared by the optimizer and the sensitivity analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub vector: Vec<f64>,
    pub epsilon: f64,
    /// Per-resource RMSE; absent for objectives that are not simulations.
    pub rmse: Option<[f64; 3]>,
    pub replications: usize,
    pub seed: u64,
    pub wall_time_ms: f64,
}

impl EvaluationRecord {
    /// Record for a plain scalar objective.
    pub fn scalar(vector: Vec<f64>, value: f64) -> Self {
        EvaluationRecord {
            vector,
            epsilon: value,
            rmse: None,
            replications: 0,
            seed: 0,
            wall_time_ms: 0.0,
        }
    }

    /// Same record ignoring wall time.
    pub fn same_result(&self, other: &Self) -> bool {
        self.vector == other.vector
            && self.epsilon.to_bits() == other.epsilon.to_bits()
            && self.rmse == other.rmse
            && self.seed == other.seed
            && self.replications == other.replications
    }
}

/// Anything the optimizer can minimize over a box.
pub trait BlackBox: Sync {
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn evaluate_point(&self, x: &[f64]) -> Result<EvaluationRecord>;
}

/// Wraps a closure `f(x) -> value` as a [`BlackBox`].
pub struct FnObjective<F> {
    bounds: Vec<(f64, f64)>,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(bounds: Vec<(f64, f64)>, f: F) -> Self {
        FnObjective { bounds, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> BlackBox for FnObjective<F> {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn evaluate_point(&self, x: &[f64]) -> Result<EvaluationRecord> {
        Ok(EvaluationRecord::scalar(x.to_vec(), (self.f)(x)))
    }
}

/// Wall-clock timer; reads zero where the platform has no clock (wasm32).
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Scores parameter vectors against reference demand on one scenario.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    pub weights: Weights,
    pub ground_truth: DemandSeries,
    pub scenario: ScenarioConfig,
    pub cases: CaseSeries,
}

impl ObjectiveSpec {
    /// Reference demand derived from `cases` with the scenario's rates.
    pub fn from_cases(scenario: ScenarioConfig, cases: CaseSeries) -> Result<Self> {
        let ground_truth = ground_truth_demand(&cases, &scenario.rates)?;
        Ok(ObjectiveSpec {
            weights: Weights::default(),
            ground_truth,
            scenario,
            cases,
        })
    }

    /// Simulates `vector` (median over replications) and scores it.
    ///
    /// Every call uses the scenario's master seed, so candidate vectors are
    /// compared under common random numbers.
    pub fn evaluate(&self, vector: &ParameterVector) -> Result<EvaluationRecord> {
        let started = Stopwatch::start();
        let replicated = replicate(&self.scenario, vector, &self.cases)?;
        let rmse = rmse_components(&self.ground_truth, &replicated.median)?;
        Ok(EvaluationRecord {
            vector: vector.as_slice().to_vec(),
            epsilon: combine(&self.weights, &rmse),
            rmse: Some(rmse),
            replications: self.scenario.replications,
            seed: self.scenario.seed,
            wall_time_ms: started.elapsed_ms(),
        })
    }
}

/// Free-function form of [`ObjectiveSpec::evaluate`].
pub fn evaluate(vector: &ParameterVector, spec: &ObjectiveSpec) -> Result<EvaluationRecord> {
    spec.evaluate(vector)
}

impl BlackBox for ObjectiveSpec {
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.scenario.registry.bounds()
    }

    fn evaluate_point(&self, x: &[f64]) -> Result<EvaluationRecord> {
        let v = self.scenario.registry.vector(x.to_vec())?;
        self.evaluate(&v)
    }
}

/// Writes the evaluation log: `eval_id,x_1..x_d,epsilon,rmse_bed,rmse_icu,rmse_vent,seed`.
pub struct EvalLogWriter<W: Write> {
    inner: csv::Writer<W>,
    dimension: usize,
}

pub fn eval_log_header(dimension: usize) -> Vec<String> {
    let mut h = vec!["eval_id".to_owned()];
    h.extend((1..=dimension).map(|i| format!("x_{i}")));
    h.extend(["epsilon", "rmse_bed", "rmse_icu", "rmse_vent", "seed"].map(String::from));
    h
}

impl<W: Write> EvalLogWriter<W> {
    pub fn new(out: W, dimension: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(eval_log_header(dimension))?;
        Ok(EvalLogWriter { inner, dimension })
    }

    /// Continues an existing log without writing a header.
    pub fn append(out: W, dimension: usize) -> Self {
        EvalLogWriter {
            inner: csv::Writer::from_writer(out),
            dimension,
        }
    }

    pub fn write(&mut self, id: usize, record: &EvaluationRecord) -> Result<()> {
        if record.vector.len() != self.dimension {
            return Err(Error::Structural(format!(
                "record has {} coordinates, log has {}",
                record.vector.len(),
                self.dimension
            )));
        }
        let mut row = vec![id.to_string()];
        row.extend(record.vector.iter().map(|x| x.to_string()));
        row.push(record.epsilon.to_string());
        match record.rmse {
            Some(r) => row.extend(r.iter().map(|x| x.to_string())),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.push(record.seed.to_string());
        self.inner.write_record(&row)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads an evaluation log written by [`EvalLogWriter`].
pub fn read_eval_log<R: Read>(input: R) -> Result<Vec<EvaluationRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let n = headers.len();
    if n < 6 || &headers[0] != "eval_id" || &headers[n - 5] != "epsilon" {
        return Err(Error::Structural("not an evaluation log (bad header)".into()));
    }
    let d = n - 6;
    if headers != eval_log_header(d) {
        return Err(Error::Structural("not an evaluation log (bad header)".into()));
    }
    let num = |s: &str, row: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Structural(format!("row {row}: malformed number `{s}`")))
    };
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 2;
        let vector = (1..=d).map(|j| num(&row[j], row_no)).collect::<Result<Vec<_>>>()?;
        let epsilon = num(&row[d + 1], row_no)?;
        let rmse = if row[d + 2].is_empty() {
            None
        } else {
            Some([num(&row[d + 2], row_no)?, num(&row[d + 3], row_no)?, num(&row[d + 4], row_no)?])
        };
        let seed = row[d + 5]
            .parse::<u64>()
            .map_err(|_| Error::Structural(format!("row {row_no}: malformed seed")))?;
        records.push(EvaluationRecord {
            vector,
            epsilon,
            rmse,
            replications: 0,
            seed,
            wall_time_ms: 0.0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrivals::{apply_peaks, generate_poisson_series};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 9, 1).unwrap()
    }

    fn series(bed: Vec<f64>, icu: Vec<f64>, vent: Vec<f64>) -> DemandSeries {
        DemandSeries { start_date: start(), values: [bed, icu, vent] }
    }

    /// Direct transcription of the weighted RMSE as a double loop.
    fn brute_force(truth: &DemandSeries, sim: &DemandSeries, w: [f64; 3]) -> f64 {
        let mut total = 0.0;
        for k in 0..3 {
            let mut s = 0.0;
            for t in 0..truth.values[k].len() {
                let e = truth.values[k][t] - sim.values[k][t];
                s += e * e;
            }
            total += w[k] * (s / truth.values[k].len() as f64).sqrt();
        }
        total
    }

    #[test]
    fn identical_series_score_zero() {
        let a = series(vec![1.0, 5.0], vec![2.0, 0.0], vec![0.5, 0.5]);
        assert_eq!(weighted_rmse(&a, &a, &Weights::default()).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_offset() {
        let truth = DemandSeries::zeros(start(), 10);
        let sim = series(vec![3.0; 10], vec![3.0; 10], vec![3.0; 10]);
        let e = weighted_rmse(&truth, &sim, &Weights::default()).unwrap();
        assert!((e - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_day_worked_example() {
        let truth = series(vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0, 0.0]);
        let sim = series(vec![3.0, 4.0], vec![1.0, 2.0], vec![0.0, 0.0]);
        let expected = (1.0 / 3.0) * (25.0f64 / 2.0).sqrt();
        let got = weighted_rmse(&truth, &sim, &Weights::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((brute_force(&truth, &sim, [1.0 / 3.0; 3]) - expected).abs() < 1e-12);
        assert!((got - 1.1785).abs() < 1e-4);
    }

    #[test]
    fn length_mismatch() {
        let a = DemandSeries::zeros(start(), 3);
        let b = DemandSeries::zeros(start(), 4);
        assert!(matches!(weighted_rmse(&a, &b, &Weights::default()), Err(Error::Structural(_))));
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(Weights::new(-1.0, 0.0, 0.0).is_err());
        assert!(Weights::new(1.0, 0.0, 2.0).is_ok());
    }

    fn canonical_spec() -> ObjectiveSpec {
        let config = ScenarioConfig::canonical();
        let base = generate_poisson_series(4.0, 91, config.horizon.start_date, 3).unwrap();
        let cases = apply_peaks(&base, &config.arrivals.peaks).unwrap();
        ObjectiveSpec::from_cases(config, cases).unwrap()
    }

    #[test]
    fn evaluate_defaults_is_finite_and_deterministic() {
        let spec = canonical_spec();
        let v = spec.scenario.registry.defaults();
        let a = evaluate(&v, &spec).unwrap();
        let b = evaluate(&v, &spec).unwrap();
        assert!(a.epsilon.is_finite() && a.epsilon > 0.0);
        assert!(a.same_result(&b));
        let r = a.rmse.unwrap();
        let recomputed: f64 = r.iter().map(|x| x / 3.0).sum();
        assert!((recomputed - a.epsilon).abs() < 1e-12);
        assert_eq!(a.replications, 10);
    }

    #[test]
    fn black_box_rejects_out_of_bounds() {
        let spec = canonical_spec();
        let mut x = spec.scenario.registry.defaults().into_inner();
        x[0] = 1000.0;
        assert!(spec.evaluate_point(&x).is_err());
    }

    #[test]
    fn eval_log_round_trip() {
        let records = vec![
            EvaluationRecord {
                vector: vec![1.5, 0.25],
                epsilon: 3.0,
                rmse: Some([1.0, 2.0, 6.0]),
                replications: 10,
                seed: 9,
                wall_time_ms: 1.0,
            },
            EvaluationRecord::scalar(vec![0.1, 0.2], 0.05),
        ];
        let mut buf = Vec::new();
        let mut w = EvalLogWriter::new(&mut buf, 2).unwrap();
        for (i, r) in records.iter().enumerate() {
            w.write(i, r).unwrap();
        }
        drop(w);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("eval_id,x_1,x_2,epsilon,rmse_bed,rmse_icu,rmse_vent,seed\n"));
        let back = read_eval_log(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].vector, records[0].vector);
        assert_eq!(back[0].rmse, records[0].rmse);
        assert_eq!(back[1].rmse, None);
        assert!(read_eval_log("a,b\n1,2\n".as_bytes()).is_err());
    }

    fn demand_strategy() -> impl Strategy<Value = (DemandSeries, DemandSeries)> {
        (1usize..40).prop_flat_map(|n| {
            let col = move || prop::collection::vec(0.0f64..50.0, n);
            (col(), col(), col(), col(), col(), col())
                .prop_map(|(a, b, c, d, e, f)| (series(a, b, c), series(d, e, f)))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_nonnegative((truth, sim) in demand_strategy()) {
            let w = Weights::default();
            let e = weighted_rmse(&truth, &sim, &w).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!((e - brute_force(&truth, &sim, w.0)).abs() < 1e-9);
        }

        #[test]
        fn day_permutation_invariance((truth, sim) in demand_strategy(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = truth.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permute = |d: &DemandSeries| DemandSeries {
                start_date: d.start_date,
                values: [0, 1, 2].map(|k| order.iter().map(|&i| d.values[k][i]).collect()),
            };
            let w = Weights::default();
            let a = weighted_rmse(&truth, &sim, &w).unwrap();
            let b = weighted_rmse(&permute(&truth), &permute(&sim), &w).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn weight_scaling((truth, sim) in demand_strategy(), c in 0.01f64..100.0) {
            let w = Weights([0.2, 0.5, 0.3]);
            let scaled = Weights(w.0.map(|x| x * c));
            let a = weighted_rmse(&truth, &sim, &w).unwrap();
            let b = weighted_rmse(&truth, &sim, &scaled).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
