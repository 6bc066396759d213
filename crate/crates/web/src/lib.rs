//! Browser bindings: synthetic data, one simulation, and a small two-parameter
//! calibration with its error surface.
//!
//! Each exported function takes and returns JSON strings. The `*_json`
//! functions hold the logic so they can be tested natively.

use serde::Serialize;
use serde_json::{Map, Value};
use wasm_bindgen::prelude::*;

use bubsim::arrivals::{synthetic_cases, CaseSeries};
use bubsim::engine::replicate;
use bubsim::ground_truth::{ground_truth_demand, DemandSeries};
use bubsim::objective::{rmse_components, weighted_rmse, BlackBox, EvaluationRecord, ObjectiveSpec, Weights};
use bubsim::optimizer::{fit_surrogate, optimize, OptimizerOptions, SurrogateOptions};
use bubsim::scenario::{validate, ParameterVector, ResourceKind, ScenarioConfig};
use bubsim::sensitivity::contour_grid;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Series {
    bed: Vec<f64>,
    icu: Vec<f64>,
    vent: Vec<f64>,
}

impl From<&DemandSeries> for Series {
    fn from(d: &DemandSeries) -> Self {
        Series {
            bed: d.get(ResourceKind::Bed).to_vec(),
            icu: d.get(ResourceKind::Icu).to_vec(),
            vent: d.get(ResourceKind::Vent).to_vec(),
        }
    }
}

fn scenario(seed: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::canonical();
    c.seed = seed as u64;
    c
}

fn cases(config: &ScenarioConfig) -> Res<CaseSeries> {
    synthetic_cases(&config.arrivals, &config.horizon, config.seed).map_err(err)
}

/// Registry entries: name, bounds and default of every parameter.
pub fn parameters_json() -> String {
    let config = ScenarioConfig::canonical();
    let list: Vec<Value> = config
        .registry
        .entries()
        .iter()
        .map(|e| {
            serde_json::json!({
                "name": e.name,
                "lower": e.lower,
                "upper": e.upper,
                "default": e.default,
            })
        })
        .collect();
    Value::Array(list).to_string()
}

/// Infection series and reference demand for the canonical scenario.
pub fn generate_json(seed: u32) -> Res<String> {
    let config = scenario(seed);
    let cases = cases(&config)?;
    let truth = ground_truth_demand(&cases, &config.rates).map_err(err)?;
    let dates: Vec<String> = (0..cases.len()).map(|t| cases.date(t).to_string()).collect();
    let out = serde_json::json!({
        "dates": dates,
        "cases": cases.counts,
        "truth": Series::from(&truth),
    });
    Ok(out.to_string())
}

/// Simulates `{"name": value}` overrides of the defaults and scores the median
/// demand against the reference.
pub fn simulate_json(seed: u32, params: &str) -> Res<String> {
    let config = scenario(seed);
    let overrides: Map<String, Value> = if params.trim().is_empty() {
        Map::new()
    } else {
        serde_json::from_str(params).map_err(err)?
    };
    let mut values = config.registry.defaults().into_inner();
    for (name, v) in &overrides {
        let i = config.registry.index_of(name).ok_or_else(|| format!("unknown parameter `{name}`"))?;
        values[i] = v.as_f64().ok_or_else(|| format!("`{name}` is not a number"))?;
    }
    let vector = ParameterVector::from_raw(values);
    let report = validate(&config.graph, &config.registry, &vector).map_err(err)?;
    if !report.is_valid() {
        return Err(format!("invalid parameters:\n{report}"));
    }
    let cases = cases(&config)?;
    let truth = ground_truth_demand(&cases, &config.rates).map_err(err)?;
    let rep = replicate(&config, &vector, &cases).map_err(err)?;
    let out = serde_json::json!({
        "epsilon": weighted_rmse(&truth, &rep.median, &Weights::default()).map_err(err)?,
        "rmse": rmse_components(&truth, &rep.median).map_err(err)?,
        "median": Series::from(&rep.median),
        "min": Series::from(&rep.min),
        "max": Series::from(&rep.max),
        "truth": Series::from(&truth),
    });
    Ok(out.to_string())
}

/// Objective restricted to two parameters; the rest stay at their defaults.
struct Pair {
    spec: ObjectiveSpec,
    index: [usize; 2],
}

impl Pair {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.spec.scenario.registry.defaults().into_inner();
        v[self.index[0]] = x[0];
        v[self.index[1]] = x[1];
        v
    }
}

impl BlackBox for Pair {
    fn bounds(&self) -> Vec<(f64, f64)> {
        let all = self.spec.scenario.registry.bounds();
        vec![all[self.index[0]], all[self.index[1]]]
    }

    fn evaluate_point(&self, x: &[f64]) -> bubsim::Result<EvaluationRecord> {
        let v = self.spec.scenario.registry.vector(self.full(x))?;
        let mut record = self.spec.evaluate(&v)?;
        record.vector = x.to_vec();
        Ok(record)
    }
}

/// Calibrates two parameters with `budget` evaluations and returns the best
/// point, the best-so-far trace and the surrogate's error surface.
pub fn calibrate_json(seed: u32, var_x: &str, var_y: &str, budget: usize, grid: usize) -> Res<String> {
    let config = scenario(seed);
    let registry = &config.registry;
    let ix = registry.index_of(var_x).ok_or_else(|| format!("unknown parameter `{var_x}`"))?;
    let iy = registry.index_of(var_y).ok_or_else(|| format!("unknown parameter `{var_y}`"))?;
    if ix == iy {
        return Err("choose two different parameters".into());
    }
    let cases = cases(&config)?;
    let spec = ObjectiveSpec::from_cases(config.clone(), cases).map_err(err)?;
    let pair = Pair { spec, index: [ix, iy] };
    let default_epsilon = pair.spec.evaluate(&registry.defaults()).map_err(err)?.epsilon;
    let options = OptimizerOptions {
        budget,
        seed: seed as u64,
        ..Default::default()
    };
    let state = optimize(&pair, &options).map_err(err)?;
    let best = state.best().ok_or("no evaluations")?;

    let names = vec![var_x.to_owned(), var_y.to_owned()];
    let surrogate = fit_surrogate(&state.history, &pair.bounds(), &SurrogateOptions::default()).map_err(err)?;
    let contour = contour_grid(&surrogate, &names, var_x, var_y, grid, &best.vector).map_err(err)?;
    let points: Vec<[f64; 3]> = state.history.iter().map(|r| [r.vector[0], r.vector[1], r.epsilon]).collect();

    let best_vector = registry.vector(pair.full(&best.vector)).map_err(err)?;
    let rep = replicate(&config, &best_vector, &pair.spec.cases).map_err(err)?;
    let out = serde_json::json!({
        "var_x": var_x,
        "var_y": var_y,
        "best": { var_x: best.vector[0], var_y: best.vector[1] },
        "best_epsilon": best.epsilon,
        "default_epsilon": default_epsilon,
        "trace": state.best_trace(),
        "points": points,
        "contour": { "x": contour.x, "y": contour.y, "values": contour.values },
        "median": Series::from(&rep.median),
    });
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn parameters() -> String {
    parameters_json()
}

#[wasm_bindgen]
pub fn generate(seed: u32) -> Result<String, JsError> {
    generate_json(seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(seed: u32, params: &str) -> Result<String, JsError> {
    simulate_json(seed, params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn calibrate(seed: u32, var_x: &str, var_y: &str, budget: usize, grid: usize) -> Result<String, JsError> {
    calibrate_json(seed, var_x, var_y, budget, grid).map_err(|e| JsError::new(&e))
}
