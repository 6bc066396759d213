//! Discrete-event patient-flow engine.
//!
//! Each infected patient walks the bound state graph: in every state an
//! outgoing edge is chosen by a categorical draw over the edge probabilities
//! and the sojourn time is drawn from a Gamma distribution whose mean is the
//! edge's duration parameter. The walk ends in an absorbing state.
//!
//! Resources are unconstrained demand counters: admission never blocks and no
//! patient's path depends on any other patient. Processing a global
//! time-ordered event queue would therefore produce exactly the same per-patient
//! trajectories as sampling each trajectory on its own, given the same random
//! draws per patient. The engine samples trajectories patient by patient and
//! turns each visit into an occupancy interval. A patient in a resource-mapped
//! state over `[entry, exit)` occupies that resource on every integer day `d`
//! with `entry <= d < exit` (midnight census). Days at or beyond the horizon are
//! dropped, so patients still in hospital at the last day are censored there.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::arrivals::CaseSeries;
use crate::error::{Error, Result};
use crate::ground_truth::DemandSeries;
use crate::scenario::{states, BoundGraph, ParameterVector, ResourceKind, ScenarioConfig, StateGraph};

pub const DEFAULT_HOP_LIMIT: usize = 100;

/// SplitMix64 finalizer over `(master, index)`; used to derive independent
/// per-replication seeds.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gamma draw with shape `gamma_shape` and scale `mean_days / gamma_shape`.
pub fn sample_duration<R: Rng + ?Sized>(mean_days: f64, gamma_shape: f64, rng: &mut R) -> Result<f64> {
    if !(mean_days > 0.0) || !(gamma_shape > 0.0) {
        return Err(Error::param(format!(
            "sojourn mean ({mean_days}) and Gamma shape ({gamma_shape}) must be > 0"
        )));
    }
    let dist = Gamma::new(gamma_shape, mean_days / gamma_shape).map_err(|e| Error::param(e.to_string()))?;
    Ok(positive(dist.sample(rng), mean_days))
}

// Gamma draws can underflow to zero for small shapes; times must strictly increase.
fn positive(x: f64, mean: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        mean * f64::EPSILON
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Visit {
    pub state: usize,
    pub entry: f64,
    pub exit: f64,
}

/// A patient's trajectory: transient visits followed by an absorbing state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatientPath {
    pub infection_day: usize,
    pub visits: Vec<Visit>,
    pub terminal: usize,
    pub end_time: f64,
}

/// Bound graph with one precomputed Gamma sampler per edge.
#[derive(Clone, Debug)]
pub struct PathSampler {
    start: usize,
    // (target state, probability, sojourn distribution)
    outgoing: Vec<Vec<(usize, f64, Gamma<f64>, f64)>>,
    hop_limit: usize,
}

impl PathSampler {
    pub fn new(bound: &BoundGraph) -> Result<Self> {
        let outgoing = bound
            .outgoing
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .map(|e| {
                        if !(e.mean_days > 0.0) || !(bound.gamma_shape > 0.0) {
                            return Err(Error::param("sojourn mean and Gamma shape must be > 0"));
                        }
                        let g = Gamma::new(bound.gamma_shape, e.mean_days / bound.gamma_shape)
                            .map_err(|err| Error::param(err.to_string()))?;
                        Ok((e.to, e.probability, g, e.mean_days))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSampler {
            start: bound.start,
            outgoing,
            hop_limit: DEFAULT_HOP_LIMIT,
        })
    }

    pub fn with_hop_limit(mut self, hop_limit: usize) -> Self {
        self.hop_limit = hop_limit;
        self
    }

    /// Samples one trajectory starting in the start state at `infection_day`.
    pub fn sample<R: Rng + ?Sized>(&self, infection_day: usize, rng: &mut R) -> Result<PatientPath> {
        let mut visits = Vec::with_capacity(4);
        let mut state = self.start;
        let mut time = infection_day as f64;
        loop {
            let edges = &self.outgoing[state];
            if edges.is_empty() {
                return Ok(PatientPath {
                    infection_day,
                    visits,
                    terminal: state,
                    end_time: time,
                });
            }
            if visits.len() >= self.hop_limit {
                return Err(Error::Simulation(format!(
                    "patient path did not terminate within {} transitions",
                    self.hop_limit
                )));
            }
            let u: f64 = rng.random();
            let mut cumulative = 0.0;
            let mut chosen = None;
            for (i, edge) in edges.iter().enumerate() {
                if edge.1 <= 0.0 {
                    continue;
                }
                cumulative += edge.1;
                chosen = Some(i);
                if u < cumulative {
                    break;
                }
            }
            let Some(i) = chosen else {
                return Err(Error::Simulation(format!("state {state} has no edge with positive probability")));
            };
            let (to, _, gamma, mean) = &edges[i];
            let exit = time + positive(gamma.sample(rng), *mean);
            visits.push(Visit { state, entry: time, exit });
            state = *to;
            time = exit;
        }
    }
}

/// Samples one trajectory through `bound`.
pub fn sample_patient_path<R: Rng + ?Sized>(
    bound: &BoundGraph,
    infection_day: usize,
    rng: &mut R,
) -> Result<PatientPath> {
    PathSampler::new(bound)?.sample(infection_day, rng)
}

/// Half-open integer day range `[lo, hi)` covered by `[entry, exit)`, clipped to the horizon.
pub fn occupied_days(entry: f64, exit: f64, horizon: usize) -> (usize, usize) {
    let clip = |x: f64| x.ceil().clamp(0.0, horizon as f64) as usize;
    (clip(entry), clip(exit))
}

/// Daily demand implied by a set of paths.
pub fn occupancy_from_paths(
    paths: &[PatientPath],
    table: &[Option<ResourceKind>],
    demand: &mut DemandSeries,
) {
    let horizon = demand.len();
    let mut diff = [vec![0i64; horizon + 1], vec![0i64; horizon + 1], vec![0i64; horizon + 1]];
    for path in paths {
        add_path(path, table, horizon, &mut diff);
    }
    accumulate(&diff, demand);
}

fn add_path(path: &PatientPath, table: &[Option<ResourceKind>], horizon: usize, diff: &mut [Vec<i64>; 3]) {
    for v in &path.visits {
        if let Some(kind) = table[v.state] {
            let (lo, hi) = occupied_days(v.entry, v.exit, horizon);
            if lo < hi {
                diff[kind.index()][lo] += 1;
                diff[kind.index()][hi] -= 1;
            }
        }
    }
}

fn accumulate(diff: &[Vec<i64>; 3], demand: &mut DemandSeries) {
    for k in ResourceKind::ALL {
        let out = demand.get_mut(k);
        let mut level = 0i64;
        for (t, slot) in out.iter_mut().enumerate() {
            level += diff[k.index()][t];
            *slot = level as f64;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    /// Simulated demand; whole numbers for a single run.
    pub demand: DemandSeries,
    pub patient_count: usize,
    pub recovered: usize,
    pub deceased: usize,
}

struct Prepared {
    sampler: PathSampler,
    table: Vec<Option<ResourceKind>>,
    healthy: Option<usize>,
    dead: Option<usize>,
}

fn prepare(config: &ScenarioConfig, vector: &ParameterVector) -> Result<Prepared> {
    let bound = config.graph.bind(&config.registry, vector)?;
    Ok(Prepared {
        sampler: PathSampler::new(&bound)?,
        table: config.mapping.table(&config.graph),
        healthy: config.graph.state_index(states::HEA),
        dead: config.graph.state_index(states::DEA),
    })
}

fn run(
    prepared: &Prepared,
    series: &CaseSeries,
    horizon: usize,
    seed: u64,
    mut keep: Option<&mut Vec<PatientPath>>,
) -> Result<SimulationResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diff = [vec![0i64; horizon + 1], vec![0i64; horizon + 1], vec![0i64; horizon + 1]];
    let (mut patients, mut recovered, mut deceased) = (0, 0, 0);
    for (day, &count) in series.counts.iter().enumerate().take(horizon) {
        for _ in 0..count {
            let path = prepared.sampler.sample(day, &mut rng)?;
            add_path(&path, &prepared.table, horizon, &mut diff);
            patients += 1;
            if Some(path.terminal) == prepared.healthy {
                recovered += 1;
            } else if Some(path.terminal) == prepared.dead {
                deceased += 1;
            }
            if let Some(paths) = keep.as_mut() {
                paths.push(path);
            }
        }
    }
    let mut demand = DemandSeries::zeros(series.start_date, horizon);
    accumulate(&diff, &mut demand);
    Ok(SimulationResult {
        demand,
        patient_count: patients,
        recovered,
        deceased,
    })
}

fn check_series(config: &ScenarioConfig, series: &CaseSeries) -> Result<()> {
    if series.len() != config.horizon.days {
        return Err(Error::Structural(format!(
            "case series has {} days, horizon is {}",
            series.len(),
            config.horizon.days
        )));
    }
    Ok(())
}

/// One stochastic run of the whole scenario.
pub fn simulate_demand(
    config: &ScenarioConfig,
    vector: &ParameterVector,
    series: &CaseSeries,
    seed: u64,
) -> Result<SimulationResult> {
    check_series(config, series)?;
    run(&prepare(config, vector)?, series, config.horizon.days, seed, None)
}

/// Like [`simulate_demand`] but also returns every sampled path, in patient order.
pub fn simulate_with_paths(
    config: &ScenarioConfig,
    vector: &ParameterVector,
    series: &CaseSeries,
    seed: u64,
) -> Result<(SimulationResult, Vec<PatientPath>)> {
    check_series(config, series)?;
    let mut paths = Vec::new();
    let result = run(&prepare(config, vector)?, series, config.horizon.days, seed, Some(&mut paths))?;
    Ok((result, paths))
}

/// Per-day median over replications plus the min/max envelope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replicated {
    pub median: DemandSeries,
    pub min: DemandSeries,
    pub max: DemandSeries,
    pub runs: Vec<SimulationResult>,
}

pub fn replication_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| mix_seed(master_seed, i)).collect()
}

/// Runs `config.replications` independent simulations with seeds derived from
/// `config.seed` and aggregates them per day.
pub fn replicate(config: &ScenarioConfig, vector: &ParameterVector, series: &CaseSeries) -> Result<Replicated> {
    check_series(config, series)?;
    if config.replications == 0 {
        return Err(Error::param("replication count must be at least 1"));
    }
    let prepared = prepare(config, vector)?;
    let seeds = replication_seeds(config.seed, config.replications);
    let horizon = config.horizon.days;
    let one = |&seed: &u64| run(&prepared, series, horizon, seed, None);
    #[cfg(feature = "parallel")]
    let runs: Vec<SimulationResult> = {
        use rayon::prelude::*;
        seeds.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<SimulationResult> = seeds.iter().map(one).collect::<Result<_>>()?;
    Ok(aggregate(runs))
}

/// Median and envelope of equal-length runs.
pub fn aggregate(runs: Vec<SimulationResult>) -> Replicated {
    let first = &runs[0].demand;
    let (start, horizon) = (first.start_date, first.len());
    let mut median = DemandSeries::zeros(start, horizon);
    let mut min = DemandSeries::zeros(start, horizon);
    let mut max = DemandSeries::zeros(start, horizon);
    let mut column = Vec::with_capacity(runs.len());
    for k in ResourceKind::ALL {
        for t in 0..horizon {
            column.clear();
            column.extend(runs.iter().map(|r| r.demand.get(k)[t]));
            column.sort_by(f64::total_cmp);
            min.get_mut(k)[t] = column[0];
            max.get_mut(k)[t] = column[column.len() - 1];
            median.get_mut(k)[t] = median_of_sorted(&column);
        }
    }
    Replicated { median, min, max, runs }
}

pub fn median_of_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Serialize)]
struct TraceVisit<'a> {
    state: &'a str,
    entry: f64,
    exit: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    patient: usize,
    infection_day: usize,
    visits: Vec<TraceVisit<'a>>,
    terminal: &'a str,
    end_time: f64,
}

/// Writes one JSON object per path.
pub fn write_path_trace<W: Write>(mut out: W, graph: &StateGraph, paths: &[PatientPath]) -> Result<()> {
    let name = |s: usize| graph.states()[s].as_str();
    for (i, p) in paths.iter().enumerate() {
        let line = TraceLine {
            patient: i,
            infection_day: p.infection_day,
            visits: p
                .visits
                .iter()
                .map(|v| TraceVisit { state: name(v.state), entry: v.entry, exit: v.exit })
                .collect(),
            terminal: name(p.terminal),
            end_time: p.end_time,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
