use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use log::info;
use serde_json::{Map, Value};

use bubsim::arrivals::{load_case_series, synthetic_cases, CaseSeries};
use bubsim::engine::replicate;
use bubsim::ground_truth::{ground_truth_demand, write_demand_csv};
use bubsim::objective::{
    read_eval_log, rmse_components, weighted_rmse, EvalLogWriter, EvaluationRecord, ObjectiveSpec, Weights,
};
use bubsim::optimizer::{self, fit_surrogate, OptimizerOptions, OptimizerState, SurrogateOptions};
use bubsim::scenario::{validate, ParameterRegistry, ParameterVector, ScenarioConfig};
use bubsim::sensitivity::{contour_grid, fit_tree, stepwise_regression, RegressionReport};
use bubsim::Error;

use crate::run::{write_atomic, CliResult, Failure, RunDir};
use crate::{AnalyzeArgs, Cli, Command, OptimizeArgs, SimulateArgs};

struct Context {
    config: ScenarioConfig,
    config_path: Option<std::path::PathBuf>,
    cases_path: Option<std::path::PathBuf>,
    out: Option<std::path::PathBuf>,
    seed_override: Option<u64>,
}

impl Context {
    fn cases(&self) -> CliResult<CaseSeries> {
        let h = &self.config.horizon;
        Ok(match &self.cases_path {
            Some(p) => load_case_series(p, h.start_date, h.days)?,
            None => synthetic_cases(&self.config.arrivals, h, self.config.seed)?,
        })
    }

    fn run_dir(&self, command: &str) -> CliResult<RunDir> {
        RunDir::create(self.out.as_deref(), command, self.config_path.as_deref(), self.config.seed)
    }
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(format!("cannot start thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::canonical(),
    };
    config.check()?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let ctx = Context {
        config,
        config_path: cli.config,
        cases_path: cli.cases,
        out: cli.out,
        seed_override: cli.seed,
    };
    match cli.command {
        Command::Generate => generate(&ctx),
        Command::Simulate(args) => simulate(&ctx, &args),
        Command::Optimize(args) => optimize(ctx, &args),
        Command::Analyze(args) => analyze(&ctx, &args),
    }
}

fn generate(ctx: &Context) -> CliResult<()> {
    let cases = ctx.cases()?;
    let truth = ground_truth_demand(&cases, &ctx.config.rates)?;
    let mut dir = ctx.run_dir("generate")?;
    cases.write_csv(BufWriter::new(dir.create_file("cases.csv")?))?;
    truth.write_csv(BufWriter::new(dir.create_file("ground_truth.csv")?))?;
    let path = dir.finish()?;
    println!("{} days, {} infections", cases.len(), cases.total());
    println!("wrote {}", path.display());
    Ok(())
}

/// Reads a `{"name": value, ...}` object; names not in it keep their defaults.
fn read_params(path: &Path, registry: &ParameterRegistry) -> CliResult<ParameterVector> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: String| Failure::input(format!("{}: {msg}", path.display()));
    let obj: Map<String, Value> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut values = registry.defaults().into_inner();
    for (name, v) in &obj {
        let i = registry
            .index_of(name)
            .ok_or_else(|| bad(format!("unknown parameter `{name}`")))?;
        values[i] = v
            .as_f64()
            .ok_or_else(|| bad(format!("value of `{name}` is not a number")))?;
    }
    Ok(ParameterVector::from_raw(values))
}

fn params_json(registry: &ParameterRegistry, values: &[f64]) -> CliResult<String> {
    let mut obj = Map::new();
    for (name, &v) in registry.names().zip(values) {
        obj.insert(name.to_owned(), Value::from(v));
    }
    Ok(serde_json::to_string_pretty(&Value::Object(obj))?)
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> CliResult<()> {
    let config = &ctx.config;
    let vector = match &args.params {
        Some(p) => read_params(p, &config.registry)?,
        None => config.registry.defaults(),
    };
    let report = validate(&config.graph, &config.registry, &vector)?;
    if !report.is_valid() {
        return Err(Error::Validation(report).into());
    }
    let cases = ctx.cases()?;
    let truth = ground_truth_demand(&cases, &config.rates)?;
    let replicated = replicate(config, &vector, &cases)?;
    let rmse = rmse_components(&truth, &replicated.median)?;
    let epsilon = weighted_rmse(&truth, &replicated.median, &Weights::default())?;

    let mut dir = ctx.run_dir("simulate")?;
    write_demand_csv(
        BufWriter::new(dir.create_file("demand.csv")?),
        &replicated.median,
        Some((&replicated.min, &replicated.max)),
    )?;
    dir.write_string("params.json", &params_json(&config.registry, vector.as_slice())?)?;
    let path = dir.finish()?;
    println!("epsilon {epsilon}");
    println!("rmse bed {} icu {} vent {}", rmse[0], rmse[1], rmse[2]);
    println!("wrote {}", path.display());
    Ok(())
}

fn optimize(mut ctx: Context, args: &OptimizeArgs) -> CliResult<()> {
    let resumed = match &args.resume {
        Some(p) => {
            let state = OptimizerState::load(p).map_err(|e| match e {
                Error::Io(io) => Failure::input(format!("cannot read checkpoint {}: {io}", p.display())),
                other => Failure::input(format!("checkpoint {}: {other}", p.display())),
            })?;
            if ctx.seed_override.is_some_and(|s| s != state.seed) {
                return Err(Failure::input(format!(
                    "--seed {} differs from the checkpoint's seed {}",
                    ctx.config.seed, state.seed
                )));
            }
            if args.design_size.is_some_and(|m| m != state.design_size) {
                return Err(Failure::input("--design-size differs from the checkpoint"));
            }
            if args.budget < state.history.len() {
                return Err(Failure::input(format!(
                    "--budget {} is below the {} evaluations already in the checkpoint",
                    args.budget,
                    state.history.len()
                )));
            }
            ctx.config.seed = state.seed;
            if ctx.out.is_none() {
                ctx.out = p.parent().map(Path::to_owned);
            }
            Some(state)
        }
        None => None,
    };
    let config = ctx.config.clone();
    let names: Vec<String> = config.registry.names().map(String::from).collect();
    let d = names.len();
    let options = OptimizerOptions {
        budget: args.budget,
        design_size: args.design_size,
        seed: config.seed,
        ..Default::default()
    };
    let design_size = args.design_size.unwrap_or_else(|| optimizer::default_design_size(d));
    if args.budget < design_size {
        return Err(Failure::input(format!(
            "--budget {} is smaller than the initial design size {design_size}",
            args.budget
        )));
    }
    let state = match resumed {
        Some(mut s) => {
            s.budget = args.budget;
            s
        }
        None => OptimizerState::new(config.registry.bounds(), args.budget, design_size, config.seed),
    };

    let spec = ObjectiveSpec::from_cases(config.clone(), ctx.cases()?)?;
    let default_record = spec.evaluate(&config.registry.defaults())?;
    info!("default vector: epsilon {:.4}", default_record.epsilon);

    let mut dir = ctx.run_dir("optimize")?;
    let log_path = dir.output("eval_log.csv");
    let checkpoint_path = dir.output("checkpoint.json");
    // the log is rebuilt from the checkpoint, so a resumed run never duplicates rows
    let mut log = EvalLogWriter::new(BufWriter::new(File::create(&log_path)?), d)?;
    for (i, r) in state.history.iter().enumerate() {
        log.write(i, r)?;
    }
    drop(log);
    let mut log = EvalLogWriter::append(OpenOptions::new().append(true).open(&log_path)?, d);
    let final_state = optimizer::resume(&spec, state, &options, |s, i| {
        log.write(i, &s.history[i])?;
        let json = serde_json::to_string(s)?;
        write_atomic(&checkpoint_path, &json).map_err(|f| Error::Io(std::io::Error::other(f.message)))?;
        Ok(())
    })?;
    write_atomic(&checkpoint_path, &serde_json::to_string(&final_state)?)?;

    let best = final_state
        .best()
        .ok_or_else(|| Failure::runtime("no evaluations were made"))?;
    dir.write_string("best_params.json", &params_json(&config.registry, &best.vector)?)?;
    let path = dir.finish()?;
    println!("evaluations {}", final_state.history.len());
    println!("default epsilon {}", default_record.epsilon);
    println!("best epsilon {}", best.epsilon);
    println!(
        "improvement {:.1}%",
        100.0 * (1.0 - best.epsilon / default_record.epsilon)
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// The two variables to plot: most significant selected variables first, then
/// the last-eliminated ones, then registry order.
fn default_contour_axes(report: &RegressionReport, names: &[String]) -> (String, String) {
    let mut order: Vec<String> = report.by_significance().iter().map(|c| c.name.clone()).collect();
    for step in report.trace.iter().rev() {
        order.push(step.removed.clone());
    }
    order.extend(names.iter().cloned());
    let mut picked: Vec<String> = Vec::new();
    for n in order {
        if !picked.contains(&n) {
            picked.push(n);
        }
        if picked.len() == 2 {
            break;
        }
    }
    (picked[0].clone(), picked[1].clone())
}

fn analyze(ctx: &Context, args: &AnalyzeArgs) -> CliResult<()> {
    let file = File::open(&args.log)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.log.display())))?;
    let records: Vec<EvaluationRecord> = read_eval_log(file)?;
    let registry = &ctx.config.registry;
    let names: Vec<String> = registry.names().map(String::from).collect();
    if let Some(r) = records.first() {
        if r.vector.len() != names.len() {
            return Err(Failure::input(format!(
                "log has {} parameters, the scenario registry has {}",
                r.vector.len(),
                names.len()
            )));
        }
    }
    if names.len() < 2 {
        return Err(Failure::input("contour export needs at least two parameters"));
    }

    let report = stepwise_regression(&records, &names, args.alpha)?;
    let tree = fit_tree(&records, &names, args.max_depth, args.min_leaf)?;
    let (dx, dy) = default_contour_axes(&report, &names);
    let var_x = args.contour_x.clone().unwrap_or(dx);
    let var_y = args.contour_y.clone().unwrap_or(dy);
    let surrogate = fit_surrogate(&records, &registry.bounds(), &SurrogateOptions::default())?;
    let anchor = records
        .iter()
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .map(|r| r.vector.clone())
        .ok_or_else(|| Failure::input("evaluation log is empty"))?;
    let grid = contour_grid(&surrogate, &names, &var_x, &var_y, args.grid, &anchor)?;

    let mut dir = ctx.run_dir("analyze")?;
    dir.write_string("regression.md", &report.to_markdown())?;
    report.write_csv(BufWriter::new(dir.create_file("regression.csv")?))?;
    dir.write_string("tree.txt", &tree.to_text())?;
    dir.write_string("tree.dot", &tree.to_dot())?;
    grid.write_csv(BufWriter::new(dir.create_file("contour.csv")?))?;
    let path = dir.finish()?;
    println!("selected {}", report.selected().join(", "));
    println!("tree splits {}", tree.split_variables().join(", "));
    println!("contour {var_x} x {var_y}");
    println!("wrote {}", path.display());
    Ok(())
}
