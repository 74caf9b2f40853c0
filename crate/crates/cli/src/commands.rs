use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lcsim_core::metrics::{arrival_time_errors, violation_rates, ArrivalReport, Rate, RolloutRecord, ViolationRates};
use lcsim_core::planner::checkpoint::write_losses;
use lcsim_core::planner::corpus::{fit_normalizer, sample_from_rollout, straight_road_corpus};
use lcsim_core::planner::{save_checkpoint, train, CorpusConfig, ModelConfig, NoiseSchedule, PlannerModel, TrainConfig};
use lcsim_core::policy::{PolicyAssignment, PolicyKind};
use lcsim_core::router::complete_routes_for;
use lcsim_core::scenario::{generate_grid, AgentId, GridParams, Scenario};
use lcsim_core::sim::{write_ndjson, SimConfig, Simulator};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{create_dir, expand, parallel_map, read_scenario, scenario_bytes, scenario_suffix, write, write_json};
use crate::run::{prepare, Prepared};

/// Reach radius and error threshold of the arrival report, metres / seconds.
pub const ARRIVAL_RADIUS: f64 = 5.0;
pub const ARRIVAL_THRESHOLD: f64 = 20.0;
const ARRIVAL_EDGES: [f64; 13] = [-60.0, -50.0, -40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0];

// ------------------------------------------------------------------ generate

pub struct GenerateArgs {
    pub params: GridParams,
    pub out: PathBuf,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let scenario = generate_grid(&args.params).map_err(|e| CliError::Invalid(e.to_string()))?;
    let bytes = scenario_bytes(&scenario, &args.out)?;
    write(&args.out, &bytes)?;
    println!(
        "wrote {} ({} agents, {} lanes)",
        args.out.display(),
        scenario.agents.len(),
        scenario.map.lanes.len()
    );
    Ok(())
}

// ------------------------------------------------------------------ route

pub struct RouteArgs {
    pub scenario: PathBuf,
    pub agents: Option<Vec<u64>>,
    pub speed: f64,
    pub out: Option<PathBuf>,
    pub in_place: bool,
}

pub fn route(args: &RouteArgs) -> Result<()> {
    let target = match (&args.out, args.in_place) {
        (Some(_), true) => return Err(CliError::Invalid("--out and --in-place are mutually exclusive".into())),
        (Some(out), false) => out.clone(),
        (None, true) => args.scenario.clone(),
        (None, false) => {
            return Err(CliError::Invalid(
                "refusing to modify the input: pass --out PATH or --in-place".into(),
            ))
        }
    };
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(CliError::Invalid(format!("--speed must be positive, got {}", args.speed)));
    }
    let mut scenario = read_scenario(&args.scenario)?;
    if let Some(ids) = &args.agents {
        if let Some(missing) = ids.iter().find(|id| !scenario.agents.iter().any(|a| a.id == AgentId(**id))) {
            return Err(CliError::invalid(&args.scenario, format!("no agent {missing}")));
        }
    }
    let select = |id: AgentId| args.agents.as_ref().is_none_or(|ids| ids.contains(&id.0));
    let done = complete_routes_for(&mut scenario, select, args.speed).map_err(|e| CliError::invalid(&args.scenario, e))?;
    let bytes = scenario_bytes(&scenario, &args.scenario)?;
    write(&target, &bytes)?;
    println!("completed {done} route(s), wrote {}", target.display());
    Ok(())
}

// ------------------------------------------------------------------ simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seeds: Vec<u64>,
    pub violations: ViolationRates,
    pub arrival: ArrivalReport,
}

fn run_records(prepared: &Prepared, seeds: &[u64], jobs: usize) -> Result<Vec<crate::run::SeedRun>> {
    parallel_map(seeds, jobs, |s| prepared.run_seed(*s)).into_iter().collect()
}

pub fn simulate(config: &Path, jobs: usize) -> Result<()> {
    let prepared = prepare(config)?;
    let cfg = &prepared.config;
    let out = &cfg.output;
    if out.exists() && !out.is_dir() {
        return Err(CliError::invalid(out, "output exists and is not a directory"));
    }
    let scenario = scenario_bytes(&prepared.scenario, &cfg.scenario)?;
    let runs = run_records(&prepared, &cfg.seeds, jobs)?;

    create_dir(out)?;
    write(&out.join("scenario.lcs.json"), &scenario)?;
    let mut events = Vec::new();
    write_ndjson(&mut events, &runs[0].record.events).map_err(|e| CliError::runtime(out, e))?;
    write(&out.join("events.ndjson"), &events)?;
    for run in &runs {
        let seed = run.record.seed;
        write_json(&out.join("records").join(format!("seed-{seed}.json")), &run.record)?;
        for (k, svg) in run.frames.iter().enumerate() {
            write(&out.join("frames").join(format!("seed-{seed}")).join(format!("{k:05}.svg")), svg.as_bytes())?;
        }
    }
    let records: Vec<RolloutRecord> = runs.into_iter().map(|r| r.record).collect();
    let report = RunReport {
        seeds: cfg.seeds.clone(),
        violations: violation_rates(&records),
        arrival: arrival_time_errors(&records, ARRIVAL_RADIUS, ARRIVAL_THRESHOLD, &ARRIVAL_EDGES),
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "{} seed(s), {:.1} s each: collision {:.2}%, off-road {:.2}% -> {}",
        records.len(),
        cfg.duration,
        report.violations.collision_pct.mean,
        report.violations.offroad_pct.mean,
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ evaluate

pub enum EvalInput {
    Records(Vec<PathBuf>),
    Config(PathBuf),
}

/// Metrics over a set of rollouts; rates carry the standard error across
/// records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub repeats: usize,
    pub collision_pct: Rate,
    pub offroad_pct: Rate,
    pub scenario_collision_pct: f64,
    pub arrival_within_pct: Rate,
    pub arrival_mean_error: Option<f64>,
}

pub fn evaluate(input: &EvalInput, repeat: usize, jobs: usize, out: Option<&Path>) -> Result<()> {
    if repeat == 0 {
        return Err(CliError::Invalid("--repeat must be at least 1".into()));
    }
    let records: Vec<RolloutRecord> = match input {
        EvalInput::Records(paths) => {
            if repeat != 1 {
                return Err(CliError::Invalid("--repeat only applies to --config runs".into()));
            }
            let files = expand(paths, ".json")?;
            if files.is_empty() {
                return Err(CliError::Invalid("no record files given".into()));
            }
            files
                .iter()
                .map(|f| {
                    let text = std::fs::read_to_string(f).map_err(|e| CliError::invalid(f, e))?;
                    serde_json::from_str(&text).map_err(|e| CliError::invalid(f, e))
                })
                .collect::<Result<_>>()?
        }
        EvalInput::Config(path) => {
            let prepared = prepare(path)?;
            // repetition r shifts every seed by r * 1_000_003
            let seeds: Vec<u64> = (0..repeat as u64)
                .flat_map(|r| prepared.config.seeds.iter().map(move |s| s.wrapping_add(r * 1_000_003)))
                .collect();
            run_records(&prepared, &seeds, jobs)?.into_iter().map(|r| r.record).collect()
        }
    };
    let v = violation_rates(&records);
    let per_record: Vec<ArrivalReport> = records
        .iter()
        .map(|r| arrival_time_errors(std::slice::from_ref(r), ARRIVAL_RADIUS, ARRIVAL_THRESHOLD, &ARRIVAL_EDGES))
        .collect();
    let all = arrival_time_errors(&records, ARRIVAL_RADIUS, ARRIVAL_THRESHOLD, &ARRIVAL_EDGES);
    let report = EvalReport {
        records: records.len(),
        repeats: repeat,
        collision_pct: v.collision_pct,
        offroad_pct: v.offroad_pct,
        scenario_collision_pct: v.scenario_collision_pct,
        arrival_within_pct: Rate::of(&per_record.iter().map(|a| a.within_pct).collect::<Vec<_>>()),
        arrival_mean_error: all.mean_error,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

// ------------------------------------------------------------------ train

/// Training configuration file; every table is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: NoiseSchedule,
    /// Synthetic corpus used when no corpus directory is given.
    pub corpus: CorpusConfig,
    /// Parameter initialization seed.
    pub init_seed: u64,
    /// Policy that rolls corpus scenarios forward to record futures.
    pub corpus_policy: Option<PolicyKind>,
}

pub struct TrainArgs {
    pub corpus: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub losses: Option<PathBuf>,
}

pub fn train_planner(args: &TrainArgs) -> Result<()> {
    let file: TrainFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(path, e))?;
            toml::from_str(&text).map_err(|e| CliError::invalid(path, e.to_string().trim_end()))?
        }
        None => TrainFile::default(),
    };
    let origin = args.config.clone().unwrap_or_else(|| PathBuf::from("<defaults>"));
    file.model.validate().map_err(|e| CliError::invalid(&origin, e))?;
    file.schedule.validate().map_err(|e| CliError::invalid(&origin, e))?;
    let t = Instant::now();
    let data = match &args.corpus {
        Some(dir) => {
            let files = expand(std::slice::from_ref(dir), &scenario_suffix())?;
            if files.is_empty() {
                return Err(CliError::invalid(dir, "no scenario files"));
            }
            let scenarios: Vec<Scenario> = files.iter().map(|f| read_scenario(f)).collect::<Result<_>>()?;
            let assign = PolicyAssignment::uniform(file.corpus_policy.unwrap_or(PolicyKind::Expert));
            scenarios
                .into_iter()
                .zip(&files)
                .map(|(s, f)| {
                    sample_from_rollout(s, &assign, &file.model.scene, file.model.future_steps)
                        .map_err(|e| CliError::runtime(f, e))
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => straight_road_corpus(&file.corpus, &file.model.scene, file.model.future_steps)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    };
    let norm = fit_normalizer(&data, file.schedule.sigma_data);
    let mut model = PlannerModel::new(file.model, file.schedule, norm, file.init_seed)
        .map_err(|e| CliError::invalid(&origin, e))?;
    println!("corpus of {} scenes; training {} steps", data.len(), file.train.steps);
    let report = train(&mut model, &data, &file.train, |r| {
        if r.step % 100 == 0 {
            println!("step {:>6}  loss {:.6}  lr {:.2e}", r.step, r.loss, r.lr);
        }
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_checkpoint(&model, &args.out).map_err(|e| CliError::runtime(&args.out, e))?;
    let losses = args.losses.clone().unwrap_or_else(|| args.out.with_extension("losses.ndjson"));
    let mut buf = Vec::new();
    write_losses(&report.losses, &mut buf).map_err(|e| CliError::runtime(&losses, e))?;
    write(&losses, &buf)?;
    let n = report.losses.len();
    if n > 0 {
        let w = n.min(20);
        println!(
            "loss {:.6} -> {:.6} in {:.1} s; checkpoint {}",
            report.mean_loss(0, w),
            report.mean_loss(n - w, n),
            t.elapsed().as_secs_f64(),
            args.out.display()
        );
    }
    Ok(())
}

// ------------------------------------------------------------------ bench

pub struct BenchArgs {
    pub scenarios: Vec<PathBuf>,
    pub count: usize,
    pub agents: usize,
    pub seed: u64,
    pub duration: f64,
    pub policy: Option<PolicyKind>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub agents: usize,
    pub ticks: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub policy: PolicyKind,
    pub duration: f64,
    pub scenarios: Vec<BenchEntry>,
    pub mean_seconds: f64,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(CliError::Invalid(format!("--duration must be positive, got {}", args.duration)));
    }
    let (named, default_policy): (Vec<(String, Scenario)>, PolicyKind) = if args.scenarios.is_empty() {
        if args.count == 0 {
            return Err(CliError::Invalid("--count must be at least 1".into()));
        }
        let generated = (0..args.count as u64)
            .map(|k| {
                let mut s = generate_grid(&GridParams::new(3, 3, 150.0, 2, args.agents, args.seed + k))
                    .map_err(|e| CliError::Invalid(e.to_string()))?;
                lcsim_core::router::complete_routes(&mut s, 10.0).map_err(|e| CliError::Runtime(e.to_string()))?;
                Ok((format!("grid-{}", args.seed + k), s))
            })
            .collect::<Result<_>>()?;
        (generated, PolicyKind::LaneIdm)
    } else {
        let files = expand(&args.scenarios, &scenario_suffix())?;
        let loaded = files
            .iter()
            .map(|f| Ok((f.display().to_string(), read_scenario(f)?)))
            .collect::<Result<_>>()?;
        (loaded, PolicyKind::Expert)
    };
    let policy = args.policy.unwrap_or(default_policy);
    if policy == PolicyKind::External {
        return Err(CliError::Invalid("external agents need actions; pick another policy".into()));
    }
    let assign = PolicyAssignment::uniform(policy);
    let mut entries = Vec::new();
    for (name, scenario) in named {
        let agents = scenario.agents.len();
        let t = Instant::now();
        let sim = Simulator::new(Arc::new(scenario), SimConfig::default()).map_err(|e| CliError::Invalid(format!("{name}: {e}")))?;
        let mut world = sim.init_world();
        let mut ticks = 0;
        while world.time + world.tick <= args.duration + 1e-9 {
            sim.step(&mut world, &assign).map_err(|e| CliError::Runtime(format!("{name}: {e}")))?;
            ticks += 1;
        }
        let seconds = t.elapsed().as_secs_f64();
        println!("{name}: {seconds:.4} s ({agents} agents, {ticks} ticks)");
        entries.push(BenchEntry {
            name,
            agents,
            ticks,
            seconds,
        });
    }
    let mean = entries.iter().map(|e| e.seconds).sum::<f64>() / entries.len() as f64;
    println!("mean {mean:.4} s per scenario over {} scenario(s)", entries.len());
    if let Some(out) = &args.out {
        write_json(
            out,
            &BenchReport {
                policy,
                duration: args.duration,
                scenarios: entries,
                mean_seconds: mean,
            },
        )?;
    }
    Ok(())
}
