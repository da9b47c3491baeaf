//! `erm` command line.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    derive_seed, evaluate, noise_sweep, permutation_test, read_eval_csv, train_policy, EvalSetup, ExperimentSpec,
    PlannerKind, PolicyBundle, TrainConfig,
};
use crate::baselines::MctsConfig;
use crate::error::{Error, Result};
use crate::features::ObservationNoise;
use crate::geo::HOUR_S;
use crate::hierarchy::TriggerMode;
use crate::scenarios::{generate_synthetic, Scenario, SyntheticParams};
use crate::sim::sample_chain;

#[derive(Debug, Parser)]
#[command(name = "erm", version, about = "Emergency responder stationing: simulate, train, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scenario and sampled incident chains.
    Generate(GenerateArgs),
    /// Train region agents, then the city agent.
    Train(TrainArgs),
    /// Evaluate a planner on held-out chains.
    Eval(EvalArgs),
    /// Paired comparison of evaluation CSVs against the first one.
    Compare(CompareArgs),
    /// Evaluate under a grid of observation noise levels.
    NoiseSweep(NoiseSweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub width: usize,
    #[arg(long, default_value_t = 12)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub depots: usize,
    #[arg(long, default_value_t = 3)]
    pub hospitals: usize,
    #[arg(long, default_value_t = 3)]
    pub regions: usize,
    #[arg(long, default_value_t = 10)]
    pub responders: usize,
    /// City-wide incidents per hour.
    #[arg(long, default_value_t = 2.5)]
    pub rate: f64,
    #[arg(long, default_value_t = 11.0)]
    pub days: f64,
    /// Number of incident chains to write next to the scenario.
    #[arg(long, default_value_t = 0)]
    pub chains: usize,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub train_chains: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_chains: usize,
    /// Fleet size; defaults to the scenario's.
    #[arg(long)]
    pub responders: Option<usize>,
    /// Episode length in hours; defaults to the scenario's.
    #[arg(long)]
    pub horizon_hours: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub chains: ChainArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub llp_episodes: usize,
    #[arg(long, default_value_t = 100)]
    pub hlp_episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    /// JSON training configuration; overrides the episode flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerName {
    Ours,
    Mcts,
    Pmedian,
    Greedy,
    Static,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TriggerName {
    Ours,
    Baseline,
}

#[derive(Debug, Args)]
pub struct PlannerArgs {
    #[arg(long, value_enum, default_value_t = PlannerName::Ours)]
    pub planner: PlannerName,
    /// Trained policy file for `--planner ours`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Overrides the planner's default trigger.
    #[arg(long, value_enum)]
    pub trigger: Option<TriggerName>,
    /// p-median balance weight.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub mcts_iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub mcts_samples: usize,
    #[arg(long, default_value_t = 7200.0)]
    pub mcts_horizon_s: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub chains: ChainArgs,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_time: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation CSVs; the first is the reference.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub perms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct NoiseSweepArgs {
    #[command(flatten)]
    pub chains: ChainArgs,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
    pub sigmas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

impl PlannerArgs {
    fn kind(&self) -> PlannerKind {
        match self.planner {
            PlannerName::Ours => PlannerKind::Ours,
            PlannerName::Mcts => PlannerKind::Mcts(MctsConfig {
                iteration_limit: self.mcts_iterations,
                n_samples: self.mcts_samples,
                horizon_s: self.mcts_horizon_s,
                ..Default::default()
            }),
            PlannerName::Pmedian => PlannerKind::Pmedian { alpha: self.alpha },
            PlannerName::Greedy => PlannerKind::Greedy,
            PlannerName::Static => PlannerKind::Static,
            PlannerName::Random => PlannerKind::Random,
        }
    }

    fn trigger(&self) -> Option<TriggerMode> {
        self.trigger.map(|t| match t {
            TriggerName::Ours => TriggerMode::Ours,
            TriggerName::Baseline => TriggerMode::Baseline,
        })
    }
}

/// Process exit code for an error: 2 for configuration and input problems,
/// 3 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    e.exit_code()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::NoiseSweep(a) => cmd_noise_sweep(&a),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}

/// Reads a user-supplied file; a missing or unreadable file is a
/// configuration error.
fn read_user_file(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let p = SyntheticParams {
        width: a.width,
        height: a.height,
        n_depots: a.depots,
        n_hospitals: a.hospitals,
        n_regions: a.regions,
        n_responders: a.responders,
        mean_city_rate: a.rate,
        horizon_s: a.days * 24.0 * HOUR_S,
        ..Default::default()
    };
    let scenario = generate_synthetic(&p, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    scenario.save(&a.out)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    for i in 0..a.chains {
        let seed = derive_seed(a.seed, i as u64);
        let chain = sample_chain(&scenario.rates, scenario.horizon_s, seed)?;
        let path = a.out.with_file_name(format!("{stem}_chain_{i:03}.csv"));
        chain.write_csv(File::create(path)?)?;
    }
    println!("wrote {} ({} regions, {} chains)", a.out.display(), a.regions, a.chains);
    Ok(())
}

struct Loaded {
    scenario: Scenario,
    spec: ExperimentSpec,
}

fn load(chains: &ChainArgs, planner: PlannerKind, trigger: Option<TriggerMode>, noise: ObservationNoise, out: &Path) -> Result<Loaded> {
    let scenario = Scenario::load(&chains.scenario)?;
    let spec = ExperimentSpec {
        scenario: chains.scenario.clone(),
        planner,
        seed: chains.seed,
        n_train_chains: chains.train_chains,
        n_eval_chains: chains.eval_chains,
        n_responders: chains.responders,
        trigger,
        noise,
        output_dir: out.to_path_buf(),
    };
    spec.validate()?;
    Ok(Loaded { scenario, spec })
}

fn horizon(chains: &ChainArgs, s: &Scenario) -> Result<f64> {
    match chains.horizon_hours {
        Some(h) if h > 0.0 => Ok(h * HOUR_S),
        Some(_) => Err(Error::Config("horizon must be positive".into())),
        None => Ok(s.horizon_s),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let l = load(&a.chains, PlannerKind::Ours, None, ObservationNoise::default(), &a.out)?;
    let world = l.scenario.world()?;
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&read_user_file(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainConfig { llp_episodes: a.llp_episodes, hlp_episodes: a.hlp_episodes, eval_every: a.eval_every, ..Default::default() },
    };
    cfg.t_serve_s = l.scenario.t_serve_s;
    cfg.horizon_s = horizon(&a.chains, &l.scenario)?;
    let n = l.spec.n_responders.unwrap_or(l.scenario.n_responders);
    if l.spec.n_train_chains == 0 {
        return Err(Error::Config("at least one training chain is required".into()));
    }
    let eval_seed = l.spec.eval_seeds()[0];
    let (bundle, curve) = train_policy(&world, n, &cfg, &l.spec.train_seeds(), eval_seed, l.spec.seed)?;
    create_dir(&a.out)?;
    bundle.save(&a.out.join("policy.json"))?;
    write_json(&a.out.join("train_config.json"), &cfg)?;
    write_json(&a.out.join("spec.json"), &l.spec)?;
    let mut w = csv::Writer::from_path(a.out.join("learning_curve.csv"))?;
    for p in &curve {
        w.serialize(p)?;
    }
    w.flush()?;
    println!("wrote {} ({} curve points)", a.out.join("policy.json").display(), curve.len());
    Ok(())
}

fn load_policy(args: &PlannerArgs) -> Result<Option<PolicyBundle>> {
    match (&args.policy, args.planner) {
        (Some(p), _) => PolicyBundle::from_json(&read_user_file(p)?).map(Some),
        (None, PlannerName::Ours) => Err(Error::Config("--planner ours needs --policy".into())),
        (None, _) => Ok(None),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let noise = ObservationNoise { sigma_rate: a.sigma_rate, sigma_time: a.sigma_time };
    let l = load(&a.chains, a.planner.kind(), a.planner.trigger(), noise, &a.out)?;
    let world = l.scenario.world()?;
    let policy = load_policy(&a.planner)?;
    let setup = EvalSetup {
        world: &world,
        policy: policy.as_ref(),
        n_responders: l.spec.n_responders.unwrap_or(l.scenario.n_responders),
        t_serve_s: l.scenario.t_serve_s,
        horizon_s: horizon(&a.chains, &l.scenario)?,
        trigger: l.spec.trigger(),
        noise,
    };
    let (summary, _) = evaluate(&setup, &l.spec.planner, &l.spec.eval_seeds())?;
    create_dir(&a.out)?;
    summary.write_csv(File::create(a.out.join("eval.csv"))?)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    write_json(&a.out.join("spec.json"), &l.spec)?;
    match summary.mean_response_s {
        Some(m) => println!("{}: mean response {m:.1} s over {} chains", summary.planner, summary.chains.len()),
        None => println!("{}: no incidents", summary.planner),
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let runs: Vec<_> = a.runs.iter().map(|p| File::open(p).map_err(Error::from).and_then(read_eval_csv)).collect::<Result<_>>()?;
    let base = &runs[0];
    let base_means: Vec<f64> = base.iter().map(|r| r.mean_response_s.unwrap_or(0.0)).collect();
    println!("{:<40} {:>7} {:>12} {:>10}", "run", "chains", "mean_s", "p_value");
    for (path, run) in a.runs.iter().zip(&runs) {
        if run.iter().map(|r| r.chain_seed).ne(base.iter().map(|r| r.chain_seed)) {
            return Err(Error::Input(format!("{} was evaluated on different chains", path.display())));
        }
        let means: Vec<f64> = run.iter().map(|r| r.mean_response_s.unwrap_or(0.0)).collect();
        let mean = means.iter().sum::<f64>() / means.len().max(1) as f64;
        let p = if std::ptr::eq(run, base) {
            "-".to_string()
        } else {
            format!("{:.4}", permutation_test(&means, &base_means, a.perms, a.seed)?)
        };
        println!("{:<40} {:>7} {:>12.2} {:>10}", path.display(), run.len(), mean, p);
    }
    Ok(())
}

fn cmd_noise_sweep(a: &NoiseSweepArgs) -> Result<()> {
    let l = load(&a.chains, a.planner.kind(), a.planner.trigger(), ObservationNoise::default(), &a.out)?;
    let world = l.scenario.world()?;
    let policy = load_policy(&a.planner)?;
    let setup = EvalSetup {
        world: &world,
        policy: policy.as_ref(),
        n_responders: l.spec.n_responders.unwrap_or(l.scenario.n_responders),
        t_serve_s: l.scenario.t_serve_s,
        horizon_s: horizon(&a.chains, &l.scenario)?,
        trigger: l.spec.trigger(),
        noise: ObservationNoise::default(),
    };
    let points = noise_sweep(&setup, &l.spec.planner, &l.spec.eval_seeds(), &a.sigmas)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    // rows: rate noise, columns: time noise
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = vec!["sigma_rate\\sigma_time".to_string()];
    header.extend(a.sigmas.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, sr) in a.sigmas.iter().enumerate() {
        let mut row = vec![sr.to_string()];
        for p in &points[i * a.sigmas.len()..(i + 1) * a.sigmas.len()] {
            row.push(p.mean_response_s.map_or(String::new(), |m| m.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_is_mandatory() {
        let e = Cli::try_parse_from(["erm", "eval", "--scenario", "s.json", "--out", "o"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = Cli::try_parse_from(["erm", "train", "--scenario", "s.json", "--out", "o"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(Cli::try_parse_from(["erm", "eval", "--scenario", "s.json", "--out", "o", "--seed", "3"]).is_ok());
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Logic("x".into())), 3);
    }
}
