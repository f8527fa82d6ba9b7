use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{ArgAction, Args, ValueEnum};
use flexdesign::env::{ActionSet, MdpConfig};
use flexdesign::heuristics::{self, HeuristicTrace};
use flexdesign::instance::{build_scenario, synthetic_instance};
use flexdesign::meta::{self, Convergence, MetaReport, TaskSpec};
use flexdesign::nn::{self, Mlp, DEFAULT_HIDDEN};
use flexdesign::oracle::{self, solve_profit_with, Engine};
use flexdesign::ppo::{self, PpoConfig, TrainOutcome, TrainReport};
use flexdesign::rng::derive_seed;
use flexdesign::{fctp_to_fdp, load_instance, save_instance, FlexNetwork, Instance, SampleSet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{self, Run};
use crate::{ActionSetArg, CliError, EngineArg, RunArgs};

const STREAM_EVAL: u64 = 1;
const STREAM_DECISION: u64 = 2;
const STREAM_SELECT: u64 = 3;
const STREAM_RL: u64 = 4;

const PAPER_RL_SEEDS: usize = 12;
const PAPER_DESIGNS_PER_SEED: usize = 50;

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    CliError::Validation(msg.into()).into()
}

fn load(path: &Path, k: Option<usize>) -> Result<Instance> {
    let inst = load_instance(path).map_err(|e| invalid(format!("cannot load instance {}: {e}", path.display())))?;
    match k {
        Some(k) => Ok(inst.with_budget(k)?),
        None => Ok(inst),
    }
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn check_finite(what: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::Numerical(format!("{what} is {value}")).into())
    }
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    m: usize,
    n: usize,
    arcs: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl DesignFile {
    fn of(net: &FlexNetwork, score: Option<f64>) -> Self {
        DesignFile {
            m: net.m(),
            n: net.n(),
            arcs: net.arc_list(),
            score,
        }
    }
}

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Scenario {
    Auto,
    Fashion,
    /// Random instance (see `--m`, `--n`, `--seed`).
    Synthetic,
    /// Converted from a fixed-charge transportation file (see `--fctp`).
    Fctp,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    #[arg(long)]
    k: usize,
    /// Output file; defaults to `<scenario>-k<K>.json` in the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON with `capacities`, `demands`, `transport_cost` and `fixed_charge`.
    #[arg(long, required_if_eq("scenario", "fctp"))]
    fctp: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FctpFile {
    capacities: Vec<f64>,
    demands: Vec<f64>,
    transport_cost: Vec<Vec<f64>>,
    fixed_charge: Vec<Vec<f64>>,
}

pub fn gen(args: GenArgs) -> Result<()> {
    let (inst, name) = match args.scenario {
        Scenario::Auto => (build_scenario("auto", args.k)?, "auto".to_string()),
        Scenario::Fashion => (build_scenario("fashion", args.k)?, "fashion".to_string()),
        Scenario::Synthetic => (
            synthetic_instance(args.m, args.n, args.k, args.seed)?,
            format!("synthetic{}x{}-s{}", args.m, args.n, args.seed),
        ),
        Scenario::Fctp => {
            let path = args.fctp.as_deref().expect("clap requires --fctp");
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let f: FctpFile = serde_json::from_str(&text)?;
            let stem = path.file_stem().map_or("fctp".into(), |s| s.to_string_lossy().into_owned());
            (fctp_to_fdp(&f.capacities, &f.demands, &f.transport_cost, &f.fixed_charge, args.k)?, stem)
        }
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("{name}-k{}.json", args.k)));
    save_instance(&inst, &out)?;
    println!("{} ({}x{}, K={}, sha256 {})", out.display(), inst.m, inst.n, inst.budget, run::instance_hash(&inst));
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Override the instance budget.
    #[arg(long)]
    k: Option<usize>,
    /// Design JSON with an `arcs` list of `[i, j]` pairs.
    #[arg(long, conflicts_with = "arcs", required_unless_present = "arcs")]
    design: Option<PathBuf>,
    /// Inline design, e.g. `0-0,0-1,1-1`.
    #[arg(long)]
    arcs: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Flow)]
    engine: EngineArg,
}

fn parse_arcs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (i, j) = pair
                .trim()
                .split_once('-')
                .ok_or_else(|| invalid(format!("arc `{pair}` is not of the form i-j")))?;
            Ok((
                i.parse().map_err(|_| invalid(format!("bad row in `{pair}`")))?,
                j.parse().map_err(|_| invalid(format!("bad column in `{pair}`")))?,
            ))
        })
        .collect()
}

fn read_design(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // designs.json from `train` nests the chosen design under `best`
    let design = value.get("best").unwrap_or(&value);
    let arcs = design
        .get("arcs")
        .ok_or_else(|| invalid(format!("{} has no `arcs` list", path.display())))?;
    Ok(serde_json::from_value(arcs.clone())?)
}

fn objective_with_engine(inst: &Instance, net: &FlexNetwork, samples: &SampleSet, engine: Engine) -> Result<(f64, f64)> {
    if engine == Engine::Flow {
        return Ok(oracle::objective_with_stderr(inst, net, samples)?);
    }
    inst.check_network(net)?;
    let terms: Vec<f64> = samples.iter().map(|d| solve_profit_with(engine, inst, d, net).objective).collect();
    let k = terms.len() as f64;
    let mu = oracle::mean(&terms);
    let se = if terms.len() > 1 {
        (terms.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok((mu - net.installation_cost(&inst.arc_cost), se))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let inst = load(&args.instance, args.k)?;
    let arcs = match (&args.design, &args.arcs) {
        (Some(path), _) => read_design(path)?,
        (None, Some(text)) => parse_arcs(text)?,
        (None, None) => unreachable!("clap requires one of --design and --arcs"),
    };
    let net = FlexNetwork::from_arcs(inst.m, inst.n, &arcs)?;
    inst.check_design(&net)?;
    if args.samples == 0 {
        return Err(invalid("--samples must be at least 1"));
    }
    let samples = inst.sample(args.seed, args.samples);
    let engine = match args.engine {
        EngineArg::Flow => Engine::Flow,
        EngineArg::Reference => Engine::Reference,
    };
    let (objective, stderr) = objective_with_engine(&inst, &net, &samples, engine)?;
    check_finite("objective", objective)?;
    let out = json!({
        "objective": objective,
        "stderr": stderr,
        "samples": args.samples,
        "seed": args.seed,
        "engine": args.engine,
        "budget": inst.budget,
        "arcs": net.arc_list(),
        "instance_hash": run::instance_hash(&inst),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// greedy, sp, bound

#[derive(Debug, Clone, Copy)]
pub enum Heuristic {
    Greedy,
    Sp,
}

#[derive(Args, Debug, Serialize)]
pub struct HeuristicArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Decision samples.
    #[arg(long, default_value_t = heuristics::DEFAULT_OMEGA)]
    omega: usize,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

fn run_heuristic(which: Heuristic, inst: &Instance, samples: &SampleSet, omega: usize) -> Result<(FlexNetwork, HeuristicTrace)> {
    Ok(match which {
        Heuristic::Greedy => heuristics::greedy(inst, samples, omega)?,
        Heuristic::Sp => heuristics::sp_heuristic(inst, samples, omega)?,
    })
}

pub fn heuristic(args: HeuristicArgs, which: Heuristic) -> Result<()> {
    let inst = load(&args.instance, args.k)?;
    let name = match which {
        Heuristic::Greedy => "greedy",
        Heuristic::Sp => "sp",
    };
    let mut run = Run::start(
        &args.run.out,
        name,
        serde_json::to_value(&args)?,
        seeds(&[("decision_samples", args.run.seed)]),
        Some(&inst),
        args.run.fixed_clock,
    )?;
    let samples = inst.sample(args.run.seed, args.omega);
    let (net, trace) = run_heuristic(which, &inst, &samples, args.omega)?;
    let score = trace.scores.last().copied().unwrap_or(0.0);
    check_finite("heuristic score", score)?;
    run.write_json("trace.json", &trace)?;
    run.write_json("design.json", &DesignFile::of(&net, Some(score)))?;
    let dir = run.finish()?;
    println!("{name}: {} arcs, decision-sample objective {score:.4}", net.arc_count());
    println!("{}", dir.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct BoundArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = heuristics::DEFAULT_OMEGA)]
    omega: usize,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

pub fn bound(args: BoundArgs) -> Result<()> {
    let inst = load(&args.instance, None)?;
    let mut run = Run::start(
        &args.run.out,
        "bound",
        serde_json::to_value(&args)?,
        seeds(&[("samples", args.run.seed)]),
        Some(&inst),
        args.run.fixed_clock,
    )?;
    let samples = inst.sample(args.run.seed, args.omega);
    let ub = oracle::lp_upper_bound(&inst, &samples, args.omega)?;
    check_finite("bound", ub.value)?;
    let rows: Vec<Vec<f64>> = ub.selection.chunks(inst.n).map(<[f64]>::to_vec).collect();
    run.write_json(
        "bound.json",
        &json!({
            "upper_bound": ub.value,
            "best_relaxation_objective": ub.best_objective,
            "iterations": ub.iterations,
            "selection": rows,
        }),
    )?;
    let dir = run.finish()?;
    println!("upper bound {:.4} (relaxation objective {:.4})", ub.value, ub.best_objective);
    println!("{}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// reinforcement learning

#[derive(Args, Debug, Clone, Serialize)]
pub struct RlArgs {
    /// PPO settings as JSON (any subset of fields); the flags below override it.
    #[arg(long)]
    ppo_config: Option<PathBuf>,
    /// Hidden layer sizes, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    early_stop_steps: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long, value_enum, default_value_t = ActionSetArg::Add)]
    action_set: ActionSetArg,
    /// Variance-reduced terminal reward.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    vr: bool,
    /// Write `plotdata.csv`: training curves in long format.
    #[arg(long)]
    emit_plotdata: bool,
}

impl RlArgs {
    fn ppo(&self, seed: u64) -> Result<PpoConfig> {
        let mut cfg: PpoConfig = match &self.ppo_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)?
            }
            None => PpoConfig::default(),
        };
        cfg.seed = seed;
        if let Some(h) = &self.hidden {
            cfg.hidden = h.clone();
        }
        if let Some(v) = self.episodes_per_epoch {
            cfg.episodes_per_epoch = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.early_stop_steps {
            cfg.early_stop_steps = v;
        }
        if let Some(v) = self.eval_samples {
            cfg.eval_samples = v;
        }
        if let Some(v) = self.policy_lr {
            cfg.policy_lr = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn mdp(&self, inst: &Instance, omega: usize, seed: u64) -> MdpConfig {
        MdpConfig {
            action_set: match self.action_set {
                ActionSetArg::Add => ActionSet::AddNoop,
                ActionSetArg::AddDelete => ActionSet::AddDeleteNoop,
            },
            omega,
            variance_reduction: self.vr,
            seed,
            ..MdpConfig::new(inst)
        }
    }
}

fn note_hidden(run: &mut Run, cfg: &PpoConfig) {
    if cfg.hidden != DEFAULT_HIDDEN {
        run.deviation(format!("hidden layers {:?} instead of {:?}", cfg.hidden, DEFAULT_HIDDEN));
    }
}

struct PlotData(String);

impl PlotData {
    fn new() -> Self {
        PlotData("k,seed,step,metric,value\n".into())
    }

    fn add_report(&mut self, k: usize, seed: u64, report: &TrainReport) {
        for r in &report.rows {
            if let Some(ret) = r.mean_return {
                let _ = writeln!(self.0, "{k},{seed},{},mean_return,{ret}", r.step);
            }
            let _ = writeln!(self.0, "{k},{seed},{},eval_profit,{}", r.step, r.eval_profit);
        }
    }

    fn add_meta(&mut self, seed: u64, report: &MetaReport) {
        for r in &report.rows {
            for (k, ret) in report.k_values.iter().zip(&r.task_returns) {
                let _ = writeln!(self.0, "{k},{seed},{},post_adaptation_return,{ret}", r.steps);
            }
        }
    }
}

#[derive(Serialize)]
struct Designs {
    best: DesignFile,
    selection_samples: usize,
    selection_seed: u64,
    candidates: Vec<DesignFile>,
}

/// Writes everything a training run produces: report, checkpoint, designs and plot data.
fn write_training(
    run: &mut Run,
    inst: &Instance,
    mdp: &MdpConfig,
    cfg: &PpoConfig,
    rl: &RlArgs,
    outcome: &TrainOutcome,
    designs_per_seed: usize,
    metadata: serde_json::Value,
) -> Result<()> {
    check_finite("best evaluation", outcome.best_eval)?;
    if !outcome.policy.is_finite() || !outcome.value.is_finite() {
        return Err(CliError::Numerical("network parameters are not finite".into()).into());
    }
    run.write("report.csv", outcome.report.to_csv(run.fixed_clock()))?;
    let ckpt = run.path("checkpoint.bin");
    nn::save_checkpoint(&ckpt, &[("policy", &outcome.policy), ("value", &outcome.value)], metadata)?;

    let selection_seed = derive_seed(cfg.seed, &[STREAM_SELECT]);
    let selection = inst.sample(selection_seed, cfg.eval_samples);
    let ex = ppo::extract_designs(&outcome.policy, inst, mdp, designs_per_seed, &selection, cfg.seed)?;
    let from_training = fdp_score(inst, &outcome.best_design, &selection)?;
    let (best, best_score) = if from_training > ex.best_score {
        (&outcome.best_design, from_training)
    } else {
        (&ex.best, ex.best_score)
    };
    run.write_json(
        "designs.json",
        &Designs {
            best: DesignFile::of(best, Some(best_score)),
            selection_samples: cfg.eval_samples,
            selection_seed,
            candidates: ex.candidates.iter().map(|(n, s)| DesignFile::of(n, Some(*s))).collect(),
        },
    )?;
    if rl.emit_plotdata {
        let mut plot = PlotData::new();
        plot.add_report(inst.budget, cfg.seed, &outcome.report);
        run.write("plotdata.csv", plot.0)?;
    }
    println!(
        "best eval {:.4} at step {}, final step {}; best extracted design {:.4} ({} arcs)",
        outcome.best_eval,
        outcome.report.steps_to_reach(outcome.best_eval).unwrap_or(0),
        outcome.report.final_step(),
        best_score,
        best.arc_count()
    );
    Ok(())
}

fn fdp_score(inst: &Instance, net: &FlexNetwork, samples: &SampleSet) -> Result<f64> {
    Ok(flexdesign::fdp_objective_estimate(inst, net, samples, samples.len())?)
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Samples per terminal reward.
    #[arg(long, default_value_t = 50)]
    omega: usize,
    /// Designs sampled from the final policy.
    #[arg(long, default_value_t = PAPER_DESIGNS_PER_SEED)]
    designs_per_seed: usize,
    #[command(flatten)]
    rl: RlArgs,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let inst = load(&args.instance, args.k)?;
    let cfg = args.rl.ppo(args.run.seed)?;
    let mdp = args.rl.mdp(&inst, args.omega, args.run.seed);
    let mut run = Run::start(
        &args.run.out,
        "train",
        json!({ "args": args, "ppo": cfg, "mdp": mdp }),
        seeds(&[("ppo", cfg.seed), ("mdp", mdp.seed)]),
        Some(&inst),
        args.run.fixed_clock,
    )?;
    note_hidden(&mut run, &cfg);
    let outcome = ppo::train(&inst, mdp.clone(), cfg.clone())?;
    let meta = json!({
        "meta": false,
        "k": inst.budget,
        "action_set": args.rl.action_set,
        "hidden": cfg.hidden,
        "instance_hash": run::instance_hash(&inst),
    });
    write_training(&mut run, &inst, &mdp, &cfg, &args.rl, &outcome, args.designs_per_seed, meta)?;
    println!("{}", run.finish()?.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct MetaTrainArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Budgets of the training tasks.
    #[arg(long, value_delimiter = ',', required = true)]
    k_values: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    adaptation_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    meta_lr: f64,
    /// Policy learning rate inside tasks (defaults to the PPO policy rate).
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long, default_value_t = 20)]
    meta_epochs: usize,
    /// Stop after this many meta-epochs without improvement of the mean post-adaptation return.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    #[arg(long, default_value_t = 50)]
    omega: usize,
    #[command(flatten)]
    rl: RlArgs,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

pub fn meta_train(args: MetaTrainArgs) -> Result<()> {
    let inst = load(&args.instance, None)?;
    let cfg = args.rl.ppo(args.run.seed)?;
    let first = inst.with_budget(*args.k_values.first().expect("clap requires k_values"))?;
    let mdp = args.rl.mdp(&first, args.omega, args.run.seed);
    let spec = TaskSpec {
        instance: inst.clone(),
        k_values: args.k_values.clone(),
        adaptation_steps: args.adaptation_steps,
        inner_lr: args.inner_lr,
        meta_lr: args.meta_lr,
        meta_epochs: args.meta_epochs,
        convergence: args.patience.map(|patience| Convergence {
            patience,
            rel_tol: args.rel_tol,
        }),
    };
    let mut run = Run::start(
        &args.run.out,
        "meta-train",
        json!({ "args": args, "ppo": cfg, "mdp": mdp }),
        seeds(&[("ppo", cfg.seed), ("mdp", mdp.seed)]),
        Some(&inst),
        args.run.fixed_clock,
    )?;
    note_hidden(&mut run, &cfg);
    let out = meta::meta_train(&spec, &mdp, &cfg)?;
    if !out.policy.is_finite() || !out.value.is_finite() {
        return Err(CliError::Numerical("meta parameters are not finite".into()).into());
    }
    run.write("meta_report.csv", out.report.to_csv())?;
    let ckpt = run.path("checkpoint.bin");
    nn::save_checkpoint(
        &ckpt,
        &[("policy", &out.policy), ("value", &out.value)],
        json!({
            "meta": true,
            "k_values": args.k_values,
            "action_set": args.rl.action_set,
            "hidden": cfg.hidden,
            "instance_hash": run::instance_hash(&inst),
        }),
    )?;
    if args.rl.emit_plotdata {
        let mut plot = PlotData::new();
        plot.add_meta(cfg.seed, &out.report);
        run.write("plotdata.csv", plot.0)?;
    }
    if let Some(last) = out.report.rows.last() {
        println!(
            "{} meta-epochs, {} steps, final mean post-adaptation return {:.4}",
            last.meta_epoch, last.steps, last.mean_return
        );
    }
    println!("{}", run.finish()?.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct AdaptArgs {
    /// Checkpoint written by `meta-train`.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    omega: usize,
    #[arg(long, default_value_t = PAPER_DESIGNS_PER_SEED)]
    designs_per_seed: usize,
    #[command(flatten)]
    rl: RlArgs,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

fn load_meta(path: &Path) -> Result<(Mlp, Mlp, serde_json::Value, String)> {
    let bytes = std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let (header, nets) = nn::read_checkpoint(&bytes[..])?;
    let find = |name: &str| {
        header
            .networks
            .iter()
            .position(|s| s.name == name)
            .map(|i| nets[i].clone())
            .ok_or_else(|| invalid(format!("checkpoint has no `{name}` network")))
    };
    Ok((find("policy")?, find("value")?, header.metadata, run::sha256_hex(&bytes)))
}

pub fn adapt(args: AdaptArgs) -> Result<()> {
    let template = load(&args.instance, None)?;
    let inst = template.with_budget(args.k)?;
    let (policy, value, metadata, ckpt_hash) = load_meta(&args.meta)?;
    if metadata.get("meta") != Some(&json!(true)) {
        log::warn!("{} is not marked as a meta checkpoint", args.meta.display());
    }
    let mut cfg = args.rl.ppo(args.run.seed)?;
    // the layer sizes come from the checkpoint
    let sizes = policy.sizes();
    cfg.hidden = sizes[1..sizes.len() - 1].to_vec();
    let mdp = args.rl.mdp(&inst, args.omega, args.run.seed);
    let mut run = Run::start(
        &args.run.out,
        "adapt",
        json!({ "args": args, "ppo": cfg, "mdp": mdp, "checkpoint_sha256": ckpt_hash }),
        seeds(&[("ppo", cfg.seed), ("mdp", mdp.seed)]),
        Some(&inst),
        args.run.fixed_clock,
    )?;
    note_hidden(&mut run, &cfg);
    let outcome = meta::adapt(&policy, &value, &template, args.k, &mdp, &cfg)?;
    let meta = json!({
        "meta": false,
        "adapted_from": ckpt_hash,
        "k": args.k,
        "action_set": args.rl.action_set,
        "hidden": cfg.hidden,
        "instance_hash": run::instance_hash(&inst),
    });
    write_training(&mut run, &inst, &mdp, &cfg, &args.rl, &outcome, args.designs_per_seed, meta)?;
    println!("{}", run.finish()?.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    Sp,
    Rl,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Sp => "sp",
            Method::Rl => "rl",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Budgets to compare, e.g. `16,19,22`.
    #[arg(long, value_delimiter = ',', required = true)]
    k_list: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    methods: Vec<Method>,
    /// Fresh evaluation samples per budget, shared by all methods.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Decision samples for the heuristics.
    #[arg(long, default_value_t = heuristics::DEFAULT_OMEGA)]
    omega: usize,
    /// Samples per terminal reward in RL.
    #[arg(long, default_value_t = 50)]
    rl_omega: usize,
    #[arg(long, default_value_t = PAPER_RL_SEEDS)]
    rl_seeds: usize,
    #[arg(long, default_value_t = PAPER_DESIGNS_PER_SEED)]
    designs_per_seed: usize,
    #[command(flatten)]
    rl: RlArgs,
    #[command(flatten)]
    #[serde(skip)]
    run: RunArgs,
}

#[derive(Serialize)]
struct CompareRow {
    k: usize,
    method: &'static str,
    objective: f64,
    stderr: f64,
    arcs: Vec<(usize, usize)>,
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let template = load(&args.instance, None)?;
    let mut methods = args.methods.clone();
    methods.sort();
    methods.dedup();
    let mut ks = args.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    if args.samples == 0 {
        return Err(invalid("--samples must be at least 1"));
    }
    for &k in &ks {
        template.with_budget(k)?;
    }
    let seed = args.run.seed;
    let decision_seed = derive_seed(seed, &[STREAM_DECISION]);
    let mut seed_map = seeds(&[("decision_samples", decision_seed)]);
    for &k in &ks {
        seed_map.insert(format!("eval_samples_k{k}"), derive_seed(seed, &[STREAM_EVAL, k as u64]));
    }
    let rl_seeds: Vec<u64> = (0..args.rl_seeds as u64).map(|s| derive_seed(seed, &[STREAM_RL, s])).collect();
    let cfg = methods.contains(&Method::Rl).then(|| args.rl.ppo(0)).transpose()?;
    let mut run = Run::start(
        &args.run.out,
        "compare",
        json!({ "args": args, "ppo": cfg }),
        seed_map.clone(),
        Some(&template),
        args.run.fixed_clock,
    )?;
    if let Some(cfg) = &cfg {
        note_hidden(&mut run, cfg);
        if args.rl_seeds != PAPER_RL_SEEDS || args.designs_per_seed != PAPER_DESIGNS_PER_SEED {
            run.deviation(format!(
                "{} RL seeds x {} designs instead of {PAPER_RL_SEEDS} x {PAPER_DESIGNS_PER_SEED}",
                args.rl_seeds, args.designs_per_seed
            ));
        }
    }

    let decision = template.sample(decision_seed, args.omega);
    // Greedy never revisits a choice and ignores the budget until it is
    // reached, so one run at the largest budget yields every smaller one.
    let greedy_trace = if methods.contains(&Method::Greedy) {
        let top = template.with_budget(*ks.last().expect("clap requires k_list"))?;
        Some(heuristics::greedy(&top, &decision, args.omega)?.1)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut plot = PlotData::new();
    for &k in &ks {
        let inst = template.with_budget(k)?;
        let eval = inst.sample(seed_map[&format!("eval_samples_k{k}")], args.samples);
        for &method in &methods {
            let net = match method {
                Method::Greedy => {
                    let trace = greedy_trace.as_ref().expect("greedy ran");
                    let steps = trace.networks.len().min(k);
                    if steps == 0 {
                        inst.empty_network()
                    } else {
                        trace.networks[steps - 1].clone()
                    }
                }
                Method::Sp => heuristics::sp_heuristic(&inst, &decision, args.omega)?.0,
                Method::Rl => {
                    let base = cfg.as_ref().expect("rl config");
                    let mdp = args.rl.mdp(&inst, args.rl_omega, seed);
                    let selection = inst.sample(derive_seed(seed, &[STREAM_SELECT, k as u64]), base.eval_samples);
                    let mut best: Option<(FlexNetwork, f64)> = None;
                    for &s in &rl_seeds {
                        let cfg = PpoConfig { seed: s, ..base.clone() };
                        let out = ppo::train(&inst, mdp.clone(), cfg)?;
                        plot.add_report(k, s, &out.report);
                        let ex = ppo::extract_designs(&out.policy, &inst, &mdp, args.designs_per_seed, &selection, s)?;
                        let trained = fdp_score(&inst, &out.best_design, &selection)?;
                        for (net, score) in ex.candidates.into_iter().chain([(out.best_design, trained)]) {
                            if best.as_ref().is_none_or(|b| score > b.1) {
                                best = Some((net, score));
                            }
                        }
                    }
                    best.map(|b| b.0).unwrap_or_else(|| inst.empty_network())
                }
            };
            let (objective, stderr) = oracle::objective_with_stderr(&inst, &net, &eval)?;
            check_finite("objective", objective)?;
            log::info!("K={k} {}: {objective:.4} ± {stderr:.4}", method.name());
            rows.push(CompareRow {
                k,
                method: method.name(),
                objective,
                stderr,
                arcs: net.arc_list(),
            });
        }
    }

    let mut long = String::from("k,method,objective,stderr,arcs\n");
    for r in &rows {
        let arcs: Vec<String> = r.arcs.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        let _ = writeln!(long, "{},{},{},{},{}", r.k, r.method, r.objective, r.stderr, arcs.join(" "));
    }
    run.write("results.csv", long)?;

    let header: Vec<String> = ks.iter().map(|k| format!("K={k}")).collect();
    let mut table = format!("method,{}\n", header.join(","));
    let mut errors = table.clone();
    let mut shown = format!("{:<8}{}\n", "", header.iter().map(|h| format!("{h:>16}")).collect::<String>());
    for &method in &methods {
        let cells: Vec<&CompareRow> = rows.iter().filter(|r| r.method == method.name()).collect();
        let _ = writeln!(
            table,
            "{},{}",
            method.name(),
            cells.iter().map(|r| format!("{:.1}", r.objective)).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            errors,
            "{},{}",
            method.name(),
            cells.iter().map(|r| format!("{:.1}", r.stderr)).collect::<Vec<_>>().join(",")
        );
        let _ = write!(shown, "{:<8}", method.name());
        for r in cells {
            let top = rows
                .iter()
                .filter(|o| o.k == r.k)
                .all(|o| o.objective <= r.objective);
            let _ = write!(shown, "{:>16}", format!("{:.1}{}", r.objective, if top { "*" } else { "" }));
        }
        shown.push('\n');
    }
    run.write("table.csv", table)?;
    run.write("stderr.csv", errors)?;
    if args.rl.emit_plotdata && methods.contains(&Method::Rl) {
        run.write("plotdata.csv", plot.0)?;
    }
    let dir = run.finish()?;
    print!("{shown}");
    println!("{}", dir.display());
    Ok(())
}
