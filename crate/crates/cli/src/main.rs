use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dpdp::baselines_exact::{solve_exact, validate_routes, ExactPlanPolicy, Greedy, GreedyKind};
use dpdp::env::{predicted_demand, run_episode, DispatchPolicy, EnvConfig, Episode};
use dpdp::harness::{
    compare_csv, curves_svg, heatmap_svg, metrics_csv, parse_curve_csv, sort_rows, tc_band, timing_csv, write_file,
    MetricsRow, PolicyKind, RunConfig, Series, OUT_ENV,
};
use dpdp::instance::{generate, load_instance, GeneratorConfig, Instance};
use dpdp::policy::{curve_csv, load_checkpoint, checkpoint_hash, LearnedPolicy, NetworkConfig, TrainerConfig};
use dpdp::st_demand::build_std_matrix;
use dpdp::{DqnTrainer, Real};

#[derive(Parser)]
#[command(name = "dpdp", version, about = "Dynamic pickup-and-delivery dispatching experiments")]
struct Cli {
    /// Root directory for outputs when --out is not given.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance file.
    Gen(GenArgs),
    /// Run one policy on one instance.
    Run(RunArgs),
    /// Train a Q-network dispatcher.
    Train(TrainArgs),
    /// Evaluate checkpoints on instances.
    Eval(EvalArgs),
    /// Solve the static problem to optimality.
    Exact(ExactArgs),
    /// Tabulate NUV/TC per policy over instances.
    Compare(CompareArgs),
    /// Demand matrix as CSV and SVG.
    Heatmap(HeatmapArgs),
    /// Learning curves as SVG.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    orders: usize,
    #[arg(long, default_value_t = 10)]
    vehicles: usize,
    #[arg(long, default_value_t = 12)]
    factories: usize,
    #[arg(long, default_value_t = 2)]
    depots: usize,
    #[arg(long, default_value_t = 144)]
    horizon: u32,
    #[arg(long, default_value_t = 7)]
    history_days: usize,
    /// Output file; defaults to <out-root>/instances/gen-<seed>.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "greedy1")]
    policy: String,
    /// Required for --policy learned.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Solver budget in seconds for --policy exact-plan.
    #[arg(long, default_value_t = 60.0)]
    budget: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training instances, cycled over episodes. Without any, instances are generated.
    #[arg(long, num_args = 1..)]
    instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain per-vehicle DQN: no attention, no ST score feature.
    #[arg(long)]
    plain: bool,
    #[arg(long, default_value_t = 1)]
    steps_per_episode: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    target_period: usize,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Independent training runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Generated-instance size when no --instances are given.
    #[arg(long, default_value_t = 30)]
    gen_orders: usize,
    #[arg(long, default_value_t = 10)]
    gen_vehicles: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Wall-time cap in seconds.
    #[arg(long, default_value_t = 60.0)]
    budget: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    instances: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "greedy1,greedy2,greedy3")]
    policies: Vec<String>,
    /// Learned checkpoints; each becomes a policy named after its file stem.
    #[arg(long, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Add the exact oracle's static optimum as policy "exact".
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 60.0)]
    budget: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Use the history-based prediction instead of the day's own orders.
    #[arg(long)]
    predicted: bool,
    /// Output path prefix; `.csv` and `.svg` are appended.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Learning-curve CSVs; files sharing a label are drawn as one mean line with a half-range band.
    #[arg(long, num_args = 1.., required = true)]
    curve: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[arg(long, default_value = "Learning curve")]
    title: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Gen(a) => gen(a, &root),
        Command::Run(a) => run(a, &root),
        Command::Train(a) => train(a, &root),
        Command::Eval(a) => eval(a, &root),
        Command::Exact(a) => exact(a, &root),
        Command::Compare(a) => compare(a, &root),
        Command::Heatmap(a) => heatmap(a, &root),
        Command::Curves(a) => curves(a, &root),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned())
}

fn load(path: &Path) -> Result<Instance> {
    load_instance(path).with_context(|| format!("loading {}", path.display()))
}

fn budget(seconds: f64) -> Result<Duration> {
    if !(seconds.is_finite() && seconds >= 0.0) {
        bail!("--budget must be a non-negative number of seconds");
    }
    Ok(Duration::from_secs_f64(seconds))
}

fn gen(a: GenArgs, root: &Path) -> Result<()> {
    let cfg = GeneratorConfig {
        seed: a.seed,
        n_orders: a.orders,
        n_vehicles: a.vehicles,
        n_factories: a.factories,
        n_depots: a.depots,
        horizon: a.horizon,
        history_days: a.history_days,
        ..GeneratorConfig::default()
    };
    if cfg.n_vehicles == 0 || cfg.n_factories == 0 || cfg.n_depots == 0 || cfg.horizon == 0 {
        bail!("vehicles, factories, depots and horizon must be positive");
    }
    let path = a.out.unwrap_or_else(|| root.join("instances").join(format!("gen-{}.json", a.seed)));
    let instance = generate(&cfg);
    write_file(&path, instance.to_json())?;
    println!("{}", path.display());
    Ok(())
}

fn make_policy(kind: PolicyKind, checkpoint: Option<&Path>, instance: &Instance, budget: Duration) -> Result<Box<dyn DispatchPolicy>> {
    Ok(match kind {
        PolicyKind::Greedy1 => Box::new(Greedy(GreedyKind::Incremental)),
        PolicyKind::Greedy2 => Box::new(Greedy(GreedyKind::Total)),
        PolicyKind::Greedy3 => Box::new(Greedy(GreedyKind::MaxOrders)),
        PolicyKind::Learned => {
            let path = checkpoint.context("--policy learned needs --checkpoint")?;
            let (net, _) = load_checkpoint::<Real>(path).with_context(|| format!("loading {}", path.display()))?;
            Box::new(LearnedPolicy::new(net))
        }
        PolicyKind::ExactPlan => Box::new(ExactPlanPolicy::new(&solve_exact(instance, budget)?)),
    })
}

fn write_episode(dir: &Path, name: &str, policy: &str, episode: &Episode) -> Result<()> {
    write_file(dir.join("report.json"), episode.report.to_json())?;
    write_file(dir.join("trace.txt"), episode.report.trace())?;
    let rows = [MetricsRow::new(name, policy, 0, episode)];
    write_file(dir.join("metrics.csv"), metrics_csv(&rows))?;
    write_file(dir.join("timing.csv"), timing_csv(&rows))?;
    Ok(())
}

fn run(a: RunArgs, root: &Path) -> Result<()> {
    let instance = load(&a.instance)?;
    let kind: PolicyKind = a.policy.parse()?;
    let mut policy = make_policy(kind, a.checkpoint.as_deref(), &instance, budget(a.budget)?)?;
    let env = EnvConfig { alpha: a.alpha };
    let episode = run_episode(&instance, policy.as_mut(), &env, false)?;
    let verdict = validate_routes(&episode.report, &instance);
    if !verdict.is_valid() {
        let lines: Vec<String> = verdict.issues.iter().map(ToString::to_string).collect();
        bail!("route validation failed:\n{}", lines.join("\n"));
    }
    let name = stem(&a.instance);
    let out = a.out.unwrap_or_else(|| root.join(format!("run-{name}-{}", policy.name())));
    let cfg = RunConfig {
        command: "run".into(),
        policy: Some(kind),
        instances: vec![a.instance.display().to_string()],
        checkpoint: a.checkpoint.map(|p| p.display().to_string()),
        env,
        out_dir: out.display().to_string(),
        ..RunConfig::default()
    };
    cfg.write_snapshot(&out)?;
    write_episode(&out, &name, &policy.name(), &episode)?;
    println!("{} {}: NUV {} TTL {:.4} TC {:.4}", name, policy.name(), episode.report.nuv, episode.report.ttl, episode.report.tc);
    Ok(())
}

fn train(a: TrainArgs, root: &Path) -> Result<()> {
    if a.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    let instances: Vec<Instance> = a.instances.iter().map(|p| load(p)).collect::<Result<_>>()?;
    let env = EnvConfig { alpha: a.alpha };
    let label = if a.plain { "dqn" } else { "st-ddgn" };
    let out = a.out.unwrap_or_else(|| root.join(format!("train-{label}-{}", a.seed)));
    let network_for = |seed: u64| {
        let base = if a.plain { NetworkConfig::plain(seed) } else { NetworkConfig { seed, ..NetworkConfig::default() } };
        let horizon = instances.first().map_or(base.horizon, |i| i.horizon);
        NetworkConfig { hidden: a.hidden, horizon, ..base }
    };
    let trainer_for = |seed: u64| TrainerConfig {
        gamma: a.gamma,
        batch_size: a.batch_size,
        target_period: a.target_period,
        learning_rate: a.lr,
        steps_per_episode: a.steps_per_episode,
        seed,
        ..TrainerConfig::default()
    };
    let cfg = RunConfig {
        command: "train".into(),
        seed: a.seed,
        instances: a.instances.iter().map(|p| p.display().to_string()).collect(),
        network: Some(network_for(a.seed)),
        trainer: Some(trainer_for(a.seed)),
        env: env.clone(),
        out_dir: out.display().to_string(),
        extra: [
            ("episodes".to_string(), serde_json::json!(a.episodes)),
            ("repetitions".to_string(), serde_json::json!(a.repetitions)),
            ("gen_orders".to_string(), serde_json::json!(a.gen_orders)),
            ("gen_vehicles".to_string(), serde_json::json!(a.gen_vehicles)),
        ]
        .into_iter()
        .collect(),
        ..RunConfig::default()
    };
    cfg.write_snapshot(&out)?;

    let results: Vec<Result<(String, String)>> = (0..a.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = a.seed + r as u64;
            let mut trainer = DqnTrainer::new(network_for(seed), trainer_for(seed));
            let curve = trainer.train(
                |e| {
                    if instances.is_empty() {
                        generate(&GeneratorConfig {
                            seed: seed.wrapping_mul(1_000_003).wrapping_add(e as u64),
                            n_orders: a.gen_orders,
                            n_vehicles: a.gen_vehicles,
                            ..GeneratorConfig::default()
                        })
                    } else {
                        instances[e % instances.len()].clone()
                    }
                },
                a.episodes,
                &env,
            )?;
            let dir = if a.repetitions == 1 { out.clone() } else { out.join(format!("rep-{r}")) };
            write_file(dir.join("curve.csv"), curve_csv(&curve))?;
            let bytes = trainer.checkpoint_bytes();
            let path = dir.join("checkpoint.bin");
            write_file(&path, &bytes)?;
            Ok((path.display().to_string(), checkpoint_hash(&bytes)))
        })
        .collect();
    for r in results {
        let (path, hash) = r?;
        println!("{path} sha256 {hash}");
    }
    Ok(())
}

fn eval(a: EvalArgs, root: &Path) -> Result<()> {
    let instances: Vec<(String, Instance)> =
        a.instances.iter().map(|p| Ok((stem(p), load(p)?))).collect::<Result<_>>()?;
    let nets = a
        .checkpoint
        .iter()
        .map(|p| Ok((stem(p), load_checkpoint::<Real>(p).with_context(|| format!("loading {}", p.display()))?.0)))
        .collect::<Result<Vec<_>>>()?;
    let env = EnvConfig { alpha: a.alpha };
    let jobs: Vec<(usize, usize)> =
        (0..instances.len()).flat_map(|i| (0..nets.len()).map(move |r| (i, r))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(i, r)| {
            let (name, inst) = &instances[i];
            let mut policy = LearnedPolicy::new(nets[r].1.clone());
            let ep = run_episode(inst, &mut policy, &env, false)?;
            let verdict = validate_routes(&ep.report, inst);
            if !verdict.is_valid() {
                bail!("{name}: route validation failed: {}", verdict.issues[0]);
            }
            Ok(MetricsRow::new(name, &policy.name(), r, &ep))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    let out = a.out.unwrap_or_else(|| root.join("eval"));
    RunConfig {
        command: "eval".into(),
        instances: a.instances.iter().map(|p| p.display().to_string()).collect(),
        checkpoint: Some(a.checkpoint.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")),
        env,
        out_dir: out.display().to_string(),
        ..RunConfig::default()
    }
    .write_snapshot(&out)?;
    write_file(out.join("metrics.csv"), metrics_csv(&rows))?;
    write_file(out.join("timing.csv"), timing_csv(&rows))?;
    print!("{}", compare_csv(&rows));
    Ok(())
}

fn exact(a: ExactArgs, root: &Path) -> Result<()> {
    let instance = load(&a.instance)?;
    let solution = solve_exact(&instance, budget(a.budget)?)?;
    let name = stem(&a.instance);
    let out = a.out.unwrap_or_else(|| root.join(format!("exact-{name}")));
    RunConfig {
        command: "exact".into(),
        instances: vec![a.instance.display().to_string()],
        out_dir: out.display().to_string(),
        extra: [("budget".to_string(), serde_json::json!(a.budget))].into_iter().collect(),
        ..RunConfig::default()
    }
    .write_snapshot(&out)?;
    write_file(out.join("plan.txt"), solution.dump())?;
    write_file(out.join("solution.json"), serde_json::to_string_pretty(&solution)?)?;
    print!("{}", solution.dump());
    Ok(())
}

fn compare(a: CompareArgs, root: &Path) -> Result<()> {
    let instances: Vec<(String, Instance)> =
        a.instances.iter().map(|p| Ok((stem(p), load(p)?))).collect::<Result<_>>()?;
    let kinds: Vec<PolicyKind> = a.policies.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
    if kinds.contains(&PolicyKind::Learned) {
        bail!("pass learned policies with --checkpoint");
    }
    let nets = a
        .checkpoint
        .iter()
        .map(|p| Ok((stem(p), load_checkpoint::<Real>(p).with_context(|| format!("loading {}", p.display()))?.0)))
        .collect::<Result<Vec<_>>>()?;
    let limit = budget(a.budget)?;
    let env = EnvConfig { alpha: a.alpha };
    #[derive(Clone, Copy)]
    enum Job {
        Kind(PolicyKind),
        Net(usize),
        Exact,
    }
    let mut per_instance: Vec<Job> = kinds.iter().copied().map(Job::Kind).collect();
    per_instance.extend((0..nets.len()).map(Job::Net));
    if a.exact {
        per_instance.push(Job::Exact);
    }
    let jobs: Vec<(usize, Job)> =
        (0..instances.len()).flat_map(|i| per_instance.iter().map(move |j| (i, *j))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(i, job)| -> Result<MetricsRow> {
            let (name, inst) = &instances[i];
            let (label, episode) = match job {
                Job::Exact => {
                    let sol = solve_exact(inst, limit).with_context(|| format!("{name}: exact"))?;
                    let label = if sol.optimal { "exact" } else { "exact-best-found" };
                    let ep = Episode { report: sol.to_report(), transitions: Vec::new(), decision_seconds: Vec::new() };
                    (label.to_string(), ep)
                }
                Job::Kind(kind) => {
                    let mut p = make_policy(kind, None, inst, limit)?;
                    (p.name(), run_episode(inst, p.as_mut(), &env, false)?)
                }
                Job::Net(r) => {
                    let mut p = LearnedPolicy::new(nets[r].1.clone());
                    (nets[r].0.clone(), run_episode(inst, &mut p, &env, false)?)
                }
            };
            let verdict = validate_routes(&episode.report, inst);
            if !verdict.is_valid() {
                bail!("{name} {label}: route validation failed: {}", verdict.issues[0]);
            }
            Ok(MetricsRow::new(name, &label, 0, &episode))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    let out = a.out.unwrap_or_else(|| root.join("compare"));
    RunConfig {
        command: "compare".into(),
        instances: a.instances.iter().map(|p| p.display().to_string()).collect(),
        checkpoint: (!a.checkpoint.is_empty())
            .then(|| a.checkpoint.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")),
        env,
        out_dir: out.display().to_string(),
        extra: [
            ("policies".to_string(), serde_json::json!(a.policies)),
            ("exact".to_string(), serde_json::json!(a.exact)),
            ("budget".to_string(), serde_json::json!(a.budget)),
        ]
        .into_iter()
        .collect(),
        ..RunConfig::default()
    }
    .write_snapshot(&out)?;
    let table = compare_csv(&rows);
    write_file(out.join("metrics.csv"), metrics_csv(&rows))?;
    write_file(out.join("compare.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn heatmap(a: HeatmapArgs, root: &Path) -> Result<()> {
    let instance = load(&a.instance)?;
    let name = stem(&a.instance);
    let matrix = if a.predicted {
        predicted_demand(&instance)
    } else {
        build_std_matrix::<Real>(&instance.orders, &instance.network, instance.network.factory_count(), instance.horizon as usize)?
    };
    let kind = if a.predicted { "predicted" } else { "observed" };
    let prefix = a.out.unwrap_or_else(|| root.join(format!("heatmap-{name}-{kind}")));
    let csv = PathBuf::from(format!("{}.csv", prefix.display()));
    let svg = PathBuf::from(format!("{}.svg", prefix.display()));
    write_file(&csv, matrix.to_csv())?;
    write_file(&svg, heatmap_svg(&matrix, &format!("{name} {kind} demand")))?;
    println!("{}\n{}", csv.display(), svg.display());
    Ok(())
}

fn curves(a: CurvesArgs, root: &Path) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.curve.len() {
        bail!("--labels needs one label per --curve file");
    }
    let mut groups: Vec<(String, Vec<_>)> = Vec::new();
    for (i, path) in a.curve.iter().enumerate() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let points = parse_curve_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(path));
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, runs)) => runs.push(points),
            None => groups.push((label, vec![points])),
        }
    }
    let series: Vec<Series> = groups.iter().map(|(label, runs)| tc_band(label, runs)).collect();
    let out = a.out.unwrap_or_else(|| root.join("curves.svg"));
    write_file(&out, curves_svg(&series, &a.title, "episode", "TC"))?;
    println!("{}", out.display());
    Ok(())
}
