//! Subcommands and the shared run/manifest driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use slam_core::analysis::{extract_hierarchy, selection_metrics, AccuracyRecord, HierarchyGraph};
use slam_core::bench::{reports_to_csv, run_scenario, BenchAlgorithm, Scenario, ScenarioReport};
use slam_core::estimation::{
    fit, lambda_grid, pem_fit_equiv, solution_path, upsilon_grid, Algorithm, FitConfig, FitResult,
    ModelKind, SolutionPath, Tuning, DEFAULT_BETA, DEFAULT_C, DEFAULT_GAMMA, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use slam_core::identifiability::{assess, equivalence_classes, IdentifiabilityReport, SearchOptions};
use slam_core::patterns::{PatternSet, QMatrix};
use slam_core::pipeline::{run_pipeline, PipelineConfig, DEFAULT_SCREEN_THRESHOLD};
use slam_core::screening::{gibbs_screen, variational_screen, ScreenConfig, ScreenMethod, ScreenResult};
use slam_core::simulation::{simulate, ItemTruth, QLayout, SimData, SimDesign, Signal};

use crate::io::{
    binary_csv, patterns_text, read_design, read_patterns, read_q, write_json, write_text,
};
use crate::manifest::RunManifest;
use crate::settings::{read_config, Settings};

/// Largest K for which a missing `--patterns` means every pattern.
const FULL_SPACE_MAX_K: usize = 20;

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate responses, Q and truth from a block design
    Simulate(SimulateArgs),
    /// Screen candidate patterns
    Screen(ScreenArgs),
    /// Fit one tuning value
    Fit(FitArgs),
    /// Fit a tuning grid and choose by EBIC
    Path(PathArgs),
    /// Check identifiability conditions for Q and a pattern set
    CheckId(CheckIdArgs),
    /// List equivalence classes and optionally fit over them
    Equiv(EquivArgs),
    /// Attribute hierarchy implied by a pattern set
    Hierarchy(HierarchyArgs),
    /// Replicated simulation scenarios
    Bench(BenchArgs),
    /// Screening (for large K), tuning path, selection and hierarchy
    Pipeline(PipelineArgs),
    /// Repeat a run from its manifest
    Rerun(RerunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Screen(_) => "screen",
            Command::Fit(_) => "fit",
            Command::Path(_) => "path",
            Command::CheckId(_) => "check-id",
            Command::Equiv(_) => "equiv",
            Command::Hierarchy(_) => "hierarchy",
            Command::Bench(_) => "bench",
            Command::Pipeline(_) => "pipeline",
            Command::Rerun(_) => "rerun",
        }
    }

    fn empty(name: &str) -> Result<Self> {
        Ok(match name {
            "simulate" => Command::Simulate(Default::default()),
            "screen" => Command::Screen(Default::default()),
            "fit" => Command::Fit(Default::default()),
            "path" => Command::Path(Default::default()),
            "check-id" => Command::CheckId(Default::default()),
            "equiv" => Command::Equiv(Default::default()),
            "hierarchy" => Command::Hierarchy(Default::default()),
            "bench" => Command::Bench(Default::default()),
            "pipeline" => Command::Pipeline(Default::default()),
            other => bail!("manifest names unknown command '{other}'"),
        })
    }
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// two-param or all-effect
    #[arg(long)]
    model: Option<String>,
    /// Two-parameter noise: 1 - theta_plus = theta_minus
    #[arg(long)]
    noise: Option<f64>,
    /// All-effect response probability with no required attribute
    #[arg(long)]
    base: Option<f64>,
    /// All-effect response probability with every required attribute
    #[arg(long)]
    top: Option<f64>,
    #[arg(long)]
    n_patterns: Option<usize>,
    /// standard or repeated-band (default depends on the model)
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ScreenOptions {
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    m_eff: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    screen_tol: Option<f64>,
    /// Keep a snapshot of the candidates every this many iterations
    #[arg(long)]
    enhance_period: Option<usize>,
    #[arg(long)]
    delta_gap: Option<f64>,
    /// Mean-field updates instead of Gibbs sampling
    #[arg(long)]
    variational: bool,
}

#[derive(Args, Debug, Default)]
pub struct ScreenArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// Response CSV, N rows of J 0/1 entries
    #[arg(long)]
    responses: Option<PathBuf>,
    #[command(flatten)]
    screen: ScreenOptions,
    #[arg(long)]
    seed: Option<u64>,
    /// Pattern list, one binary string per line
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct FitOptions {
    /// two-param or all-effect
    #[arg(long)]
    model: Option<String>,
    /// pem, fpvem or em
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Selection threshold (default 1/(2N))
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct FitArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// Response CSV, N rows of J 0/1 entries
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Candidate patterns (default: all 2^K)
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    upsilon: Option<f64>,
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct PathArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// Response CSV, N rows of J 0/1 entries
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
    /// Comma-separated, strictly decreasing tuning values
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CheckIdArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// Pattern set whose identifiability is checked
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    max_subset_size: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    flip_budget: Option<usize>,
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EquivArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// When given, fit penalised EM over the class representatives
    /// Response CSV, N rows of J 0/1 entries
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[command(flatten)]
    fit: FitOptions,
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct HierarchyArgs {
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graphviz output
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct BenchArgs {
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated sample sizes
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated noise levels (two-parameter model)
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base: Option<f64>,
    #[arg(long)]
    top: Option<f64>,
    #[arg(long)]
    n_patterns: Option<usize>,
    /// Comma-separated: pem, fpvem, em, vem
    #[arg(long)]
    algos: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV table
    /// Output file (a manifest is written beside it)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct PipelineArgs {
    /// Q-matrix CSV, J rows of K 0/1 entries
    #[arg(long)]
    q: Option<PathBuf>,
    /// Response CSV, N rows of J 0/1 entries
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Candidate patterns, skipping the default candidate rule
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// truth.json from `simulate`, for accuracy metrics
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Screen first when K exceeds this
    #[arg(long)]
    screen_threshold: Option<usize>,
    #[command(flatten)]
    screen: ScreenOptions,
    /// Seed of the screening sampler
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Files written by a command and where its manifest goes.
struct Artifacts {
    outputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
    inputs: &'static [&'static str],
    stages: Vec<String>,
}

/// Runs a command with options resolved against `config` and writes its manifest.
pub fn execute(command: Command, config: Option<&Path>) -> Result<()> {
    if let Command::Rerun(args) = command {
        let manifest = RunManifest::read(&args.manifest)?;
        let changed = manifest.changed_inputs()?;
        if !changed.is_empty() {
            log::warn!("inputs changed since the manifest was written: {changed:?}");
        }
        let cmd = Command::empty(&manifest.command)?;
        return run(cmd, manifest.config);
    }
    let file = match config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    run(command, file)
}

fn run(command: Command, file: BTreeMap<String, String>) -> Result<()> {
    let start = Instant::now();
    let name = command.name();
    let mut s = Settings::new(file);
    let artifacts = match command {
        Command::Simulate(a) => cmd_simulate(a, &mut s)?,
        Command::Screen(a) => cmd_screen(a, &mut s)?,
        Command::Fit(a) => cmd_fit(a, &mut s)?,
        Command::Path(a) => cmd_path(a, &mut s)?,
        Command::CheckId(a) => cmd_check_id(a, &mut s)?,
        Command::Equiv(a) => cmd_equiv(a, &mut s)?,
        Command::Hierarchy(a) => cmd_hierarchy(a, &mut s)?,
        Command::Bench(a) => cmd_bench(a, &mut s)?,
        Command::Pipeline(a) => cmd_pipeline(a, &mut s)?,
        Command::Rerun(_) => unreachable!("handled by execute"),
    };
    s.check_unused()?;
    if let Some(path) = &artifacts.manifest {
        let mut m = RunManifest::new(name, s.resolved().clone());
        m.digest_inputs(artifacts.inputs)?;
        m.outputs = artifacts.outputs.iter().map(|p| p.display().to_string()).collect();
        m.stages = artifacts.stages;
        m.wall_time_secs = start.elapsed().as_secs_f64();
        write_json(path, &m)?;
    }
    Ok(())
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "two-param" => Ok(ModelKind::TwoParam),
        "all-effect" => Ok(ModelKind::AllEffect),
        other => bail!("unknown model '{other}' (two-param or all-effect)"),
    }
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

#[derive(Serialize)]
#[serde(untagged)]
enum ItemsOut {
    TwoParam {
        theta_plus: Vec<f64>,
        theta_minus: Vec<f64>,
    },
    AllEffect {
        /// Per item: required attributes and the probability of each sub-profile
        /// (bit t set when the t-th required attribute is mastered).
        items: Vec<AllEffectItemOut>,
    },
}

#[derive(Serialize)]
struct AllEffectItemOut {
    required: Vec<usize>,
    cells: Vec<f64>,
}

#[derive(Serialize)]
struct TruthOut {
    design: SimDesign,
    k: usize,
    j: usize,
    a0: Vec<String>,
    proportions: Vec<f64>,
    item_parameters: ItemsOut,
    assignments: Vec<usize>,
}

fn truth_out(sim: &SimData) -> TruthOut {
    let item_parameters = match &sim.items {
        ItemTruth::TwoParam(p) => ItemsOut::TwoParam {
            theta_plus: p.theta_plus.clone(),
            theta_minus: p.theta_minus.clone(),
        },
        ItemTruth::AllEffect(p) => ItemsOut::AllEffect {
            items: (0..p.j())
                .map(|j| AllEffectItemOut {
                    required: p.required(j).to_vec(),
                    cells: p.cells(j),
                })
                .collect(),
        },
    };
    TruthOut {
        design: sim.design.clone(),
        k: sim.q.k(),
        j: sim.q.j(),
        a0: sim.a0.to_strings(),
        proportions: sim.p.values().to_vec(),
        item_parameters,
        assignments: sim.assignments.clone(),
    }
}

fn cmd_simulate(a: SimulateArgs, s: &mut Settings) -> Result<Artifacts> {
    let k = s.value("k", a.k, 10)?;
    let n = s.value("n", a.n, 500)?;
    let model = parse_model(&s.value("model", a.model, "two-param".to_string())?)?;
    let n_patterns = s.value("n-patterns", a.n_patterns, 10)?;
    let seed = s.value("seed", a.seed, 0u64)?;
    let (signal, default_layout) = match model {
        ModelKind::TwoParam => (
            Signal::TwoParam {
                noise: s.value("noise", a.noise, 0.1)?,
            },
            "standard",
        ),
        ModelKind::AllEffect => (
            Signal::AllEffect {
                base: s.value("base", a.base, 0.1)?,
                top: s.value("top", a.top, 0.9)?,
            },
            "repeated-band",
        ),
    };
    let q_layout = match s.value("layout", a.layout, default_layout.to_string())?.as_str() {
        "standard" => QLayout::Standard,
        "repeated-band" => QLayout::RepeatedBand,
        other => bail!("unknown layout '{other}' (standard or repeated-band)"),
    };
    let out_dir: PathBuf = s.required("out-dir", path_str(a.out_dir))?.into();
    let design = SimDesign {
        k,
        n,
        n_patterns,
        signal,
        q_layout,
        seed,
    };
    let sim = simulate(&design)?;
    let outputs = vec![out_dir.join("responses.csv"), out_dir.join("q.csv"), out_dir.join("truth.json")];
    write_text(&outputs[0], &binary_csv(&sim.responses.to_rows()))?;
    write_text(&outputs[1], &binary_csv(&sim.q.to_rows()))?;
    write_json(&outputs[2], &truth_out(&sim))?;
    println!(
        "simulated N = {n}, J = {}, K = {k} with {} true patterns into {}",
        sim.q.j(),
        sim.a0.len(),
        out_dir.display()
    );
    Ok(Artifacts {
        outputs,
        manifest: Some(out_dir.join("manifest.json")),
        inputs: &[],
        stages: vec!["simulate".into()],
    })
}

fn screen_config(o: ScreenOptions, seed: u64, s: &mut Settings) -> Result<(ScreenConfig, ScreenMethod)> {
    let d = ScreenConfig::default();
    let cfg = ScreenConfig {
        m_max: s.value("m-max", o.m_max, d.m_max)?,
        m_eff: s.value("m-eff", o.m_eff, d.m_eff)?,
        max_outer: s.value("max-outer", o.max_outer, d.max_outer)?,
        tol: s.value("screen-tol", o.screen_tol, d.tol)?,
        enhance_period: s.optional("enhance-period", o.enhance_period)?,
        delta_gap: s.value("delta-gap", o.delta_gap, d.delta_gap)?,
        seed,
    };
    cfg.validate()?;
    let method = if s.switch("variational", o.variational)? {
        ScreenMethod::Variational
    } else {
        ScreenMethod::Gibbs
    };
    Ok((cfg, method))
}

#[derive(Serialize)]
struct ScreenOut {
    method: ScreenMethod,
    candidates: usize,
    iterations: usize,
    converged: bool,
    snapshots_used: usize,
    gap_violations: usize,
    fallback_events: usize,
    theta_plus: Vec<f64>,
    theta_minus: Vec<f64>,
}

fn screen_out(res: &ScreenResult<f64>, method: ScreenMethod) -> ScreenOut {
    ScreenOut {
        method,
        candidates: res.a_screen.len(),
        iterations: res.iterations,
        converged: res.converged,
        snapshots_used: res.snapshots_used,
        gap_violations: res.gap_violations,
        fallback_events: res.fallback_events,
        theta_plus: res.theta.theta_plus.clone(),
        theta_minus: res.theta.theta_minus.clone(),
    }
}

fn cmd_screen(a: ScreenArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let r_path: PathBuf = s.required("responses", path_str(a.responses))?.into();
    let seed = s.value("seed", a.seed, 0u64)?;
    let (cfg, method) = screen_config(a.screen, seed, s)?;
    let out: PathBuf = s.required("out", path_str(a.out))?.into();
    let (q, r) = read_design(&q_path, &r_path)?;
    let res = match method {
        ScreenMethod::Gibbs => gibbs_screen::<f64>(&r, &q, &cfg)?,
        ScreenMethod::Variational => variational_screen::<f64>(&r, &q, &cfg)?,
    };
    let mut summary = out.as_os_str().to_owned();
    summary.push(".summary.json");
    let summary = PathBuf::from(summary);
    write_text(&out, &patterns_text(&res.a_screen))?;
    write_json(&summary, &screen_out(&res, method))?;
    println!("{} candidate patterns written to {}", res.a_screen.len(), out.display());
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out, summary],
        inputs: &["q", "responses"],
        stages: vec!["screen".into()],
    })
}

/// Fit settings shared by fit, path, equiv and pipeline; the tuning value is set by the caller.
fn fit_config(o: FitOptions, s: &mut Settings, default_algo: &str) -> Result<(FitConfig, String)> {
    let model = parse_model(&s.value("model", o.model, "two-param".to_string())?)?;
    let algo = s.value("algo", o.algo, default_algo.to_string())?;
    let beta = s.value("beta", o.beta, DEFAULT_BETA)?;
    let algorithm = match algo.as_str() {
        "pem" => Algorithm::Pem { lambda: -1.0 },
        "fpvem" => Algorithm::FpVem { upsilon: 1.0, beta },
        "em" => Algorithm::Em,
        other => bail!("unknown algorithm '{other}' (pem, fpvem or em)"),
    };
    let cfg = FitConfig {
        model,
        algorithm,
        c: s.value("c", o.c, DEFAULT_C)?,
        rho: s.optional("rho", o.rho)?,
        max_iter: s.value("max-iter", o.max_iter, DEFAULT_MAX_ITER)?,
        tol: s.value("tol", o.tol, DEFAULT_TOL)?,
        gamma: s.value("gamma", o.gamma, DEFAULT_GAMMA)?,
    };
    Ok((cfg, algo))
}

fn candidate_set(s: &mut Settings, flag: Option<PathBuf>, q: &QMatrix) -> Result<PatternSet> {
    match s.optional("patterns", path_str(flag))? {
        Some(p) => {
            let set = read_patterns(Path::new(&p))?;
            if set.k() != q.k() {
                bail!("{p} has K = {}, Q has K = {}", set.k(), q.k());
            }
            Ok(set)
        }
        None if q.k() <= FULL_SPACE_MAX_K => Ok(PatternSet::full(q.k())?),
        None => bail!(
            "K = {} is too large to enumerate; pass --patterns (for example from `screen`)",
            q.k()
        ),
    }
}

#[derive(Serialize)]
struct FitOut {
    model: ModelKind,
    algorithm: Algorithm,
    rho: f64,
    candidates: usize,
    selected: Vec<String>,
    proportions: Vec<f64>,
    item_parameters: ItemsOut,
    loglik: f64,
    selected_loglik: f64,
    objective: f64,
    ebic: f64,
    iterations: usize,
    converged: bool,
    clamp_events: usize,
    fallback_events: usize,
}

fn fit_out(f: &FitResult<f64>, q: &QMatrix) -> FitOut {
    let item_parameters = match f.two_param() {
        Some(p) => ItemsOut::TwoParam {
            theta_plus: p.theta_plus,
            theta_minus: p.theta_minus,
        },
        None => ItemsOut::AllEffect {
            items: f
                .cells
                .iter()
                .enumerate()
                .map(|(j, cells)| AllEffectItemOut {
                    required: q.required(j),
                    cells: cells.clone(),
                })
                .collect(),
        },
    };
    FitOut {
        model: f.model,
        algorithm: f.algorithm,
        rho: f.rho,
        candidates: f.patterns.len(),
        selected: f.selected.to_strings(),
        proportions: f.selected_proportions(),
        item_parameters,
        loglik: f.loglik,
        selected_loglik: f.selected_loglik,
        objective: f.objective,
        ebic: f.ebic,
        iterations: f.iterations,
        converged: f.converged,
        clamp_events: f.clamp_events,
        fallback_events: f.fallback_events,
    }
}

fn cmd_fit(a: FitArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let r_path: PathBuf = s.required("responses", path_str(a.responses))?.into();
    let (mut cfg, algo) = fit_config(a.fit, s, "pem")?;
    cfg.algorithm = match cfg.algorithm {
        Algorithm::Pem { .. } => Algorithm::Pem {
            lambda: s.required("lambda", a.lambda)?,
        },
        Algorithm::FpVem { beta, .. } => Algorithm::FpVem {
            upsilon: s.required("upsilon", a.upsilon)?,
            beta,
        },
        Algorithm::Em => Algorithm::Em,
    };
    let out: PathBuf = s.required("out", path_str(a.out))?.into();
    let (q, r) = read_design(&q_path, &r_path)?;
    let candidates = candidate_set(s, a.patterns, &q)?;
    let res = fit::<f64>(&r, &q, &candidates, &cfg, None)?;
    write_json(&out, &fit_out(&res, &q))?;
    println!(
        "{algo}: {} of {} patterns selected, EBIC {:.3}, {} iterations{}",
        res.support_size(),
        candidates.len(),
        res.ebic,
        res.iterations,
        if res.converged { "" } else { " (not converged)" }
    );
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out],
        inputs: &["q", "responses", "patterns"],
        stages: vec!["fit".into()],
    })
}

#[derive(Serialize)]
struct PathEntryOut {
    tuning: f64,
    support: usize,
    ebic: f64,
    loglik: f64,
    iterations: usize,
    converged: bool,
    selected: Vec<String>,
}

#[derive(Serialize)]
struct PathOut {
    tuning: Tuning,
    entries: Vec<PathEntryOut>,
    chosen_index: usize,
    chosen_tuning: f64,
    chosen: FitOut,
}

fn path_out(path: &SolutionPath<f64>, q: &QMatrix) -> PathOut {
    PathOut {
        tuning: path.tuning,
        entries: path
            .entries
            .iter()
            .map(|e| PathEntryOut {
                tuning: e.tuning,
                support: e.fit.support_size(),
                ebic: e.fit.ebic,
                loglik: e.fit.loglik,
                iterations: e.fit.iterations,
                converged: e.fit.converged,
                selected: e.fit.selected.to_strings(),
            })
            .collect(),
        chosen_index: path.chosen,
        chosen_tuning: path.chosen_tuning(),
        chosen: fit_out(path.chosen_fit(), q),
    }
}

fn grid_for(s: &mut Settings, flag: Option<String>, algorithm: &Algorithm) -> Result<Vec<f64>> {
    let default = match algorithm {
        Algorithm::Pem { .. } => lambda_grid(),
        Algorithm::FpVem { .. } => upsilon_grid(),
        Algorithm::Em => bail!("a tuning path needs --algo pem or fpvem"),
    };
    let text: Vec<String> = default.iter().map(|v| v.to_string()).collect();
    s.list("grid", flag, &text.join(","))
}

fn cmd_path(a: PathArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let r_path: PathBuf = s.required("responses", path_str(a.responses))?.into();
    let (cfg, _) = fit_config(a.fit, s, "pem")?;
    let grid = grid_for(s, a.grid, &cfg.algorithm)?;
    let out: PathBuf = s.required("out", path_str(a.out))?.into();
    let (q, r) = read_design(&q_path, &r_path)?;
    let candidates = candidate_set(s, a.patterns, &q)?;
    let path = solution_path::<f64>(&r, &q, &candidates, &grid, &cfg)?;
    write_json(&out, &path_out(&path, &q))?;
    println!(
        "chose {} = {} with {} patterns (EBIC {:.3})",
        match path.tuning {
            Tuning::Lambda => "lambda",
            Tuning::Upsilon => "upsilon",
        },
        path.chosen_tuning(),
        path.chosen_fit().support_size(),
        path.chosen_fit().ebic
    );
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out],
        inputs: &["q", "responses", "patterns"],
        stages: vec!["path".into()],
    })
}

fn cmd_check_id(a: CheckIdArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let p_path: PathBuf = s.required("patterns", path_str(a.patterns))?.into();
    let d = SearchOptions::default();
    let opts = SearchOptions {
        max_subset_size: s.optional("max-subset-size", a.max_subset_size)?,
        max_nodes: s.value("max-nodes", a.max_nodes, d.max_nodes)?,
        flip_budget: s.value("flip-budget", a.flip_budget, d.flip_budget)?,
        ..d
    };
    let out = s.optional("out", path_str(a.out))?.map(PathBuf::from);
    let q = read_q(&q_path)?;
    let a0 = read_patterns(&p_path)?;
    let report: IdentifiabilityReport = assess(&q, &a0, &opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    let Some(out) = out else {
        return Ok(Artifacts {
            outputs: vec![],
            manifest: None,
            inputs: &[],
            stages: vec![],
        });
    };
    write_json(&out, &report)?;
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out],
        inputs: &["q", "patterns"],
        stages: vec!["check-id".into()],
    })
}

#[derive(Serialize)]
struct EquivOut {
    classes: usize,
    representatives: Vec<String>,
    fit: Option<FitOut>,
}

fn cmd_equiv(a: EquivArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let r_path = s.optional("responses", path_str(a.responses))?;
    let out = s.optional("out", path_str(a.out))?.map(PathBuf::from);
    let q = read_q(&q_path)?;
    let classes = equivalence_classes(&q)?;
    let fit = match r_path {
        Some(rp) => {
            let (mut cfg, _) = fit_config(a.fit, s, "pem")?;
            cfg.algorithm = Algorithm::Pem {
                lambda: s.required("lambda", a.lambda)?,
            };
            let (q, r) = read_design(&q_path, Path::new(&rp))?;
            let res = pem_fit_equiv::<f64>(&r, &q, &cfg)?;
            Some(fit_out(&res, &q))
        }
        None => None,
    };
    let result = EquivOut {
        classes: classes.len(),
        representatives: classes.representatives().to_strings(),
        fit,
    };
    println!("{} equivalence classes", result.classes);
    let Some(out) = out else {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(Artifacts {
            outputs: vec![],
            manifest: None,
            inputs: &[],
            stages: vec![],
        });
    };
    write_json(&out, &result)?;
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out],
        inputs: &["q", "responses"],
        stages: vec!["equiv".into()],
    })
}

fn cmd_hierarchy(a: HierarchyArgs, s: &mut Settings) -> Result<Artifacts> {
    let p_path: PathBuf = s.required("patterns", path_str(a.patterns))?.into();
    let out: PathBuf = s.required("out", path_str(a.out))?.into();
    let dot = s.optional("dot", path_str(a.dot))?.map(PathBuf::from);
    let selected = read_patterns(&p_path)?;
    let h = extract_hierarchy(&selected)?;
    write_json(&out, &h)?;
    let mut outputs = vec![out.clone()];
    if let Some(dot) = dot {
        write_text(&dot, &h.to_dot())?;
        outputs.push(dot);
    }
    println!("{} attribute groups, {} prerequisite edges", h.groups.len(), h.edges.len());
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs,
        inputs: &["patterns"],
        stages: vec!["hierarchy".into()],
    })
}

fn parse_bench_algo(s: &str) -> Result<BenchAlgorithm> {
    Ok(match s {
        "pem" => BenchAlgorithm::Pem,
        "fpvem" => BenchAlgorithm::FpVem,
        "em" => BenchAlgorithm::Em,
        "vem" => BenchAlgorithm::Vem,
        other => bail!("unknown bench algorithm '{other}' (pem, fpvem, em, vem)"),
    })
}

fn cmd_bench(a: BenchArgs, s: &mut Settings) -> Result<Artifacts> {
    let k = s.value("k", a.k, 10)?;
    let ns: Vec<usize> = s.list("n", a.n, "500")?;
    let model = parse_model(&s.value("model", a.model, "two-param".to_string())?)?;
    let n_patterns = s.value("n-patterns", a.n_patterns, 10)?;
    let replicates = s.value("replicates", a.replicates, 20)?;
    let seed = s.value("seed", a.seed, 0u64)?;
    let algos: Vec<String> = s.list("algos", a.algos, "pem")?;
    let algos = algos.iter().map(|x| parse_bench_algo(x)).collect::<Result<Vec<_>>>()?;
    let signals: Vec<(String, Signal)> = match model {
        ModelKind::TwoParam => {
            let noises: Vec<f64> = s.list("noise", a.noise, "0.1")?;
            noises
                .into_iter()
                .map(|noise| (format!("noise{noise}"), Signal::TwoParam { noise }))
                .collect()
        }
        ModelKind::AllEffect => {
            let base = s.value("base", a.base, 0.1)?;
            let top = s.value("top", a.top, 0.9)?;
            vec![(format!("base{base}-top{top}"), Signal::AllEffect { base, top })]
        }
    };
    let out: PathBuf = s.required("out", path_str(a.out))?.into();
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for &n in &ns {
        for (label, signal) in &signals {
            for &algo in &algos {
                let design = SimDesign {
                    k,
                    n,
                    n_patterns,
                    signal: *signal,
                    q_layout: match model {
                        ModelKind::TwoParam => QLayout::Standard,
                        ModelKind::AllEffect => QLayout::RepeatedBand,
                    },
                    seed,
                };
                let name = format!("K{k}-N{n}-{label}");
                let report = run_scenario::<f64>(&Scenario::new(&name, design, algo, replicates))
                    .with_context(|| format!("scenario {name} with {}", algo.name()))?;
                eprintln!(
                    "{name} {}: TPR {:.3}, 1-FDR {:.3}, support {:.1}",
                    algo.name(),
                    report.tpr.mean,
                    report.one_minus_fdr.mean,
                    report.support.mean
                );
                reports.push(report);
            }
        }
    }
    let mut details = out.as_os_str().to_owned();
    details.push(".json");
    let details = PathBuf::from(details);
    write_text(&out, &reports_to_csv(&reports))?;
    write_json(&details, &reports)?;
    print!("{}", reports_to_csv(&reports));
    Ok(Artifacts {
        manifest: Some(manifest_beside(&out)),
        outputs: vec![out, details],
        inputs: &[],
        stages: vec!["bench".into()],
    })
}

#[derive(serde::Deserialize)]
struct TruthIn {
    a0: Vec<String>,
}

fn read_truth(path: &Path, k: usize) -> Result<PatternSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let t: TruthIn =
        serde_json::from_str(&text).with_context(|| format!("{}: expected truth JSON", path.display()))?;
    let members = t
        .a0
        .iter()
        .map(|s| slam_core::patterns::AttributePattern::parse(s))
        .collect::<slam_core::Result<Vec<_>>>()?;
    let set = PatternSet::from_unsorted(k, members)?;
    Ok(set)
}

#[derive(Serialize)]
struct MetricsOut {
    #[serde(flatten)]
    accuracy: AccuracyRecord,
    candidate_coverage: f64,
}

fn cmd_pipeline(a: PipelineArgs, s: &mut Settings) -> Result<Artifacts> {
    let q_path: PathBuf = s.required("q", path_str(a.q))?.into();
    let r_path: PathBuf = s.required("responses", path_str(a.responses))?.into();
    let truth = s.optional("truth", path_str(a.truth))?.map(PathBuf::from);
    let (mut fit_cfg, _) = fit_config(a.fit, s, "pem")?;
    let grid = grid_for(s, a.grid, &fit_cfg.algorithm)?;
    fit_cfg.algorithm = fit_cfg.algorithm.with_tuning(grid[0]);
    let seed = s.value("seed", a.seed, 0u64)?;
    let screen_threshold = s.value("screen-threshold", a.screen_threshold, DEFAULT_SCREEN_THRESHOLD)?;
    let (screen, screen_method) = screen_config(a.screen, seed, s)?;
    let out_dir: PathBuf = s.required("out-dir", path_str(a.out_dir))?.into();
    let (q, r) = read_design(&q_path, &r_path)?;
    let override_set = match s.optional("patterns", path_str(a.patterns))? {
        Some(p) => Some(read_patterns(Path::new(&p))?),
        None => None,
    };
    let config = PipelineConfig {
        fit: fit_cfg,
        grid: Some(grid),
        screen_threshold,
        screen,
        screen_method,
    };
    let res = run_pipeline::<f64>(&r, &q, &config, override_set.as_ref())?;
    let chosen = res.path.chosen_fit();

    let mut stages = Vec::new();
    let mut outputs = Vec::new();
    if let Some(sr) = &res.screen {
        stages.push("screen".to_string());
        let p = out_dir.join("screen.json");
        write_json(&p, &screen_out(sr, screen_method))?;
        outputs.push(p);
    }
    stages.push("path".to_string());
    let files = [
        ("candidates.txt", patterns_text(&res.candidates)),
        ("selected.txt", patterns_text(&chosen.selected)),
    ];
    for (name, text) in files {
        let p = out_dir.join(name);
        write_text(&p, &text)?;
        outputs.push(p);
    }
    let p = out_dir.join("path.json");
    write_json(&p, &path_out(&res.path, &q))?;
    outputs.push(p);
    if let Some(h) = &res.hierarchy {
        stages.push("hierarchy".to_string());
        let (pj, pd) = (out_dir.join("hierarchy.json"), out_dir.join("hierarchy.dot"));
        write_json::<HierarchyGraph>(&pj, h)?;
        write_text(&pd, &h.to_dot())?;
        outputs.extend([pj, pd]);
    }
    if let Some(tp) = truth {
        stages.push("metrics".to_string());
        let a0 = read_truth(&tp, q.k())?;
        let metrics = MetricsOut {
            accuracy: selection_metrics(&a0, &chosen.selected)?,
            candidate_coverage: slam_core::analysis::coverage(&a0, &res.candidates)?,
        };
        let p = out_dir.join("metrics.json");
        write_json(&p, &metrics)?;
        outputs.push(p);
        println!(
            "TPR {:.3}, 1-FDR {:.3}",
            metrics.accuracy.tpr, metrics.accuracy.one_minus_fdr
        );
    }
    println!(
        "{}selected {} of {} candidates at tuning {}",
        if res.screened { "screened, then " } else { "" },
        chosen.support_size(),
        res.candidates.len(),
        res.path.chosen_tuning()
    );
    Ok(Artifacts {
        outputs,
        manifest: Some(out_dir.join("manifest.json")),
        inputs: &["q", "responses", "patterns", "truth"],
        stages,
    })
}
