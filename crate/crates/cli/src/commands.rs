use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use regimerl::agents::{
    self, cem_train, equal_weight_policy, reinforce_train, run_ablations, write_progress_csv, Trainer,
};
use regimerl::dataio::{
    compute_features, default_spread_pairs, load_return_panel, synthetic_panel, MacroColumns, SynthSpec,
};
use regimerl::env::{write_trace_csv, RegimeStats};
use regimerl::mcsim::{default_macro_coeffs, run_monte_carlo, InitialRegime, MacroSpec, RegimeReturnPools};
use regimerl::metrics::{backtest, backtest_static, stress_spans, write_stress_overlay_csv, BacktestOptions};
use regimerl::regimes::{self, crisis_alignment, viterbi, FitOptions};
use regimerl::stats::StatsReport;
use regimerl::{
    EnvConfig, Error, FeatureMatrix, McConfig, McSummary, Policy, PortfolioEnv, RegimeKind, RegimeModel,
    RegimePosterior, Result, ReturnPanel, TransitionMatrix,
};
use serde::Serialize;

use crate::cli::{AblateArgs, BacktestArgs, DetectArgs, PipelineArgs, SimulateArgs, StatsArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::manifest::{input_record, write_manifest, InputRecord};

/// Output files of one command, relative to its directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn writer(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn finish(self, command: &str, cfg: &RunConfig, inputs: Vec<InputRecord>) -> Result<()> {
        write_manifest(&self.dir, command, cfg, inputs, self.files)
    }
}

fn resolve(config: Option<&Path>, seed: Option<u64>, window: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    cfg.set_seed(seed);
    if let Some(w) = window {
        cfg.window = w;
    }
    Ok(cfg)
}

fn features_for(panel: &ReturnPanel, window: usize) -> Result<FeatureMatrix> {
    compute_features(panel, window, &default_spread_pairs(panel))
}

/// Panel restricted to the feature rows, with the model's posterior on them.
struct Prepared {
    panel: ReturnPanel,
    model: RegimeModel,
    posterior: RegimePosterior,
}

fn prepare(input: &Path, regimes_path: &Path, window: usize) -> Result<Prepared> {
    let panel = load_return_panel(input)?;
    let model = RegimeModel::from_json(&fs::read_to_string(regimes_path)?)?;
    let x = features_for(&panel, window)?;
    if x.feature_names != model.feature_names {
        return Err(Error::Validation(format!(
            "model was fitted on features {:?} but the input yields {:?} (check --window and the asset columns)",
            model.feature_names, x.feature_names
        )));
    }
    let posterior = regimes::posterior(&model, &x)?;
    let panel = panel.select_years(&x.years)?;
    Ok(Prepared {
        panel,
        model,
        posterior,
    })
}

fn slice_posterior(p: &RegimePosterior, range: std::ops::Range<usize>) -> RegimePosterior {
    RegimePosterior {
        years: p.years[range.clone()].to_vec(),
        probs: p.probs[range.clone()].to_vec(),
        labels: p.labels[range].to_vec(),
        loglik: p.loglik,
    }
}

/// Train / held-out split point on the aligned rows.
fn split_point(n: usize, frac: f64) -> Result<usize> {
    if n < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 aligned rows to split into train and test, got {n}"
        )));
    }
    Ok(((n as f64 * frac).floor() as usize).clamp(2, n - 1))
}

/// Environments over the training and held-out segments. Regime moments come
/// from the training segment only.
struct Segments {
    train: PortfolioEnv,
    test: PortfolioEnv,
    all: PortfolioEnv,
    train_panel: ReturnPanel,
}

fn segments(prep: &Prepared, env_cfg: &EnvConfig, frac: f64) -> Result<Segments> {
    let n = prep.panel.n_periods();
    let cut = split_point(n, frac)?;
    let k = prep.model.k;
    let train_panel = prep.panel.slice(0..cut)?;
    let stats = RegimeStats::estimate(train_panel.returns(), &prep.posterior.labels[..cut], k)?;
    let make = |range: std::ops::Range<usize>| -> Result<PortfolioEnv> {
        let panel = prep.panel.slice(range.clone())?;
        let post = slice_posterior(&prep.posterior, range);
        PortfolioEnv::new(env_cfg.clone(), &panel, &post, stats.clone())
    };
    Ok(Segments {
        train: make(0..cut)?,
        test: make(cut..n)?,
        all: make(0..n)?,
        train_panel,
    })
}

fn train_policy(env: &PortfolioEnv, cfg: &RunConfig) -> Result<agents::TrainOutcome> {
    match cfg.trainer {
        Trainer::Reinforce => reinforce_train(env, &cfg.train),
        Trainer::Cem => cem_train(env, &cfg.train),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        start_year: args.start_year,
        n_years: args.years,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let (panel, labels) = synthetic_panel(&spec)?;
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent)?;
    }
    panel.write_csv(BufWriter::new(File::create(&args.out)?))?;
    if let Some(path) = &args.labels_out {
        let mut w = csv_writer(path)?;
        w.write_record(["year", "regime"])?;
        for (y, l) in panel.years().iter().zip(&labels) {
            w.write_record([y.to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

#[derive(Serialize)]
struct AlignmentDoc<'a> {
    schema_version: u32,
    labels_from: &'a str,
    report: regimerl::regimes::AlignmentReport,
}

fn run_detect(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let panel = load_return_panel(input)?;
    let x = features_for(&panel, cfg.window)?;
    let mut opts = FitOptions::new(cfg.k, cfg.seed);
    opts.max_iter = cfg.max_iter;
    opts.tol = cfg.tol;
    let model = regimes::fit(cfg.model, &x, &opts)?;
    let posterior = regimes::posterior(&model, &x)?;

    let mut out = Outputs::new(out_dir)?;
    fs::write(out.path("regimes.json"), model.to_json()? + "\n")?;
    posterior.write_csv(out.writer("posterior.csv")?)?;
    x.write_csv(out.writer("features.csv")?)?;
    if model.kind == RegimeKind::Hmm {
        let path = viterbi(&model, &x)?;
        let mut w = csv::Writer::from_writer(out.writer("viterbi.csv")?);
        w.write_record(["year", "state"])?;
        for (y, s) in x.years.iter().zip(&path) {
            w.write_record([y.to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    let report = crisis_alignment(&posterior.labels, &x.years, &cfg.crisis_years)?;
    out.json(
        "alignment.json",
        &AlignmentDoc {
            schema_version: regimerl::SCHEMA_VERSION,
            labels_from: "posterior argmax",
            report,
        },
    )?;
    out.finish("detect", cfg, vec![input_record("input", input)?])
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(v) = args.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = args.tol {
        cfg.tol = v;
    }
    if let Some(c) = &args.crisis_years {
        cfg.crisis_years = c.clone();
    }
    run_detect(&args.input, &args.common.out, &cfg)
}

#[derive(Debug, Clone, Serialize)]
struct Strategy {
    name: String,
    weights: Vec<f64>,
}

fn parse_strategies(specs: &[String], panel: &ReturnPanel, seed: u64) -> Result<Vec<Strategy>> {
    let n = panel.n_assets();
    let mut out: Vec<Strategy> = Vec::new();
    for spec in specs {
        let spec = spec.trim();
        if spec == "equal" {
            out.push(Strategy {
                name: "equal".into(),
                weights: vec![1.0 / n as f64; n],
            });
        } else if spec == "sharpe" {
            let w = agents::sharpe_optimal_static(panel, 1000, seed)?;
            out.push(Strategy {
                name: "sharpe".into(),
                weights: w.into_inner(),
            });
        } else if let Some(path) = spec.strip_prefix("file:") {
            let text = fs::read_to_string(path)?;
            let map: std::collections::BTreeMap<String, Vec<f64>> = serde_json::from_str(&text)?;
            for (name, weights) in map {
                out.push(Strategy { name, weights });
            }
        } else if let Some((name, ws)) = spec.split_once('=') {
            let weights = ws
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad weight {v:?} in strategy {name:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(Strategy {
                name: name.trim().to_string(),
                weights,
            });
        } else {
            return Err(Error::Validation(format!(
                "unknown strategy {spec:?}; use equal, sharpe, NAME=w1,w2,... or file:PATH"
            )));
        }
    }
    for s in &out {
        if s.weights.len() != n {
            return Err(Error::Validation(format!(
                "strategy {:?} has {} weights but the panel has {n} assets",
                s.name,
                s.weights.len()
            )));
        }
        regimerl::PortfolioWeights::new(s.weights.clone())
            .map_err(|e| Error::Validation(format!("strategy {:?}: {e}", s.name)))?;
    }
    Ok(out)
}

/// Transition counts between consecutive labels, add-one smoothed.
fn empirical_transition(labels: &[usize], k: usize) -> Result<TransitionMatrix> {
    let mut counts = vec![vec![1.0; k]; k];
    for w in labels.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    TransitionMatrix::normalized(counts)
}

#[derive(Serialize)]
struct SimBlock {
    horizon: usize,
    strategy: String,
    summary: McSummary,
}

#[derive(Serialize)]
struct SimDoc {
    schema_version: u32,
    n_paths: usize,
    horizons: Vec<usize>,
    strategies: Vec<Strategy>,
    regimes_used: Vec<usize>,
    transition_source: String,
    transition: Vec<Vec<f64>>,
    initial_regime: usize,
    macro_driven: bool,
    stress_regime: Option<usize>,
    results: Vec<SimBlock>,
}

fn run_simulate(input: &Path, regimes_path: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let prep = prepare(input, regimes_path, cfg.window)?;
    let k = prep.model.k;
    let labels = &prep.posterior.labels;

    let (transition, source) = match (cfg.transitions.as_str(), &prep.model.transition) {
        ("model" | "auto", Some(t)) => (t.clone(), "model"),
        ("model", None) => {
            return Err(Error::Validation(format!(
                "--transitions model needs an hmm, got {}",
                prep.model.kind
            )))
        }
        _ => (empirical_transition(labels, k)?.rows().to_vec(), "empirical"),
    };

    // Regimes with no observed rows have nothing to bootstrap from; drop them.
    let used: Vec<usize> = (0..k).filter(|c| labels.contains(c)).collect();
    let remap = |c: usize| used.iter().position(|&u| u == c).expect("used regime");
    let mut sub: Vec<Vec<f64>> = used
        .iter()
        .map(|&i| {
            let row: Vec<f64> = used.iter().map(|&j| transition[i][j]).collect();
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| v / s).collect()
            } else {
                used.iter().map(|&j| if j == i { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect();
    let mut local_labels: Vec<usize> = labels.iter().map(|&c| remap(c)).collect();
    let mut used_ids = used.clone();

    let mut macro_spec = None;
    let mut stress_regime = None;
    if cfg.macro_driven {
        let cols = MacroColumns::detect(&prep.panel);
        let missing = cols.missing();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "--macro needs columns for: {}",
                missing.join(", ")
            )));
        }
        if used.len() != 2 {
            return Err(Error::Validation(format!(
                "--macro needs exactly 2 populated regimes, found {}",
                used.len()
            )));
        }
        // The stress regime (index 1) is the one with the higher mean asset variance.
        let stats = RegimeStats::estimate(prep.panel.returns(), &local_labels, 2)?;
        let level = |c: usize| stats.variances[c].iter().sum::<f64>();
        if level(0) > level(1) {
            sub = vec![vec![sub[1][1], sub[1][0]], vec![sub[0][1], sub[0][0]]];
            local_labels.iter_mut().for_each(|l| *l = 1 - *l);
            used_ids.swap(0, 1);
        }
        stress_regime = Some(used_ids[1]);
        let idx = |name: String| prep.panel.asset_index(&name).expect("detected column");
        let (eq, tb) = cols.risk_premium().expect("checked");
        let (co, tr) = cols.yield_spread().expect("checked");
        macro_spec = Some(MacroSpec {
            coeffs: default_macro_coeffs(),
            risk_premium: (idx(eq), idx(tb)),
            yield_spread: (idx(co), idx(tr)),
        });
    }
    let tm = TransitionMatrix::normalized(sub)?;
    let pools = RegimeReturnPools::from_labels(prep.panel.returns(), &local_labels, used_ids.len())?;
    let initial = *local_labels.last().expect("non-empty");
    let strategies = parse_strategies(&cfg.strategies, &prep.panel, cfg.seed)?;

    let mut out = Outputs::new(out_dir)?;
    let mut results = Vec::new();
    let mut table = csv::Writer::from_writer(out.writer("summary.csv")?);
    table.write_record([
        "strategy", "horizon", "mean", "median", "ci_low", "ci_high", "var5", "cvar5", "n_paths",
    ])?;
    for s in &strategies {
        for &h in &cfg.horizons {
            let mc = McConfig {
                horizon_years: h,
                n_paths: cfg.paths,
                transition: tm.clone(),
                initial_regime: InitialRegime::Fixed(initial),
                pools: pools.clone(),
                strategy_weights: s.weights.clone(),
                seed: cfg.seed,
                macro_spec: macro_spec.clone(),
            };
            let summary = run_monte_carlo(&mc)?;
            summary.write_terminal_csv(out.writer(&format!("terminal_{}_{h}.csv", s.name))?)?;
            table.write_record([
                s.name.clone(),
                h.to_string(),
                summary.mean.to_string(),
                summary.median.to_string(),
                summary.ci_low.to_string(),
                summary.ci_high.to_string(),
                summary.var5.to_string(),
                summary.cvar5.to_string(),
                summary.n_paths.to_string(),
            ])?;
            results.push(SimBlock {
                horizon: h,
                strategy: s.name.clone(),
                summary,
            });
        }
    }
    table.flush()?;
    drop(table);
    out.json(
        "simulate.json",
        &SimDoc {
            schema_version: regimerl::SCHEMA_VERSION,
            n_paths: cfg.paths,
            horizons: cfg.horizons.clone(),
            strategies,
            regimes_used: used_ids.clone(),
            transition_source: source.into(),
            transition: tm.rows().to_vec(),
            initial_regime: used_ids[initial],
            macro_driven: cfg.macro_driven,
            stress_regime,
            results,
        },
    )?;
    out.finish(
        "simulate",
        cfg,
        vec![input_record("input", input)?, input_record("regimes", regimes_path)?],
    )
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    if !args.horizons.is_empty() {
        cfg.horizons = args.horizons.clone();
    }
    if let Some(p) = args.paths {
        cfg.paths = p;
    }
    if !args.strategies.is_empty() {
        cfg.strategies = args.strategies.clone();
    }
    cfg.macro_driven |= args.macro_driven;
    if let Some(t) = &args.transitions {
        cfg.transitions = t.clone();
    }
    run_simulate(&args.model.input, &args.model.regimes, &args.common.out, &cfg)
}

fn run_train(input: &Path, regimes_path: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let prep = prepare(input, regimes_path, cfg.window)?;
    let seg = segments(&prep, &cfg.env, cfg.train_frac)?;
    let outcome = train_policy(&seg.train, cfg)?;
    let mut policy = outcome.policy;
    policy.regime_model = Some(file_name(regimes_path));

    let mut out = Outputs::new(out_dir)?;
    fs::write(out.path("policy.json"), policy.to_json()? + "\n")?;
    write_progress_csv(&outcome.progress, out.writer("progress.csv")?)?;
    out.finish(
        "train",
        cfg,
        vec![input_record("input", input)?, input_record("regimes", regimes_path)?],
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    cfg.apply_env_flags(&args.env);
    cfg.apply_train_flags(&args.train);
    run_train(&args.model.input, &args.model.regimes, &args.common.out, &cfg)
}

fn run_backtest(
    input: &Path,
    regimes_path: &Path,
    policy_arg: &str,
    segment: &str,
    stress_overlay: bool,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    cfg.validate()?;
    let prep = prepare(input, regimes_path, cfg.window)?;
    let seg = segments(&prep, &cfg.env, cfg.train_frac)?;
    let mut env = match segment {
        "test" => seg.test,
        "train" => seg.train,
        "all" => seg.all,
        other => {
            return Err(Error::Validation(format!(
                "segment must be test, train or all, got {other:?}"
            )))
        }
    };
    let opts = BacktestOptions {
        cagr_window: cfg.cagr_window,
    };
    let mut inputs = vec![input_record("input", input)?, input_record("regimes", regimes_path)?];
    let report = match policy_arg {
        "equal_weight" => backtest(&equal_weight_policy(env.n_assets(), env.n_regimes())?, &mut env, &opts)?,
        "sharpe_opt" => {
            let w = agents::sharpe_optimal_static(&seg.train_panel, 1000, cfg.seed)?;
            backtest_static(w.as_slice(), &mut env, &opts)?
        }
        path => {
            let p = Path::new(path);
            let policy = Policy::from_json(&fs::read_to_string(p)?)?;
            inputs.push(input_record("policy", p)?);
            backtest(&policy, &mut env, &opts)?
        }
    };

    let mut out = Outputs::new(out_dir)?;
    fs::write(out.path("backtest.json"), report.to_json()? + "\n")?;
    report.write_wealth_csv(out.writer("wealth.csv")?)?;
    report.write_cagr_csv(out.writer("cagr.csv")?)?;
    write_trace_csv(&report.trace, out.writer("trace.csv")?)?;
    if stress_overlay {
        let spans = stress_spans(&report.years, &cfg.crisis_years);
        write_stress_overlay_csv(&spans, out.writer("stress_overlay.csv")?)?;
    }
    out.finish("backtest", cfg, inputs)
}

pub fn backtest_cmd(args: &BacktestArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    cfg.apply_env_flags(&args.env);
    if let Some(w) = args.cagr_window {
        cfg.cagr_window = w;
    }
    run_backtest(
        &args.model.input,
        &args.model.regimes,
        &args.policy,
        &args.segment,
        args.stress_overlay,
        &args.common.out,
        &cfg,
    )
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    cfg.apply_env_flags(&args.env);
    cfg.apply_train_flags(&args.train);
    cfg.validate()?;
    let seeds = if args.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        args.seeds.clone()
    };
    let prep = prepare(&args.model.input, &args.model.regimes, cfg.window)?;
    let seg = segments(&prep, &cfg.env, cfg.train_frac)?;
    let opts = BacktestOptions {
        cagr_window: cfg.cagr_window,
    };
    let report = run_ablations(
        &seg.train,
        &seg.test,
        &cfg.train,
        &args.variants,
        &seeds,
        cfg.trainer,
        &opts,
    )?;

    let mut out = Outputs::new(&args.common.out)?;
    fs::write(out.path("ablation.json"), report.to_json()? + "\n")?;
    let mut w = csv::Writer::from_writer(out.writer("ablation.csv")?);
    w.write_record([
        "variant",
        "seed",
        "sharpe",
        "sortino",
        "max_drawdown",
        "final_log_value",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
    for r in &report.rows {
        w.write_record([
            r.variant.to_string(),
            r.seed.to_string(),
            opt(r.sharpe),
            opt(r.sortino),
            r.max_drawdown.to_string(),
            r.final_log_value.to_string(),
        ])?;
    }
    for a in &report.aggregate {
        w.write_record([
            a.variant.to_string(),
            "mean".to_string(),
            opt(a.mean_sharpe),
            opt(a.mean_sortino),
            a.mean_max_drawdown.to_string(),
            a.mean_final_log_value.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    out.finish(
        "ablate",
        &cfg,
        vec![
            input_record("input", &args.model.input)?,
            input_record("regimes", &args.model.regimes)?,
        ],
    )
}

fn run_stats(input: &Path, regimes_path: &Path, asset: Option<&str>, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let prep = prepare(input, regimes_path, cfg.window)?;
    let name = match asset {
        Some(a) => a.to_string(),
        None => MacroColumns::detect(&prep.panel)
            .equity
            .unwrap_or_else(|| prep.panel.asset_names()[0].clone()),
    };
    let j = prep
        .panel
        .asset_index(&name)
        .ok_or_else(|| Error::Validation(format!("no asset column named {name:?}")))?;
    let returns = prep.panel.column(j);
    let report = StatsReport::compute(&prep.posterior.labels, &returns, &cfg.stats)?;

    #[derive(Serialize)]
    struct StatsDoc<'a> {
        asset: &'a str,
        #[serde(flatten)]
        report: StatsReport,
    }
    let mut out = Outputs::new(out_dir)?;
    out.json("stats.json", &StatsDoc { asset: &name, report })?;
    out.finish(
        "stats",
        cfg,
        vec![input_record("input", input)?, input_record("regimes", regimes_path)?],
    )
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    if let Some(b) = args.bins {
        cfg.stats.bins = b;
    }
    if let Some(g) = args.crra_gamma {
        cfg.stats.crra_gamma = g;
    }
    if let Some(a) = args.cara_alpha {
        cfg.stats.cara_alpha = a;
    }
    run_stats(
        &args.model.input,
        &args.model.regimes,
        args.asset.as_deref(),
        &args.common.out,
        &cfg,
    )
}

pub fn pipeline(args: &PipelineArgs) -> Result<()> {
    let mut cfg = resolve(args.common.config.as_deref(), args.common.seed, args.features.window)?;
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if !args.horizons.is_empty() {
        cfg.horizons = args.horizons.clone();
    }
    if let Some(p) = args.paths {
        cfg.paths = p;
    }
    cfg.apply_env_flags(&args.env);
    cfg.apply_train_flags(&args.train);
    cfg.validate()?;
    let root = &args.common.out;
    let input = &args.input;
    let regimes = root.join("detect").join("regimes.json");
    run_detect(input, &root.join("detect"), &cfg)?;
    run_simulate(input, &regimes, &root.join("simulate"), &cfg)?;
    run_train(input, &regimes, &root.join("train"), &cfg)?;
    let policy = root.join("train").join("policy.json");
    run_backtest(
        input,
        &regimes,
        &policy.to_string_lossy(),
        "test",
        true,
        &root.join("backtest"),
        &cfg,
    )?;
    run_stats(input, &regimes, None, &root.join("stats"), &cfg)?;
    let out = Outputs {
        dir: root.clone(),
        files: ["detect", "simulate", "train", "backtest", "stats"]
            .iter()
            .map(|d| format!("{d}/manifest.json"))
            .collect(),
    };
    out.finish("pipeline", &cfg, vec![input_record("input", input)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_points() {
        assert_eq!(split_point(10, 0.7).unwrap(), 7);
        assert_eq!(split_point(3, 0.01).unwrap(), 2);
        assert_eq!(split_point(3, 0.99).unwrap(), 2);
        assert!(split_point(2, 0.5).is_err());
    }

    #[test]
    fn empirical_transition_counts() {
        let t = empirical_transition(&[0, 0, 1, 1, 1, 0], 2).unwrap();
        // counts + 1: row 0 = [1+1, 1+1], row 1 = [1+1, 1+2]
        assert_eq!(t.rows()[0], vec![0.5, 0.5]);
        assert!((t.rows()[1][1] - 0.6).abs() < 1e-15);
    }
}
