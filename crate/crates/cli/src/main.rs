//! `addrl`: dataset generation, training, evaluation and analysis.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use addrl::datahub::{gen_synthetic, split_dataset, Dataset, DatasetSplit, Holdout};
use addrl::evalkit::{
    controllability_report, evaluate_model, export_embeddings, interpretability_report, popularity_baseline,
    random_baseline, rank_items, select_cohort, top_n, write_controllability_csv, write_interpretability_csv,
    write_metrics_csv, ExportKind, MetricRow, ProbeMode, ProbeReport, Scorer,
};
use addrl::model::{gradcheck_toy, toy_problem};
use addrl::trainer::{
    grid_search, run_ablation, train_with, write_history_csv, AblationRow, Checkpoint, Variant,
};
use addrl::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "addrl", version, about = "Attribute-driven disentangled multimodal recommender")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for the command's random choices (generator seed for gen-synthetic, train.seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory; overrides data.dir.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Do not print the timestamped banner line.
    #[arg(long, global = true)]
    no_banner: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-attribute dataset.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, history.csv and metrics.csv.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranking metrics of a checkpoint or a baseline.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `model`, `popularity` or `random`.
        #[arg(long, default_value = "model")]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-n items for one user.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(short = 'n', default_value_t = 20)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-rank with one attribute's score scaled by ξ.
    ///
    /// With `--user`, prints that user's list. Otherwise builds the
    /// controllability table for the cohort most concentrated on `--value`.
    Whatif {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        attr: String,
        /// Scale factors; comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
        xi: Vec<f64>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        value: Option<String>,
        #[arg(long, default_value_t = 50)]
        cohort: usize,
        #[arg(short = 'n', default_value_t = 20)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train loss-term ablations; writes ablation.csv and one history per variant.
    Ablate {
        /// Variant names; all six when omitted.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the [grid] section; writes grid.csv.
    Grid {
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump chunk embeddings as CSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `chunks-by-source` or `fused-by-attribute`.
        #[arg(long, default_value = "chunks-by-source")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients with finite differences on a toy model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Per-attribute score shares of users' top items, plus probe accuracies.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        /// User tokens; repeatable.
        #[arg(long = "user", required = true)]
        users: Vec<String>,
        #[arg(short = 'n', default_value_t = 10)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Refit probe classifiers instead of using the trained ones.
        #[arg(long)]
        refit: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Core(addrl::Error),
}

impl From<addrl::Error> for CliError {
    fn from(e: addrl::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cmd = Cli::command().after_help(config::keys_help());
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref(), &g.set).map_err(CliError::Config)?;
    if let Some(d) = &g.data {
        cfg.data.dir = d.clone();
    }
    if let Some(s) = g.seed {
        match cli.command {
            Command::GenSynthetic { .. } => cfg.synthetic.seed = s,
            _ => cfg.train.seed = s,
        }
    }
    if !g.no_banner {
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        println!("# addrl {} run at unix time {ts}", env!("CARGO_PKG_VERSION"));
    }
    match &cli.command {
        Command::GenSynthetic { out } => gen(&cfg, out),
        Command::Train { out } => train_cmd(&cfg, out),
        Command::Evaluate {
            checkpoint,
            baseline,
            out,
        } => evaluate(&cfg, checkpoint.as_deref(), baseline, out),
        Command::Recommend {
            checkpoint,
            user,
            n,
            out,
        } => whatif(&cfg, checkpoint, None, &[1.0], user, *n, out.as_deref()),
        Command::Whatif {
            checkpoint,
            attr,
            xi,
            user,
            value,
            cohort,
            n,
            out,
        } => match user {
            Some(u) => {
                let [xi] = xi[..] else {
                    return Err(CliError::Config("--user takes exactly one --xi".into()));
                };
                whatif(&cfg, checkpoint, Some(attr), &[xi], u, *n, out.as_deref())
            }
            None => {
                let value = value
                    .as_deref()
                    .ok_or_else(|| CliError::Config("whatif needs --user or --value".into()))?;
                let out = out
                    .as_deref()
                    .ok_or_else(|| CliError::Config("the cohort table needs --out".into()))?;
                control(&cfg, checkpoint, attr, value, xi, *cohort, *n, out)
            }
        },
        Command::Ablate { variants, jobs, out } => ablate(&cfg, variants, *jobs, out),
        Command::Grid { jobs, out } => grid(&cfg, *jobs, out),
        Command::Export { checkpoint, kind, out } => export(&cfg, checkpoint, kind, out),
        Command::Gradcheck { eps, tolerance } => gradcheck(&cfg, *eps, *tolerance),
        Command::Interpret {
            checkpoint,
            users,
            n,
            out,
            refit,
        } => interpret(&cfg, checkpoint, users, *n, out, *refit),
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<Dataset> {
    Ok(Dataset::load_dir(&cfg.data.dir, &cfg.data_options())?)
}

fn load_checkpoint(path: &Path, ds: &Dataset) -> CliResult<(Checkpoint, DatasetSplit)> {
    let ck = Checkpoint::load(path)?;
    ck.model.check_dataset(ds)?;
    let split = split_dataset(&ds.interactions, ck.train_config.seed)?;
    Ok((ck, split))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| addrl::Error::io(dir, e).into())
}

fn user_index(ds: &Dataset, token: &str) -> CliResult<usize> {
    ds.interactions
        .users
        .get(token)
        .ok_or_else(|| CliError::Data(format!("unknown user {token:?}")))
}

fn attr_index(ds: &Dataset, name: &str) -> CliResult<usize> {
    ds.schema.attr_index(name).ok_or_else(|| {
        let names: Vec<&str> = ds.schema.attributes.iter().map(|a| a.name.as_str()).collect();
        CliError::Data(format!("unknown attribute {name:?}; known: {}", names.join(", ")))
    })
}

fn model_config(cfg: &RunConfig, ds: &Dataset) -> CliResult<addrl::model::ModelConfig> {
    let mut m = cfg.model_config();
    m.fit_to(ds);
    m.validate()?;
    cfg.train.validate()?;
    Ok(m)
}

fn gen(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ds = gen_synthetic(&cfg.synthetic_spec(), cfg.synthetic.seed)?;
    ds.save_dir(out)?;
    println!(
        "wrote {} users, {} items, {} interactions to {}",
        ds.n_users(),
        ds.n_items(),
        ds.interactions.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    create_dir(out)?;
    let outcome = train_with(&ds, &mcfg, &cfg.train, |ck: &Checkpoint| {
        let loss = ck.history.last().and_then(|h| h.loss);
        let loss = loss.map(|l| format!("{:.6}", l.total)).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>4}  loss {loss}  val recall@20 {:.4}  ndcg@20 {:.4}",
            ck.epoch, ck.val_recall20, ck.val_ndcg20
        );
        Ok(())
    })?;
    outcome.best.save(&out.join("model.ckpt"))?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    let split = split_dataset(&ds.interactions, cfg.train.seed)?;
    let scorer = Scorer::new(&outcome.best.model, &ds)?;
    let rows = evaluate_model(&scorer, &split, cfg.eval.holdout.into(), &cfg.eval.cutoffs)?;
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    println!(
        "best epoch {} of {}; val recall@20 {:.4}",
        outcome.best.epoch, outcome.last_epoch, outcome.best.val_recall20
    );
    print_metrics(&rows);
    Ok(())
}

fn print_metrics(rows: &[MetricRow]) {
    for r in rows {
        println!("{}@{} = {:.6} ({} users)", r.metric, r.n, r.value, r.users_counted);
    }
}

fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, baseline: &str, out: &Path) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let holdout: Holdout = cfg.eval.holdout.into();
    let ns = &cfg.eval.cutoffs;
    let rows = match baseline {
        "model" => {
            let path = checkpoint.ok_or_else(|| CliError::Config("evaluate needs --checkpoint".into()))?;
            let (ck, split) = load_checkpoint(path, &ds)?;
            evaluate_model(&Scorer::new(&ck.model, &ds)?, &split, holdout, ns)?
        }
        "popularity" => popularity_baseline(&split_dataset(&ds.interactions, cfg.train.seed)?, holdout, ns)?,
        "random" => random_baseline(
            &split_dataset(&ds.interactions, cfg.train.seed)?,
            holdout,
            ns,
            cfg.train.seed,
        )?,
        other => {
            return Err(CliError::Config(format!(
                "--baseline {other:?}: expected model, popularity or random"
            )))
        }
    };
    write_metrics_csv(out, &rows)?;
    print_metrics(&rows);
    Ok(())
}

/// Ranks one user's candidates with `attr` scaled by `xi`; `attr = None` is
/// the plain ranking.
fn whatif(
    cfg: &RunConfig,
    checkpoint: &Path,
    attr: Option<&String>,
    xi: &[f64],
    user: &str,
    n: usize,
    out: Option<&Path>,
) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let (ck, split) = load_checkpoint(checkpoint, &ds)?;
    let scorer = Scorer::new(&ck.model, &ds)?;
    let u = user_index(&ds, user)?;
    let (items, scores) = match attr {
        None => {
            let r = rank_items(&scorer, &split, u, n)?;
            (r.items, r.scores)
        }
        Some(name) => {
            let a = attr_index(&ds, name)?;
            let c = ck.model.config.n_chunks();
            let scores: Vec<f64> = scorer
                .chunk_scores(u)?
                .chunks(c)
                .map(|p| p.iter().enumerate().map(|(k, &s)| if k == a { xi[0] * s } else { s }).sum())
                .collect();
            if n == 0 {
                return Err(CliError::Config("n must be at least 1".into()));
            }
            let items = top_n(&scores, |i| !split.is_train(u, i), n);
            let s = items.iter().map(|&i| scores[i]).collect();
            (items, s)
        }
    };
    let mut rows = Vec::new();
    for (r, (&i, s)) in items.iter().zip(&scores).enumerate() {
        let tok = ds.interactions.items.token(i);
        println!("{:>3}  {tok}  {s:.6}", r + 1);
        rows.push([(r + 1).to_string(), tok.to_string(), s.to_string()]);
    }
    if let Some(path) = out {
        write_csv(path, &["rank", "item_token", "score"], rows)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn control(
    cfg: &RunConfig,
    checkpoint: &Path,
    attr: &str,
    value: &str,
    xis: &[f64],
    cohort: usize,
    n: usize,
    out: &Path,
) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let (ck, split) = load_checkpoint(checkpoint, &ds)?;
    let a = attr_index(&ds, attr)?;
    let v = ds.schema.attributes[a]
        .value_index(value)
        .ok_or_else(|| CliError::Data(format!("attribute {attr:?} has no value {value:?}")))?;
    let scorer = Scorer::new(&ck.model, &ds)?;
    let users = select_cohort(&split, &ds, a, v, cohort)?;
    let rows = controllability_report(&scorer, &split, &ds, &users, a, xis, n)?;
    write_controllability_csv(out, &ds, a, &rows)?;
    for r in rows.iter().filter(|r| r.level == v) {
        println!("xi {:>5}  {attr}={value} share of top-{n}: {:.4}", r.xi, r.fraction);
    }
    Ok(())
}

fn parse_variants(names: &[String]) -> CliResult<Vec<Variant>> {
    if names.is_empty() {
        return Ok(Variant::ALL.to_vec());
    }
    names
        .iter()
        .map(|s| s.parse::<Variant>().map_err(CliError::from))
        .collect()
}

fn ablate(cfg: &RunConfig, variants: &[String], jobs: usize, out: &Path) -> CliResult<()> {
    let variants = parse_variants(variants)?;
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    create_dir(out)?;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<addrl::Result<AblationRow>>>> =
        variants.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, variants.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&v) = variants.get(j) else { break };
                *slots[j].lock().expect("unpoisoned") = Some(run_ablation(&ds, &mcfg, &cfg.train, v));
            });
        }
    });
    let mut table = Vec::new();
    for slot in slots {
        let row = slot.into_inner().expect("unpoisoned").expect("every variant ran")?;
        let dir = out.join(variant_dir(row.variant));
        create_dir(&dir)?;
        write_history_csv(&dir.join("history.csv"), &row.history)?;
        println!(
            "{:<18} recall@20 {:.4}  ndcg@20 {:.4}  best epoch {}",
            row.variant.name(),
            row.recall20,
            row.ndcg20,
            row.best_epoch
        );
        table.push([
            row.variant.name().to_string(),
            row.recall20.to_string(),
            row.ndcg20.to_string(),
            row.best_epoch.to_string(),
        ]);
    }
    write_csv(&out.join("ablation.csv"), &["variant", "recall20", "ndcg20", "best_epoch"], table)
}

/// Directory name for a variant: `w/o_intra` becomes `wo_intra`.
fn variant_dir(v: Variant) -> String {
    v.name().replace('/', "")
}

fn grid(cfg: &RunConfig, jobs: usize, out: &Path) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    for m in cfg.grid.expand(&mcfg) {
        m.validate()?;
    }
    create_dir(out)?;
    let res = grid_search(&ds, &mcfg, &cfg.train, &cfg.grid, jobs)?;
    let rows = res.rows.iter().enumerate().map(|(j, r)| {
        let c = &r.config;
        [
            c.alpha.to_string(),
            c.beta.to_string(),
            c.gamma.to_string(),
            c.lambda.to_string(),
            c.temperature.to_string(),
            r.val_recall20.to_string(),
            r.val_ndcg20.to_string(),
            u8::from(j == res.best).to_string(),
        ]
    });
    write_csv(
        &out.join("grid.csv"),
        &["alpha", "beta", "gamma", "lambda", "temperature", "val_recall20", "val_ndcg20", "selected"],
        rows.collect::<Vec<_>>(),
    )?;
    let b = &res.rows[res.best];
    println!(
        "{} points; best alpha={} beta={} gamma={} lambda={} temperature={}: val recall@20 {:.4}",
        res.rows.len(),
        b.config.alpha,
        b.config.beta,
        b.config.gamma,
        b.config.lambda,
        b.config.temperature,
        b.val_recall20
    );
    Ok(())
}

fn export(cfg: &RunConfig, checkpoint: &Path, kind: &str, out: &Path) -> CliResult<()> {
    let kind: ExportKind = kind.parse()?;
    let ds = load_data(cfg)?;
    let (ck, _) = load_checkpoint(checkpoint, &ds)?;
    let n = export_embeddings(&Scorer::new(&ck.model, &ds)?, &ds, kind, out)?;
    println!("wrote {n} rows to {}", out.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, eps: f64, tolerance: f64) -> CliResult<()> {
    let p = toy_problem(cfg.train.seed)?;
    let reports = gradcheck_toy(&p, eps)?;
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    for (name, r) in &reports {
        println!("{name:<6} max relative error {:.3e} over {} entries", r.max_rel_error, r.entries_checked);
    }
    println!("max relative error {worst:.3e}");
    if !(worst < tolerance) {
        return Err(addrl::Error::GradCheck(format!("max relative error {worst:e} ≥ {tolerance:e}")).into());
    }
    Ok(())
}

fn interpret(cfg: &RunConfig, checkpoint: &Path, users: &[String], n: usize, out: &Path, refit: bool) -> CliResult<()> {
    let ds = load_data(cfg)?;
    let (ck, split) = load_checkpoint(checkpoint, &ds)?;
    let scorer = Scorer::new(&ck.model, &ds)?;
    let mut rows = Vec::new();
    for tok in users {
        let u = user_index(&ds, tok)?;
        let top = rank_items(&scorer, &split, u, n)?;
        rows.extend(interpretability_report(&scorer, &[u], &top.items)?);
    }
    write_interpretability_csv(out, &ds, &rows)?;
    let mode = if refit { ProbeMode::Refit } else { ProbeMode::Trained };
    let probes = ProbeReport::compute(&scorer, &ds, mode)?;
    for c in &probes.chunks {
        println!("chunk probe {:<8} {:.4}", c.source.name(), c.accuracy);
    }
    for (k, acc) in probes.values.iter().enumerate() {
        println!("value probe {:<8} {acc:.4}", ds.schema.chunk_name(k));
    }
    for c in &probes.crossmodal {
        println!("retrieval {} -> {} {:.4}", c.from.name(), c.to.name(), c.accuracy);
    }
    Ok(())
}

fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    R: IntoIterator<Item = String>,
    I: IntoIterator<Item = R>,
{
    let err = |e: csv::Error| CliError::Core(addrl::Error::io(path, e.into()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Core(addrl::Error::io(path, e)))
}
