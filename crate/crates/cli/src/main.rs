mod artifacts;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use uniloc::chansim::write_dataset;
use uniloc::chart::{read_labels, write_labels, ChartModel};
use uniloc::evalsuite::write_csv;
use uniloc::pipeline::{analyze_split, sweep_runner, Context, Method, PipelineConfig, Split, SweepAxis};
use uniloc::setmetrics::{
    default_kappa, fused_matrix, geodesic_complete, gospa_matrix, time_matrix, wasserstein_matrix, DissimilarityMatrix,
};
use uniloc::Error;

use artifacts::{meta_path, write_json, Estimates, Provenance, WorkDir};

#[derive(Parser)]
#[command(name = "uniloc", version, about = "Mixed LoS/NLoS localization pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Work directory holding the stage artifacts.
    #[arg(long, default_value = "run")]
    dir: PathBuf,
    /// JSON config merged over the defaults. Later stages fall back to the
    /// config saved by `simulate`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective config (the defaults profile when given no input).
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Simulate the train and test splits.
    Simulate(Common),
    /// Model-based channel and position estimates for both splits.
    Estimate(Common),
    /// Dissimilarity matrix over the training split.
    Dissim {
        #[command(flatten)]
        common: Common,
        /// fused, gospa, ggospa, wasserstein or time.
        #[arg(long, default_value = "fused")]
        kind: String,
    },
    /// Self-generated labels for UNILoc.
    Label(Common),
    /// Train a charting network.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        /// Dissimilarity matrix used by methods that need one.
        #[arg(long, default_value = "fused")]
        dissim: String,
    },
    /// Evaluate a method on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Sweep one axis over seeds, running the full pipeline in memory.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `p_i=0.6,0.8,1.0`, `sigma_v=0,2,5` or `delta_s=0.5,1,2`.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "model_based,uniloc,unilocpro")]
        methods: Vec<String>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Per-sample test estimates of a method as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::StaleArtifact(_)) => 3,
        _ => 1,
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ULC_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("ULC_THREADS='{v}' is not a thread count")))?;
        if n == 0 {
            return Err(Error::Config("ULC_THREADS must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Config { config, overrides } => {
            let cfg = config::resolve(config.as_deref(), None, &overrides)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
        Command::Simulate(c) => simulate(&c),
        Command::Estimate(c) => estimate(&c),
        Command::Dissim { common, kind } => dissim(&common, &kind),
        Command::Label(c) => label(&c),
        Command::Train { common, method, dissim } => train(&common, &method, &dissim),
        Command::Eval { common, method } => eval(&common, &method),
        Command::Sweep { config, overrides, axis, seeds, methods, out } => {
            sweep(config.as_deref(), &overrides, &axis, &seeds, &methods, &out)
        }
        Command::Export { common, method, out } => export(&common, &method, out),
    }
}

fn load(c: &Common) -> anyhow::Result<(WorkDir, PipelineConfig)> {
    let wd = WorkDir::new(&c.dir);
    let cfg = config::resolve(c.config.as_deref(), Some(&wd.config()), &c.overrides)?;
    Ok((wd, cfg))
}

fn simulate(c: &Common) -> anyhow::Result<()> {
    let cfg = config::resolve(c.config.as_deref(), None, &c.overrides)?;
    std::fs::create_dir_all(&c.dir).with_context(|| format!("creating {}", c.dir.display()))?;
    let wd = WorkDir::new(&c.dir);
    write_json(&wd.config(), &cfg)?;
    let ctx = Context::new(&cfg)?;
    for split in [Split::Train, Split::Test] {
        let ds = ctx.simulate(split)?;
        let (m, b) = wd.split_files(split);
        write_dataset(&ds, &m, &b)?;
        eprintln!("{}: {} samples", artifacts::split_name(split), ds.len());
    }
    let prov = wd.write_meta("train.jsonl", "simulate", &cfg)?;
    eprintln!("config {} dataset {}", &prov.config_hash[..12], &prov.dataset[..12]);
    Ok(())
}

fn estimate(c: &Common) -> anyhow::Result<()> {
    let (wd, cfg) = load(c)?;
    wd.check("train.jsonl", &cfg)?;
    let ctx = Context::new(&cfg)?;
    let train = analyze_split(&wd.read_split(Split::Train, &cfg)?, &ctx)?;
    let test = analyze_split(&wd.read_split(Split::Test, &cfg)?, &ctx)?;
    write_json(&wd.path("estimates.json"), &Estimates { train, test })?;
    wd.write_meta("estimates.json", "estimate", &cfg)?;
    Ok(())
}

fn dissim_file(kind: &str) -> String {
    format!("dissim_{kind}.bin")
}

fn dissim(c: &Common, kind: &str) -> anyhow::Result<()> {
    let (wd, cfg) = load(c)?;
    wd.check("estimates.json", &cfg)?;
    let est: Estimates = serde_json::from_slice(&std::fs::read(wd.path("estimates.json"))?)?;
    let sets: Vec<_> = est.train.iter().map(|m| m.paths.clone()).collect();
    let p = &cfg.metrics;
    let d = match kind {
        "fused" => fused_matrix(&sets, p)?,
        "gospa" => gospa_matrix(&sets, p.zeta)?,
        "ggospa" => geodesic_complete(&gospa_matrix(&sets, p.zeta)?, p.k_neighbors),
        "wasserstein" => wasserstein_matrix(&sets, p.kappa.unwrap_or_else(|| default_kappa(&sets)))?,
        "time" => {
            let t = wd.read_split(Split::Train, &cfg)?.timestamps().ok_or_else(|| {
                Error::Config("the training split has no timestamps; set trajectory.with_timestamps=true".into())
            })?;
            time_matrix(&t)
        }
        other => return Err(Error::Config(format!("unknown dissimilarity kind '{other}'")).into()),
    };
    let name = dissim_file(kind);
    d.write(&wd.path(&name))?;
    wd.write_meta(&name, "dissim", &cfg)?;
    Ok(())
}

fn label(c: &Common) -> anyhow::Result<()> {
    let (wd, cfg) = load(c)?;
    let prep = wd.prepared(&cfg)?;
    write_labels(&wd.path("labels.jsonl"), &prep.self_labels()?)?;
    wd.write_meta("labels.jsonl", "label", &cfg)?;
    Ok(())
}

fn model_file(m: Method) -> String {
    format!("model_{}.bin", m.name())
}

fn train(c: &Common, method: &str, dissim_kind: &str) -> anyhow::Result<()> {
    let method = Method::parse(method)?;
    if method == Method::ModelBased {
        return Err(Error::Config("model_based has no trainable network".into()).into());
    }
    let (wd, cfg) = load(c)?;
    let labels = if method == Method::UniLoc {
        if !wd.path("labels.jsonl").exists() {
            return Err(Error::Config(format!(
                "UNILoc training needs the label file {}; run `uniloc label --dir {}` first",
                wd.path("labels.jsonl").display(),
                c.dir.display()
            ))
            .into());
        }
        wd.check("labels.jsonl", &cfg)?;
        Some(read_labels(&wd.path("labels.jsonl"))?)
    } else {
        None
    };
    let d = if method.needs_dissimilarity() {
        let name = dissim_file(dissim_kind);
        wd.check(&name, &cfg)?;
        Some(DissimilarityMatrix::read(&wd.path(&name))?)
    } else {
        None
    };
    let prep = wd.prepared(&cfg)?;
    let points = match &labels {
        Some(l) => {
            let ids = prep.train.data.samples.iter().map(|s| s.id);
            if l.len() != prep.train.data.len() || !l.iter().map(|r| r.id).eq(ids) {
                return Err(Error::StaleArtifact("label ids do not match the training split".into()).into());
            }
            Some(l.iter().map(|r| [r.x, r.y]).collect::<Vec<_>>())
        }
        None => None,
    };
    let out = prep.train_method(method, d.as_ref(), points.as_deref())?.expect("trainable method");
    let name = model_file(method);
    out.model.save(&wd.path(&name))?;
    wd.write_meta(&name, "train", &cfg)?;
    let trace = format!("loss_{}.csv", method.name());
    let mut w = csv::Writer::from_path(wd.path(&trace))?;
    for s in &out.trace.steps {
        w.serialize(s)?;
    }
    w.flush()?;
    wd.write_meta(&trace, "train", &cfg)?;
    if let Some(last) = out.trace.steps.last() {
        eprintln!("epoch {}: total loss {:.4}", last.epoch, last.total);
    }
    Ok(())
}

fn trained_model(wd: &WorkDir, cfg: &PipelineConfig, method: Method) -> anyhow::Result<Option<ChartModel>> {
    if method == Method::ModelBased {
        return Ok(None);
    }
    let name = model_file(method);
    if !wd.path(&name).exists() {
        return Err(Error::Config(format!("no trained {} model; run `uniloc train --method {}` first", method.name(), method.name()))
            .into());
    }
    wd.check(&name, cfg)?;
    Ok(Some(ChartModel::load(&wd.path(&name))?))
}

fn eval(c: &Common, method: &str) -> anyhow::Result<()> {
    let method = Method::parse(method)?;
    let (wd, cfg) = load(c)?;
    let model = trained_model(&wd, &cfg, method)?;
    let prep = wd.prepared(&cfg)?;
    let (_, report) = prep.evaluate(method, model.as_ref())?;
    let json = format!("report_{}.json", method.name());
    write_json(&wd.path(&json), &report)?;
    wd.write_meta(&json, "eval", &cfg)?;
    let table = format!("report_{}.csv", method.name());
    write_csv(&wd.path(&table), &report.rows("none", 0.0, cfg.seed))?;
    wd.write_meta(&table, "eval", &cfg)?;
    for (name, s) in [("los", &report.positioning.los), ("nlos", &report.positioning.nlos), ("all", &report.positioning.all)] {
        if let Some(s) = s {
            println!("{:<12} {:<5} n={:<4} mae={:.3} rmse={:.3} e95={:.3}", report.method, name, s.count, s.mae, s.rmse, s.e95);
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ExportRow {
    id: u64,
    x: f64,
    y: f64,
    x_true: f64,
    y_true: f64,
    los: bool,
    identified_los: bool,
}

fn export(c: &Common, method: &str, out: Option<PathBuf>) -> anyhow::Result<()> {
    let method = Method::parse(method)?;
    let (wd, cfg) = load(c)?;
    let model = trained_model(&wd, &cfg, method)?;
    let prep = wd.prepared(&cfg)?;
    let est = prep.predict(method, model.as_ref())?;
    let out = out.unwrap_or_else(|| wd.path(&format!("estimates_{}.csv", method.name())));
    let mut w = csv::Writer::from_path(&out)?;
    let te = &prep.test;
    for (i, s) in te.data.samples.iter().enumerate() {
        w.serialize(ExportRow {
            id: s.id,
            x: est[i][0],
            y: est[i][1],
            x_true: te.truth[i][0],
            y_true: te.truth[i][1],
            los: te.los[i],
            identified_los: te.identified[i],
        })?;
    }
    w.flush()?;
    let prov = Provenance { stage: "export".into(), config_hash: cfg.hash(), dataset: wd.fingerprint()? };
    write_json(&meta_path(&out), &prov)?;
    Ok(())
}

fn parse_axis(arg: &str) -> anyhow::Result<SweepAxis> {
    let (name, vals) =
        arg.split_once('=').ok_or_else(|| Error::Config(format!("axis '{arg}' is not of the form name=v1,v2,...")))?;
    let values = vals
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("axis value '{v}' is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match name {
        "p_i" => SweepAxis::PI(values),
        "sigma_v" => SweepAxis::SigmaV(values),
        "delta_s" => SweepAxis::DeltaS(values),
        other => return Err(Error::Config(format!("unknown sweep axis '{other}'")).into()),
    })
}

fn sweep(
    config: Option<&Path>,
    overrides: &[String],
    axis: &str,
    seeds: &[u64],
    methods: &[String],
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = config::resolve(config, None, overrides)?;
    let axis = parse_axis(axis)?;
    let methods = methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let points = sweep_runner(&cfg, &axis, seeds, &methods)?;
    let rows: Vec<_> = points.iter().flat_map(|p| p.rows()).collect();
    write_csv(out, &rows)?;
    let prov = Provenance { stage: "sweep".into(), config_hash: cfg.hash(), dataset: "simulated per sweep point".into() };
    write_json(&meta_path(out), &prov)?;
    Ok(())
}
