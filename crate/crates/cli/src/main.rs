//! Command-line interface for group-loss auditing and penalized training.
//!
//! Subcommands: `synth` generates the two-group benchmark dataset, `train`
//! fits one model and saves it with its encoding statistics, `audit` builds
//! a discrepancy/variance/bounds report for saved model losses (or an
//! external loss column), `sweep` retrains across a penalty grid and records
//! the tradeoff curves, and `report` reads a saved report back.
//!
//! Every generating subcommand takes a required `--seed`; identical
//! invocations produce byte-identical output files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mwld_core::audit::{
    bounds_section, config_digest, export_curves, k_sweep_section, read_report,
    shift_check_section, size_profile_section, tradeoff_section, variance_section, write_report,
    AuditReport, ReportMeta, SweepSection, REPORT_SCHEMA_VERSION,
};
use mwld_core::data::{
    builtin_schema, load_csv, load_csv_with_manifest, split_train_test, synth_two_group,
    write_csv, DatasetSchema, FeatureManifest, TabularDataset,
};
use mwld_core::derive_seed;
use mwld_core::model::{log_loss_bound, zero_one_loss};
use mwld_core::trainer::{
    doubled_lambda_grid, fit, lambda_sweep, log_losses, tune_eta, ETA_GRID, LAMBDA_GRID,
};
use mwld_core::{LinearModel, LossVector, Objective, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mwld",
    about = "Estimate maximum weighted loss discrepancy, audit predictors, and train under variance penalties",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-group synthetic benchmark as a CSV.
    Synth(SynthArgs),
    /// Fit one logistic model and save it with its encoding statistics.
    Train(TrainArgs),
    /// Build an audit report for a saved model or an external loss column.
    Audit(AuditArgs),
    /// Retrain across a penalty grid and record tradeoff curves.
    Sweep(SweepArgs),
    /// Read a saved report and print a summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    minority_fraction: f64,
    /// Extra label-flip probability for the minority group on top of the
    /// 0.1 base rate.
    #[arg(long, default_value_t = 0.3)]
    noise_gap: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV.
    #[arg(long)]
    data: PathBuf,
    /// Bundled schema name (candc, income, german, compas5, two_group) or a
    /// path to a schema TOML file.
    #[arg(long)]
    schema: String,
    /// lr, lv, or clv.
    #[arg(long, default_value = "lr")]
    objective: String,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Optional held-out CSV evaluated after each epoch.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory for model.toml and history.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct AuditArgs {
    /// CSV of rows to audit.
    #[arg(long)]
    data: PathBuf,
    /// Bundled schema name or schema TOML path.
    #[arg(long)]
    schema: String,
    /// Saved model.toml whose losses are audited.
    #[arg(long, conflicts_with = "loss_column")]
    model: Option<PathBuf>,
    /// Audit an externally computed loss column instead of a model.
    #[arg(long)]
    loss_column: Option<String>,
    /// Loss kind for --model audits: log or zero_one.
    #[arg(long, default_value = "log")]
    loss: String,
    /// Upper bound of the losses when --loss-column is used.
    #[arg(long, default_value_t = 1.0)]
    loss_bound: f64,
    /// Training CSV; enables the train-vs-test discrepancy sweep section.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Weight exponents, comma separated.
    #[arg(long, default_value = "0.1,0.2,0.3,0.5,0.7,1.0")]
    ks: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Random subgroup trials for the shifted-population check; 0 disables.
    #[arg(long, default_value_t = 1000)]
    shift_trials: usize,
    #[arg(long, default_value = "0.5,1.0")]
    shift_ks: String,
    /// Directory for report.toml and curves/.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// CSV split internally into train and test.
    #[arg(long)]
    data: PathBuf,
    /// Bundled schema name or schema TOML path.
    #[arg(long)]
    schema: String,
    /// Comma-separated subset of lv,clv.
    #[arg(long, default_value = "lv,clv")]
    objectives: String,
    /// L2 coefficient; tuned on a validation split when omitted.
    #[arg(long)]
    eta: Option<f64>,
    /// Penalty grid; defaults to the built-in grid (doubled for clv).
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Directory for report.toml and curves/.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// report.toml to read.
    input: PathBuf,
    /// Re-export curve CSVs into this directory.
    #[arg(long)]
    export_curves: Option<PathBuf>,
}

/// Saved model: weights plus everything needed to encode new rows the same
/// way the training rows were encoded.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    objective: String,
    eta: f64,
    lambda: f64,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    manifest: FeatureManifest,
}

const MODEL_SCHEMA_VERSION: u32 = 1;

fn main() {
    // Die quietly when stdout closes early (mwld report ... | head) instead
    // of panicking; Rust ignores SIGPIPE by default.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Audit(args) => run_audit(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Report(args) => run_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_schema(spec: &str) -> anyhow::Result<DatasetSchema> {
    if spec.ends_with(".toml") || Path::new(spec).exists() {
        DatasetSchema::load(spec).with_context(|| format!("loading schema file {spec}"))
    } else {
        Ok(builtin_schema(spec)?)
    }
}

fn parse_objective(name: &str) -> anyhow::Result<Objective> {
    match name {
        "lr" => Ok(Objective::Lr),
        "lv" => Ok(Objective::Lv),
        "clv" => Ok(Objective::Clv),
        other => bail!("unknown objective {other:?}; expected lr, lv, or clv"),
    }
}

fn parse_f64_list(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("bad number {t:?} in list: {e}"))
        })
        .collect()
}

/// Canonical key = value rendering of the invocation, digested into report
/// metadata so a report names the configuration that produced it.
fn digest_config(pairs: &[(&str, String)]) -> String {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    config_digest(&text)
}

fn write_model(path: &Path, file: &ModelFile) -> anyhow::Result<()> {
    let text = toml::to_string_pretty(file).context("serializing model")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_model(path: &Path) -> anyhow::Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    let file: ModelFile = toml::from_str(&text).context("parsing model file")?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        bail!(
            "model schema_version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        );
    }
    Ok(file)
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let data = synth_two_group(args.n, args.minority_fraction, args.noise_gap, args.seed)?;
    write_csv(&data, &args.out)?;
    let t = data
        .sensitive_keys()
        .map_or(0, |k| k.distinct_count());
    println!(
        "wrote {} rows ({} sensitive keys) to {}",
        data.len(),
        t,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let schema = load_schema(&args.schema)?;
    let objective = parse_objective(&args.objective)?;
    let (train, summary) = load_csv(&args.data, &schema)
        .with_context(|| format!("loading {}", args.data.display()))?;
    println!(
        "train: {} rows kept, {} dropped, {} sensitive keys",
        summary.rows_kept, summary.rows_dropped_bad_target, summary.sensitive_cardinality
    );
    let test = match &args.test {
        None => None,
        Some(path) => {
            let (d, s) = load_csv_with_manifest(path, &schema, train.manifest())
                .with_context(|| format!("loading {}", path.display()))?;
            println!("test: {} rows kept, {} dropped", s.rows_kept, s.rows_dropped_bad_target);
            Some(d)
        }
    };
    let config = TrainConfig {
        objective,
        eta: args.eta,
        lambda: args.lambda,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        stratify_by_label: true,
    };
    let (model, history) = fit(&train, test.as_ref(), &config)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let model_file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        objective: objective.name().to_string(),
        eta: args.eta,
        lambda: args.lambda,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        feature_names: train.manifest().feature_names(),
        weights: model.weights().to_vec(),
        manifest: train.manifest().clone(),
    };
    let model_path = args.out_dir.join("model.toml");
    write_model(&model_path, &model_file)?;

    let mut csv_text = String::from("epoch,train_loss,train_penalty,eval_loss,eval_penalty\n");
    for (epoch, r) in history.epochs.iter().enumerate() {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        csv_text.push_str(&format!(
            "{},{:.16e},{:.16e},{},{}\n",
            epoch,
            r.train_loss,
            r.train_penalty,
            opt(r.eval_loss),
            opt(r.eval_penalty)
        ));
    }
    let history_path = args.out_dir.join("history.csv");
    std::fs::write(&history_path, csv_text)?;

    let digest = digest_config(&[
        ("command", "train".into()),
        ("schema", schema.name.clone()),
        ("objective", objective.name().into()),
        ("eta", format!("{}", args.eta)),
        ("lambda", format!("{}", args.lambda)),
        ("learning_rate", format!("{}", args.learning_rate)),
        ("batch_size", format!("{}", args.batch_size)),
        ("epochs", format!("{}", args.epochs)),
        ("seed", format!("{}", args.seed)),
    ]);
    let last = history.epochs.last().expect("at least one epoch");
    println!("final train loss {:.6}, penalty {:.6}", last.train_loss, last.train_penalty);
    if let Some(loss) = last.eval_loss {
        println!("final eval loss {loss:.6}");
    }
    println!("config digest {digest}");
    println!("wrote {} and {}", model_path.display(), history_path.display());
    Ok(())
}

/// Losses of a saved model on a dataset, as named by --loss.
fn model_losses(
    model: &LinearModel,
    data: &TabularDataset,
    kind: &str,
) -> anyhow::Result<(Vec<f64>, f64)> {
    match kind {
        "log" => Ok((log_losses(model, data)?, log_loss_bound())),
        "zero_one" => {
            let mut losses = Vec::with_capacity(data.len());
            for i in 0..data.len() {
                losses.push(zero_one_loss(
                    model,
                    data.feature_row(i),
                    data.labels().as_slice()[i],
                )?);
            }
            Ok((losses, 1.0))
        }
        other => bail!("unknown loss kind {other:?}; expected log or zero_one"),
    }
}

fn run_audit(args: AuditArgs) -> anyhow::Result<()> {
    let schema = load_schema(&args.schema)?;
    let ks = parse_f64_list(&args.ks)?;
    let shift_ks = parse_f64_list(&args.shift_ks)?;

    let (model_file, linear) = match &args.model {
        Some(path) => {
            let file = read_model(path)?;
            let model = LinearModel::from_weights(file.weights.clone())?;
            (Some(file), Some(model))
        }
        None => (None, None),
    };
    if linear.is_none() && args.loss_column.is_none() {
        bail!("exactly one of --model or --loss-column is required");
    }

    let (data, summary) = match &model_file {
        Some(file) => load_csv_with_manifest(&args.data, &schema, &file.manifest)
            .with_context(|| format!("loading {}", args.data.display()))?,
        None => load_csv(&args.data, &schema)
            .with_context(|| format!("loading {}", args.data.display()))?,
    };
    println!(
        "audit data: {} rows kept, {} dropped, {} sensitive keys",
        summary.rows_kept, summary.rows_dropped_bad_target, summary.sensitive_cardinality
    );

    let (loss_values, loss_bound, loss_kind) = match (&linear, &args.loss_column) {
        (Some(model), None) => {
            let (values, bound) = model_losses(model, &data, &args.loss)?;
            (values, bound, args.loss.clone())
        }
        (None, Some(column)) => {
            let mut values = Vec::with_capacity(data.len());
            for cell in data.raw_column(column)? {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|e| anyhow!("loss column {column:?} cell {cell:?}: {e}"))?;
                values.push(v);
            }
            (values, args.loss_bound, "external".to_string())
        }
        _ => unreachable!("validated above"),
    };
    let losses = LossVector::uniform(loss_values, loss_bound)?;

    let k_sweep = match (&args.train_data, &linear, &model_file) {
        (Some(path), Some(model), Some(file)) => {
            let (train, _) = load_csv_with_manifest(path, &schema, &file.manifest)
                .with_context(|| format!("loading {}", path.display()))?;
            let (train_values, _) = model_losses(model, &train, &args.loss)?;
            let train_losses = LossVector::uniform(train_values, loss_bound)?;
            Some(k_sweep_section(&train_losses, &losses, &ks)?)
        }
        (Some(_), _, _) => bail!("--train-data requires --model"),
        _ => None,
    };

    let size_profile = Some(size_profile_section(&losses, &ks)?);
    let (variance, rescaled_by) =
        variance_section(&losses, Some(data.labels()), data.sensitive_keys())?;
    let coarse_cells = data.sensitive_keys().map(|k| k.distinct_count());
    let bounds = Some(bounds_section(data.len(), args.delta, coarse_cells, &ks)?);
    let shift_checks = if args.shift_trials == 0 {
        None
    } else {
        let mut checks = Vec::with_capacity(shift_ks.len());
        for &k in &shift_ks {
            checks.push(shift_check_section(&losses, k, args.shift_trials, args.seed)?);
        }
        Some(checks)
    };

    let digest = digest_config(&[
        ("command", "audit".into()),
        ("schema", schema.name.clone()),
        ("loss_kind", loss_kind.clone()),
        ("ks", args.ks.clone()),
        ("delta", format!("{}", args.delta)),
        ("shift_trials", format!("{}", args.shift_trials)),
        ("shift_ks", args.shift_ks.clone()),
        ("seed", format!("{}", args.seed)),
    ]);
    let report = AuditReport {
        meta: ReportMeta {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: args.seed,
            config_digest: digest.clone(),
            loss_kind,
            loss_bound,
            rescaled_by,
            n: losses.len(),
        },
        k_sweep,
        size_profile,
        variance: Some(variance),
        bounds,
        sweeps: None,
        shift_checks,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("report.toml");
    write_report(&report, &report_path)?;
    let curves = export_curves(&report, args.out_dir.join("curves"))?;

    if let Some(section) = &report.k_sweep {
        for row in &section.rows {
            println!(
                "k {:.2}: train {:.6}, test {:.6}, gap {:.6}",
                row.k, row.train_mwld, row.test_mwld, row.gap
            );
        }
    }
    if let Some(v) = &report.variance {
        println!(
            "sandwich: mwld_half {:.6} <= sqrt variance {:.6} <= envelope {:.6}",
            v.sandwich.mwld_half, v.sandwich.sqrt_variance, v.sandwich.upper_envelope
        );
    }
    if let Some(b) = &report.bounds {
        println!(
            "deviation radii at delta {}: mean {:.6}{}",
            b.delta,
            b.maurer_radius,
            b.coarse_radius
                .map_or(String::new(), |r| format!(", coarse {r:.6}")),
        );
    }
    if let Some(checks) = &report.shift_checks {
        for c in checks {
            println!(
                "shift check k {:.2}: {} trials, min margin {:.3e}",
                c.k,
                c.trials - c.skipped,
                c.min_margin
            );
        }
    }
    println!("config digest {digest}");
    println!("wrote {} and {} curve files", report_path.display(), curves.len());
    Ok(())
}

fn run_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let schema = load_schema(&args.schema)?;
    let objectives: Vec<Objective> = args
        .objectives
        .split(',')
        .map(|t| parse_objective(t.trim()))
        .collect::<anyhow::Result<_>>()?;
    if objectives.iter().any(|o| *o == Objective::Lr) {
        bail!("sweep objectives must be lv or clv; plain lr is the lambda = 0 point");
    }
    let (data, summary) = load_csv(&args.data, &schema)
        .with_context(|| format!("loading {}", args.data.display()))?;
    println!(
        "data: {} rows kept, {} sensitive keys",
        summary.rows_kept, summary.sensitive_cardinality
    );
    let (train, test) = split_train_test(&data, args.test_fraction, args.seed)?;
    println!("split: {} train, {} test", train.len(), test.len());

    let base = TrainConfig {
        objective: Objective::Lv,
        eta: 0.0,
        lambda: 0.0,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        stratify_by_label: true,
    };
    let eta = match args.eta {
        Some(e) => e,
        None => {
            // Tune on a split of the training half so the test half stays
            // untouched until the final curves.
            let (sub_train, validation) =
                split_train_test(&train, 0.3, derive_seed(args.seed, 1))?;
            let tuned = tune_eta(&sub_train, &validation, &ETA_GRID, &base)?;
            println!("tuned eta {tuned}");
            tuned
        }
    };

    let explicit = match &args.lambdas {
        Some(text) => Some(parse_f64_list(text)?),
        None => None,
    };
    let mut sections: Vec<SweepSection> = Vec::new();
    for objective in &objectives {
        let grid: Vec<f64> = match (&explicit, objective) {
            (Some(g), _) => g.clone(),
            (None, Objective::Clv) => doubled_lambda_grid(),
            (None, _) => LAMBDA_GRID.to_vec(),
        };
        let mut config = base;
        config.objective = *objective;
        config.eta = eta;
        let points = lambda_sweep(&train, &test, &config, &grid)?;
        let section = tradeoff_section(*objective, eta, &points, &test)?;
        for row in &section.rows {
            println!(
                "{} lambda {:.3}: test loss {:.6}, cond variance {:.6}, mwld_half {:.6}",
                section.objective,
                row.lambda,
                row.test_mean_loss,
                row.conditional_loss_variance,
                row.mwld_half
            );
        }
        sections.push(section);
    }

    let digest = digest_config(&[
        ("command", "sweep".into()),
        ("schema", schema.name.clone()),
        ("objectives", args.objectives.clone()),
        ("eta", format!("{eta}")),
        (
            "lambdas",
            args.lambdas.clone().unwrap_or_else(|| "builtin".into()),
        ),
        ("test_fraction", format!("{}", args.test_fraction)),
        ("learning_rate", format!("{}", args.learning_rate)),
        ("batch_size", format!("{}", args.batch_size)),
        ("epochs", format!("{}", args.epochs)),
        ("seed", format!("{}", args.seed)),
    ]);
    let report = AuditReport {
        meta: ReportMeta {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: args.seed,
            config_digest: digest.clone(),
            loss_kind: "log".to_string(),
            loss_bound: log_loss_bound(),
            rescaled_by: None,
            n: test.len(),
        },
        k_sweep: None,
        size_profile: None,
        variance: None,
        bounds: None,
        sweeps: Some(sections),
        shift_checks: None,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("report.toml");
    write_report(&report, &report_path)?;
    let curves = export_curves(&report, args.out_dir.join("curves"))?;
    println!("config digest {digest}");
    println!("wrote {} and {} curve files", report_path.display(), curves.len());
    Ok(())
}

fn run_report(args: ReportArgs) -> anyhow::Result<()> {
    let (report, warnings) = read_report(&args.input)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let m = &report.meta;
    println!(
        "report v{}: {} losses of kind {} (bound {}), seed {}, digest {}",
        m.schema_version, m.n, m.loss_kind, m.loss_bound, m.seed, m.config_digest
    );
    if let Some(s) = &report.k_sweep {
        println!("k sweep: {} exponents over {} train / {} test", s.rows.len(), s.n_train, s.n_test);
    }
    if let Some(s) = &report.size_profile {
        println!("size profile: {} sizes, {} envelopes", s.rows.len(), s.envelopes.len());
    }
    if let Some(v) = &report.variance {
        println!(
            "variance: loss {:.6}, sandwich {:.6} <= {:.6} <= {:.6}",
            v.loss_variance, v.sandwich.mwld_half, v.sandwich.sqrt_variance, v.sandwich.upper_envelope
        );
    }
    if let Some(b) = &report.bounds {
        println!(
            "bounds: maurer {:.6}, {} convergence rows",
            b.maurer_radius,
            b.convergence.len()
        );
    }
    if let Some(sweeps) = &report.sweeps {
        for s in sweeps {
            println!("sweep {}: {} rows at eta {}", s.objective, s.rows.len(), s.eta);
        }
    }
    if let Some(checks) = &report.shift_checks {
        for c in checks {
            println!("shift check k {:.2}: min margin {:.3e}", c.k, c.min_margin);
        }
    }
    if let Some(dir) = &args.export_curves {
        let curves = export_curves(&report, dir)?;
        println!("exported {} curve files to {}", curves.len(), dir.display());
    }
    Ok(())
}
