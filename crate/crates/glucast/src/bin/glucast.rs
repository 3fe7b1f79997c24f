//! Command-line front end: train cells, evaluate them against the test
//! split, combine reports, emit rolling forecasts, and run the
//! per-patient feature-set analysis.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glucast::baselines::{ridge_fit_windows, RidgeModel};
use glucast::data::zscore_apply;
use glucast::error::RunError;
use glucast::metrics::{ErrorGridSpec, MetricsReport};
use glucast::models::{ModelConfig, SequenceModel};
use glucast::runner::{
    emit_cell_outputs, emit_combined_report, emit_matrix, evaluate, leakage_audit,
    load_patients, parse_sidecar, per_patient_analysis, prepare, rolling_forecast,
    sidecar_text, train, CellOutputs, EvalSettings, ExperimentConfig, Predictor,
    PreparedData, TrainOptions,
};
use glucast::synth::{generate_series, write_csv, SynthSpec};

#[derive(Parser)]
#[command(
    name = "glucast",
    about = "Uncertainty-aware glucose forecasting experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to specific cells (e.g. `transformer_evidential,ridge`).
    #[arg(long, value_delimiter = ',')]
    cell: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the selected model cells and write checkpoints.
    Train(CommonArgs),
    /// Evaluate trained cells on the test split and emit reports.
    Evaluate(CommonArgs),
    /// Combine per-cell reports under an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Rolling forecast over one patient's full series for one cell.
    Forecast {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        patient: String,
    },
    /// Friedman / Wilcoxon-Holm analysis of per-patient scores across
    /// labeled runs: `--runs heart_rate=out_hr,steps=out_steps,...`.
    Analyze {
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
        /// Cell whose per-patient file is read from each run.
        #[arg(long, default_value = "transformer_evidential")]
        cell: String,
        /// Score column: mard or za.
        #[arg(long, default_value = "mard")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic demo patients as HUPA-style CSV files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        patients: usize,
        #[arg(long, default_value_t = 2000)]
        len: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Report { out } => cmd_report(&out),
        Command::Forecast { common, patient } => cmd_forecast(&common, &patient),
        Command::Analyze {
            runs,
            cell,
            metric,
            out,
        } => cmd_analyze(&runs, &cell, &metric, out.as_deref()),
        Command::Synth {
            out,
            patients,
            len,
            seed,
        } => cmd_synth(&out, patients, len, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, RunError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn cell_selected(args: &CommonArgs, name: &str) -> bool {
    args.cell.is_empty() || args.cell.iter().any(|c| c == name)
}

fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData, RunError> {
    let series = load_patients(&config.data_dir, &config.columns, config.feature_set)?;
    let prepared = prepare(&series, config.horizon)?;
    leakage_audit(&prepared)?;
    Ok(prepared)
}

fn checkpoint_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("checkpoints")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn eval_settings(config: &ExperimentConfig) -> EvalSettings {
    EvalSettings {
        mc_samples: config.mc_samples,
        mc_seed: config.seed ^ 0x6d63,
        event_aggregation: config.event_aggregation,
        micro_batch: config.micro_batch,
        ..Default::default()
    }
}

fn cmd_train(args: &CommonArgs) -> Result<(), RunError> {
    let config = load_config(args)?;
    let data = prepare_data(&config)?;
    let ckpt_dir = checkpoint_dir(&config);
    std::fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let beta_r = config.beta_r_mgdl.unwrap_or(data.beta_r_mgdl);
    let opts = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        micro_batch: config.micro_batch,
        learning_rate: config.learning_rate,
        seed: config.seed,
        kl_weight: config.kl_coefficient,
        beta_r_mgdl: beta_r,
        regularizer: config.regularizer,
    };
    for (arch, head) in config.cells() {
        let model_config = ModelConfig {
            architecture: arch,
            head,
            horizon: config.horizon,
            dropout_rate: config.dropout_rate,
            seed: config.seed,
        };
        let cell = model_config.cell_name();
        if !cell_selected(args, &cell) {
            continue;
        }
        println!("training {cell} ({} windows)", data.train.n());
        let mut model = SequenceModel::new(model_config)?;
        let log = train(&mut model, &data.train, &data.val, &data.norm, &opts)?;
        let ckpt = ckpt_dir.join(format!("{cell}.ckpt"));
        autodiff::checkpoint::save(model.params(), &ckpt)?;
        let meta = ckpt_dir.join(format!("{cell}.meta"));
        std::fs::write(
            &meta,
            sidecar_text(
                arch,
                head,
                config.horizon,
                config.dropout_rate,
                config.seed,
                &data.norm,
                beta_r,
            ),
        )
        .map_err(io_err(&meta))?;
        let log_path = ckpt_dir.join(format!("{cell}_training_log.csv"));
        std::fs::write(&log_path, log.to_csv()).map_err(io_err(&log_path))?;
        match log.best_epoch {
            Some(best) => println!(
                "  done: best validation loss {:.6} at epoch {best}",
                log.best_val_loss
            ),
            None => println!("  done (no epochs run)"),
        }
    }
    if config.include_ridge && cell_selected(args, "ridge") {
        println!("fitting ridge ({} windows)", data.train.n());
        let ridge = ridge_fit_windows(&data.train)?;
        let ckpt = ckpt_dir.join("ridge.ckpt");
        autodiff::checkpoint::save(&ridge.to_params(), &ckpt)?;
        println!("  done");
    }
    Ok(())
}

fn cmd_evaluate(args: &CommonArgs) -> Result<(), RunError> {
    let config = load_config(args)?;
    let data = prepare_data(&config)?;
    let grid = ErrorGridSpec::by_name_or_path(&config.grid)?;
    let ckpt_dir = checkpoint_dir(&config);
    let settings = eval_settings(&config);
    let mut predictors: Vec<(String, Predictor)> = Vec::new();
    for (arch, head) in config.cells() {
        let cell = ModelConfig {
            architecture: arch,
            head,
            horizon: config.horizon,
            dropout_rate: config.dropout_rate,
            seed: config.seed,
        }
        .cell_name();
        if !cell_selected(args, &cell) {
            continue;
        }
        let meta_path = ckpt_dir.join(format!("{cell}.meta"));
        let meta_text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let sidecar = parse_sidecar(&meta_text)?;
        if sidecar.horizon != config.horizon {
            return Err(RunError::Config(format!(
                "checkpoint {cell} was trained for horizon {} but the config asks for {}",
                sidecar.horizon, config.horizon
            )));
        }
        let mut model = SequenceModel::new(ModelConfig {
            architecture: sidecar.architecture,
            head: sidecar.head,
            horizon: sidecar.horizon,
            dropout_rate: sidecar.dropout_rate,
            seed: sidecar.seed,
        })?;
        model.set_params(autodiff::checkpoint::load(
            &ckpt_dir.join(format!("{cell}.ckpt")),
        )?);
        predictors.push((cell, Predictor::Neural(model)));
    }
    if config.include_ridge && cell_selected(args, "ridge") {
        let ridge =
            RidgeModel::from_params(&autodiff::checkpoint::load(&ckpt_dir.join("ridge.ckpt"))?)?;
        predictors.push(("ridge".to_string(), Predictor::Ridge(ridge)));
    }
    let mut reports = Vec::new();
    for (cell, predictor) in &predictors {
        println!("evaluating {cell} on {} test windows", data.test.n());
        let (report, artifacts) = evaluate(
            predictor,
            &data.test,
            &data.test_labels,
            &data.norm,
            &grid,
            &settings,
        )?;
        let outputs = CellOutputs {
            cell,
            report: &report,
            artifacts: &artifacts,
            rolling: None,
            training_log_csv: None,
        };
        emit_cell_outputs(&config.output_dir, &outputs)?;
        emit_per_patient(&config, &data, predictor, cell, &grid, &settings)?;
        reports.push(report);
    }
    emit_combined_report(&config.output_dir, &reports)?;
    println!(
        "wrote {} cell reports under {}",
        reports.len(),
        config.output_dir.display()
    );
    Ok(())
}

/// Per-patient MARD and zone-A rows for the analysis stage.
fn emit_per_patient(
    config: &ExperimentConfig,
    data: &PreparedData,
    predictor: &Predictor,
    cell: &str,
    grid: &ErrorGridSpec,
    settings: &EvalSettings,
) -> Result<(), RunError> {
    let mut rows = String::from("patient,mard,za\n");
    for patient in &data.patients {
        if patient.test.n() == 0 {
            continue;
        }
        let (report, _) = evaluate(
            predictor,
            &patient.test,
            &patient.test_labels,
            &data.norm,
            grid,
            settings,
        )?;
        rows.push_str(&format!(
            "{},{:?},{:?}\n",
            patient.id, report.mard_pct, report.zone_a_pct
        ));
    }
    let path = config.output_dir.join(format!("per_patient_{cell}.csv"));
    std::fs::write(&path, rows).map_err(io_err(&path))
}

fn cmd_report(out: &Path) -> Result<(), RunError> {
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(io_err(out))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.ends_with("_report.csv") && n != "report.csv"
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        reports.extend(MetricsReport::from_csv(&text)?);
    }
    emit_combined_report(out, &reports)?;
    println!(
        "combined {} rows into {}/report.md",
        reports.len(),
        out.display()
    );
    Ok(())
}

fn cmd_forecast(args: &CommonArgs, patient_id: &str) -> Result<(), RunError> {
    let config = load_config(args)?;
    let series = load_patients(&config.data_dir, &config.columns, config.feature_set)?;
    let series = series
        .into_iter()
        .find(|s| s.patient_id() == patient_id)
        .ok_or_else(|| RunError::State(format!("no patient `{patient_id}` in data dir")))?;
    let cell = args
        .cell
        .first()
        .cloned()
        .unwrap_or_else(|| "transformer_evidential".to_string());
    let ckpt_dir = checkpoint_dir(&config);
    let settings = eval_settings(&config);
    let (predictor, norm) = if cell == "ridge" {
        // ridge checkpoints carry no sidecar; refit the normalization
        // deterministically from the data directory
        let data = prepare_data(&config)?;
        let ridge =
            RidgeModel::from_params(&autodiff::checkpoint::load(&ckpt_dir.join("ridge.ckpt"))?)?;
        (Predictor::Ridge(ridge), data.norm)
    } else {
        let meta_path = ckpt_dir.join(format!("{cell}.meta"));
        let meta_text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let sidecar = parse_sidecar(&meta_text)?;
        let mut model = SequenceModel::new(ModelConfig {
            architecture: sidecar.architecture,
            head: sidecar.head,
            horizon: sidecar.horizon,
            dropout_rate: sidecar.dropout_rate,
            seed: sidecar.seed,
        })?;
        model.set_params(autodiff::checkpoint::load(
            &ckpt_dir.join(format!("{cell}.ckpt")),
        )?);
        (Predictor::Neural(model), sidecar.norm)
    };
    let horizon = match &predictor {
        Predictor::Neural(m) => m.config().horizon,
        Predictor::Ridge(r) => r.horizon(),
    };
    let normalized = zscore_apply(&series, &norm);
    let rolling = rolling_forecast(&predictor, &normalized, horizon, &norm, &settings)?;
    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let path = config
        .output_dir
        .join(format!("{cell}_{patient_id}_rolling.csv"));
    std::fs::write(&path, rolling.to_csv()).map_err(io_err(&path))?;
    let covered = rolling.covered.iter().filter(|&&c| c).count();
    println!(
        "wrote {} ({} timesteps, band coverage {:.1}%)",
        path.display(),
        rolling.len(),
        100.0 * covered as f64 / rolling.len() as f64
    );
    Ok(())
}

fn cmd_analyze(
    runs: &[String],
    cell: &str,
    metric: &str,
    out: Option<&Path>,
) -> Result<(), RunError> {
    if runs.len() < 2 {
        return Err(RunError::Config(
            "analyze needs at least two labeled runs (`label=dir`)".into(),
        ));
    }
    let column = match metric {
        "mard" => 1,
        "za" => 2,
        other => {
            return Err(RunError::Config(format!(
                "unknown metric `{other}` (use mard or za)"
            )))
        }
    };
    let mut patients: Option<Vec<String>> = None;
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        let (label, dir) = run
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("run `{run}` must be `label=dir`")))?;
        let path = Path::new(dir).join(format!("per_patient_{cell}.csv"));
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(RunError::Config(format!(
                    "{}: malformed row `{line}`",
                    path.display()
                )));
            }
            ids.push(cells[0].to_string());
            values.push(cells[column].parse().map_err(|_| {
                RunError::Config(format!(
                    "{}: bad number `{}`",
                    path.display(),
                    cells[column]
                ))
            })?);
        }
        match &patients {
            None => patients = Some(ids),
            Some(existing) => {
                if existing != &ids {
                    return Err(RunError::State(format!(
                        "patient sets differ between runs (run `{label}`)"
                    )));
                }
            }
        }
        scores.insert(label.to_string(), values);
    }
    let patients = patients.expect("at least two runs");
    let result = per_patient_analysis(&patients, &scores)?;
    let text = result.to_text();
    print!("{text}");
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join(format!("analysis_{cell}_{metric}.txt"));
        std::fs::write(&path, &text).map_err(io_err(&path))?;
        // the raw score matrix behind the per-patient boxplots
        let conditions: Vec<String> = scores.keys().cloned().collect();
        let rows: Vec<(String, Vec<f64>)> = patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), conditions.iter().map(|c| scores[c][i]).collect()))
            .collect();
        emit_matrix(
            out,
            &format!("per_patient_matrix_{cell}_{metric}.csv"),
            "patient",
            &rows,
            &conditions,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_synth(out: &Path, patients: usize, len: usize, seed: u64) -> Result<(), RunError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    for i in 0..patients {
        let spec = SynthSpec {
            len,
            seed: seed.wrapping_add(i as u64),
            base: 120.0 + 5.0 * (i % 3) as f64,
            daily_amp: 50.0,
            meal_amp: 25.0,
            ..Default::default()
        };
        let series = generate_series(&format!("synth{i:02}"), &spec)?;
        let path = out.join(format!("synth{i:02}.csv"));
        write_csv(&series, &path).map_err(io_err(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
