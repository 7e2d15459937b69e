use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use survtune_core::cohort::{generate_synthetic, ingest_csv, write_csv, GeneratorConfig, MappingProfile};
use survtune_core::explain::{sample_background, shap_many, shap_summary, write_matrix_csv, write_summary_csv, ShapConfig};
use survtune_core::pipeline::{
    evaluate_predictions, external_validate, run_experiment, write_experiment, write_plot_data, write_predictions_csv,
    ExperimentConfig, ModelBundle, MODELS,
};
use survtune_core::{Cohort, Error, Objective, Result};

#[derive(Parser)]
#[command(name = "survtune", version, about = "Survival model fine-tuning, tree ensembles and calibration evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Ici,
    Auc,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Ici => Objective::Ici,
            ObjectiveArg::Auc => Objective::Auc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and write it as CSV.
    Synth {
        /// Generator configuration (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the cohort size.
        #[arg(long)]
        n: Option<usize>,
        /// Multiply the baseline hazard (dataset shift).
        #[arg(long)]
        hazard_multiplier: Option<f64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the true horizon survival per record here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Validate a cohort CSV and summarize it.
    IngestCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        /// Mapping profile used to count invalid baseline inputs.
        #[arg(long, default_value = "ma27")]
        profile: String,
    },
    /// Run the repeated-split protocol and fit the final models.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// A single seed (shorthand for `--seeds`).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long)]
        rebalance: bool,
        /// Train on this CSV instead of the configured cohort.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score saved models on a cohort: metrics, predictions and plot data.
    Evaluate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write survival predictions of saved models for a cohort.
    Predict {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo SHAP attributions for one saved model.
    Explain {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "ensemble")]
        model: String,
        /// Records explained (the first ones of the input).
        #[arg(long, default_value_t = 100)]
        records: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 500)]
        background: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved models on an external cohort with bootstrap intervals.
    ExternalValidate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Mapping profile of the external source.
        #[arg(long, default_value = "ma27")]
        profile: String,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibration and ROC curve data for saved models on a cohort.
    PlotData {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "input" => 3,
        "config" => 4,
        "domain" => 5,
        "numeric" => 6,
        "fit" => 7,
        "metric" => 8,
        "leakage" => 9,
        _ => 10,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn load_cohort(path: &Path, horizon: f64) -> Result<Cohort> {
    let (cohort, report) = ingest_csv(path, horizon)?;
    if report.dropped_nonpositive_time > 0 {
        eprintln!("dropped {} rows with non-positive time", report.dropped_nonpositive_time);
    }
    Ok(cohort)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, n, hazard_multiplier, out, truth } => {
            let mut cfg: GeneratorConfig = config.as_deref().map(read_json).transpose()?.unwrap_or_default();
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(m) = hazard_multiplier {
                cfg.hazard_multiplier = m;
            }
            let s = generate_synthetic(&cfg, seed)?;
            write_csv(&s.cohort, create(&out)?)?;
            if let Some(path) = truth {
                let mut w = create(&path)?;
                writeln!(w, "record_id,true_survival")?;
                for (r, p) in s.cohort.records.iter().zip(&s.true_survival) {
                    writeln!(w, "{},{p}", r.id)?;
                }
                w.flush()?;
            }
            println!("wrote {} records ({} events) to {}", s.cohort.len(), s.cohort.event_count(), out.display());
        }
        Command::IngestCheck { input, horizon, profile } => {
            let (cohort, report) = ingest_csv(&input, horizon)?;
            let profile = MappingProfile::by_name(&profile)?;
            let preds = survtune_core::baseline::predict_cohort(
                &survtune_core::BaselineParamVector::reference(),
                &cohort,
                &profile,
                horizon,
                "check",
            )?;
            let invalid = preds.iter().filter(|p| !p.valid).count();
            let summary = serde_json::json!({
                "ingest": report,
                "records": cohort.len(),
                "events": cohort.event_count(),
                "baseline_invalid": invalid,
                "baseline_invalid_fraction": invalid as f64 / cohort.len() as f64,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train { config, seed, seeds, objective, rebalance, input, out } => {
            let mut cfg: ExperimentConfig = match config {
                Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(o) = objective {
                cfg.objective = o.into();
            }
            cfg.rebalance |= rebalance;
            if let Some(path) = input {
                cfg.cohort = survtune_core::pipeline::CohortSource::Csv { path };
            }
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("survtune-out"));
            let exp = run_experiment(&cfg)?;
            write_experiment(&exp, &dir)?;
            for s in exp.report.summary.iter().filter(|s| s.subset == "all") {
                let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
                println!("{:<20} {:<4} median {} IQR [{}, {}]", s.model, s.metric, f(s.median), f(s.q1), f(s.q3));
            }
            println!("report written to {}", dir.join("report.json").display());
        }
        Command::Evaluate { models, input, out } => {
            let bundle = ModelBundle::load(&models)?;
            let cohort = load_cohort(&input, bundle.horizon)?;
            let preds = bundle.predict(&cohort)?;
            let rows = evaluate_predictions(&preds, &cohort, bundle.horizon);
            fs::create_dir_all(&out)?;
            let mut w = create(&out.join("metrics.csv"))?;
            writeln!(w, "model,subset,metric,value,n,events")?;
            for r in &rows {
                let v = r.value.map_or("NA".to_string(), |x| x.to_string());
                writeln!(w, "{},{},{},{v},{},{}", r.model, r.subset, r.metric, r.n, r.events)?;
            }
            w.flush()?;
            let mut w = create(&out.join("predictions.csv"))?;
            write_predictions_csv(&mut w, None, &preds, &cohort.times(), &cohort.events(), true)?;
            w.flush()?;
            for s in write_plot_data(&out.join("plots"), &preds, &cohort.times(), &cohort.events(), bundle.horizon)? {
                eprintln!("skipped {s}");
            }
            println!("{} records scored, {} without a valid baseline prediction", cohort.len(), preds.invalid_count());
        }
        Command::Predict { models, input, out } => {
            let bundle = ModelBundle::load(&models)?;
            let cohort = load_cohort(&input, bundle.horizon)?;
            let preds = bundle.predict(&cohort)?;
            let mut w = create(&out)?;
            writeln!(w, "record_id,{}", MODELS.join(","))?;
            let cols: Vec<Vec<Option<f64>>> = MODELS.iter().map(|m| preds.model(m)).collect();
            for i in 0..preds.len() {
                let vals: Vec<String> = cols.iter().map(|c| c[i].map_or("NA".to_string(), |x| x.to_string())).collect();
                writeln!(w, "{},{}", preds.record_ids[i], vals.join(","))?;
            }
            w.flush()?;
        }
        Command::Explain { models, input, model, records, samples, background, seed, out } => {
            if !MODELS.contains(&model.as_str()) {
                return Err(Error::Config(format!("unknown model `{model}`; expected one of {}", MODELS.join(", "))));
            }
            let bundle = ModelBundle::load(&models)?;
            let cohort = load_cohort(&input, bundle.horizon)?;
            let bg = sample_background(&cohort.records, background, seed);
            let cfg = ShapConfig { samples, background, seed, ..ShapConfig::default() };
            let f = |r: &survtune_core::PatientRecord| bundle.predict_record(&model, r);
            let targets: Vec<_> = cohort.records.iter().take(records).cloned().collect();
            let mut results = Vec::new();
            let mut explained = Vec::new();
            for (res, rec) in shap_many(&f, &targets, &bg, &cfg).into_iter().zip(&targets) {
                match res {
                    Ok(r) => {
                        results.push(r);
                        explained.push(rec.clone());
                    }
                    Err(e) => eprintln!("record {}: {e}", rec.id),
                }
            }
            let summary = shap_summary(&results, &explained)?;
            fs::create_dir_all(&out)?;
            write_summary_csv(&summary, create(&out.join("shap_summary.csv"))?)?;
            write_matrix_csv(&summary, create(&out.join("shap_matrix.csv"))?)?;
            for r in &summary.ranking {
                println!("{:>2}. {:<20} {:.5}", r.rank, r.feature.name(), r.mean_abs_shap);
            }
        }
        Command::ExternalValidate { models, input, profile, horizon, bootstrap, seed, out } => {
            let bundle = ModelBundle::load(&models)?;
            let t = horizon.unwrap_or(bundle.horizon);
            let cohort = load_cohort(&input, t)?;
            let profile = MappingProfile::by_name(&profile)?;
            let report = external_validate(&bundle, &cohort, &profile, t, bootstrap, seed)?;
            let mut w = create(&out)?;
            w.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
            w.flush()?;
            for m in &report.metrics {
                match &m.ci {
                    Some(ci) => println!("{:<20} {:<4} {:.4} [{:.4}, {:.4}]", m.model, m.metric, ci.estimate, ci.lo, ci.hi),
                    None => println!("{:<20} {:<4} undefined ({})", m.model, m.metric, m.error.as_deref().unwrap_or("")),
                }
            }
        }
        Command::PlotData { models, input, out } => {
            let bundle = ModelBundle::load(&models)?;
            let cohort = load_cohort(&input, bundle.horizon)?;
            let preds = bundle.predict(&cohort)?;
            for s in write_plot_data(&out, &preds, &cohort.times(), &cohort.events(), bundle.horizon)? {
                eprintln!("skipped {s}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
