//! Command-line driver: dataset generation, encoder pretraining, base-task
//! training, incremental runs, and report rendering, all seeded and
//! reproducible. Exit codes: 0 success, 2 config/validation, 3 IO,
//! 4 protocol, 5 numeric.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use smp_core::checkpoint::{load_backbone, load_base_train, save_backbone, save_base_train};
use smp_core::config::{PathsSection, RunConfig};
use smp_core::datagen::{generate, load_fixture, save_fixture, SyntheticSpec};
use smp_core::metrics::RunReport;
use smp_core::pipeline::{base_stage, fscil_stage, pretrain_stage, summarize, ModelVariant};
use smp_core::protocol::build_stream;
use smp_core::{Result, SmpError};

#[derive(Parser)]
#[command(name = "smp", about = "Few-shot class-incremental training pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MpccToggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Merged,
    Discriminative,
    Generalization,
}

impl VariantArg {
    fn to_variant(self) -> ModelVariant {
        match self {
            VariantArg::Merged => ModelVariant::Merged,
            VariantArg::Discriminative => ModelVariant::DiscriminativeOnly,
            VariantArg::Generalization => ModelVariant::GeneralizationOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset fixture.
    GenData {
        /// JSON file holding the synthetic dataset spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output fixture directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the frozen encoder on the pretext split.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Fixture directory; defaults to paths.fixture from the config.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Output checkpoint directory; defaults to <paths.checkpoint_dir>/backbone.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both adapter sets on the base task and merge them.
    TrainBase {
        #[arg(long)]
        config: PathBuf,
        /// Pretrained backbone checkpoint.
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Output checkpoint directory; defaults to <paths.checkpoint_dir>/base.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the training margin (e.g. 0 for the no-margin baseline).
        #[arg(long)]
        margin: Option<f64>,
        /// Skip merging: sessions use the discriminative set's update alone.
        #[arg(long)]
        no_merge: bool,
    },
    /// Run the incremental sessions and write the final report.
    RunFscil {
        #[arg(long)]
        config: PathBuf,
        /// Base-train checkpoint directory.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        mpcc: MpccToggle,
        /// Which update blocks drive the sessions.
        #[arg(long, value_enum, default_value = "merged")]
        variant: VariantArg,
        /// Report output path; defaults to paths.report_out.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a report file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
}

/// Config files carry the run schema plus an optional `paths` object that
/// supplies defaults for the file arguments.
fn load_config(path: &Path) -> Result<(RunConfig, Option<PathsSection>)> {
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| SmpError::Config(format!("{}: {e}", path.display())))?;
    let paths = match value.as_object_mut() {
        Some(obj) => match obj.remove("paths") {
            Some(p) => Some(
                serde_json::from_value(p)
                    .map_err(|e| SmpError::Config(format!("paths: {e}")))?,
            ),
            None => None,
        },
        None => return Err(SmpError::Config("config file is not a JSON object".into())),
    };
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| SmpError::Config(format!("run config: {e}")))?;
    config.validate()?;
    Ok((config, paths))
}

fn resolve(
    explicit: Option<PathBuf>,
    paths: &Option<PathsSection>,
    pick: impl Fn(&PathsSection) -> PathBuf,
    what: &str,
) -> Result<PathBuf> {
    explicit
        .or_else(|| paths.as_ref().map(pick))
        .ok_or_else(|| SmpError::Config(format!("no {what} given and config has no paths section")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, seed, out } => {
            let text = fs::read_to_string(&spec)?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| SmpError::Config(format!("dataset spec: {e}")))?;
            let fixture = generate(&spec, seed)?;
            save_fixture(&fixture, &out)?;
            println!("fixture written to {}", out.display());
        }
        Command::Pretrain { config, fixture, out } => {
            let (config, paths) = load_config(&config)?;
            let fixture_dir =
                resolve(fixture, &paths, |p| PathBuf::from(&p.fixture), "--fixture")?;
            let out = resolve(
                out,
                &paths,
                |p| Path::new(&p.checkpoint_dir).join("backbone"),
                "--out",
            )?;
            let fixture = load_fixture(&fixture_dir)?;
            let (backbone, holdout_acc) = pretrain_stage(&fixture, &config)?;
            save_backbone(&out, &backbone, &serde_json::to_value(&config)?)?;
            println!(
                "backbone checkpoint written to {} (pretext holdout accuracy {:.3})",
                out.display(),
                holdout_acc
            );
        }
        Command::TrainBase { config, backbone, fixture, out, margin, no_merge } => {
            let (mut config, paths) = load_config(&config)?;
            if let Some(m) = margin {
                if m < 0.0 {
                    return Err(SmpError::Config(format!("margin {m} must be >= 0")));
                }
                config.train.m = m;
            }
            let backbone_dir = resolve(
                backbone,
                &paths,
                |p| Path::new(&p.checkpoint_dir).join("backbone"),
                "--backbone",
            )?;
            let fixture_dir =
                resolve(fixture, &paths, |p| PathBuf::from(&p.fixture), "--fixture")?;
            let out =
                resolve(out, &paths, |p| Path::new(&p.checkpoint_dir).join("base"), "--out")?;
            let (backbone, _) = load_backbone(&backbone_dir)?;
            let fixture = load_fixture(&fixture_dir)?;
            let stream = build_stream(&fixture, &config.stream)?;
            let mut result = base_stage(&backbone, &stream, &config)?;
            if no_merge {
                result.merged = result.adapters_d.to_merged();
            }
            save_base_train(&out, &backbone, &result, &serde_json::to_value(&config)?)?;
            println!("base-train checkpoint written to {}", out.display());
        }
        Command::RunFscil { config, model, fixture, mpcc, variant, report } => {
            let (config, paths) = load_config(&config)?;
            let model_dir = resolve(
                model,
                &paths,
                |p| Path::new(&p.checkpoint_dir).join("base"),
                "--model",
            )?;
            let fixture_dir =
                resolve(fixture, &paths, |p| PathBuf::from(&p.fixture), "--fixture")?;
            let report_path =
                resolve(report, &paths, |p| PathBuf::from(&p.report_out), "--report")?;
            let (backbone, result, _) = load_base_train(&model_dir)?;
            let fixture = load_fixture(&fixture_dir)?;
            let stream = build_stream(&fixture, &config.stream)?;
            let deltas = variant.to_variant().select(&result);
            let enabled = matches!(mpcc, MpccToggle::On);
            let sessions = fscil_stage(&backbone, &deltas, &result, &stream, &config, enabled)?;
            let run_report = summarize(&sessions, &config)?;
            run_report.validate()?;
            fs::write(&report_path, serde_json::to_string_pretty(&run_report)? + "\n")?;
            println!("report written to {}", report_path.display());
        }
        Command::Report { input, format } => {
            let text = fs::read_to_string(&input)?;
            let report: RunReport = serde_json::from_str(&text)
                .map_err(|e| SmpError::Corrupt(format!("report: {e}")))?;
            report.validate()?;
            match format {
                ReportFormat::Table => print!("{}", report.render_table()),
                ReportFormat::Csv => print!("{}", report.render_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
