//! `sylva`: dataset pipeline, training, evaluation and saliency export.
//!
//! Exit codes: 0 on success, 2 for bad input (files, configs, arguments),
//! 1 for internal failures such as a diverging run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sylva_core::augment::annotation::Feature;
use sylva_core::trainer::{Preset, TrainMode};

use commands::TrainArgs;
use config::Overrides;

#[derive(Parser)]
#[command(name = "sylva", version, about = "Semi-supervised tree feature and species classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used before the config file is applied.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    #[arg(long)]
    labelled_fraction: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            mode: self.mode,
            seed: self.seed,
            labelled_fraction: self.labelled_fraction,
        }
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_feature)]
    feature: Feature,
    /// Output directory for the run.
    #[arg(long)]
    out: PathBuf,
    /// Prefix for relative image paths.
    #[arg(long, env = "SYLVA_DATA_ROOT", default_value = ".")]
    data_root: PathBuf,
    /// Continue from the run's checkpoint if one exists.
    #[arg(long)]
    resume: bool,
    /// Stop (and checkpoint) once this many steps have run in total.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-lines manifest and summarise it.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the most observed species.
        #[arg(long)]
        top_species: Option<usize>,
        /// Species removed before ranking (repeatable).
        #[arg(long)]
        exclude: Vec<String>,
    },
    /// Train a binary feature recogniser on an annotated manifest.
    TrainFeature {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        manifest: PathBuf,
        /// Also put annotated images in the unlabelled pool.
        #[arg(long)]
        pool_includes_annotated: bool,
    },
    /// Train a species classifier on a dataset from build-species-datasets.
    TrainSpecies {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Route manifest records to the leaves and bark datasets.
    PredictFeatures {
        #[arg(long)]
        leaves: PathBuf,
        #[arg(long)]
        bark: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, env = "SYLVA_DATA_ROOT", default_value = ".")]
        data_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a feature-specific species dataset.
    BuildSpeciesDatasets {
        #[command(flatten)]
        common: Common,
        /// Output directory of predict-features.
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, value_parser = parse_feature)]
        feature: Feature,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on one of its splits.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Confusion-edge CSV for the grouped confusion matrix.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Write a Grad-CAM overlay and map for one image.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class to explain; defaults to the prediction.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the (k, eta, lr) schedule.
    ScheduleDump {
        #[command(flatten)]
        common: Common,
        /// Total steps K.
        #[arg(long)]
        steps: Option<usize>,
        /// Labelled training examples; K follows from epochs and batch size.
        #[arg(long)]
        labelled: Option<usize>,
    },
}

fn parse_feature(s: &str) -> Result<Feature, String> {
    s.parse().map_err(|e: sylva_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: sylva_core::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "feature-recognition" => Ok(Preset::FeatureRecognition),
        "species-classification" => Ok(Preset::SpeciesClassification),
        other => Err(format!("unknown preset {other:?} (feature-recognition, species-classification)")),
    }
}

fn train_args(flags: &TrainFlags) -> TrainArgs<'_> {
    TrainArgs {
        config: flags.common.config.as_deref(),
        overrides: flags.common.overrides(),
        feature: flags.feature,
        out: &flags.out,
        data_root: &flags.data_root,
        resume: flags.resume,
        stop_after: flags.stop_after,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest {
            manifest,
            out,
            top_species,
            exclude,
        } => commands::ingest(&manifest, &out, top_species, &exclude),
        Command::TrainFeature {
            flags,
            manifest,
            pool_includes_annotated,
        } => commands::train_feature(&train_args(&flags), &manifest, pool_includes_annotated),
        Command::TrainSpecies { flags, dataset } => commands::train_species(&train_args(&flags), &dataset),
        Command::PredictFeatures {
            leaves,
            bark,
            manifest,
            data_root,
            out,
        } => commands::predict_features(&leaves, &bark, &manifest, &data_root, &out),
        Command::BuildSpeciesDatasets {
            common,
            partition,
            feature,
            out,
        } => commands::build_species_datasets(common.config.as_deref(), &common.overrides(), &partition, feature, &out),
        Command::Eval { run, split, groups } => commands::eval(&run, &split, groups.as_deref()),
        Command::Explain { run, image, class, out } => commands::explain(&run, &image, class, &out),
        Command::ScheduleDump { common, steps, labelled } => {
            commands::schedule_dump(steps, common.config.as_deref(), &common.overrides(), labelled)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let user = e
                .chain()
                .find_map(|c| c.downcast_ref::<sylva_core::Error>())
                .is_some_and(|se| se.is_user_error());
            ExitCode::from(if user { 2 } else { 1 })
        }
    }
}
