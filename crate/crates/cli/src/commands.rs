use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use sylva_core::augment::annotation::Feature;
use sylva_core::data::species::{grade_counts, retain_species, species_counts};
use sylva_core::data::{
    build_feature_dataset, feature_class_names, group_similar_species, ingest_manifest, load_example, make_splits,
    predict_and_partition, read_confusion_edges, select_top_species, write_manifest, FeaturePredictor, SpeciesDataset,
    SplitDataset, SplitSpec,
};
use sylva_core::eval::gradcam::{grad_cam, write_saliency};
use sylva_core::eval::eval_report;
use sylva_core::influence::{eta_schedule, ScheduleState};
use sylva_core::nn::{load_checkpoint, LoadOptions, ModelSpec};
use sylva_core::trainer::{cosine_lr, Trainer};
use sylva_core::{Error, Model32, Tensor32};

use crate::config::{Overrides, RunConfig};

fn user(e: Error) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| user(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| user(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    serde_json::from_str(&text).map_err(|e| {
        user(Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| user(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

pub fn ingest(manifest: &Path, out: &Path, top_species: Option<usize>, exclude: &[String]) -> Result<()> {
    let report = ingest_manifest(manifest).map_err(user)?;
    let mut records = report.records;
    if let Some(k) = top_species {
        let keep = select_top_species(&records, k, exclude).map_err(user)?;
        records = retain_species(&records, &keep);
    }
    create_dir(out)?;
    write_manifest(&out.join("manifest.jsonl"), &records).map_err(user)?;
    let (research, need_id) = grade_counts(&records);
    let species = species_counts(&records);
    let summary = serde_json::json!({
        "retained": records.len(),
        "casual_dropped": report.casual_dropped,
        "research": research,
        "need_id": need_id,
        "species": species,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{} retained, {} dropped", records.len(), report.casual_dropped);
    println!("research: {research}\nneedID: {need_id}");
    for (name, n) in &species {
        println!("{name}: {n}");
    }
    Ok(())
}

/// Everything needed to reload a trained model and its data.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub task: String,
    pub feature: Feature,
    pub class_names: Vec<String>,
    pub image_size: usize,
    pub spec: ModelSpec,
    pub dataset: PathBuf,
    pub data_root: PathBuf,
}

impl RunInfo {
    pub fn read(run: &Path) -> Result<Self> {
        read_json(&run.join("run.json"))
    }

    pub fn model(&self, run: &Path) -> Result<Model32> {
        let mut model = Model32::zeros(self.spec.clone()).map_err(user)?;
        load_checkpoint(&mut model, &run.join("checkpoint").join("model.sylv"), LoadOptions::default()).map_err(user)?;
        Ok(model)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| user(Error::Io {
        path: p.to_path_buf(),
        source: e,
    }))
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub overrides: Overrides,
    pub feature: Feature,
    pub out: &'a Path,
    pub data_root: &'a Path,
    pub resume: bool,
    pub stop_after: Option<usize>,
}

fn train_on(args: &TrainArgs, cfg: &RunConfig, dataset_dir: &Path, task: &str) -> Result<()> {
    let ds = SplitDataset::read(dataset_dir).map_err(user)?;
    if ds.train.is_empty() {
        bail!(user(Error::Empty("training split")));
    }
    let data = ds.load::<f32>(args.data_root, cfg.image_size).map_err(user)?;
    let spec = ModelSpec::with_widths(cfg.image_size, cfg.image_size, ds.class_names.len(), &cfg.widths);
    let info = RunInfo {
        task: task.to_owned(),
        feature: args.feature,
        class_names: ds.class_names.clone(),
        image_size: cfg.image_size,
        spec: spec.clone(),
        dataset: absolute(dataset_dir)?,
        data_root: absolute(args.data_root)?,
    };
    create_dir(args.out)?;
    write_json(&args.out.join("run.json"), &info)?;
    let checkpoint = args.out.join("checkpoint");
    let mut trainer = if args.resume && checkpoint.join("state.json").is_file() {
        Trainer::resume(cfg.train.clone(), &data, &checkpoint).map_err(user)?
    } else {
        let mut model = Trainer::<f32>::init_model(spec, cfg.train.seed)?;
        if let Some(init) = &cfg.init_checkpoint {
            load_checkpoint(&mut model, init, LoadOptions::default()).map_err(user)?;
        }
        Trainer::new(cfg.train.clone(), model, &data).map_err(user)?
    };
    let outcome = trainer.run(args.out, args.stop_after)?;
    let last = outcome.metrics.last();
    match (outcome.test, last) {
        (Some((t1, t5)), _) => println!("{task} {}: test top-1 {t1:.4} top-5 {t5:.4}", args.feature.name()),
        (None, Some(m)) => println!("stopped after step {} (loss {:.6})", m.step + 1, m.loss_tot),
        (None, None) => println!("nothing to do: run already complete"),
    }
    Ok(())
}

pub fn train_feature(args: &TrainArgs, manifest: &Path, pool_includes_annotated: bool) -> Result<()> {
    let cfg = RunConfig::load(args.config, &args.overrides, SplitSpec::feature_recognition)?;
    let records = ingest_manifest(manifest).map_err(user)?.records;
    let fd = build_feature_dataset(&records, args.feature, pool_includes_annotated);
    let splits = make_splits(&fd.labels(), &cfg.split).map_err(user)?;
    let ds = SplitDataset::from_splits(feature_class_names(args.feature), &fd.labelled, &splits, fd.unlabelled.clone());
    let dir = args.out.join("dataset");
    ds.write(&dir).map_err(user)?;
    println!("{}", ds.summary());
    train_on(args, &cfg, &dir, "feature")
}

pub fn train_species(args: &TrainArgs, dataset: &Path) -> Result<()> {
    let cfg = RunConfig::load(args.config, &args.overrides, SplitSpec::species_classification)?;
    train_on(args, &cfg, dataset, "species")
}

struct ModelPredictor {
    model: Model32,
    size: usize,
}

impl FeaturePredictor for ModelPredictor {
    fn probability(&self, path: &Path) -> sylva_core::Result<f64> {
        let image: Tensor32 = load_example(path, &[], self.size, 0)?;
        let p = self.model.probabilities(&Tensor32::stack(&[image])?)?;
        Ok(p[0][sylva_core::data::features::FEATURE])
    }
}

pub fn predict_features(leaves: &Path, bark: &Path, manifest: &Path, data_root: &Path, out: &Path) -> Result<()> {
    let mut predictors = Vec::new();
    for (feature, run) in [(Feature::Leaves, leaves), (Feature::Bark, bark)] {
        let info = RunInfo::read(run)?;
        if info.task != "feature" || info.feature != feature {
            bail!(user(Error::Config(format!(
                "{} is not a {} recognition run",
                run.display(),
                feature.name()
            ))));
        }
        predictors.push((
            feature,
            ModelPredictor {
                model: info.model(run)?,
                size: info.image_size,
            },
        ));
    }
    let records = ingest_manifest(manifest).map_err(user)?.records;
    let refs: Vec<(Feature, &dyn FeaturePredictor)> =
        predictors.iter().map(|(f, p)| (*f, p as &dyn FeaturePredictor)).collect();
    let report = predict_and_partition(&records, data_root, &refs).map_err(user)?;
    create_dir(out)?;
    for (feature, ds) in &report.datasets {
        write_json(&out.join(format!("{}.json", feature.name())), ds)?;
        println!(
            "{}: {} labelled, {} unlabelled",
            feature.name(),
            ds.labelled.len(),
            ds.unlabelled.len()
        );
    }
    println!("excluded: {}\nmissing images: {}", report.excluded, report.missing_images);
    Ok(())
}

pub fn build_species_datasets(config: Option<&Path>, overrides: &Overrides, partition: &Path, feature: Feature, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config, overrides, SplitSpec::species_classification)?;
    let species: SpeciesDataset = read_json(&partition.join(format!("{}.json", feature.name())))?;
    let classes = species.class_names();
    let examples = species.examples(&classes);
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let splits = make_splits(&labels, &cfg.split).map_err(user)?;
    let ds = SplitDataset::from_splits(classes, &examples, &splits, species.unlabelled.clone());
    ds.write(out).map_err(user)?;
    println!("{}", ds.summary());
    Ok(())
}

pub fn eval(run: &Path, split: &str, groups: Option<&Path>) -> Result<()> {
    let info = RunInfo::read(run)?;
    let model = info.model(run)?;
    let ds = SplitDataset::read(&info.dataset).map_err(user)?;
    let examples = ds.split(split).map_err(user)?;
    let set = sylva_core::data::load_labelled::<f32>(examples, &info.data_root, info.image_size).map_err(user)?;
    let group_idx = match groups {
        Some(path) => {
            let edges = read_confusion_edges(path).map_err(user)?;
            let mut names: Vec<String> = info.class_names.clone();
            for (a, b) in &edges {
                names.push(a.clone());
                names.push(b.clone());
            }
            group_similar_species(&names, &edges).map_err(user)?.class_indices(&info.class_names)
        }
        None => Vec::new(),
    };
    let report = eval_report(&model, split, &set.images, &set.labels, &info.class_names, &group_idx).map_err(user)?;
    report.write(&run.join("eval"), split).map_err(user)?;
    println!(
        "{split}: top-1 {:.4} top-5 {:.4} group accuracy {:.4} ({} examples)",
        report.top1, report.top5, report.group_accuracy, report.examples
    );
    Ok(())
}

pub fn explain(run: &Path, image: &Path, class: Option<usize>, out: &Path) -> Result<()> {
    let info = RunInfo::read(run)?;
    let model = info.model(run)?;
    let img: Tensor32 = load_example(image, &[], info.image_size, 0).map_err(user)?;
    let target = match class {
        Some(c) => c,
        None => {
            let p = model.probabilities(&Tensor32::stack(std::slice::from_ref(&img))?)?;
            sylva_core::nn::argmax(&p[0]).unwrap_or(0)
        }
    };
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_owned();
    let map = grad_cam(&model, &img, target, &stem).map_err(user)?;
    create_dir(out)?;
    let png = out.join(format!("{stem}_saliency.png"));
    let csv = out.join(format!("{stem}_saliency.csv"));
    write_saliency(&map, &img, &png, &csv).map_err(user)?;
    let name = info.class_names.get(target).map(String::as_str).unwrap_or("?");
    println!("{stem}: class {target} ({name}), {}x{} map -> {}", map.height, map.width, png.display());
    Ok(())
}

pub fn schedule_dump(steps: Option<usize>, config: Option<&Path>, overrides: &Overrides, labelled: Option<usize>) -> Result<()> {
    let cfg = RunConfig::load(config, overrides, SplitSpec::feature_recognition)?;
    let total = match (steps, labelled) {
        (Some(k), _) => k,
        (None, Some(n)) => cfg.train.total_steps(n),
        (None, None) => bail!(user(Error::Config("give --steps or --labelled".into()))),
    };
    println!("k,eta,lr");
    for k in 0..=total {
        let eta = eta_schedule(ScheduleState { step: k, total }).map_err(user)?;
        let lr = cosine_lr(k, total, cfg.train.base_lr).map_err(user)?;
        println!("{k},{eta:?},{lr:?}");
    }
    Ok(())
}
