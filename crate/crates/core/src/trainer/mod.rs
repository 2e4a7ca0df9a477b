//! The training loop: batch composition, weight and policy updates, SGD,
//! checkpoints and metrics.
//!
//! All randomness is drawn from generators keyed by `(seed, stream, index)`,
//! so a run resumed from a checkpoint replays exactly the batches and
//! augmentations an uninterrupted run would have used.

pub mod config;
pub mod metrics;
pub mod optim;

pub use config::{CtaConfig, Preset, TrainConfig, TrainMode};
pub use metrics::{MetricsRecord, METRICS_HEADER};
pub use optim::{cosine_lr, sgd_step};

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{cta_update, CtaPolicy};
use crate::error::{Error, Result};
use crate::eval::{batch_logits, topk_accuracy};
use crate::influence::{
    eta_schedule, head_gradient, lambda_update, validation_gradient, HessianApprox, HessianMode, LambdaWeights,
    ScheduleState,
};
use crate::nn::checkpoint::{read_records, write_records, TensorRecord};
use crate::nn::{load_checkpoint, save_checkpoint, ClassifierModel, GradientLayer, LoadOptions, ModelSpec, Tensor};
use crate::objective::{
    mean, pseudo_labels, step_weights, strong_views, total_loss_fixed, total_loss_weighted, weak_views, StepGraph,
};
use crate::scalar::Scalar;

/// Independent random streams.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const LABELLED_ORDER: u64 = 1;
    pub const LABELLED_AUG: u64 = 2;
    pub const UNLABELLED_ORDER: u64 = 3;
    pub const UNLABELLED_AUG: u64 = 4;
    pub const VALIDATION: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `[H,W,C]` images with class labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelledSet<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabelledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stack(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let imgs: Vec<Tensor<T>> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack(&imgs)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData<T> {
    pub train: LabelledSet<T>,
    /// Unlabelled pool; positions index the weights.
    pub unlabelled: Vec<Tensor<T>>,
    pub validation: LabelledSet<T>,
    pub test: Option<LabelledSet<T>>,
}

/// Labelled batch of step `k`: epoch-wise reshuffles, last batch partial.
pub fn labelled_batch_indices(seed: u64, step: usize, n: usize, batch: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch);
    let (epoch, j) = (step / per_epoch, step % per_epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream::LABELLED_ORDER, epoch as u64));
    perm[j * batch..((j + 1) * batch).min(n)].to_vec()
}

/// Unlabelled batch of step `k`: the pool cycles in reshuffled passes of
/// `floor(N / size)` distinct batches, independently of the labelled data.
pub fn unlabelled_batch_indices(seed: u64, step: usize, n: usize, size: usize) -> Result<Vec<usize>> {
    if size == 0 {
        return Ok(Vec::new());
    }
    if n < size {
        return Err(Error::Config(format!("unlabelled pool of {n} is smaller than mu * B = {size}")));
    }
    let per_cycle = n / size;
    let (cycle, j) = (step / per_cycle, step % per_cycle);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream::UNLABELLED_ORDER, cycle as u64));
    Ok(perm[j * size..(j + 1) * size].to_vec())
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<T> {
    pub model: ClassifierModel<T>,
    pub velocity: Vec<Tensor<T>>,
    pub lambda: LambdaWeights<T>,
    pub policy: CtaPolicy,
    /// Next step to run.
    pub step: usize,
    pub total_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    format: u32,
    step: usize,
    total_steps: usize,
    spec: ModelSpec,
    config: TrainConfig,
}

const STATE_FORMAT: u32 = 1;
const LAMBDA_MAGIC: &[u8; 4] = b"SYLL";

pub fn write_lambda<T: Scalar>(path: &Path, lambda: &LambdaWeights<T>) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * lambda.len());
    out.extend_from_slice(LAMBDA_MAGIC);
    out.extend_from_slice(&STATE_FORMAT.to_le_bytes());
    out.extend_from_slice(&(lambda.len() as u64).to_le_bytes());
    for v in lambda.values() {
        out.extend_from_slice(&(v.widen() as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the weights stored by [`write_lambda`] as `f32` values.
pub fn read_lambda(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_owned(),
    };
    if bytes.len() < 16 || &bytes[..4] != LAMBDA_MAGIC {
        return Err(fail("bad weight file header"));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != STATE_FORMAT {
        return Err(fail("unsupported weight file version"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 4 * n {
        return Err(fail("truncated weight file"));
    }
    Ok(bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Result of [`Trainer::run`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub steps_run: usize,
    pub finished: bool,
    /// `(top1, top5)` on the test split after the final step.
    pub test: Option<(f64, f64)>,
    pub checkpoint_dir: PathBuf,
}

pub struct Trainer<'a, T> {
    config: TrainConfig,
    data: &'a TrainData<T>,
    state: TrainerState<T>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Starts a run from `model`, applying the configured freezing.
    pub fn new(config: TrainConfig, mut model: ClassifierModel<T>, data: &'a TrainData<T>) -> Result<Self> {
        config.validate()?;
        Self::check_data(&config, &model, data)?;
        if let Some(k) = config.unfreeze_top_k {
            model.params_mut().unfreeze_top(k);
        }
        let velocity = model.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        let (lo, hi) = config.lambda_range;
        let lambda = LambdaWeights::new(data.unlabelled.len(), config.lambda_init, lo, hi)?;
        let total_steps = config.total_steps(data.train.len());
        let policy = config.cta.policy();
        Ok(Trainer {
            config,
            data,
            state: TrainerState {
                model,
                velocity,
                lambda,
                policy,
                step: 0,
                total_steps,
            },
        })
    }

    /// A freshly initialised model for `spec`, seeded from the run seed.
    pub fn init_model(spec: ModelSpec, seed: u64) -> Result<ClassifierModel<T>> {
        ClassifierModel::new(spec, &mut stream_rng(seed, stream::INIT, 0))
    }

    fn check_data(config: &TrainConfig, model: &ClassifierModel<T>, data: &TrainData<T>) -> Result<()> {
        if data.train.is_empty() {
            return Err(Error::Empty("labelled training set"));
        }
        let classes = model.spec().classes;
        let sets = [Some(&data.train), Some(&data.validation), data.test.as_ref()];
        for set in sets.into_iter().flatten() {
            if set.images.len() != set.labels.len() {
                return Err(Error::invalid("image and label counts differ"));
            }
            if let Some(&bad) = set.labels.iter().find(|&&l| l >= classes) {
                return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
            }
        }
        if config.mode.is_ssl() {
            unlabelled_batch_indices(0, 0, data.unlabelled.len(), config.unlabelled_per_step())?;
        }
        if config.mode == TrainMode::SslInfluence && data.validation.is_empty() {
            return Err(Error::Empty("validation set (needed for the weight update)"));
        }
        Ok(())
    }

    /// Restores a run saved by [`Trainer::save`]. The stored configuration
    /// must match `config`. Checkpoints hold `f32` values, so only `f32`
    /// runs continue bit-for-bit.
    pub fn resume(config: TrainConfig, data: &'a TrainData<T>, dir: &Path) -> Result<Self> {
        let state_path = dir.join("state.json");
        let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let stored: StateFile = serde_json::from_str(&text).map_err(|e| json_err(&state_path, e))?;
        if stored.format != STATE_FORMAT {
            return Err(Error::Checkpoint {
                path: state_path,
                reason: format!("unsupported state format {}", stored.format),
            });
        }
        if stored.config != config {
            return Err(Error::Config("resume configuration differs from the stored run".into()));
        }
        let mut model = ClassifierModel::zeros(stored.spec)?;
        load_checkpoint(&mut model, &dir.join("model.sylv"), LoadOptions::default())?;
        let mut trainer = Trainer::new(config, model.clone(), data)?;
        trainer.state.model = model;
        let mom_path = dir.join("momentum.sylv");
        let records = read_records(&mom_path)?;
        if records.len() != trainer.state.velocity.len() {
            return Err(Error::Checkpoint {
                path: mom_path,
                reason: "momentum buffer count does not match the model".into(),
            });
        }
        for (slot, r) in trainer.state.velocity.iter_mut().zip(records) {
            *slot = Tensor::new(r.shape, r.data.iter().map(|&v| T::narrow(v as f64)).collect())?;
        }
        let (lo, hi) = trainer.config.lambda_range;
        let values = read_lambda(&dir.join("lambda.bin"))?;
        if values.len() != data.unlabelled.len() {
            return Err(Error::Config(format!(
                "stored weights cover {} unlabelled examples, data has {}",
                values.len(),
                data.unlabelled.len()
            )));
        }
        trainer.state.lambda = LambdaWeights::from_values(
            values.into_iter().map(|v| T::narrow(v as f64)).collect(),
            trainer.config.lambda_init,
            lo,
            hi,
        )?;
        let cta_path = dir.join("cta.json");
        let cta = std::fs::read_to_string(&cta_path).map_err(|e| Error::io(&cta_path, e))?;
        trainer.state.policy = serde_json::from_str(&cta).map_err(|e| json_err(&cta_path, e))?;
        trainer.state.step = stored.step;
        trainer.state.total_steps = stored.total_steps;
        Ok(trainer)
    }

    /// Writes model, momentum, weights, policy and step counter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&self.state.model, &dir.join("model.sylv"))?;
        let records: Vec<TensorRecord> = self
            .state
            .model
            .params()
            .iter()
            .zip(&self.state.velocity)
            .map(|(p, v)| TensorRecord {
                name: p.name.clone(),
                frozen: p.frozen,
                shape: v.shape().to_vec(),
                data: v.data().iter().map(|x| x.widen() as f32).collect(),
            })
            .collect();
        write_records(&dir.join("momentum.sylv"), &records)?;
        write_lambda(&dir.join("lambda.bin"), &self.state.lambda)?;
        let cta_path = dir.join("cta.json");
        let cta = serde_json::to_string_pretty(&self.state.policy).map_err(|e| json_err(&cta_path, e))?;
        std::fs::write(&cta_path, cta + "\n").map_err(|e| Error::io(&cta_path, e))?;
        let state = StateFile {
            format: STATE_FORMAT,
            step: self.state.step,
            total_steps: self.state.total_steps,
            spec: self.state.model.spec().clone(),
            config: self.config.clone(),
        };
        let state_path = dir.join("state.json");
        let text = serde_json::to_string_pretty(&state).map_err(|e| json_err(&state_path, e))?;
        std::fs::write(&state_path, text + "\n").map_err(|e| Error::io(&state_path, e))
    }

    pub fn state(&self) -> &TrainerState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainerState<T> {
        &mut self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ClassifierModel<T> {
        &self.state.model
    }

    pub fn into_model(self) -> ClassifierModel<T> {
        self.state.model
    }

    fn steps_per_epoch(&self) -> usize {
        self.data.train.len().div_ceil(self.config.batch_size)
    }

    /// `(top1, top5)` of the current model on a labelled set.
    pub fn evaluate(&self, set: &LabelledSet<T>) -> Result<(f64, f64)> {
        let logits = batch_logits(&self.state.model, &set.images, 64)?;
        let classes = self.state.model.spec().classes;
        Ok((
            topk_accuracy(&logits, &set.labels, 1)?,
            topk_accuracy(&logits, &set.labels, 5.min(classes))?,
        ))
    }

    /// Runs one optimizer step and returns its metrics.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let k = self.state.step;
        let big_k = self.state.total_steps;
        if k >= big_k {
            return Err(Error::invalid(format!("run already finished after {big_k} steps")));
        }
        let cfg = &self.config;
        let seed = cfg.seed;
        let lr = cosine_lr(k, big_k, cfg.base_lr)?;
        let influence = cfg.mode == TrainMode::SslInfluence;
        let eta = if influence {
            Some(match cfg.eta_override {
                Some(e) => e,
                None => eta_schedule(ScheduleState { step: k, total: big_k })?,
            })
        } else {
            None
        };

        // Labelled views and their augmentation records.
        let l_idx = labelled_batch_indices(seed, k, self.data.train.len(), cfg.batch_size);
        let (l_images, l_labels) = self.data.train.stack(&l_idx)?;
        let mut l_rng = stream_rng(seed, stream::LABELLED_AUG, k as u64);
        let (l_views, records) = if cfg.mode == TrainMode::Sl && !cfg.sl_strong_augment {
            (weak_views(&l_images, &cfg.weak, &mut l_rng)?, Vec::new())
        } else {
            strong_views(&l_images, &cfg.weak, &self.state.policy, &mut l_rng)?
        };

        // Pseudo-labels from weak views; strong views for the loss.
        let mu_b = cfg.unlabelled_per_step();
        let mut pseudo = None;
        let mut selected: Vec<usize> = Vec::new();
        let mut u_idx = Vec::new();
        let mut u_strong = None;
        if cfg.mode.is_ssl() {
            u_idx = unlabelled_batch_indices(seed, k, self.data.unlabelled.len(), mu_b)?;
            let u_images = Tensor::stack(&u_idx.iter().map(|&i| self.data.unlabelled[i].clone()).collect::<Vec<_>>())?;
            let mut u_rng = stream_rng(seed, stream::UNLABELLED_AUG, k as u64);
            let weak = weak_views(&u_images, &cfg.weak, &mut u_rng)?;
            let p = pseudo_labels(&self.state.model.probabilities(&weak)?, cfg.tau)?;
            let (strong, _) = strong_views(&u_images, &cfg.weak, &self.state.policy, &mut u_rng)?;
            selected = (0..u_idx.len()).filter(|&b| p.mask[b]).collect();
            if !selected.is_empty() {
                let rows: Vec<Tensor<T>> = selected.iter().map(|&b| strong.index_outer(b)).collect::<Result<_>>()?;
                u_strong = Some(Tensor::stack(&rows)?);
            }
            pseudo = Some(p);
        }
        let sel_labels: Vec<usize> = match &pseudo {
            Some(p) => selected.iter().map(|&b| p.labels[b]).collect(),
            None => Vec::new(),
        };
        let mut graph = StepGraph::record(&self.state.model, &l_views, &l_labels, u_strong.as_ref(), &sel_labels)?;

        let ce = graph.ce_values();
        let n_l = l_labels.len();
        let loss_s = mean(&ce[..n_l], "labelled batch")?;
        let mut per_u = vec![0.0; u_idx.len()];
        for (r, &b) in selected.iter().enumerate() {
            per_u[b] = ce[n_l + r];
        }
        let probs = graph.probs();

        // Weight update, before the loss that uses the new weights.
        if let (Some(eta), Some(_)) = (eta, &pseudo) {
            if eta != 0.0 && !selected.is_empty() {
                self.update_lambda(k, eta, &graph, &probs, &selected, &sel_labels, &u_idx, u_strong.as_ref())?;
            }
        }

        let cfg = &self.config;
        let (unl_weights, loss_tot) = match cfg.mode {
            TrainMode::Sl => (Vec::new(), loss_s),
            TrainMode::SslFixed => (
                vec![cfg.lambda_fixed; selected.len()],
                total_loss_fixed(loss_s, mean(&per_u, "unlabelled batch")?, cfg.lambda_fixed),
            ),
            TrainMode::SslInfluence => {
                let lam = self.state.lambda.gather(&u_idx)?;
                (
                    selected.iter().map(|&b| lam[b]).collect(),
                    total_loss_weighted(loss_s, &per_u, &lam)?,
                )
            }
        };
        let weights = step_weights(n_l, &unl_weights, mu_b.max(1));
        let total = graph.weighted_loss(weights)?;
        let grads = graph.tape.backward(total)?;
        let param_grads = self.state.model.param_gradients(&graph.graph, &grads);
        sgd_step(
            self.state.model.params_mut(),
            &param_grads,
            &mut self.state.velocity,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        )?;

        for ((p, &label), record) in probs.iter().zip(&l_labels).zip(&records) {
            cta_update(&mut self.state.policy, p, label, record)?;
        }

        let ssl = cfg.mode.is_ssl();
        let (lm, lmin, lmax) = self.state.lambda.stats();
        let show_lambda = influence && !self.state.lambda.is_empty();
        let mut record = MetricsRecord {
            step: k,
            lr,
            eta,
            loss_s,
            loss_u: ssl.then(|| mean(&per_u, "unlabelled batch")).transpose()?,
            loss_tot,
            mask_rate: pseudo.as_ref().map(|p| p.mask_rate()),
            lambda_mean: show_lambda.then_some(lm),
            lambda_min: show_lambda.then_some(lmin),
            lambda_max: show_lambda.then_some(lmax),
            top1: None,
            top5: None,
        };
        if ![record.loss_s, record.loss_tot].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "train_step" });
        }
        self.state.step += 1;
        let end_of_epoch = self.state.step % self.steps_per_epoch() == 0 || self.state.step == big_k;
        if self.config.eval_every_epoch && end_of_epoch && !self.data.validation.is_empty() {
            let (t1, t5) = self.evaluate(&self.data.validation)?;
            record.top1 = Some(t1);
            record.top5 = Some(t5);
        }
        Ok(record)
    }

    #[allow(clippy::too_many_arguments)]
    fn update_lambda(
        &mut self,
        k: usize,
        eta: f64,
        graph: &StepGraph<T>,
        probs: &[Vec<f64>],
        selected: &[usize],
        sel_labels: &[usize],
        u_idx: &[usize],
        u_strong: Option<&Tensor<T>>,
    ) -> Result<()> {
        let cfg = &self.config;
        let n_l = graph.labelled;
        let mut v_rng = stream_rng(cfg.seed, stream::VALIDATION, k as u64);
        let n_v = self.data.validation.len();
        let v_idx = rand::seq::index::sample(&mut v_rng, n_v, cfg.batch_size.min(n_v)).into_vec();
        let (v_images, v_labels) = self.data.validation.stack(&v_idx)?;
        let v_views = weak_views(&v_images, &cfg.weak, &mut v_rng)?;
        let (_, val_grad) = validation_gradient(&self.state.model, &v_views, &v_labels, cfg.gradient_layer)?;

        let features = graph.features();
        let unl_grads: Vec<Vec<f64>> = match cfg.gradient_layer {
            GradientLayer::Final => (0..selected.len())
                .map(|r| head_gradient(&features[n_l + r], &probs[n_l + r], sel_labels[r]))
                .collect(),
            GradientLayer::Penultimate => {
                let views = u_strong.expect("selected rows have views");
                let classes = self.state.model.spec().classes;
                let mut t = vec![T::zero(); sel_labels.len() * classes];
                for (r, &l) in sel_labels.iter().enumerate() {
                    t[r * classes + l] = T::one();
                }
                let targets = Tensor::new(vec![sel_labels.len(), classes], t)?;
                self.state
                    .model
                    .per_example_grads(views, &targets, &vec![1.0; sel_labels.len()], GradientLayer::Penultimate)?
                    .into_iter()
                    .map(|g| g.iter().map(|v| v.widen()).collect())
                    .collect()
            }
        };
        let hessian = if cfg.hessian == HessianMode::Identity {
            HessianApprox::Identity
        } else {
            if cfg.gradient_layer != GradientLayer::Final {
                return Err(Error::Config("curvature modes other than identity need final-layer gradients".into()));
            }
            let lam = self.state.lambda.gather(u_idx)?;
            let unl: Vec<f64> = selected.iter().map(|&b| lam[b]).collect();
            let weights = step_weights(n_l, &unl, cfg.unlabelled_per_step());
            HessianApprox::build(cfg.hessian, &features, probs, &weights, cfg.damping)?
        };
        let indices: Vec<usize> = selected.iter().map(|&b| u_idx[b]).collect();
        lambda_update(&mut self.state.lambda, eta, &val_grad, &unl_grads, &indices, &hessian)?;
        Ok(())
    }

    /// Runs until the end (or `stop_after` total steps), writing
    /// `metrics.csv` and a checkpoint directory under `out_dir`.
    pub fn run(&mut self, out_dir: &Path, stop_after: Option<usize>) -> Result<TrainOutcome> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let metrics_path = out_dir.join("metrics.csv");
        let mut rows = if self.state.step > 0 && metrics_path.exists() {
            metrics::read_rows_before(&metrics_path, self.state.step)?
        } else {
            Vec::new()
        };
        let stop = stop_after.unwrap_or(usize::MAX).min(self.state.total_steps);
        let mut records = Vec::new();
        let start = self.state.step;
        while self.state.step < stop {
            let r = self.step()?;
            if r.top1.is_some() {
                info!(
                    "step {}/{}: loss {:.4}, validation top-1 {:.4}",
                    r.step + 1,
                    self.state.total_steps,
                    r.loss_tot,
                    r.top1.unwrap_or_default()
                );
            }
            rows.push(r.csv_row());
            records.push(r);
        }
        metrics::write_log(&metrics_path, &rows)?;
        let checkpoint_dir = out_dir.join("checkpoint");
        self.save(&checkpoint_dir)?;
        let finished = self.state.step == self.state.total_steps;
        let test = match (&self.data.test, finished) {
            (Some(t), true) if !t.is_empty() => Some(self.evaluate(t)?),
            (None, true) => {
                warn!("no test split; skipping final test evaluation");
                None
            }
            _ => None,
        };
        Ok(TrainOutcome {
            metrics: records,
            steps_run: self.state.step - start,
            finished,
            test,
            checkpoint_dir,
        })
    }
}

/// Convenience wrapper: fresh run from `model`.
pub fn train_loop<T: Scalar>(
    config: TrainConfig,
    model: ClassifierModel<T>,
    data: &TrainData<T>,
    out_dir: &Path,
) -> Result<(ClassifierModel<T>, TrainOutcome)> {
    let mut trainer = Trainer::new(config, model, data)?;
    let outcome = trainer.run(out_dir, None)?;
    Ok((trainer.into_model(), outcome))
}
