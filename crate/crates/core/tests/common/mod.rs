//! Oracles and fixtures shared by the integration tests and the acceptance
//! suite. Everything here recomputes results by an independent route:
//! finite differences, brute-force retraining, hand-built batches.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sylva_core::data::synthetic::{texture_train_data, TextureConfig};
use sylva_core::eval::grad_cam;
use sylva_core::influence::oracle::{brute_force_influence, SolverConfig, ToyProblem};
use sylva_core::influence::{head_gradient, lambda_update, HessianApprox, HessianMode, LambdaWeights};
use sylva_core::nn::{BlockSpec, ClassifierModel, ModelSpec, Tensor};
use sylva_core::objective::{step_weights, StepGraph};
use sylva_core::Scalar;
use sylva_core::trainer::{MetricsRecord, Preset, TrainConfig, TrainData, TrainMode, Trainer};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::uniform(vec![n, h, w, 3], 0.0, 1.0, rng)
}

/// A small conv net with one to three blocks.
pub fn random_spec(rng: &mut ChaCha8Rng, max_side: usize, max_blocks: usize) -> ModelSpec {
    let side = rng.random_range(4..=max_side);
    let blocks = (0..rng.random_range(1..=max_blocks))
        .map(|_| BlockSpec {
            channels: rng.random_range(2..=6),
            stride: rng.random_range(1..=2),
        })
        .collect();
    ModelSpec {
        blocks,
        ..ModelSpec::with_widths(side, side + rng.random_range(0..2), rng.random_range(2..=4), &[])
    }
}

/// One training-step objective: model, labelled and unlabelled views with
/// their targets, and the loss weight of every row.
pub struct StepCase {
    pub model: ClassifierModel<f64>,
    pub labelled: Tensor<f64>,
    pub labels: Vec<usize>,
    pub unlabelled: Tensor<f64>,
    pub pseudo: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Even seeds use a constant unlabelled weight (the fixed-lambda objective),
/// odd seeds a random weight per row; some rows are masked out.
pub fn random_step_case(seed: u64) -> StepCase {
    let mut r = rng(seed);
    let spec = random_spec(&mut r, 7, 2);
    let model = ClassifierModel::new(spec.clone(), &mut r).expect("valid spec");
    let (b, u) = (r.random_range(1..=3), r.random_range(1..=4));
    let classes = spec.classes;
    let labelled = random_images(&mut r, b, spec.height, spec.width);
    let unlabelled = random_images(&mut r, u, spec.height, spec.width);
    let labels = (0..b).map(|_| r.random_range(0..classes)).collect();
    let pseudo = (0..u).map(|_| r.random_range(0..classes)).collect();
    let fixed = r.random_range(0.0..2.0);
    let lambdas: Vec<f64> = (0..u)
        .map(|_| {
            let mask = if r.random_bool(0.75) { 1.0 } else { 0.0 };
            mask * if seed % 2 == 0 { fixed } else { r.random_range(0.0..2.0) }
        })
        .collect();
    let mu = r.random_range(1..=3);
    let weights = step_weights(b, &lambdas, (mu * b).max(u));
    StepCase {
        model,
        labelled,
        labels,
        unlabelled,
        pseudo,
        weights,
    }
}

/// `sum_i w_i (-log softmax(z_i)[y_i])` from forward logits only.
pub fn objective_value(case: &StepCase, model: &ClassifierModel<f64>) -> f64 {
    let targets: Vec<usize> = case.labels.iter().chain(&case.pseudo).copied().collect();
    let mut rows = Vec::new();
    for i in 0..case.labels.len() {
        rows.push(case.labelled.index_outer(i).unwrap());
    }
    for i in 0..case.pseudo.len() {
        rows.push(case.unlabelled.index_outer(i).unwrap());
    }
    let logits = model.logits(&Tensor::stack(&rows).unwrap()).unwrap();
    let c = model.spec().classes;
    logits
        .data()
        .chunks(c)
        .zip(&targets)
        .zip(&case.weights)
        .map(|((z, &y), w)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            w * (lse - z[y])
        })
        .sum()
}

/// Largest per-tensor relative error `|a - n| / max(|a|, |n|, 1e-6)` between
/// tape gradients and central differences with step `h`.
pub fn gradient_check(case: &StepCase, h: f64) -> f64 {
    let mut step = StepGraph::record(&case.model, &case.labelled, &case.labels, Some(&case.unlabelled), &case.pseudo)
        .expect("record step");
    let loss = step.weighted_loss(case.weights.clone()).unwrap();
    let grads = step.tape.backward(loss).unwrap();
    let analytic = case.model.param_gradients(&step.graph, &grads);
    let mut model = case.model.clone();
    let mut worst: f64 = 0.0;
    for (p, a) in analytic.iter().enumerate() {
        let len = a.len();
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params().as_slice()[p].value.data()[j];
            let at = |v: f64, m: &mut ClassifierModel<f64>| {
                m.params_mut().iter_mut().nth(p).unwrap().value.data_mut()[j] = v;
                objective_value(case, m)
            };
            let plus = at(orig + h, &mut model);
            let minus = at(orig - h, &mut model);
            at(orig, &mut model);
            *slot = (plus - minus) / (2.0 * h);
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut a.data().iter().zip(&numeric).map(|(x, y)| x - y));
        let scale = norm(&mut a.data().iter().copied()).max(norm(&mut numeric.iter().copied())).max(1e-6);
        worst = worst.max(diff / scale);
    }
    worst
}

pub const TOY_PROBES: usize = 20;

/// Fraction of the probed unlabelled examples for which the sign of the
/// weight update equals the sign of the negated brute-force influence.
pub fn influence_agreement(seed: u64, mode: HessianMode) -> (usize, usize) {
    let (d, c) = (4, 3);
    let p = ToyProblem::random(seed, d, c, (40, TOY_PROBES, 60), 0.3);
    assert!(p.parameter_count() <= 20);
    let solver = SolverConfig::default();
    let theta = p.fit(&p.lambda, &solver).expect("toy fit");
    let mut model = ClassifierModel::<f64>::zeros(ModelSpec::linear(1, 1, d, c)).unwrap();
    model
        .set_param("head.weight", Tensor::new(vec![d, c], theta[..d * c].to_vec()).unwrap())
        .unwrap();
    model
        .set_param("head.bias", Tensor::new(vec![c], theta[d * c..].to_vec()).unwrap())
        .unwrap();
    let probs = |xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let rows: Vec<Tensor<f64>> = xs.iter().map(|x| Tensor::new(vec![1, 1, d], x.clone()).unwrap()).collect();
        model.probabilities(&Tensor::stack(&rows).unwrap()).unwrap()
    };
    let vx: Vec<Vec<f64>> = p.validation.iter().map(|e| e.x.clone()).collect();
    let mut gv = vec![0.0; p.parameter_count()];
    for (e, q) in p.validation.iter().zip(probs(&vx)) {
        for (g, v) in gv.iter_mut().zip(head_gradient(&e.x, &q, e.label)) {
            *g += v / p.validation.len() as f64;
        }
    }
    let ux: Vec<Vec<f64>> = p.unlabelled.iter().map(|e| e.x.clone()).collect();
    let uprobs = probs(&ux);
    let lx: Vec<Vec<f64>> = p.labelled.iter().map(|e| e.x.clone()).collect();
    let mut features = lx.clone();
    features.extend(ux.iter().cloned());
    let mut rows = probs(&lx);
    rows.extend(uprobs.iter().cloned());
    let mut weights = vec![1.0 / p.labelled.len() as f64; p.labelled.len()];
    weights.extend(p.lambda.iter().map(|l| l / p.unlabelled.len() as f64));
    let hessian = HessianApprox::build(mode, &features, &rows, &weights, p.l2).unwrap();
    let mut agree = 0;
    for (i, (e, q)) in p.unlabelled.iter().zip(&uprobs).enumerate() {
        let g = head_gradient(&e.x, q, e.label);
        let mut lambda = LambdaWeights::<f64>::new(p.unlabelled.len(), 0.5, 0.0, 2.0).unwrap();
        let inc = lambda_update(&mut lambda, 1.0, &gv, &[g], &[i], &hessian).unwrap()[0];
        let reference = brute_force_influence(&p, i, 1e-3, &solver).unwrap();
        if inc.signum() == -reference.signum() {
            agree += 1;
        }
    }
    (agree, p.unlabelled.len())
}

/// Checks Grad-CAM contracts on one random model; returns a description of
/// the first violation.
pub fn grad_cam_contracts(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let spec = random_spec(&mut r, 16, 3);
    let mut model = ClassifierModel::<f64>::new(spec.clone(), &mut r).unwrap();
    let image = random_images(&mut r, 1, spec.height, spec.width).index_outer(0).unwrap();
    let class = r.random_range(0..spec.classes);
    let map = grad_cam(&model, &image, class, "x").map_err(|e| e.to_string())?;
    if map.raw.iter().chain(&map.normalized).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(format!("seed {seed}: negative or non-finite saliency"));
    }
    if map.normalized.iter().any(|v| *v > 1.0) {
        return Err(format!("seed {seed}: normalised saliency above 1"));
    }
    let (mut h, mut w) = (spec.height, spec.width);
    for b in &spec.blocks {
        h = h.div_ceil(b.stride);
        w = w.div_ceil(b.stride);
    }
    if (map.height, map.width) != (h, w) || map.raw.len() != h * w {
        return Err(format!("seed {seed}: map {}x{} but final conv is {h}x{w}", map.height, map.width));
    }
    let shift = r.random_range(-5.0..5.0);
    let bias = model.params().get("head.bias").unwrap().value.map(|b| b + shift);
    model.set_param("head.bias", bias).unwrap();
    let shifted = grad_cam(&model, &image, class, "x").map_err(|e| e.to_string())?;
    let gap = map
        .raw
        .iter()
        .zip(&shifted.raw)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > 1e-12 {
        return Err(format!("seed {seed}: logit shift moved the map by {gap:e}"));
    }
    Ok(())
}

/// A 16x16 texture task small enough for step-level comparisons.
pub fn small_texture_data<T: Scalar>(seed: u64) -> TrainData<T> {
    let texture = TextureConfig {
        size: 16,
        ..Default::default()
    };
    texture_train_data(&texture, 400, 0.1, seed).unwrap()
}

pub fn small_model_spec() -> ModelSpec {
    ModelSpec::with_widths(16, 16, 2, &[4, 8])
}

/// Shared optimisation settings; 40 labelled images at batch 4 give 10
/// steps per epoch.
pub fn small_config(mode: TrainMode, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        batch_size: 4,
        mu: 3,
        tau: 0.6,
        base_lr: 0.05,
        eval_every_epoch: false,
        ..TrainConfig::preset(Preset::FeatureRecognition, mode)
    }
}

/// Runs `steps` steps from the seed's initial model and returns the records.
pub fn run_steps(config: TrainConfig, data: &TrainData<f64>, steps: usize) -> Vec<MetricsRecord> {
    let model = Trainer::init_model(small_model_spec(), config.seed).unwrap();
    let mut t = Trainer::new(config, model, data).unwrap();
    (0..steps).map(|_| t.step().unwrap()).collect()
}

pub fn max_loss_gap(a: &[MetricsRecord], b: &[MetricsRecord]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x.loss_tot - y.loss_tot).abs()).fold(0.0, f64::max)
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
