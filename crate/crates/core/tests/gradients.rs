//! Autodiff against central differences on random tiny models and batches.

mod common;

use proptest::prelude::*;
use sylva_core::nn::{ClassifierModel, ModelSpec, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_objective_matches_finite_differences(seed in any::<u64>()) {
        let err = common::gradient_check(&common::random_step_case(seed), 1e-5);
        prop_assert!(err < 1e-4, "relative error {err:e}");
    }

    #[test]
    fn per_example_head_slices_sum_to_batch_gradient(seed in any::<u64>()) {
        let mut case = common::random_step_case(seed);
        let n = case.labels.len();
        case.pseudo.clear();
        case.weights.truncate(n);
        let c = case.model.spec().classes;
        let mut targets = vec![0.0; n * c];
        for (i, &l) in case.labels.iter().enumerate() {
            targets[i * c + l] = 1.0;
        }
        let targets = Tensor::new(vec![n, c], targets).unwrap();
        let slices = case
            .model
            .per_example_grads(&case.labelled, &targets, &case.weights, sylva_core::nn::GradientLayer::Final)
            .unwrap();
        prop_assert_eq!(slices.len(), n);
        let mut step = sylva_core::objective::StepGraph::record(&case.model, &case.labelled, &case.labels, None, &[]).unwrap();
        let loss = step.weighted_loss(case.weights.clone()).unwrap();
        let grads = step.tape.backward(loss).unwrap();
        let head = case.model.final_layer_gradient(&step.graph, &grads);
        prop_assert_eq!(head.len(), slices[0].len());
        for (j, h) in head.iter().enumerate() {
            let sum: f64 = slices.iter().map(|s| s[j]).sum();
            prop_assert!((sum - h).abs() < 1e-10);
        }
    }
}

#[test]
fn linear_model_gradient() {
    let mut r = common::rng(3);
    let spec = ModelSpec::linear(3, 2, 3, 4);
    let case = common::StepCase {
        model: ClassifierModel::new(spec, &mut r).unwrap(),
        labelled: common::random_images(&mut r, 2, 3, 2),
        labels: vec![0, 3],
        unlabelled: common::random_images(&mut r, 2, 3, 2),
        pseudo: vec![1, 1],
        weights: vec![0.5, 0.5, 0.25, 0.0],
    };
    assert!(common::gradient_check(&case, 1e-6) < 1e-6);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let case = common::random_step_case(11);
    let run = || {
        let mut step = sylva_core::objective::StepGraph::record(&case.model, &case.labelled, &case.labels, Some(&case.unlabelled), &case.pseudo).unwrap();
        let loss = step.weighted_loss(case.weights.clone()).unwrap();
        let grads = step.tape.backward(loss).unwrap();
        case.model.param_gradients(&step.graph, &grads)
    };
    assert_eq!(run(), run());
}
