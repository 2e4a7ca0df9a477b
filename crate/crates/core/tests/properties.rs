//! Property tests for the objective, weighting, evaluation and data-split
//! invariants.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use sylva_core::augment::annotation::Feature;
use sylva_core::augment::FeatureClass;
use sylva_core::data::{make_splits, predict_and_partition, Grade, ManifestRecord, SplitSize, SplitSpec};
use sylva_core::eval::{report_from_logits, topk_accuracy};
use sylva_core::influence::{eta_schedule, lambda_update, HessianApprox, LambdaWeights, ScheduleState};
use sylva_core::nn::{cross_entropy, one_hot, softmax};
use sylva_core::objective::{pseudo_labels, total_loss_fixed, total_loss_weighted, unsupervised_loss_from_probs};

fn prob_rows(rows: usize, classes: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-6.0f64..6.0, classes), rows)
        .prop_map(|zs| zs.iter().map(|z| softmax(z).unwrap()).collect())
}

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..12, 2usize..6).prop_flat_map(|(n, c)| (prob_rows(n, c), prob_rows(n, c)))
}

proptest! {
    #[test]
    fn softmax_in_simplex_and_gibbs(z in prop::collection::vec(-30.0f64..30.0, 2..8), label in 0usize..8) {
        let p = softmax(&z).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let t = one_hot::<f64>(label % z.len(), z.len());
        prop_assert!(cross_entropy(&t, &p).unwrap() >= cross_entropy(&t, &t).unwrap());
    }

    #[test]
    fn mask_iff_confident_and_argmax_lowest_tie((weak, _) in batch(), tau in 0.01f64..=1.0) {
        let pl = pseudo_labels(&weak, tau).unwrap();
        for ((q, &l), &m) in weak.iter().zip(&pl.labels).zip(&pl.mask) {
            let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(l, q.iter().position(|&v| v == max).unwrap());
            prop_assert_eq!(m, max >= tau);
        }
        prop_assert!((0.0..=1.0).contains(&pl.mask_rate()));
    }

    #[test]
    fn unsupervised_loss_non_increasing_in_tau((weak, strong) in batch(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |tau| unsupervised_loss_from_probs(&pseudo_labels(&weak, tau).unwrap(), &strong).unwrap().0;
        prop_assert!(at(hi) <= at(lo) + 1e-15);
    }

    #[test]
    fn constant_weights_match_fixed(per in prop::collection::vec(0.0f64..10.0, 1..64), ls in 0.0f64..5.0, lambda in 0.0f64..2.0) {
        let lu = per.iter().sum::<f64>() / per.len() as f64;
        let w = total_loss_weighted(ls, &per, &vec![lambda; per.len()]).unwrap();
        prop_assert!((w - total_loss_fixed(ls, lu, lambda)).abs() <= 1e-7);
    }

    #[test]
    fn eta_non_increasing_and_bounded(total in 1usize..5000, k in 0usize..5000) {
        let k = k % total;
        let a = eta_schedule(ScheduleState { step: k, total }).unwrap();
        let b = eta_schedule(ScheduleState { step: k + 1, total }).unwrap();
        prop_assert!((0.0..=5.0).contains(&a) && (0.0..=5.0).contains(&b));
        prop_assert!(b <= a);
    }

    #[test]
    fn weights_stay_in_clip_range(
        updates in prop::collection::vec((0usize..8, prop::collection::vec(-3.0f64..3.0, 3), 0.0f64..5.0), 1..40),
        gv in prop::collection::vec(-3.0f64..3.0, 3),
        init in 0.0f64..=2.0,
    ) {
        let mut l = LambdaWeights::<f32>::new(8, init, 0.0, 2.0).unwrap();
        for (i, g, eta) in updates {
            lambda_update(&mut l, eta, &gv, &[g], &[i], &HessianApprox::Identity).unwrap();
            prop_assert!(l.values().iter().all(|v| (0.0..=2.0).contains(&(*v as f64))));
            let (mean, min, max) = l.stats();
            prop_assert!(0.0 <= min && min <= mean && mean <= max && max <= 2.0);
        }
    }

    #[test]
    fn zero_eta_is_identity(g in prop::collection::vec(-3.0f64..3.0, 4), gv in prop::collection::vec(-3.0f64..3.0, 4)) {
        let mut l = LambdaWeights::<f64>::new(3, 0.5, 0.0, 2.0).unwrap();
        let before = l.clone();
        lambda_update(&mut l, 0.0, &gv, &[g], &[1], &HessianApprox::Identity).unwrap();
        prop_assert_eq!(l, before);
    }

    #[test]
    fn topk_monotone_and_groups_help(
        (logits, labels, groups) in (2usize..8, 1usize..30).prop_flat_map(|(c, n)| (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, c), n),
            prop::collection::vec(0..c, n),
            prop::collection::vec(0..c, c),
        ))
    ) {
        let c = logits[0].len();
        let accs: Vec<f64> = (1..=c).map(|k| topk_accuracy(&logits, &labels, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(accs[c - 1], 1.0);
        // Class i joins the group named by its random representative.
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); c];
        for (i, &g) in groups.iter().enumerate() {
            sets[g].push(i);
        }
        sets.retain(|s| !s.is_empty());
        let names: Vec<String> = (0..c).map(|i| format!("c{i}")).collect();
        let r = report_from_logits("test", &logits, &labels, &names, &sets).unwrap();
        prop_assert!(r.group_accuracy >= r.top1);
        prop_assert_eq!(r.group_confusion.iter().flatten().sum::<usize>(), labels.len());
    }

    #[test]
    fn splits_disjoint_exact_and_reproducible(
        labels in prop::collection::vec(0usize..3, 30..300),
        test in 0.01f64..0.3,
        val in 0.01f64..0.3,
        frac in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let spec = SplitSpec {
            test: SplitSize::Fraction(test),
            validation: SplitSize::Fraction(val),
            labelled_fraction: frac,
            balanced_test: false,
            seed,
        };
        let s = make_splits(&labels, &spec).unwrap();
        let n = labels.len();
        let n_test = (test * n as f64).round() as usize;
        let n_val = (val * n as f64).round() as usize;
        prop_assert_eq!(s.test.len(), n_test);
        prop_assert_eq!(s.validation.len(), n_val);
        prop_assert_eq!(s.train.len(), ((frac * n as f64).round() as usize).min(n - n_test - n_val));
        let all: BTreeSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), s.train.len() + s.validation.len() + s.test.len());
        prop_assert!(all.iter().all(|&i| i < n));
        prop_assert_eq!(make_splits(&labels, &spec).unwrap(), s);
    }

    #[test]
    fn partition_conserves_records(
        scores in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>(), any::<bool>()), 1..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for (i, &(_, _, exists, research)) in scores.iter().enumerate() {
            let path = PathBuf::from(format!("{i}.jpg"));
            if exists {
                std::fs::write(dir.path().join(&path), b"x").unwrap();
            }
            records.push(ManifestRecord {
                id: format!("r{i}"),
                path,
                species: "S".into(),
                grade: if research { Grade::Research } else { Grade::NeedId },
                annotations: None,
                observations: None,
            });
        }
        let index = |p: &Path| -> usize { p.file_stem().unwrap().to_str().unwrap().parse().unwrap() };
        let leaves = |p: &Path| -> sylva_core::Result<f64> { Ok(scores[index(p)].0) };
        let bark = |p: &Path| -> sylva_core::Result<f64> { Ok(scores[index(p)].1) };
        let r = predict_and_partition(&records, dir.path(), &[(Feature::Leaves, &leaves), (Feature::Bark, &bark)]).unwrap();
        let mut placed = 0;
        for ds in r.datasets.values() {
            let ids: Vec<&String> = ds.labelled.iter().map(|(id, _, _)| id).chain(ds.unlabelled.iter().map(|e| &e.id)).collect();
            let unique: BTreeSet<&String> = ids.iter().copied().collect();
            prop_assert_eq!(unique.len(), ids.len());
            placed += ids.len();
        }
        let expected: usize = scores
            .iter()
            .filter(|s| s.2)
            .map(|s| usize::from(s.0 >= 0.5) + usize::from(s.1 >= 0.5))
            .sum();
        prop_assert_eq!(placed, expected);
        prop_assert_eq!(r.missing_images, scores.iter().filter(|s| !s.2).count());
        prop_assert_eq!(r.excluded, scores.iter().filter(|s| s.2 && s.0 < 0.5 && s.1 < 0.5).count());
    }
}

#[test]
fn umbrella_mapping_is_total() {
    for class in FeatureClass::ALL {
        let hits = Feature::ALL.iter().filter(|&&f| class.is_feature(f)).count();
        assert!(hits <= 1, "{class:?} belongs to {hits} umbrellas");
        assert_eq!(hits == 0, class == FeatureClass::Other);
    }
}
