//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Run with `cargo test -p sylva-core --test acceptance`; the texture
//! comparison dominates the runtime (around a quarter of an hour).

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use sylva_core::augment::annotation::Feature;
use sylva_core::data::fixture::annotated_manifest;
use sylva_core::data::synthetic::{texture_model_spec, texture_train_config, texture_train_data, TextureConfig};
use sylva_core::data::{build_feature_dataset, make_splits, SplitSpec};
use sylva_core::influence::{eta_schedule, HessianMode, ScheduleState};
use sylva_core::objective::{pseudo_labels, total_loss_fixed, total_loss_weighted, unsupervised_loss_from_probs};
use sylva_core::trainer::{cosine_lr, TrainMode, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed.as_secs() < limit_secs
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let worst = (0..50)
        .map(|s| common::gradient_check(&common::random_step_case(1000 + s), 1e-5))
        .fold(0.0, f64::max);
    let t = start.elapsed();
    outcome(
        worst < 1e-4 && within(t, 120),
        format!("max relative error {worst:.2e} over 50 models in {:.1}s", t.as_secs_f64()),
    )
}

fn loss_oracles() -> Outcome {
    let pseudo = pseudo_labels(&[vec![0.97, 0.03], vec![0.6, 0.4]], 0.95).unwrap();
    let (lu, _) = unsupervised_loss_from_probs(&pseudo, &[vec![0.8, 0.2], vec![0.5, 0.5]]).unwrap();
    let expected = -(0.8f64.ln()) / 2.0;
    let example_gap = (lu - expected).abs();
    let mut rng = common::rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let per: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let ls = rng.random_range(0.0..3.0);
        let lambda = rng.random_range(0.0..2.0);
        let lu = per.iter().sum::<f64>() / n as f64;
        let weighted = total_loss_weighted(ls, &per, &vec![lambda; n]).unwrap();
        worst = worst.max((weighted - total_loss_fixed(ls, lu, lambda)).abs());
    }
    outcome(
        example_gap < 1e-6 && worst < 1e-7,
        format!("example l_u {lu:.6} (gap {example_gap:.1e}); weighted vs fixed max gap {worst:.1e} over 100"),
    )
}

fn schedule_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for total in [2usize, 10, 100, 1000, 4097] {
        let eta = |k| eta_schedule(ScheduleState { step: k, total }).unwrap();
        worst = worst
            .max((eta(0) - 5.0).abs())
            .max((eta(total) - 0.0).abs())
            .max((cosine_lr(0, total, 0.1).unwrap() - 0.1).abs())
            .max(cosine_lr(total, total, 0.1).unwrap().abs());
        if total % 2 == 0 {
            worst = worst.max((eta(total / 2) - 2.5).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn influence_oracle() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut identity = (0, 0);
    for seed in 0..5 {
        let (a, n) = common::influence_agreement(seed, HessianMode::GaussNewton);
        pass &= a * 10 >= n * 9;
        lines.push(format!("{a}/{n}"));
        let (ia, inn) = common::influence_agreement(seed, HessianMode::Identity);
        identity = (identity.0 + ia, identity.1 + inn);
    }
    let t = start.elapsed();
    outcome(
        pass && within(t, 600),
        format!(
            "Gauss-Newton agreement {} in {:.1}s (identity: {}/{})",
            lines.join(" "),
            t.as_secs_f64(),
            identity.0,
            identity.1
        ),
    )
}

fn trend() -> Outcome {
    let start = Instant::now();
    let texture = TextureConfig::default();
    let mut sl = Vec::new();
    let mut ssl = Vec::new();
    for seed in 0..3 {
        let data = texture_train_data::<f32>(&texture, 2000, 0.1, seed).unwrap();
        let out = tempfile::tempdir().unwrap();
        for (mode, acc) in [(TrainMode::Sl, &mut sl), (TrainMode::SslInfluence, &mut ssl)] {
            let model = Trainer::init_model(texture_model_spec(&texture), seed).unwrap();
            let mut t = Trainer::new(texture_train_config(mode, seed), model, &data).unwrap();
            let o = t.run(&out.path().join(mode.name()), None).unwrap();
            acc.push(100.0 * o.test.expect("test split").0);
        }
    }
    let t = start.elapsed();
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let wins = sl.iter().zip(&ssl).filter(|(a, b)| b > a).count();
    let (m_sl, m_ssl) = (median(&sl), median(&ssl));
    outcome(
        m_ssl >= m_sl - 0.5 && wins >= 2 && within(t, 1800),
        format!(
            "SL {sl:.2?} SSL {ssl:.2?}; medians {m_sl:.2} / {m_ssl:.2}, SSL ahead in {wins}/3, {:.0}s",
            t.as_secs_f64()
        ),
    )
}

fn pipeline_arithmetic() -> Outcome {
    let counts = |f| build_feature_dataset(&annotated_manifest(f, 0), f, false).counts();
    let leaves = counts(Feature::Leaves);
    let bark = counts(Feature::Bark);
    let labels: Vec<usize> = (0..1920).map(|i| i % 2).collect();
    let s = make_splits(&labels, &SplitSpec::feature_recognition(0.1, 0)).unwrap();
    let sizes = (s.test.len(), s.validation.len(), s.train.len());
    outcome(
        leaves == (1066, 854) && bark == (821, 1099) && sizes == (480, 720, 192),
        format!("leaves {leaves:?}, bark {bark:?}, test/val/train {sizes:?}"),
    )
}

fn equivalence_gates() -> Outcome {
    let data = common::small_texture_data(3);
    let sl = common::run_steps(common::small_config(TrainMode::Sl, 5, 3), &data, 50);
    let mut inf = common::small_config(TrainMode::SslInfluence, 5, 3);
    inf.eta_override = Some(0.0);
    inf.lambda_init = 0.0;
    let gap = common::max_loss_gap(&sl, &common::run_steps(inf.clone(), &data, 50));
    let fixed = common::run_steps(common::small_config(TrainMode::SslFixed, 5, 3), &data, 50);
    inf.lambda_init = 1.0;
    let gap_fixed = common::max_loss_gap(&fixed, &common::run_steps(inf, &data, 50));
    outcome(
        gap <= 1e-7 && gap_fixed <= 1e-7,
        format!("50 steps: SL vs influence(eta 0, weights 0) {gap:.1e}; fixed vs influence(eta 0, weights 1) {gap_fixed:.1e}"),
    )
}

fn grad_cam_contracts() -> Outcome {
    let failures: Vec<String> = (0..20).filter_map(|s| common::grad_cam_contracts(500 + s).err()).collect();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "20 models".to_owned()
        } else {
            failures.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let data = common::small_texture_data::<f64>(4);
    let mut config = common::small_config(TrainMode::SslInfluence, 2, 4);
    config.hessian = HessianMode::GaussNewton;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let model = Trainer::init_model(common::small_model_spec(), 4).unwrap();
        Trainer::new(config.clone(), model, &data)
            .unwrap()
            .run(dir.path(), None)
            .unwrap();
        common::dir_bytes(dir.path())
    };
    let (a, b) = (run(), run());
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    outcome(a == b, format!("{} files compared: {}", a.len(), names.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("loss oracles", loss_oracles),
        ("schedule exactness", schedule_exactness),
        ("influence oracle", influence_oracle),
        ("pipeline arithmetic", pipeline_arithmetic),
        ("equivalence gates", equivalence_gates),
        ("grad-cam contracts", grad_cam_contracts),
        ("determinism", determinism),
        ("sl/ssl trend", trend),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
