//! SL against influence-weighted SSL on the procedural texture task.
//!
//! `cargo run --release --example texture_trend -- [seed] [epochs]`
//!
//! Environment overrides for exploring the task: `LR`, `MU`, `TAU`, `LINIT`,
//! `C_LO`/`C_HI`, `N_LO`/`N_HI`, `P_LO`/`P_HI`, `R_LO`/`R_HI`, `DISTRACT`,
//! `FRAC` and `MODES` (comma-separated).

use std::time::Instant;

use sylva_core::data::synthetic::{texture_model_spec, texture_train_config, texture_train_data, TextureConfig};
use sylva_core::trainer::{TrainMode, Trainer};

fn env_or(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> sylva_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let d = TextureConfig::default();
    let texture = TextureConfig {
        contrast: (env_or("C_LO", d.contrast.0), env_or("C_HI", d.contrast.1)),
        noise: (env_or("N_LO", d.noise.0), env_or("N_HI", d.noise.1)),
        period: (env_or("P_LO", d.period.0), env_or("P_HI", d.period.1)),
        radius: (env_or("R_LO", d.radius.0), env_or("R_HI", d.radius.1)),
        distractor: env_or("DISTRACT", d.distractor),
        ..d
    };
    let data = texture_train_data::<f32>(&texture, 2000, env_or("FRAC", 0.1), seed)?;
    let out = tempfile::tempdir().expect("temp dir");
    let modes: Vec<TrainMode> = std::env::var("MODES")
        .unwrap_or_else(|_| "sl,ssl-influence".into())
        .split(',')
        .map(|m| m.parse())
        .collect::<sylva_core::Result<_>>()?;
    for mode in modes {
        let mut cfg = texture_train_config(mode, seed);
        if let Some(epochs) = args.get(2).and_then(|s| s.parse().ok()) {
            cfg.epochs = epochs;
        }
        cfg.base_lr = env_or("LR", cfg.base_lr);
        cfg.mu = env_or("MU", cfg.mu as f64) as usize;
        cfg.tau = env_or("TAU", cfg.tau);
        cfg.lambda_init = env_or("LINIT", cfg.lambda_init);
        cfg.lambda_fixed = env_or("LINIT", cfg.lambda_fixed);
        let model = Trainer::init_model(texture_model_spec(&texture), seed)?;
        let start = Instant::now();
        let mut t = Trainer::new(cfg, model, &data)?;
        let o = t.run(&out.path().join(mode.name()), None)?;
        let masks: Vec<f64> = o.metrics.iter().filter_map(|m| m.mask_rate).collect();
        let mean_mask = masks.iter().sum::<f64>() / masks.len().max(1) as f64;
        let last = o.metrics.last().expect("at least one step");
        println!(
            "{} seed {seed}: test top-1 {:.4} after {} steps in {:.1}s (mean mask {mean_mask:.3}, lambda {:?})",
            mode.name(),
            o.test.map_or(f64::NAN, |t| t.0),
            o.steps_run,
            start.elapsed().as_secs_f64(),
            last.lambda_mean
        );
    }
    Ok(())
}
