//! Learning-rate schedule: linear warmup to the base rate over the first
//! ceil(warmup_fraction·total) steps, then cosine decay to exactly zero at
//! the final step.

use super::TrainConfig;

pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    assert!(total_steps >= 1, "total_steps must be >= 1");
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    if step >= total_steps {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
