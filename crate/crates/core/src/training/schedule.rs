/// Noam schedule: linear warm-up to a peak at `warmup_steps`, then
/// inverse-square-root decay.
///
/// `lr = initial_lr · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`
pub fn noam_lr(step: u64, initial_lr: f64, d_model: usize, warmup_steps: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup_steps.max(1) as f64;
    initial_lr * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}
