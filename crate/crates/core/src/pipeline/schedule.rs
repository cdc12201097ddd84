use crate::error::{Error, Result};

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Config(alloc::format!(
            "step {step} is past the end of a {total_steps}-step schedule"
        )));
    }
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + libm::cos(phase)))
}
