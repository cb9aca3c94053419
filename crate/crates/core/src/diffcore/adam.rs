use crate::diffcore::{ParamSlot, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of updates applied so far.
    pub step_count: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.99,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::config("adam betas must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every trainable slot, then zeroes the
/// gradients. Frozen slots are left untouched. Nothing is modified if any
/// gradient is non-finite.
pub fn adam_step<T: Real>(slots: &mut [&mut ParamSlot<T>], cfg: &mut AdamConfig) -> Result<()> {
    cfg.validate()?;
    for s in slots.iter().filter(|s| s.trainable) {
        if let Some(pos) = s.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in slot {} at element {pos}",
                s.name
            )));
        }
    }

    cfg.step_count += 1;
    let t = cfg.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);

    for s in slots.iter_mut() {
        if !s.trainable {
            continue;
        }
        let ParamSlot {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = &mut **s;
        let it = value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut())
            .zip(adam_m.data_mut().iter_mut().zip(adam_v.data_mut()));
        for ((theta, g), (m, v)) in it {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            *g = T::zero();
        }
    }
    Ok(())
}

/// Rescales all trainable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(slots: &mut [&mut ParamSlot<T>], max_norm: f64) -> f64 {
    let sq: f64 = slots
        .iter()
        .filter(|s| s.trainable)
        .flat_map(|s| s.grad.data().iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::lit(max_norm / norm);
        for s in slots.iter_mut().filter(|s| s.trainable) {
            s.grad.data_mut().iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    norm
}
