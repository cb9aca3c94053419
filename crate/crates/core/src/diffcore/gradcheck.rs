use crate::diffcore::Parameters;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero in both routes do not divide by zero.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Slot and flat element index where the maximum occurred.
    pub slot: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalars compared.
    pub checked: usize,
}

/// Compares the analytic gradient of every trainable scalar with the central
/// difference `(L(θ+h) − L(θ−h)) / 2h`.
///
/// `eval` must compute the loss and accumulate gradients into the model's
/// slots; gradients are zeroed before each call. The forward has to be
/// deterministic, which is verified by evaluating the unperturbed model twice.
pub fn finite_diff_check<M, F>(model: &mut M, mut eval: F, h: f64) -> Result<GradCheckReport>
where
    M: Parameters<f64>,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    let base = eval(model)?;
    let analytic: Vec<Vec<f64>> = model.slots().iter().map(|s| s.grad.data().to_vec()).collect();
    model.zero_grad();
    let again = eval(model)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Numeric(format!(
            "non-deterministic forward: {base} vs {again} on identical parameters"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        slot: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let n_slots = model.slots().len();
    for s in 0..n_slots {
        if !model.slots()[s].trainable {
            continue;
        }
        let len = model.slots()[s].value.len();
        for i in 0..len {
            let orig = model.slots()[s].value.data()[i];
            let mut loss_at = |model: &mut M, v: f64| -> Result<f64> {
                model.slots_mut()[s].value.data_mut()[i] = v;
                model.zero_grad();
                eval(model)
            };
            let plus = loss_at(model, orig + h)?;
            let minus = loss_at(model, orig - h)?;
            model.slots_mut()[s].value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[s][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.slot.is_empty() {
                report.max_rel_error = rel;
                report.slot = model.slots()[s].name.clone();
                report.index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}
