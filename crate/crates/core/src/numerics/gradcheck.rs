use serde::Serialize;

use super::{eval, eval_with_grad, ParamSet, Tape, Var};
use crate::error::Result;

/// Agreement between reverse-mode gradients and central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    /// `(parameter name, max relative error over its checked entries)`.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Relative error with an absolute floor so that entries whose true gradient
/// is numerically zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradient of `f` with central differences of step `h`.
///
/// At most `max_per_param` entries of each parameter are probed, spread
/// evenly over the tensor.
pub fn check_gradients<F>(
    params: &mut ParamSet,
    f: F,
    h: f64,
    max_per_param: usize,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    eval_with_grad(params, &f)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut per_param = Vec::with_capacity(params.len());
    let mut entries_checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let mut worst: f64 = 0.0;
        for idx in (0..n).step_by(stride) {
            let original = params.iter().nth(pi).unwrap().value.data()[idx];
            set(params, pi, idx, original + h);
            let plus = eval(params, &f)?;
            set(params, pi, idx, original - h);
            let minus = eval(params, &f)?;
            set(params, pi, idx, original);
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grads[idx], numeric));
            entries_checked += 1;
        }
        let name = params.iter().nth(pi).unwrap().name.clone();
        per_param.push((name, worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        max_rel_error,
        entries_checked,
    })
}

fn set(params: &mut ParamSet, pi: usize, idx: usize, v: f64) {
    params.iter_mut().nth(pi).unwrap().value.data_mut()[idx] = v;
}
