use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Gradients below this magnitude are compared in absolute rather than relative terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`; zero when both are zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares reverse-mode gradients of `f` against central differences for every
/// coordinate of every parameter. Returns the largest relative error.
///
/// `store` is perturbed in place and restored before returning.
pub fn finite_diff_check<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2], got {eps}");
    let analytic = {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        tape.backward(loss)?.params().to_vec()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.item())
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let grad = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone());
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
