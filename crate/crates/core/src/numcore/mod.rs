//! Dense `f64` tensors, a reverse-mode autodiff tape, parameters, a seeded
//! RNG, and a finite-difference gradient checker.

mod params;
mod rng;
mod tape;
mod tensor;

pub use params::{Grads, ParamId, ParamStore, Parameter};
pub use rng::{Rng, RngState};
pub use tape::{leaky_relu, sigmoid, softmax_masked, Tape, Var};
pub use tensor::Tensor;

use crate::Result;

#[cfg(test)]
mod tests;

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over every checked coordinate.
    pub max_rel_error: f64,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub coords_checked: usize,
    /// Coordinates whose perturbation crossed a kink and were not compared.
    pub coords_skipped: usize,
    /// Every compared coordinate.
    pub samples: Vec<GradSample>,
}

#[derive(Clone, Debug)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients of `f` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// Up to `coords_per_param` coordinates of each parameter are sampled with
/// `rng`; the relative error of one coordinate is
/// `|analytic − numeric| / max(1e-8, |numeric|)`. A coordinate is skipped
/// when θ+ε and θ−ε fall on different sides of a relu or clamp kink, since
/// the difference quotient there measures no derivative. `f` must be
/// deterministic: run it in eval mode, or hand it a cloned RNG so dropout
/// masks repeat.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    mut f: F,
    step: f64,
    coords_per_param: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: for<'t> FnMut(&mut Tape<'t>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        tape.backward(root)?
    };

    let mut eval = |store: &ParamStore| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new(store);
        let root = f(&mut tape)?;
        Ok((tape.value(root).item(), tape.kink_pattern()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        coords_checked: 0,
        coords_skipped: 0,
        samples: Vec::new(),
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = grads.get_or_zeros(store, id);
        let mut coords: Vec<usize> = (0..analytic.len()).collect();
        if coords.len() > coords_per_param {
            rng.shuffle(&mut coords);
            coords.truncate(coords_per_param);
        }
        let mut worst = 0.0f64;
        for c in coords {
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + step;
            let (plus, plus_side) = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - step;
            let (minus, minus_side) = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            if plus_side != minus_side {
                report.coords_skipped += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic.data()[c] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
            report.samples.push(GradSample {
                param: store.get(id).name.clone(),
                index: c,
                analytic: analytic.data()[c],
                numeric,
            });
            report.coords_checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((store.get(id).name.clone(), worst));
    }
    Ok(report)
}
