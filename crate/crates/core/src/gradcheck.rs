//! Central-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Below this magnitude (both analytic and numeric) entries are compared by
/// absolute difference instead of relative difference.
pub const ABS_FALLBACK: f64 = 1e-6;

/// Max relative error between the gradient of scalar `f` at `x` from
/// [`Tape::backward`] and central differences with step `h`.
///
/// Each entry uses `|a − n| / max(|a|, |n|, 1e-8)`, falling back to `|a − n|`
/// when both magnitudes are under [`ABS_FALLBACK`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, h, &all)
}

/// As [`finite_diff_check`], restricted to the listed flat indices.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor, h: f64, indices: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone())?;
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(p.clone())?;
        let out = f(&mut t, v)?;
        t.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(entry_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

fn entry_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FALLBACK {
        (a - n).abs()
    } else {
        (a - n).abs() / scale.max(1e-8)
    }
}
