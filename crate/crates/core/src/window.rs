//! Non-overlapping `P×P` window partitioning of `H×W×C` feature maps.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};

fn hwc(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match tape.value(x).shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(TensorError::dim(format!("expected H×W×C, got {s:?}"))),
    }
}

/// Splits `x` into `(H/P)·(W/P)` windows of shape `P×P×C`, in row-major
/// window order.
pub fn window_partition(tape: &mut Tape, x: Var, p: usize) -> Result<Vec<Var>> {
    let (h, w, c) = hwc(tape, x)?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(TensorError::dim(format!(
            "window size {p} does not divide {h}×{w}"
        )));
    }
    let mut out = Vec::with_capacity((h / p) * (w / p));
    for wy in 0..h / p {
        for wx in 0..w / p {
            let mut idx = Vec::with_capacity(p * p * c);
            for dy in 0..p {
                let row = (wy * p + dy) * w;
                for dx in 0..p {
                    let base = (row + wx * p + dx) * c;
                    idx.extend(base..base + c);
                }
            }
            out.push(tape.gather(x, idx, &[p, p, c])?);
        }
    }
    Ok(out)
}

/// Inverse of [`window_partition`].
pub fn window_merge(tape: &mut Tape, windows: &[Var], h: usize, w: usize, p: usize) -> Result<Var> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(TensorError::dim(format!(
            "window size {p} does not divide {h}×{w}"
        )));
    }
    let (nwy, nwx) = (h / p, w / p);
    if windows.len() != nwy * nwx {
        return Err(TensorError::dim(format!(
            "expected {} windows for {h}×{w} with P={p}, got {}",
            nwy * nwx,
            windows.len()
        )));
    }
    let c = match tape.value(windows[0]).shape() {
        &[a, b, c] if a == p && b == p => c,
        s => return Err(TensorError::dim(format!("window shape {s:?}, expected {p}×{p}×C"))),
    };
    for &win in windows {
        if tape.value(win).shape() != [p, p, c] {
            return Err(TensorError::dim(format!(
                "window shape {:?}, expected {p}×{p}×{c}",
                tape.value(win).shape()
            )));
        }
    }
    let cat = tape.concat(windows, &[windows.len() * p * p, c])?;
    let mut idx = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let win = (y / p) * nwx + x / p;
            let base = (win * p * p + (y % p) * p + x % p) * c;
            idx.extend(base..base + c);
        }
    }
    tape.gather(cat, idx, &[h, w, c])
}
