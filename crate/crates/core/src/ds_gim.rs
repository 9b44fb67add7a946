//! Double-similarity global internal enhancement.
//!
//! Windows are scaled by a decay that depends on how internally similar they
//! are, then every token is re-expressed as an affinity-weighted mix of all
//! tokens. The affinity is split in two by the distance between per-token
//! mean affinities, and each half gets its own row softmax.

use crate::decisions::Decisions;
use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::{cosine_unchecked, Tensor};
use crate::window::{window_merge, window_partition};

/// Decay coefficients `γ_n = exp(−(0.25 − 2^(−2.5 − 5n/l)))` for
/// `n = 0..count`, with `l = count`.
pub fn decay_schedule(count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(TensorError::contract("decay schedule needs at least one entry"));
    }
    let l = count as f64;
    Ok((0..count)
        .map(|n| (-(0.25 - (-2.5 - 5.0 * n as f64 / l).exp2())).exp())
        .collect())
}

/// Mean cosine similarity over distinct token pairs of a `T×C` window.
/// A single-token window counts as perfectly self-similar.
pub fn window_similarity(tokens: &Tensor) -> f64 {
    let n = tokens.shape()[0];
    if n < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += cosine_unchecked(tokens.row(i), tokens.row(j));
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Rank of each window (0 = most similar), descending by similarity with
/// ties to the lower window index.
pub fn rank_windows(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (r, &w) in order.iter().enumerate() {
        ranks[w] = r;
    }
    ranks
}

/// Scales every `P×P` window of `x` by the decay for its similarity rank.
pub fn window_rank_and_decay(
    tape: &mut Tape,
    x: Var,
    p: usize,
    decisions: &mut Decisions,
) -> Result<Var> {
    let (h, w, c) = match tape.value(x).shape() {
        &[h, w, c] => (h, w, c),
        s => return Err(TensorError::dim(format!("expected H×W×C, got {s:?}"))),
    };
    let windows = window_partition(tape, x, p)?;
    let ranks = decisions.ranks(|| {
        let scores: Vec<f64> = windows
            .iter()
            .map(|&win| {
                let t = tape.value(win).reshaped(&[p * p, c]).expect("window extent");
                window_similarity(&t)
            })
            .collect();
        Ok(rank_windows(&scores))
    })?;
    if ranks.len() != windows.len() {
        return Err(TensorError::contract(format!(
            "{} ranks for {} windows",
            ranks.len(),
            windows.len()
        )));
    }
    let gamma = decay_schedule(windows.len())?;
    let scaled = windows
        .iter()
        .zip(&ranks)
        .map(|(&win, &r)| tape.scale(win, gamma[r]))
        .collect::<Result<Vec<_>>>()?;
    window_merge(tape, &scaled, h, w, p)
}

/// Median of the values, averaging the two middle entries for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DsGimWeights {
    /// `C×d`.
    pub wa: Var,
    /// `C×d`.
    pub wb: Var,
}

#[derive(Debug)]
pub struct DsGimOutput {
    /// `H×W×C`.
    pub out: Var,
    /// Decayed input `X′`, `H×W×C`.
    pub decayed: Var,
    /// Affinity `X_I`, `T×T`.
    pub affinity: Var,
    /// `|S − Sᵀ|`, `T×T`.
    pub euc: Var,
    /// `true` where an entry belongs to the lower (≤ median) part.
    pub lower_mask: Vec<bool>,
    /// Row mixing matrix applied to `X′`, `T×T`.
    pub mix: Var,
}

pub fn ds_gim_forward(
    tape: &mut Tape,
    x: Var,
    w: &DsGimWeights,
    p: usize,
    decisions: &mut Decisions,
) -> Result<DsGimOutput> {
    let (h, wd, c) = match tape.value(x).shape() {
        &[h, w, c] => (h, w, c),
        s => return Err(TensorError::dim(format!("expected H×W×C, got {s:?}"))),
    };
    let t = h * wd;
    let decayed = window_rank_and_decay(tape, x, p, decisions)?;
    let tokens = tape.reshape(decayed, &[t, c])?;
    let a = tape.matmul(tokens, w.wa)?;
    let b = tape.matmul(tokens, w.wb)?;
    let affinity = tape.matmul_nt(a, b)?;
    let row_mean = tape.mean_cols(affinity)?;
    let euc = tape.pairwise_abs_diff(row_mean)?;
    let lower_mask = decisions.mask(|| {
        let e = tape.value(euc).data();
        let m = median(e);
        Ok(e.iter().map(|&v| v <= m).collect())
    })?;
    if lower_mask.len() != t * t {
        return Err(TensorError::contract(format!(
            "mask covers {} entries, expected {}",
            lower_mask.len(),
            t * t
        )));
    }
    let upper_mask: Vec<bool> = lower_mask.iter().map(|m| !m).collect();
    let sm_lower = tape.masked_softmax_lastdim(euc, &lower_mask)?;
    let sm_upper = tape.masked_softmax_lastdim(euc, &upper_mask)?;
    let lower = tape.mul(sm_lower, affinity)?;
    let upper = tape.mul(sm_upper, affinity)?;
    let mix = tape.add(lower, upper)?;
    let out = tape.matmul(mix, tokens)?;
    let out = tape.reshape(out, &[h, wd, c])?;
    Ok(DsGimOutput {
        out,
        decayed,
        affinity,
        euc,
        lower_mask,
        mix,
    })
}
