//! Dynamic memory weight-loss attention.
//!
//! A block combines plain global self-attention over all tokens with a
//! memory path: each query token is routed to the memory cluster whose core
//! it is most cosine-similar to, and attends over that cluster's slots, which
//! act as both keys and values. The two results are summed and mixed by a
//! pointwise convolution.

use crate::decisions::Decisions;
use crate::error::{MemoryError, Result, TensorError};
use crate::memory::{ClusterAssignment, PrototypeMemoryBank};
use crate::tape::{Tape, Var};

/// Query/key/value projections, each `C×C` with a length-`C` bias.
#[derive(Debug, Clone, Copy)]
pub struct Projections {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
}

/// Weights of one block: the shared projections plus the `1×1×C×C` output
/// mixing kernel and its bias.
#[derive(Debug, Clone, Copy)]
pub struct DmwLaWeights {
    pub proj: Projections,
    pub psi: Var,
    pub psi_b: Var,
}

#[derive(Debug)]
pub struct DmwLaOutput {
    /// `H×W×C` block output.
    pub out: Var,
    /// Global-interaction result, `H×W×C`.
    pub global: Var,
    /// Projected queries, `HW×C`.
    pub queries: Var,
    /// Token routing used by the memory path; `None` when it was disabled.
    pub assignment: Option<ClusterAssignment>,
}

fn hwc(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match tape.value(x).shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(TensorError::dim(format!("expected H×W×C, got {s:?}"))),
    }
}

pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Single-head softmax attention over tokens `T×C`, unscaled:
/// `softmax(Q·Kᵀ)·V`. Returns `(output, queries)`, both `T×C`.
pub fn attend_tokens(tape: &mut Tape, tokens: Var, p: &Projections) -> Result<(Var, Var)> {
    let q = linear(tape, tokens, p.wq, p.bq)?;
    let k = linear(tape, tokens, p.wk, p.bk)?;
    let v = linear(tape, tokens, p.wv, p.bv)?;
    let logits = tape.matmul_nt(q, k)?;
    let attn = tape.softmax_lastdim(logits)?;
    Ok((tape.matmul(attn, v)?, q))
}

/// Global self-attention over the `H·W` tokens of `x`. Returns `(X′, Q)`
/// with `X′: H×W×C` and `Q: HW×C`.
pub fn global_interaction(tape: &mut Tape, x: Var, p: &Projections) -> Result<(Var, Var)> {
    let (h, w, c) = hwc(tape, x)?;
    let tokens = tape.reshape(x, &[h * w, c])?;
    let (out, q) = attend_tokens(tape, tokens, p)?;
    Ok((tape.reshape(out, &[h, w, c])?, q))
}

/// Per-cluster attention of the routed queries over their cluster's memory
/// slots, `softmax(Xⁱ·Eᵢᵀ)·Eᵢ`, scattered back to token order. Slots are
/// constants on the tape.
pub fn intra_cluster_attention(
    tape: &mut Tape,
    assignment: &ClusterAssignment,
    queries: Var,
    bank: &PrototypeMemoryBank,
) -> Result<Var, MemoryError> {
    if !bank.is_initialized() {
        return Err(MemoryError::Uninitialized);
    }
    let (t, c) = match tape.value(queries).shape() {
        &[t, c] => (t, c),
        s => return Err(TensorError::dim(format!("queries must be T×C, got {s:?}")).into()),
    };
    if c != bank.channels() {
        return Err(TensorError::dim(format!("query width {c}, bank width {}", bank.channels())).into());
    }
    if assignment.len() != t || assignment.groups.len() != bank.clusters() {
        return Err(TensorError::dim(format!(
            "assignment covers {} tokens in {} groups; expected {t} tokens, {} clusters",
            assignment.len(),
            assignment.groups.len(),
            bank.clusters()
        ))
        .into());
    }
    let mut parts = Vec::new();
    let mut order = Vec::with_capacity(t);
    for (i, group) in assignment.groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let idx = group
            .iter()
            .flat_map(|&tok| tok * c..(tok + 1) * c)
            .collect();
        let xi = tape.gather(queries, idx, &[group.len(), c])?;
        let ei = tape.constant(bank.prior_tensor(i))?;
        let logits = tape.matmul_nt(xi, ei)?;
        let attn = tape.softmax_lastdim(logits)?;
        parts.push(tape.matmul(attn, ei)?);
        order.extend_from_slice(group);
    }
    let stacked = tape.concat(&parts, &[t, c])?;
    // row r of `stacked` belongs to token order[r]
    let mut pos = vec![0usize; t];
    for (r, &tok) in order.iter().enumerate() {
        pos[tok] = r;
    }
    let idx = pos.iter().flat_map(|&r| r * c..(r + 1) * c).collect();
    Ok(tape.gather(stacked, idx, &[t, c])?)
}

/// `X₂ = ψ(A + X′)`.
///
/// With `bank = None` the memory path is skipped (`A = 0`). Cluster routing
/// goes through `decisions` so it can be frozen.
pub fn dmw_la_forward(
    tape: &mut Tape,
    x: Var,
    w: &DmwLaWeights,
    bank: Option<&PrototypeMemoryBank>,
    decisions: &mut Decisions,
) -> Result<DmwLaOutput, MemoryError> {
    let (h, wd, c) = hwc(tape, x)?;
    let (global, queries) = global_interaction(tape, x, &w.proj)?;
    let (mixed_in, assignment) = match bank {
        Some(bank) => {
            let assignment = route(tape, queries, bank, decisions)?;
            let a = intra_cluster_attention(tape, &assignment, queries, bank)?;
            let a = tape.reshape(a, &[h, wd, c])?;
            (tape.add(a, global)?, Some(assignment))
        }
        None => (global, None),
    };
    let out = tape.conv2d(mixed_in, w.psi, 1, 0)?;
    let out = tape.add_row(out, w.psi_b)?;
    Ok(DmwLaOutput {
        out,
        global,
        queries,
        assignment,
    })
}

fn route(
    tape: &Tape,
    queries: Var,
    bank: &PrototypeMemoryBank,
    decisions: &mut Decisions,
) -> Result<ClusterAssignment, MemoryError> {
    if !bank.is_initialized() {
        return Err(MemoryError::Uninitialized);
    }
    let mut failure = None;
    let labels = decisions.labels(|| match bank.assign_tokens(tape.value(queries)) {
        Ok(a) => Ok(a.labels),
        Err(e) => {
            let msg = e.to_string();
            failure = Some(e);
            Err(TensorError::contract(msg))
        }
    });
    match (labels, failure) {
        (_, Some(e)) => Err(e),
        (Ok(labels), None) => Ok(ClusterAssignment::from_labels(labels, bank.clusters())),
        (Err(e), None) => Err(e.into()),
    }
}
