//! The prototype memory bank.
//!
//! Each of the `k` clusters holds `M` memory slots of width `C` (the
//! similarity memory priors) and a core vector (the similarity core prior)
//! used to route query tokens. Slots are replaced once per epoch by the
//! weight-loss dynamic rule: the `K` least salient slots give way to the `K`
//! most salient fresh tokens, where `K` follows the epoch-to-epoch change in
//! training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MemoryError, TensorError};
use crate::kmeans::{kmeans, sq_dist};
use crate::tensor::{cosine_unchecked, Tensor};

/// Decay factors of the budget rule.
pub const ALPHA: f64 = 0.5;
pub const BETA: f64 = 0.5;

const FILL_JITTER: f64 = 1e-3;

const MAGIC: &[u8; 4] = b"SMPB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMemoryBank {
    k: usize,
    m: usize,
    c: usize,
    /// `k×M×C`, row-major.
    priors: Vec<f64>,
    /// `k×C`.
    cores: Vec<f64>,
    alpha: f64,
    beta: f64,
    theta: f64,
    loss_prev: Option<f64>,
    loss_curr: Option<f64>,
    k_current: usize,
    initialized: bool,
}

/// Per-token cluster labels and the token groups they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Self {
        let mut groups = vec![Vec::new(); k];
        for (t, &l) in labels.iter().enumerate() {
            groups[l].push(t);
        }
        Self { labels, groups }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Audit record of one slot-replacement step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub k_used: usize,
    /// Previous minus current epoch loss, when both are known.
    pub delta_loss: Option<f64>,
    /// Slots overwritten in each cluster, in replacement order.
    pub replaced_slots: Vec<Vec<usize>>,
    /// Token rows copied into those slots, aligned with `replaced_slots`.
    pub source_tokens: Vec<Vec<usize>>,
    /// Clusters that received no tokens and were left untouched.
    pub skipped: Vec<usize>,
}

/// Softmax over rows of their mean absolute value.
pub fn salience_weights(rows: &[f64], width: usize) -> Vec<f64> {
    let scores: Vec<f64> = rows
        .chunks_exact(width)
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>() / width as f64)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices sorted by weight; ties keep index order.
fn order_by_weight(w: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = w[a].partial_cmp(&w[b]).expect("finite weights");
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

impl PrototypeMemoryBank {
    /// An empty bank; it must be filled with [`initialize`](Self::initialize)
    /// before use.
    pub fn new(k: usize, m: usize, c: usize) -> Self {
        Self {
            k,
            m,
            c,
            priors: vec![0.0; k * m * c],
            cores: vec![0.0; k * c],
            alpha: ALPHA,
            beta: BETA,
            theta: m as f64,
            loss_prev: None,
            loss_curr: None,
            k_current: m / 2,
            initialized: false,
        }
    }

    /// An initialized bank holding the given `k·M·C` priors, with cores at
    /// their slot means.
    pub fn from_priors(k: usize, m: usize, c: usize, priors: Vec<f64>) -> Result<Self, MemoryError> {
        if priors.len() != k * m * c || k * m * c == 0 {
            return Err(TensorError::dim(format!(
                "{} prior values for k={k} M={m} C={c}",
                priors.len()
            ))
            .into());
        }
        if priors.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("from_priors").into());
        }
        let mut bank = Self::new(k, m, c);
        bank.priors = priors;
        bank.initialized = true;
        bank.refresh_cores();
        Ok(bank)
    }

    /// Clusters `tokens` (`T×C`) and builds an initialized bank from them.
    pub fn init_kmeans(tokens: &Tensor, k: usize, m: usize, seed: u64) -> Result<Self, MemoryError> {
        let c = *tokens.shape().last().expect("non-empty shape");
        let mut bank = Self::new(k, m, c);
        bank.initialize(tokens, seed)?;
        Ok(bank)
    }

    pub fn initialize(&mut self, tokens: &Tensor, seed: u64) -> Result<(), MemoryError> {
        if self.initialized {
            return Err(MemoryError::AlreadyInitialized);
        }
        let (t, c) = match tokens.shape() {
            &[t, c] => (t, c),
            s => return Err(TensorError::dim(format!("tokens must be T×C, got {s:?}")).into()),
        };
        if c != self.c {
            return Err(TensorError::dim(format!("token width {c}, bank width {}", self.c)).into());
        }
        if t < self.k {
            return Err(MemoryError::InsufficientData(format!(
                "{t} tokens for {} clusters",
                self.k
            )));
        }
        let km = kmeans(tokens.data(), c, self.k, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let jitter = Normal::new(0.0, FILL_JITTER).expect("valid sigma");
        let (m, k) = (self.m, self.k);
        for i in 0..k {
            let centroid = km.centroid(i).to_vec();
            let mut members = km.members(i);
            members.sort_by(|&a, &b| {
                sq_dist(tokens.row(a), &centroid)
                    .partial_cmp(&sq_dist(tokens.row(b), &centroid))
                    .expect("finite distances")
            });
            let dst = &mut self.priors[i * m * c..(i + 1) * m * c];
            for (s, slot) in dst.chunks_exact_mut(c).enumerate() {
                if s < members.len() {
                    slot.copy_from_slice(tokens.row(members[s]));
                } else {
                    let src = if members.is_empty() {
                        &centroid[..]
                    } else {
                        tokens.row(members[s % members.len()])
                    };
                    for (d, v) in slot.iter_mut().zip(src) {
                        *d = v + jitter.sample(&mut rng);
                    }
                }
            }
            self.cores[i * c..(i + 1) * c].copy_from_slice(&centroid);
        }
        self.k_current = m / 2;
        self.initialized = true;
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        self.k
    }

    pub fn memory_size(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn k_current(&self) -> usize {
        self.k_current
    }

    pub fn losses(&self) -> (Option<f64>, Option<f64>) {
        (self.loss_prev, self.loss_curr)
    }

    /// `M×C` slots of cluster `i`.
    pub fn prior(&self, i: usize) -> &[f64] {
        let s = self.m * self.c;
        &self.priors[i * s..(i + 1) * s]
    }

    pub fn prior_tensor(&self, i: usize) -> Tensor {
        Tensor::new(&[self.m, self.c], self.prior(i).to_vec()).expect("bank extents")
    }

    pub fn core(&self, i: usize) -> &[f64] {
        &self.cores[i * self.c..(i + 1) * self.c]
    }

    /// Inclusive clamp range `[⌈M/4⌉, ⌊3M/4⌋]` for the update budget.
    pub fn budget_range(&self) -> (usize, usize) {
        (self.m.div_ceil(4), 3 * self.m / 4)
    }

    /// Routes each query row to the cluster whose core is most
    /// cosine-similar; ties go to the lower cluster index.
    pub fn assign_tokens(&self, queries: &Tensor) -> Result<ClusterAssignment, MemoryError> {
        if !self.initialized {
            return Err(MemoryError::Uninitialized);
        }
        let (_, c) = match queries.shape() {
            &[t, c] => (t, c),
            s => return Err(TensorError::dim(format!("queries must be T×C, got {s:?}")).into()),
        };
        if c != self.c {
            return Err(TensorError::dim(format!("query width {c}, bank width {}", self.c)).into());
        }
        let labels = queries
            .rows()
            .map(|q| {
                let mut best = (0, f64::NEG_INFINITY);
                for i in 0..self.k {
                    let s = cosine_unchecked(q, self.core(i));
                    if s > best.1 {
                        best = (i, s);
                    }
                }
                best.0
            })
            .collect();
        Ok(ClusterAssignment::from_labels(labels, self.k))
    }

    /// `round((−α·(prev − curr) + β)·θ)`, clamped to
    /// [`budget_range`](Self::budget_range). Halves round up.
    pub fn compute_update_budget(&self, loss_prev: f64, loss_curr: f64) -> Result<usize, MemoryError> {
        if !loss_prev.is_finite() || !loss_curr.is_finite() {
            return Err(TensorError::contract(format!(
                "non-finite losses {loss_prev}, {loss_curr}"
            ))
            .into());
        }
        let raw = (-self.alpha * (loss_prev - loss_curr) + self.beta) * self.theta;
        let rounded = (raw + 0.5).floor();
        let (lo, hi) = self.budget_range();
        let k = rounded.max(lo as f64).min(hi as f64);
        Ok(k.max(0.0) as usize)
    }

    /// Shifts the loss history by one epoch and recomputes the active budget
    /// once two losses are known. Returns the budget for this epoch.
    pub fn record_epoch_loss(&mut self, loss: f64) -> Result<usize, MemoryError> {
        self.loss_prev = self.loss_curr;
        self.loss_curr = Some(loss);
        if let Some(prev) = self.loss_prev {
            self.k_current = self.compute_update_budget(prev, loss)?;
        }
        Ok(self.k_current)
    }

    /// Overwrites, per cluster, the `min(K, N)` least salient slots with the
    /// `min(K, N)` most salient rows of that cluster's fresh tokens, then
    /// resets every core to its slot mean.
    ///
    /// `groups[i]` holds the `N_i×C` tokens matched to cluster `i`, row-major.
    pub fn apply_wld_update(&mut self, groups: &[Vec<f64>], k: usize) -> Result<UpdateReport, MemoryError> {
        if !self.initialized {
            return Err(MemoryError::Uninitialized);
        }
        let (lo, hi) = self.budget_range();
        if k < lo || k > hi {
            return Err(MemoryError::BudgetOutOfRange { k, lo, hi });
        }
        if groups.len() != self.k {
            return Err(TensorError::dim(format!(
                "{} token groups for {} clusters",
                groups.len(),
                self.k
            ))
            .into());
        }
        let c = self.c;
        if let Some(g) = groups.iter().find(|g| g.len() % c != 0) {
            return Err(TensorError::dim(format!("token group of {} values, width {c}", g.len())).into());
        }
        let mut report = UpdateReport {
            k_used: k,
            delta_loss: self.loss_prev.zip(self.loss_curr).map(|(p, q)| p - q),
            replaced_slots: vec![Vec::new(); self.k],
            source_tokens: vec![Vec::new(); self.k],
            skipped: Vec::new(),
        };
        let m = self.m;
        for (i, group) in groups.iter().enumerate() {
            if group.is_empty() {
                report.skipped.push(i);
                continue;
            }
            let n = group.len() / c;
            let r = k.min(n);
            let slots = &mut self.priors[i * m * c..(i + 1) * m * c];
            let slot_order = order_by_weight(&salience_weights(slots, c), false);
            let token_order = order_by_weight(&salience_weights(group, c), true);
            for (&s, &t) in slot_order[..r].iter().zip(&token_order[..r]) {
                slots[s * c..(s + 1) * c].copy_from_slice(&group[t * c..(t + 1) * c]);
            }
            report.replaced_slots[i] = slot_order[..r].to_vec();
            report.source_tokens[i] = token_order[..r].to_vec();
        }
        self.refresh_cores();
        Ok(report)
    }

    fn refresh_cores(&mut self) {
        let (m, c) = (self.m, self.c);
        for i in 0..self.k {
            let mut mean = vec![0.0; c];
            for slot in self.priors[i * m * c..(i + 1) * m * c].chunks_exact(c) {
                for (a, v) in mean.iter_mut().zip(slot) {
                    *a += v;
                }
            }
            for (dst, v) in self.cores[i * c..(i + 1) * c].iter_mut().zip(mean) {
                *dst = v / m as f64;
            }
        }
    }

    /// Replaces all priors with zeros (and cores accordingly).
    pub fn zero_priors(&mut self) {
        self.priors.fill(0.0);
        self.cores.fill(0.0);
    }

    /// Reorders clusters so that new cluster `j` is old cluster `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let (m, c) = (self.m, self.c);
        for (j, &i) in perm.iter().enumerate() {
            out.priors[j * m * c..(j + 1) * m * c].copy_from_slice(self.prior(i));
            out.cores[j * c..(j + 1) * c].copy_from_slice(self.core(i));
        }
        out
    }

    // ----- persistence -----------------------------------------------------

    /// Layout (little-endian): magic `SMPB`, u32 version, u32 k, u32 M,
    /// u32 C, u8 initialized, u32 K_current, f64 α, f64 β, f64 θ,
    /// u8+f64 previous loss, u8+f64 current loss, then `k·M·C` prior values
    /// and `k·C` core values.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.priors.len() + self.cores.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.k, self.m, self.c] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(self.initialized as u8);
        out.extend_from_slice(&(self.k_current as u32).to_le_bytes());
        for v in [self.alpha, self.beta, self.theta] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in [self.loss_prev, self.loss_curr] {
            out.push(l.is_some() as u8);
            out.extend_from_slice(&l.unwrap_or(0.0).to_le_bytes());
        }
        for v in self.priors.iter().chain(&self.cores) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, MemoryError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(MemoryError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(MemoryError::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let k = r.u32()? as usize;
        let m = r.u32()? as usize;
        let c = r.u32()? as usize;
        let initialized = r.u8()? != 0;
        let k_current = r.u32()? as usize;
        let alpha = r.f64()?;
        let beta = r.f64()?;
        let theta = r.f64()?;
        let mut losses = [None, None];
        for l in &mut losses {
            let present = r.u8()? != 0;
            let v = r.f64()?;
            *l = present.then_some(v);
        }
        let expected = k
            .checked_mul(m)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_add(k * c))
            .ok_or_else(|| MemoryError::Format("extent overflow".into()))?;
        if r.remaining() != expected * 8 {
            return Err(MemoryError::Format(format!(
                "payload holds {} bytes, extents k={k} M={m} C={c} need {}",
                r.remaining(),
                expected * 8
            )));
        }
        let mut values = Vec::with_capacity(expected);
        for _ in 0..expected {
            values.push(r.f64()?);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::Format("non-finite prior value".into()));
        }
        let cores = values.split_off(k * m * c);
        Ok(Self {
            k,
            m,
            c,
            priors: values,
            cores,
            alpha,
            beta,
            theta,
            loss_prev: losses[0],
            loss_curr: losses[1],
            k_current,
            initialized,
        })
    }

    /// Deserializes and checks the extents against the running configuration.
    pub fn deserialize_expecting(bytes: &[u8], k: usize, m: usize, c: usize) -> Result<Self, MemoryError> {
        let bank = Self::deserialize(bytes)?;
        if (bank.k, bank.m, bank.c) != (k, m, c) {
            return Err(MemoryError::Format(format!(
                "extent mismatch: stored k={} M={} C={}, expected k={k} M={m} C={c}",
                bank.k, bank.m, bank.c
            )));
        }
        Ok(bank)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MemoryError> {
        if self.pos + n > self.bytes.len() {
            return Err(MemoryError::Format(format!(
                "truncated payload at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, MemoryError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, MemoryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MemoryError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
