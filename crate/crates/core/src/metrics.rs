//! Overlap and boundary-distance metrics for label maps.

use crate::error::{Result, TensorError};

fn check_extents(pred: &[usize], truth: &[usize], h: usize, w: usize) -> Result<()> {
    if pred.len() != truth.len() || pred.len() != h * w {
        return Err(TensorError::dim(format!(
            "masks of {} and {} pixels for a {h}×{w} grid",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn of(pred: &[usize], truth: &[usize], class: usize) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        c
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`, or 1 when the class is absent from both.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn dsc(pred: &[usize], truth: &[usize], class: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(TensorError::dim(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(Counts::of(pred, truth, class).dsc())
}

/// Pixels of `class` with at least one in-image 4-neighbour of another class.
pub fn boundary(mask: &[usize], h: usize, w: usize, class: usize) -> Vec<(usize, usize)> {
    let at = |y: usize, x: usize| mask[y * w + x];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if at(y, x) != class {
                continue;
            }
            let edge = (y > 0 && at(y - 1, x) != class)
                || (y + 1 < h && at(y + 1, x) != class)
                || (x > 0 && at(y, x - 1) != class)
                || (x + 1 < w && at(y, x + 1) != class);
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// Nearest-rank 95th percentile of directed boundary distances from `a` to
/// `b`, via an exact distance transform of `b` (squared integer distances).
fn directed_p95(a: &[(usize, usize)], b: &[(usize, usize)], h: usize, w: usize) -> f64 {
    let field = squared_distance_field(b, h, w);
    let mut d: Vec<u64> = a.iter().map(|&(y, x)| field[y * w + x]).collect();
    d.sort_unstable();
    let rank = (95 * d.len()).div_ceil(100);
    (d[rank - 1] as f64).sqrt()
}

/// Squared euclidean distance from every pixel to the nearest seed, by the
/// separable lower-envelope transform.
fn squared_distance_field(seeds: &[(usize, usize)], h: usize, w: usize) -> Vec<u64> {
    const INF: u64 = u64::MAX / 4;
    // column pass: vertical distance to the nearest seed in the same column
    let mut col = vec![INF; h * w];
    for &(y, x) in seeds {
        col[y * w + x] = 0;
    }
    for x in 0..w {
        for y in 1..h {
            let prev = col[(y - 1) * w + x];
            if prev < INF && col[y * w + x] > 0 {
                col[y * w + x] = col[y * w + x].min(prev + 1);
            }
        }
        for y in (0..h.saturating_sub(1)).rev() {
            let next = col[(y + 1) * w + x];
            if next < INF {
                col[y * w + x] = col[y * w + x].min(next + 1);
            }
        }
    }
    // row pass: min over columns of dx² + dy²
    let mut out = vec![INF; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = INF;
            for sx in 0..w {
                let dy = col[y * w + sx];
                if dy == INF {
                    continue;
                }
                let dx = x.abs_diff(sx) as u64;
                best = best.min(dx * dx + dy * dy);
            }
            out[y * w + x] = best;
        }
    }
    out
}

/// Symmetric 95th-percentile boundary distance in pixels; `None` when either
/// mask has no boundary for `class`.
pub fn hd95(pred: &[usize], truth: &[usize], h: usize, w: usize, class: usize) -> Result<Option<f64>> {
    check_extents(pred, truth, h, w)?;
    let a = boundary(pred, h, w, class);
    let b = boundary(truth, h, w, class);
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    Ok(Some(directed_p95(&a, &b, h, w).max(directed_p95(&b, &a, h, w))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub counts: Counts,
    pub dsc: f64,
    /// Mean over images where the distance is defined.
    pub hd95: Option<f64>,
}

/// Per-class scores over a set of images. DSC uses counts pooled over all
/// images; HD95 is averaged over the images where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMetrics {
    pub classes: Vec<ClassMetrics>,
}

impl SegMetrics {
    pub fn compute(pairs: &[(&[usize], &[usize])], h: usize, w: usize, k: usize) -> Result<Self> {
        let mut counts = vec![Counts::default(); k];
        let mut hd_sum = vec![0.0; k];
        let mut hd_n = vec![0usize; k];
        for &(pred, truth) in pairs {
            check_extents(pred, truth, h, w)?;
            if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= k) {
                return Err(TensorError::contract(format!("label {bad} outside 0..{k}")));
            }
            for class in 0..k {
                counts[class].add(Counts::of(pred, truth, class));
                if let Some(d) = hd95(pred, truth, h, w, class)? {
                    hd_sum[class] += d;
                    hd_n[class] += 1;
                }
            }
        }
        let classes = (0..k)
            .map(|c| ClassMetrics {
                counts: counts[c],
                dsc: counts[c].dsc(),
                hd95: (hd_n[c] > 0).then(|| hd_sum[c] / hd_n[c] as f64),
            })
            .collect();
        Ok(Self { classes })
    }

    /// Mean DSC over foreground classes (all but class 0).
    pub fn mean_dsc(&self) -> f64 {
        let fg = &self.classes[1..];
        fg.iter().map(|c| c.dsc).sum::<f64>() / fg.len() as f64
    }

    /// Mean HD95 over foreground classes where it is defined.
    pub fn mean_hd95(&self) -> Option<f64> {
        let v: Vec<f64> = self.classes[1..].iter().filter_map(|c| c.hd95).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}
