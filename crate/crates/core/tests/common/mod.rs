//! Helpers and independent reference implementations shared by the
//! integration tests. Oracles here work on plain slices and never call into
//! the library's own kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simmp_core::{Result, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Concatenates tensors into one flat vector, so several inputs can be
/// checked by a single-input finite-difference run.
pub fn pack(parts: &[&Tensor]) -> Tensor {
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    let n = data.len();
    Tensor::new(&[n], data).unwrap()
}

/// Inverse of [`pack`] on the tape.
pub fn unpack(tape: &mut Tape, flat: Var, shapes: &[Vec<usize>]) -> Result<Vec<Var>> {
    let mut start = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(tape.gather(flat, (start..start + n).collect(), s)?);
        start += n;
    }
    Ok(out)
}

/// Weighted sum with fixed pseudo-random coefficients, a generic scalar probe.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let mut r = rng(seed ^ 0xabcdef);
    let w = tape.constant(Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0)))?;
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = (dot(a, a) * dot(b, b)).sqrt();
    dot(a, b) / n.max(1e-8)
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Row-major `rows×cols` matrix as nested vectors.
pub fn to_rows(t: &[f64], cols: usize) -> Vec<Vec<f64>> {
    t.chunks(cols).map(|r| r.to_vec()).collect()
}

/// `x·W + b` on nested rows.
pub fn linear(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let cout = b.len();
    let cin = w.len() / cout;
    x.iter()
        .map(|row| {
            (0..cout)
                .map(|j| b[j] + (0..cin).map(|i| row[i] * w[i * cout + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Unscaled single-head attention, one token at a time.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| dot(qi, kj)).collect();
            let a = softmax(&logits);
            let c = v[0].len();
            (0..c)
                .map(|ch| a.iter().zip(v).map(|(w, vj)| w * vj[ch]).sum())
                .collect()
        })
        .collect()
}

/// Independent W-LD step on one cluster: returns (replaced slots, source
/// tokens, new slots). Ranks are found by counting how many entries beat
/// each one rather than by sorting.
pub fn wld_oracle(slots: &[Vec<f64>], tokens: &[Vec<f64>], k: usize) -> (Vec<usize>, Vec<usize>, Vec<Vec<f64>>) {
    let salience = |rows: &[Vec<f64>]| {
        let m: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64)
            .collect();
        softmax(&m)
    };
    let ws = salience(slots);
    let wt = salience(tokens);
    // ascending by weight, ties by index
    let slot_rank = |i: usize| {
        (0..ws.len())
            .filter(|&j| ws[j] < ws[i] || (ws[j] == ws[i] && j < i))
            .count()
    };
    // descending by weight, ties by index
    let tok_rank = |i: usize| {
        (0..wt.len())
            .filter(|&j| wt[j] > wt[i] || (wt[j] == wt[i] && j < i))
            .count()
    };
    let n = k.min(tokens.len());
    let mut replaced = vec![0; n];
    let mut sources = vec![0; n];
    for i in 0..slots.len() {
        let r = slot_rank(i);
        if r < n {
            replaced[r] = i;
        }
    }
    for i in 0..tokens.len() {
        let r = tok_rank(i);
        if r < n {
            sources[r] = i;
        }
    }
    let mut out = slots.to_vec();
    for (s, t) in replaced.iter().zip(&sources) {
        out[*s] = tokens[*t].clone();
    }
    (replaced, sources, out)
}

/// Closed-form update budget with round-half-up and clamp.
pub fn budget_oracle(prev: f64, curr: f64, m: usize) -> usize {
    let raw = (-0.5 * (prev - curr) + 0.5) * m as f64;
    let k = (raw + 0.5).floor();
    let lo = ((m + 3) / 4) as f64;
    let hi = (3 * m / 4) as f64;
    k.max(lo).min(hi) as usize
}

/// Boundary pixels of `class`: foreground with a background 4-neighbour
/// (outside the image does not count as background).
pub fn boundary(mask: &[usize], h: usize, w: usize, class: usize) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] != class {
                continue;
            }
            let nbrs = [(y as i64 - 1, x as i64), (y as i64 + 1, x as i64), (y as i64, x as i64 - 1), (y as i64, x as i64 + 1)];
            let edge = nbrs.iter().any(|&(ny, nx)| {
                ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && mask[ny as usize * w + nx as usize] != class
            });
            if edge {
                out.push((y as i64, x as i64));
            }
        }
    }
    out
}

/// All-pairs HD95 with nearest-rank percentiles; `None` if either boundary
/// is empty.
pub fn hd95_oracle(pred: &[usize], truth: &[usize], h: usize, w: usize, class: usize) -> Option<f64> {
    let a = boundary(pred, h, w, class);
    let b = boundary(truth, h, w, class);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let mut d: Vec<f64> = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(f64::total_cmp);
        // ceil(0.95·n) in exact integer arithmetic
        let rank = (95 * d.len()).div_ceil(100);
        d[rank - 1]
    };
    Some(directed(&a, &b).max(directed(&b, &a)))
}

/// An `H×W×C` image stored as plain row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Img {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl Img {
    pub fn of(t: &Tensor) -> Self {
        let s = t.shape();
        Img { h: s[0], w: s[1], c: s[2], d: t.data().to_vec() }
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.d[(y * self.w + x) * self.c + ch]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Img { d: self.d.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn zip(&self, o: &Img, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.h, self.w, self.c), (o.h, o.w, o.c));
        Img { d: self.d.iter().zip(&o.d).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }

    pub fn tokens(&self) -> Vec<Vec<f64>> {
        to_rows(&self.d, self.c)
    }

    pub fn from_tokens(h: usize, w: usize, rows: &[Vec<f64>]) -> Self {
        let c = rows[0].len();
        Img { h, w, c, d: rows.iter().flatten().copied().collect() }
    }
}

/// Direct convolution with kernel `kh×kw×Cin×Cout` and bias.
pub fn conv_oracle(x: &Img, k: &[f64], kh: usize, kw: usize, bias: &[f64], stride: usize, pad: usize) -> Img {
    let cout = bias.len();
    let ho = (x.h + 2 * pad - kh) / stride + 1;
    let wo = (x.w + 2 * pad - kw) / stride + 1;
    let mut d = Vec::with_capacity(ho * wo * cout);
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..cout {
                let mut s = bias[co];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy as usize >= x.h || ix as usize >= x.w {
                            continue;
                        }
                        for ci in 0..x.c {
                            s += x.at(iy as usize, ix as usize, ci) * k[((dy * kw + dx) * x.c + ci) * cout + co];
                        }
                    }
                }
                d.push(s);
            }
        }
    }
    Img { h: ho, w: wo, c: cout, d }
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_oracle(x: &Img, oh: usize, ow: usize) -> Img {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut d = Vec::with_capacity(oh * ow * x.c);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, x.h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, x.w, ow);
            for ch in 0..x.c {
                let top = (1.0 - fx) * x.at(y0, x0, ch) + fx * x.at(y0, x1, ch);
                let bot = (1.0 - fx) * x.at(y1, x0, ch) + fx * x.at(y1, x1, ch);
                d.push((1.0 - fy) * top + fy * bot);
            }
        }
    }
    Img { h: oh, w: ow, c: x.c, d }
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
pub mod suites;
