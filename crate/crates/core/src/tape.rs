//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to replay the adjoint. [`Tape::backward`] walks the nodes in reverse
//! once, accumulating gradients additively across fan-out.

use crate::error::{Result, TensorError};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { a: Var, scale: f64 },
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    MaskedSoftmax(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    PairAbsDiff(Var),
    Conv2d { x: Var, k: Var, geom: ConvGeom, cols: Vec<f64> },
    Resize { x: Var, plan: ResizePlan },
    Gather { x: Var, idx: Vec<usize> },
    Concat(Vec<Var>),
    ConcatLast(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    MeanCols(Var),
    MaxRows { a: Var, arg: Vec<usize> },
    MaxCols { a: Var, arg: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug, Clone)]
struct ResizePlan {
    h: usize,
    w: usize,
    c: usize,
    ys: Vec<(usize, usize, f64)>,
    xs: Vec<(usize, usize, f64)>,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    let c = *t.shape().last().expect("non-empty shape");
    (t.len() / c, c)
}

fn mat2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(TensorError::dim(format!("{what}: expected rank-2, got {s:?}"))),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(format!(
            "{what}: shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn linear_weights(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let w = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, w)
        })
        .collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf_impl(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A tracked leaf; receives a gradient on [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf_impl(value, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf_impl(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    // ----- linear algebra -------------------------------------------------

    /// `a·b` for `a: m×n`, `b: n×p`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `a·bᵀ` for `a: m×n`, `b: p×n`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, true)
    }

    fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = mat2(self.val(a), "matmul lhs")?;
        let (br, bc) = mat2(self.val(b), "matmul rhs")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(TensorError::dim(format!(
                "matmul inner extents {k} and {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.val(a).data(),
            ar,
            ac,
            ta,
            self.val(b).data(),
            br,
            bc,
            tb,
            &mut out,
            false,
        );
        let t = Tensor::new(&[m, n], out)?;
        self.push(t, Op::MatMul { a, b, ta, tb }, &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = mat2(self.val(a), "transpose")?;
        let src = self.val(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(&[c, r], out)?;
        self.push(t, Op::Transpose(a), &[a], "transpose")
    }

    // ----- elementwise ----------------------------------------------------

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(self.val(a), self.val(b), name)?;
        let av = self.val(a);
        let data = av
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let av = self.val(a);
        let data = av.data().iter().map(|&x| scale * x + shift).collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, Op::Affine { a, scale }, &[a], "affine")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.val(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, op, &[a], name)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(
            a,
            "gelu",
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    // ----- broadcasting over the last axis --------------------------------

    fn row_check(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (n, c) = rows_cols(self.val(a));
        if self.val(b).len() != c {
            return Err(TensorError::dim(format!(
                "{what}: row vector of {} against width {c}",
                self.val(b).len()
            )));
        }
        Ok((n, c))
    }

    /// Adds a length-`c` vector to every row of `a` (`c` = last extent).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, c) = self.row_check(a, b, "add_row")?;
        let bv = self.val(b).data();
        let av = self.val(a);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % c])
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, Op::AddRow(a, b), &[a, b], "add_row")
    }

    /// Multiplies every row of `a` elementwise by a length-`c` vector.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, c) = self.row_check(a, b, "mul_row")?;
        let bv = self.val(b).data();
        let av = self.val(a);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[i % c])
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, Op::MulRow(a, b), &[a, b], "mul_row")
    }

    /// Multiplies row `i` of `a` by scalar `b[i]`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, c) = rows_cols(self.val(a));
        if self.val(b).len() != n {
            return Err(TensorError::dim(format!(
                "mul_col: column vector of {} against {n} rows",
                self.val(b).len()
            )));
        }
        let bv = self.val(b).data();
        let av = self.val(a);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv[i / c])
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        self.push(t, Op::MulCol(a, b), &[a, b], "mul_col")
    }

    // ----- softmax family -------------------------------------------------

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let av = self.val(a);
        let (_, c) = rows_cols(av);
        let mut out = av.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = 1.0 / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        self.push(t, Op::Softmax(a), &[a], "softmax")
    }

    pub fn log_softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let av = self.val(a);
        let (_, c) = rows_cols(av);
        let mut out = av.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        self.push(t, Op::LogSoftmax(a), &[a], "log_softmax")
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    ///
    /// Masked-out entries are 0; a row with no selected entries is all zeros.
    pub fn masked_softmax_lastdim(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.val(a);
        if mask.len() != av.len() {
            return Err(TensorError::dim(format!(
                "mask of {} entries for tensor of {}",
                mask.len(),
                av.len()
            )));
        }
        let (_, c) = rows_cols(av);
        let mut out = av.data().to_vec();
        for (row, mrow) in out.chunks_exact_mut(c).zip(mask.chunks_exact(c)) {
            let m = row
                .iter()
                .zip(mrow)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let mut s = 0.0;
            for (v, &k) in row.iter_mut().zip(mrow) {
                *v = if k { (*v - m).exp() } else { 0.0 };
                s += *v;
            }
            let inv = 1.0 / s;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        self.push(t, Op::MaskedSoftmax(a), &[a], "masked_softmax")
    }

    /// `out[i][j] = |s_i − s_j|` for a vector `s` of length `n`.
    pub fn pairwise_abs_diff(&mut self, s: Var) -> Result<Var> {
        let sv = self.val(s).data();
        let n = sv.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (sv[i] - sv[j]).abs();
            }
        }
        let t = Tensor::new(&[n, n], out)?;
        self.push(t, Op::PairAbsDiff(s), &[s], "pairwise_abs_diff")
    }

    // ----- spatial ---------------------------------------------------------

    /// Cross-correlation of `x: H×W×Cin` with `kernel: kh×kw×Cin×Cout`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (h, w, cin) = match self.val(x).shape() {
            &[h, w, c] => (h, w, c),
            s => return Err(TensorError::dim(format!("conv2d input must be H×W×C, got {s:?}"))),
        };
        let (kh, kw, kc, cout) = match self.val(kernel).shape() {
            &[a, b, c, d] => (a, b, c, d),
            s => return Err(TensorError::dim(format!("conv2d kernel must be rank 4, got {s:?}"))),
        };
        if kc != cin {
            return Err(TensorError::dim(format!(
                "conv2d kernel expects {kc} input channels, input has {cin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::contract(format!("conv2d kernel {kh}×{kw} must be odd")));
        }
        if stride == 0 {
            return Err(TensorError::contract("conv2d stride must be positive"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(TensorError::dim(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            ho,
            wo,
        };
        let patch = kh * kw * cin;
        let xs = self.val(x).data();
        let cols = if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
            Vec::new()
        } else {
            let mut cols = vec![0.0; ho * wo * patch];
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = (oy * wo + ox) * patch;
                    for dy in 0..kh {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = (iy as usize * w + ix as usize) * cin;
                            let dst = base + (dy * kw + dx) * cin;
                            cols[dst..dst + cin].copy_from_slice(&xs[src..src + cin]);
                        }
                    }
                }
            }
            cols
        };
        let mut out = vec![0.0; ho * wo * cout];
        let lhs: &[f64] = if cols.is_empty() { xs } else { &cols };
        gemm(
            lhs,
            ho * wo,
            patch,
            false,
            self.val(kernel).data(),
            patch,
            cout,
            false,
            &mut out,
            false,
        );
        let t = Tensor::new(&[ho, wo, cout], out)?;
        self.push(
            t,
            Op::Conv2d {
                x,
                k: kernel,
                geom,
                cols,
            },
            &[x, kernel],
            "conv2d",
        )
    }

    /// Bilinear resampling of `H×W×C` with half-pixel centers
    /// (align-corners = false).
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w, c) = match self.val(x).shape() {
            &[h, w, c] => (h, w, c),
            s => return Err(TensorError::dim(format!("resize input must be H×W×C, got {s:?}"))),
        };
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::contract("resize target must be at least 1×1"));
        }
        let plan = ResizePlan {
            h,
            w,
            c,
            ys: linear_weights(out_h, h),
            xs: linear_weights(out_w, w),
        };
        let src = self.val(x).data();
        let out = if out_h == h && out_w == w {
            src.to_vec()
        } else {
            let mut out = vec![0.0; out_h * out_w * c];
            for (oy, &(y0, y1, wy)) in plan.ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in plan.xs.iter().enumerate() {
                    let o = (oy * out_w + ox) * c;
                    let p00 = (y0 * w + x0) * c;
                    let p01 = (y0 * w + x1) * c;
                    let p10 = (y1 * w + x0) * c;
                    let p11 = (y1 * w + x1) * c;
                    for ch in 0..c {
                        let top = (1.0 - wx) * src[p00 + ch] + wx * src[p01 + ch];
                        let bot = (1.0 - wx) * src[p10 + ch] + wx * src[p11 + ch];
                        out[o + ch] = (1.0 - wy) * top + wy * bot;
                    }
                }
            }
            out
        };
        let t = Tensor::new(&[out_h, out_w, c], out)?;
        self.push(t, Op::Resize { x, plan }, &[x], "bilinear_resize")
    }

    // ----- structural ------------------------------------------------------

    /// `out.flat[i] = x.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xs = self.val(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= xs.len()) {
            return Err(TensorError::dim(format!(
                "gather index {bad} out of range {}",
                xs.len()
            )));
        }
        let data = idx.iter().map(|&i| xs[i]).collect();
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Gather { x, idx }, &[x], "gather")
    }

    /// Flat concatenation of `parts`, reshaped to `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Result<Var> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.val(p).data());
        }
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Concat(parts.to_vec()), parts, "concat")
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::contract("concat_lastdim of nothing"))?;
        let lead = self.val(*first).shape()[..self.val(*first).rank() - 1].to_vec();
        let n: usize = lead.iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.val(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(TensorError::dim(format!(
                    "concat_lastdim leading extents {lead:?} vs {s:?}"
                )));
            }
            total += s[s.len() - 1];
        }
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for &p in parts {
            let (_, c) = rows_cols(self.val(p));
            for (r, row) in self.val(p).data().chunks_exact(c).enumerate() {
                data[r * total + off..r * total + off + c].copy_from_slice(row);
            }
            off += c;
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(&shape, data)?;
        self.push(t, Op::ConcatLast(parts.to_vec()), parts, "concat_lastdim")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(a).reshaped(shape)?;
        self.push(t, Op::Reshape(a), &[a], "reshape")
    }

    // ----- reductions ------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a), &[a], "mean")
    }

    /// Sum over rows: `n×c → c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.val(a));
        let mut out = vec![0.0; c];
        for row in self.val(a).data().chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let t = Tensor::new(&[c], out)?;
        self.push(t, Op::SumRows(a), &[a], "sum_rows")
    }

    /// Mean of each row: `n×c → n`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let (n, c) = rows_cols(self.val(a));
        let out = self
            .val(a)
            .data()
            .chunks_exact(c)
            .map(|r| r.iter().sum::<f64>() / c as f64)
            .collect();
        let t = Tensor::new(&[n], out)?;
        self.push(t, Op::MeanCols(a), &[a], "mean_cols")
    }

    /// Max over rows: `n×c → c`. Ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.val(a));
        let d = self.val(a).data();
        let mut arg = vec![0usize; c];
        let mut out = d[..c].to_vec();
        for (r, row) in d.chunks_exact(c).enumerate().skip(1) {
            for j in 0..c {
                if row[j] > out[j] {
                    out[j] = row[j];
                    arg[j] = r;
                }
            }
        }
        let t = Tensor::new(&[c], out)?;
        self.push(t, Op::MaxRows { a, arg }, &[a], "max_rows")
    }

    /// Max of each row: `n×c → n`. Ties resolve to the first column.
    pub fn max_cols(&mut self, a: Var) -> Result<Var> {
        let (n, c) = rows_cols(self.val(a));
        let mut arg = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for row in self.val(a).data().chunks_exact(c) {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            arg.push(best);
            out.push(row[best]);
        }
        let t = Tensor::new(&[n], out)?;
        self.push(t, Op::MaxCols { a, arg }, &[a], "max_cols")
    }

    // ----- reverse pass ----------------------------------------------------

    /// Propagates d(loss)/d(·) to every tracked leaf, adding into any
    /// gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                let n = &mut self.nodes[i];
                match &mut n.grad {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => n.grad = Some(Tensor::new(n.value.shape(), g)?),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let slot = |grads: &mut [Option<Vec<f64>>], v: Var| -> bool {
            if !nodes[v.0].requires_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; nodes[v.0].value.len()]);
            }
            true
        };
        macro_rules! acc {
            ($v:expr) => {
                grads[$v.0].as_mut().unwrap()
            };
        }
        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            &Op::MatMul { a, b, ta, tb } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let (ar, ac) = (av.shape()[0], av.shape()[1]);
                let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                let (m, n) = (out.shape()[0], out.shape()[1]);
                // C = op(A)·op(B)
                if slot(grads, a) {
                    // dA (stored layout): ta ? op(B)·Gᵀ : G·op(B)ᵀ
                    if ta {
                        gemm(bv.data(), br, bc, tb, g, m, n, true, acc!(a), true);
                    } else {
                        gemm(g, m, n, false, bv.data(), br, bc, !tb, acc!(a), true);
                    }
                }
                if slot(grads, b) {
                    // dB (stored layout): tb ? Gᵀ·op(A) : op(A)ᵀ·G
                    if tb {
                        gemm(g, m, n, true, av.data(), ar, ac, ta, acc!(b), true);
                    } else {
                        gemm(av.data(), ar, ac, !ta, g, m, n, false, acc!(b), true);
                    }
                }
            }
            &Op::Transpose(a) => {
                if slot(grads, a) {
                    let (r, c) = (out.shape()[0], out.shape()[1]);
                    let ga = acc!(a);
                    for p in 0..r {
                        for q in 0..c {
                            ga[q * r + p] += g[p * c + q];
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if slot(grads, v) {
                        for (x, y) in acc!(v).iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            &Op::Sub(a, b) => {
                if slot(grads, a) {
                    for (x, y) in acc!(a).iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if slot(grads, b) {
                    for (x, y) in acc!(b).iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if slot(grads, a) {
                    for ((x, gy), bb) in acc!(a).iter_mut().zip(g).zip(bv) {
                        *x += gy * bb;
                    }
                }
                if slot(grads, b) {
                    for ((x, gy), aa) in acc!(b).iter_mut().zip(g).zip(av) {
                        *x += gy * aa;
                    }
                }
            }
            &Op::Div(a, b) => {
                let bv = nodes[b.0].value.data();
                let ov = out.data();
                if slot(grads, a) {
                    for ((x, gy), bb) in acc!(a).iter_mut().zip(g).zip(bv) {
                        *x += gy / bb;
                    }
                }
                if slot(grads, b) {
                    for (((x, gy), bb), o) in acc!(b).iter_mut().zip(g).zip(bv).zip(ov) {
                        *x -= gy * o / bb;
                    }
                }
            }
            &Op::Affine { a, scale } => {
                if slot(grads, a) {
                    for (x, y) in acc!(a).iter_mut().zip(g) {
                        *x += scale * y;
                    }
                }
            }
            &Op::AddRow(a, b) => {
                if slot(grads, a) {
                    for (x, y) in acc!(a).iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if slot(grads, b) {
                    let c = nodes[b.0].value.len();
                    let gb = acc!(b);
                    for row in g.chunks_exact(c) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
            }
            &Op::MulRow(a, b) => {
                let c = nodes[b.0].value.len();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if slot(grads, a) {
                    for (k, (x, y)) in acc!(a).iter_mut().zip(g).enumerate() {
                        *x += y * bv[k % c];
                    }
                }
                if slot(grads, b) {
                    let gb = acc!(b);
                    for (k, (y, aa)) in g.iter().zip(av).enumerate() {
                        gb[k % c] += y * aa;
                    }
                }
            }
            &Op::MulCol(a, b) => {
                let c = rows_cols(&nodes[a.0].value).1;
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if slot(grads, a) {
                    for (k, (x, y)) in acc!(a).iter_mut().zip(g).enumerate() {
                        *x += y * bv[k / c];
                    }
                }
                if slot(grads, b) {
                    let gb = acc!(b);
                    for (k, (y, aa)) in g.iter().zip(av).enumerate() {
                        gb[k / c] += y * aa;
                    }
                }
            }
            &Op::Softmax(a) | &Op::MaskedSoftmax(a) => {
                if slot(grads, a) {
                    let c = rows_cols(out).1;
                    let ga = acc!(a);
                    for ((gr, yr), dst) in g
                        .chunks_exact(c)
                        .zip(out.data().chunks_exact(c))
                        .zip(ga.chunks_exact_mut(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for ((d, gy), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *d += y * (gy - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                if slot(grads, a) {
                    let c = rows_cols(out).1;
                    let ga = acc!(a);
                    for ((gr, yr), dst) in g
                        .chunks_exact(c)
                        .zip(out.data().chunks_exact(c))
                        .zip(ga.chunks_exact_mut(c))
                    {
                        let s: f64 = gr.iter().sum();
                        for ((d, gy), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *d += gy - y.exp() * s;
                        }
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if slot(grads, a) {
                    for ((x, gy), y) in acc!(a).iter_mut().zip(g).zip(out.data()) {
                        *x += gy * y * (1.0 - y);
                    }
                }
            }
            &Op::Gelu(a) => {
                if slot(grads, a) {
                    let av = nodes[a.0].value.data();
                    for ((x, gy), &v) in acc!(a).iter_mut().zip(g).zip(av) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t)
                            + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *x += gy * d;
                    }
                }
            }
            &Op::Relu(a) => {
                if slot(grads, a) {
                    let av = nodes[a.0].value.data();
                    for ((x, gy), &v) in acc!(a).iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *x += gy;
                        }
                    }
                }
            }
            &Op::PairAbsDiff(s) => {
                if slot(grads, s) {
                    let sv = nodes[s.0].value.data();
                    let n = sv.len();
                    let gs = acc!(s);
                    for p in 0..n {
                        let mut acc = 0.0;
                        for q in 0..n {
                            let d = sv[p] - sv[q];
                            let sign = if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            acc += (g[p * n + q] + g[q * n + p]) * sign;
                        }
                        gs[p] += acc;
                    }
                }
            }
            Op::Conv2d { x, k, geom, cols } => {
                let (x, k, geo) = (*x, *k, *geom);
                let patch = geo.kh * geo.kw * geo.cin;
                let npix = geo.ho * geo.wo;
                let pointwise = cols.is_empty();
                if slot(grads, k) {
                    let lhs: &[f64] = if pointwise {
                        nodes[x.0].value.data()
                    } else {
                        cols
                    };
                    gemm(lhs, npix, patch, true, g, npix, geo.cout, false, acc!(k), true);
                }
                if slot(grads, x) {
                    let kv = nodes[k.0].value.data();
                    if pointwise {
                        gemm(g, npix, geo.cout, false, kv, patch, geo.cout, true, acc!(x), true);
                    } else {
                        let mut dcols = vec![0.0; npix * patch];
                        gemm(g, npix, geo.cout, false, kv, patch, geo.cout, true, &mut dcols, false);
                        let gx = acc!(x);
                        for oy in 0..geo.ho {
                            for ox in 0..geo.wo {
                                let base = (oy * geo.wo + ox) * patch;
                                for dy in 0..geo.kh {
                                    let iy = (oy * geo.stride + dy) as isize - geo.pad as isize;
                                    if iy < 0 || iy >= geo.h as isize {
                                        continue;
                                    }
                                    for dx in 0..geo.kw {
                                        let ix =
                                            (ox * geo.stride + dx) as isize - geo.pad as isize;
                                        if ix < 0 || ix >= geo.w as isize {
                                            continue;
                                        }
                                        let dst = (iy as usize * geo.w + ix as usize) * geo.cin;
                                        let src = base + (dy * geo.kw + dx) * geo.cin;
                                        for c in 0..geo.cin {
                                            gx[dst + c] += dcols[src + c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Resize { x, plan } => {
                let x = *x;
                if slot(grads, x) {
                    let gx = acc!(x);
                    let (w, c) = (plan.w, plan.c);
                    let out_w = plan.xs.len();
                    if plan.ys.len() == plan.h && out_w == w {
                        for (d, y) in gx.iter_mut().zip(g) {
                            *d += y;
                        }
                    } else {
                        for (oy, &(y0, y1, wy)) in plan.ys.iter().enumerate() {
                            for (ox, &(x0, x1, wx)) in plan.xs.iter().enumerate() {
                                let o = (oy * out_w + ox) * c;
                                let w00 = (1.0 - wy) * (1.0 - wx);
                                let w01 = (1.0 - wy) * wx;
                                let w10 = wy * (1.0 - wx);
                                let w11 = wy * wx;
                                let p00 = (y0 * w + x0) * c;
                                let p01 = (y0 * w + x1) * c;
                                let p10 = (y1 * w + x0) * c;
                                let p11 = (y1 * w + x1) * c;
                                for ch in 0..c {
                                    let gv = g[o + ch];
                                    gx[p00 + ch] += w00 * gv;
                                    gx[p01 + ch] += w01 * gv;
                                    gx[p10 + ch] += w10 * gv;
                                    gx[p11 + ch] += w11 * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Gather { x, idx } => {
                let x = *x;
                if slot(grads, x) {
                    let gx = acc!(x);
                    for (&src, y) in idx.iter().zip(g) {
                        gx[src] += y;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if slot(grads, p) {
                        for (x, y) in acc!(p).iter_mut().zip(&g[off..off + n]) {
                            *x += y;
                        }
                    }
                    off += n;
                }
            }
            Op::ConcatLast(parts) => {
                let total = rows_cols(out).1;
                let mut off = 0;
                for &p in parts {
                    let c = rows_cols(&nodes[p.0].value).1;
                    if slot(grads, p) {
                        let gp = acc!(p);
                        for (r, dst) in gp.chunks_exact_mut(c).enumerate() {
                            for (d, y) in dst.iter_mut().zip(&g[r * total + off..r * total + off + c]) {
                                *d += y;
                            }
                        }
                    }
                    off += c;
                }
            }
            &Op::Reshape(a) => {
                if slot(grads, a) {
                    for (x, y) in acc!(a).iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            &Op::SumAll(a) => {
                if slot(grads, a) {
                    for x in acc!(a).iter_mut() {
                        *x += g[0];
                    }
                }
            }
            &Op::MeanAll(a) => {
                if slot(grads, a) {
                    let s = g[0] / nodes[a.0].value.len() as f64;
                    for x in acc!(a).iter_mut() {
                        *x += s;
                    }
                }
            }
            &Op::SumRows(a) => {
                if slot(grads, a) {
                    let c = g.len();
                    for row in acc!(a).chunks_exact_mut(c) {
                        for (x, y) in row.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            &Op::MeanCols(a) => {
                if slot(grads, a) {
                    let c = rows_cols(&nodes[a.0].value).1;
                    for (row, y) in acc!(a).chunks_exact_mut(c).zip(g) {
                        let s = y / c as f64;
                        for x in row.iter_mut() {
                            *x += s;
                        }
                    }
                }
            }
            Op::MaxRows { a, arg } => {
                let a = *a;
                if slot(grads, a) {
                    let c = g.len();
                    let ga = acc!(a);
                    for (j, &r) in arg.iter().enumerate() {
                        ga[r * c + j] += g[j];
                    }
                }
            }
            Op::MaxCols { a, arg } => {
                let a = *a;
                if slot(grads, a) {
                    let c = rows_cols(&nodes[a.0].value).1;
                    let ga = acc!(a);
                    for (r, &j) in arg.iter().enumerate() {
                        ga[r * c + j] += g[r];
                    }
                }
            }
        }
    }
}
