//! The dual-encoder segmentation network.
//!
//! Encoder 1 stacks DMW-LA blocks (with DS-GIM interleaved in stage 3),
//! encoder 2 is a plain windowed-attention backbone. Their stage outputs are
//! summed, then a three-stage DMW-LA decoder climbs back up with
//! channel/spatial-attention skips, and a pointwise head produces class
//! logits at the input resolution.

use crate::config::NetworkConfig;
use crate::decisions::Decisions;
use crate::dmw_la::{attend_tokens, dmw_la_forward, global_interaction, DmwLaWeights, Projections};
use crate::ds_gim::{ds_gim_forward, DsGimWeights};
use crate::error::{MemoryError, Result, TensorError};
use crate::memory::PrototypeMemoryBank;
use crate::params::{Binder, Init, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::window::{window_merge, window_partition};

/// Reduction ratio of the channel-attention MLP.
pub const CA_REDUCTION: usize = 4;
/// Side of the spatial-attention kernel.
pub const SA_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    DmwLa,
    DsGim,
}

/// Block kinds of encoder-1 stage `stage` (0-based).
pub fn stage_blocks(cfg: &NetworkConfig, stage: usize) -> Vec<BlockKind> {
    (0..cfg.enc1_depths[stage])
        .map(|j| {
            if stage == 2 && j % 2 == 1 {
                BlockKind::DsGim
            } else {
                BlockKind::DmwLa
            }
        })
        .collect()
}

/// Channel width of every DMW-LA block in forward order (encoder 1, then
/// decoder); one memory bank exists per entry.
pub fn memory_block_channels(cfg: &NetworkConfig) -> Vec<usize> {
    let mut out = Vec::new();
    for s in 0..4 {
        for kind in stage_blocks(cfg, s) {
            if kind == BlockKind::DmwLa {
                out.push(cfg.channels[s]);
            }
        }
    }
    for i in 0..3 {
        out.push(cfg.channels[2 - i]);
    }
    out
}

/// Largest window side no greater than `p` that divides both extents.
pub fn effective_window(p: usize, h: usize, w: usize) -> usize {
    (1..=p.min(h).min(w)).rev().find(|q| h % q == 0 && w % q == 0).unwrap_or(1)
}

/// Stage side lengths for an input of side `res`.
pub fn stage_sizes(res: usize) -> [usize; 4] {
    [res / 2, res / 4, res / 8, res / 16]
}

fn conv_std(k: usize, cin: usize) -> f64 {
    (2.0 / (k * k * cin) as f64).sqrt()
}

/// Spread of a uniform `±1/√fan_in` initialisation, used for the gating
/// layers so their sigmoids start away from saturation.
fn gate_std(fan_in: usize) -> f64 {
    (1.0 / (3 * fan_in) as f64).sqrt()
}

/// Builds the full named parameter set for `cfg`.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    let mut init = Init::new(seed);
    let ch = cfg.channels;

    let attn = |s: &mut ParamStore, init: &mut Init, p: &str, c: usize| -> Result<()> {
        let qk = (c as f64).powf(-0.75);
        let v = (c as f64).powf(-0.5);
        s.insert(format!("{p}.wq"), init.normal(&[c, c], qk))?;
        s.insert(format!("{p}.bq"), Tensor::zeros(&[c]))?;
        s.insert(format!("{p}.wk"), init.normal(&[c, c], qk))?;
        s.insert(format!("{p}.bk"), Tensor::zeros(&[c]))?;
        s.insert(format!("{p}.wv"), init.normal(&[c, c], v))?;
        s.insert(format!("{p}.bv"), Tensor::zeros(&[c]))?;
        s.insert(format!("{p}.psi"), init.normal(&[1, 1, c, c], 0.5 * v))?;
        s.insert(format!("{p}.psi_b"), Tensor::zeros(&[c]))?;
        Ok(())
    };

    for enc in ["enc1", "enc2"] {
        if enc == "enc2" && !cfg.use_encoder2 {
            continue;
        }
        for st in 0..4 {
            let cin = if st == 0 { 1 } else { ch[st - 1] };
            let c = ch[st];
            s.insert(format!("{enc}.s{st}.down.w"), init.normal(&[3, 3, cin, c], conv_std(3, cin)))?;
            s.insert(format!("{enc}.s{st}.down.b"), Tensor::zeros(&[c]))?;
            s.insert(format!("{enc}.s{st}.img.w"), init.normal(&[1, 1, 1, c], 0.5))?;
            s.insert(format!("{enc}.s{st}.img.b"), Tensor::zeros(&[c]))?;
            if enc == "enc1" {
                for (j, kind) in stage_blocks(cfg, st).into_iter().enumerate() {
                    let p = format!("enc1.s{st}.b{j}");
                    match kind {
                        BlockKind::DmwLa => attn(&mut s, &mut init, &p, c)?,
                        BlockKind::DsGim => {
                            let std = (c as f64).powf(-0.75);
                            s.insert(format!("{p}.wa"), init.normal(&[c, c], std))?;
                            s.insert(format!("{p}.wb"), init.normal(&[c, c], std))?;
                        }
                    }
                }
            } else {
                for j in 0..cfg.enc2_depths[st] {
                    // the window block reuses the attention layout; `psi` is its output mix
                    attn(&mut s, &mut init, &format!("enc2.s{st}.b{j}"), c)?;
                }
            }
        }
    }

    for i in 0..3 {
        let cin = ch[3 - i];
        let c = ch[2 - i];
        let p = format!("dec.s{i}");
        s.insert(format!("{p}.adj.w"), init.normal(&[1, 1, cin, c], 0.5 / (cin as f64).sqrt()))?;
        s.insert(format!("{p}.adj.b"), Tensor::zeros(&[c]))?;
        attn(&mut s, &mut init, &format!("{p}.attn"), c)?;
        let r = (c / CA_REDUCTION).max(1);
        s.insert(format!("{p}.ca.w1"), init.normal(&[c, r], gate_std(c)))?;
        s.insert(format!("{p}.ca.b1"), Tensor::zeros(&[r]))?;
        s.insert(format!("{p}.ca.w2"), init.normal(&[r, c], gate_std(r)))?;
        s.insert(format!("{p}.ca.b2"), Tensor::zeros(&[c]))?;
        s.insert(
            format!("{p}.sa.w"),
            init.normal(&[SA_KERNEL, SA_KERNEL, 2, 1], gate_std(2 * SA_KERNEL * SA_KERNEL)),
        )?;
        s.insert(format!("{p}.sa.b"), Tensor::zeros(&[1]))?;
    }
    s.insert("head.w", init.normal(&[1, 1, ch[0], cfg.classes], 0.1 / (ch[0] as f64).sqrt()))?;
    s.insert("head.b", Tensor::zeros(&[cfg.classes]))?;
    Ok(s)
}

/// How the forward pass may touch the memory banks.
pub enum Banks<'a> {
    /// Read-only; every bank in use must already be initialized.
    Read(&'a [PrototypeMemoryBank]),
    /// Uninitialized banks are filled by k-means on the global-interaction
    /// output of their block, seeded from the given value.
    Init(&'a mut [PrototypeMemoryBank], u64),
}

impl Banks<'_> {
    fn get(&self, i: usize) -> Option<&PrototypeMemoryBank> {
        match self {
            Banks::Read(b) => b.get(i),
            Banks::Init(b, _) => b.get(i),
        }
    }
}

/// Output features of one DMW-LA block, grouped for the slot update.
#[derive(Debug, Clone)]
pub struct MemoryTap {
    pub bank: usize,
    /// `T×C` block output tokens.
    pub tokens: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct StageFeatures {
    pub enc1: Vec<Var>,
    pub enc2: Vec<Var>,
    pub fused: Vec<Var>,
    pub dec: Vec<Var>,
    pub skips: Vec<Var>,
    pub ca_gates: Vec<Var>,
    pub sa_gates: Vec<Var>,
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// `res1×res1×classes`.
    pub logits: Var,
    pub features: StageFeatures,
    pub taps: Vec<MemoryTap>,
}

struct Pass<'a, 'b> {
    cfg: &'a NetworkConfig,
    tape: &'b mut Tape,
    binder: &'b mut Binder<'a>,
    banks: Banks<'b>,
    decisions: &'b mut Decisions,
    next_bank: usize,
    taps: Vec<MemoryTap>,
}

fn hwc(tape: &Tape, x: Var) -> Result<(usize, usize, usize)> {
    match tape.value(x).shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(TensorError::dim(format!("expected H×W×C, got {s:?}"))),
    }
}

impl<'a, 'b> Pass<'a, 'b> {
    fn new(
        cfg: &'a NetworkConfig,
        tape: &'b mut Tape,
        binder: &'b mut Binder<'a>,
        banks: Banks<'b>,
        decisions: &'b mut Decisions,
    ) -> Self {
        Self {
            cfg,
            tape,
            binder,
            banks,
            decisions,
            next_bank: 0,
            taps: Vec::new(),
        }
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        self.binder.get(self.tape, name)
    }

    fn conv(&mut self, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.tape.conv2d(x, w, stride, pad)?;
        self.tape.add_row(y, b)
    }

    fn projections(&mut self, p: &str) -> Result<Projections> {
        Ok(Projections {
            wq: self.p(&format!("{p}.wq"))?,
            bq: self.p(&format!("{p}.bq"))?,
            wk: self.p(&format!("{p}.wk"))?,
            bk: self.p(&format!("{p}.bk"))?,
            wv: self.p(&format!("{p}.wv"))?,
            bv: self.p(&format!("{p}.bv"))?,
        })
    }

    /// Downsampling plus image re-fusion at the start of a stage.
    fn stage_entry(&mut self, enc: &str, st: usize, prev: Var, image: Var) -> Result<Var> {
        let x = self.conv(prev, &format!("{enc}.s{st}.down"), 2, 1)?;
        let x = self.tape.gelu(x)?;
        let (h, w, _) = hwc(self.tape, x)?;
        let img = self.tape.bilinear_resize(image, h, w)?;
        let inj = self.conv(img, &format!("{enc}.s{st}.img"), 1, 0)?;
        self.tape.add(x, inj)
    }

    /// Residual DMW-LA block; consumes the next bank slot.
    fn dmw_la(&mut self, x: Var, prefix: &str) -> Result<Var, MemoryError> {
        let proj = self.projections(prefix)?;
        let w = DmwLaWeights {
            proj,
            psi: self.p(&format!("{prefix}.psi"))?,
            psi_b: self.p(&format!("{prefix}.psi_b"))?,
        };
        let idx = self.next_bank;
        self.next_bank += 1;
        let bank = if self.cfg.use_memory {
            if let Banks::Init(banks, seed) = &mut self.banks {
                let bank = banks.get_mut(idx).ok_or(MemoryError::Uninitialized)?;
                if !bank.is_initialized() {
                    let (xp, _) = global_interaction(self.tape, x, &w.proj)?;
                    let (h, wd, c) = hwc(self.tape, xp)?;
                    let tokens = self.tape.value(xp).reshaped(&[h * wd, c])?;
                    bank.initialize(&tokens, seed.wrapping_add(idx as u64))?;
                }
            }
            Some(self.banks.get(idx).ok_or(MemoryError::Uninitialized)?)
        } else {
            None
        };
        let out = dmw_la_forward(self.tape, x, &w, bank, self.decisions)?;
        if let Some(a) = out.assignment {
            let (h, wd, c) = hwc(self.tape, out.out)?;
            self.taps.push(MemoryTap {
                bank: idx,
                tokens: self.tape.value(out.out).reshaped(&[h * wd, c])?,
                labels: a.labels,
            });
        }
        Ok(self.tape.add(x, out.out)?)
    }

    fn ds_gim(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (h, w, _) = hwc(self.tape, x)?;
        let wts = DsGimWeights {
            wa: self.p(&format!("{prefix}.wa"))?,
            wb: self.p(&format!("{prefix}.wb"))?,
        };
        let p = effective_window(self.cfg.window, h, w);
        let out = ds_gim_forward(self.tape, x, &wts, p, self.decisions)?;
        self.tape.add(x, out.out)
    }

    /// Residual windowed-attention block of encoder 2.
    fn window_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (h, w, c) = hwc(self.tape, x)?;
        let proj = self.projections(prefix)?;
        let p = effective_window(self.cfg.window, h, w);
        let windows = window_partition(self.tape, x, p)?;
        let mut outs = Vec::with_capacity(windows.len());
        for win in windows {
            let toks = self.tape.reshape(win, &[p * p, c])?;
            let (o, _) = attend_tokens(self.tape, toks, &proj)?;
            outs.push(self.tape.reshape(o, &[p, p, c])?);
        }
        let merged = window_merge(self.tape, &outs, h, w, p)?;
        let psi = self.p(&format!("{prefix}.psi"))?;
        let psi_b = self.p(&format!("{prefix}.psi_b"))?;
        let y = self.tape.conv2d(merged, psi, 1, 0)?;
        let y = self.tape.add_row(y, psi_b)?;
        self.tape.add(x, y)
    }

    fn encoder1(&mut self, image: Var) -> Result<Vec<Var>, MemoryError> {
        let mut feats = Vec::with_capacity(4);
        let mut x = image;
        for st in 0..4 {
            x = self.stage_entry("enc1", st, x, image)?;
            for (j, kind) in stage_blocks(self.cfg, st).into_iter().enumerate() {
                let p = format!("enc1.s{st}.b{j}");
                x = match kind {
                    BlockKind::DmwLa => self.dmw_la(x, &p)?,
                    BlockKind::DsGim => self.ds_gim(x, &p)?,
                };
            }
            feats.push(x);
        }
        Ok(feats)
    }

    fn encoder2(&mut self, image: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(4);
        let mut x = image;
        for st in 0..4 {
            x = self.stage_entry("enc2", st, x, image)?;
            for j in 0..self.cfg.enc2_depths[st] {
                x = self.window_block(x, &format!("enc2.s{st}.b{j}"))?;
            }
            feats.push(x);
        }
        Ok(feats)
    }

    /// `sigmoid(MLP(avg) + MLP(max))` per channel, applied to `x`.
    fn channel_attention(&mut self, x: Var, p: &str) -> Result<(Var, Var)> {
        let (h, w, c) = hwc(self.tape, x)?;
        let toks = self.tape.reshape(x, &[h * w, c])?;
        let sum = self.tape.sum_rows(toks)?;
        let avg = self.tape.scale(sum, 1.0 / (h * w) as f64)?;
        let max = self.tape.max_rows(toks)?;
        let (w1, b1) = (self.p(&format!("{p}.ca.w1"))?, self.p(&format!("{p}.ca.b1"))?);
        let (w2, b2) = (self.p(&format!("{p}.ca.w2"))?, self.p(&format!("{p}.ca.b2"))?);
        let mlp = |tape: &mut Tape, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[1, c])?;
            let z = tape.matmul(v, w1)?;
            let z = tape.add_row(z, b1)?;
            let z = tape.relu(z)?;
            let z = tape.matmul(z, w2)?;
            tape.add_row(z, b2)
        };
        let a = mlp(self.tape, avg)?;
        let m = mlp(self.tape, max)?;
        let logits = self.tape.add(a, m)?;
        let gate = self.tape.sigmoid(logits)?;
        let gate = self.tape.reshape(gate, &[c])?;
        Ok((self.tape.mul_row(x, gate)?, gate))
    }

    /// `sigmoid(conv7×7([mean_c, max_c]))` per pixel, applied to `x`.
    fn spatial_attention(&mut self, x: Var, p: &str) -> Result<(Var, Var)> {
        let (h, w, c) = hwc(self.tape, x)?;
        let toks = self.tape.reshape(x, &[h * w, c])?;
        let avg = self.tape.mean_cols(toks)?;
        let max = self.tape.max_cols(toks)?;
        let avg = self.tape.reshape(avg, &[h * w, 1])?;
        let max = self.tape.reshape(max, &[h * w, 1])?;
        let stack = self.tape.concat_lastdim(&[avg, max])?;
        let stack = self.tape.reshape(stack, &[h, w, 2])?;
        let logits = self.conv(stack, &format!("{p}.sa"), 1, SA_KERNEL / 2)?;
        let gate = self.tape.sigmoid(logits)?;
        let gate = self.tape.reshape(gate, &[h * w])?;
        let y = self.tape.mul_col(toks, gate)?;
        Ok((self.tape.reshape(y, &[h, w, c])?, gate))
    }

    fn decoder(&mut self, fused: &[Var], features: &mut StageFeatures) -> Result<Var, MemoryError> {
        let mut cur = fused[3];
        for i in 0..3 {
            let skip = fused[2 - i];
            let (h, w, _) = hwc(self.tape, skip)?;
            let p = format!("dec.s{i}");
            let up = self.tape.bilinear_resize(cur, h, w)?;
            let up = self.conv(up, &format!("{p}.adj"), 1, 0)?;
            let d = self.dmw_la(up, &format!("{p}.attn"))?;
            let s = self.tape.add(skip, d)?;
            let (s, ca) = self.channel_attention(s, &p)?;
            let (o, sa) = self.spatial_attention(s, &p)?;
            features.dec.push(d);
            features.skips.push(o);
            features.ca_gates.push(ca);
            features.sa_gates.push(sa);
            cur = self.tape.add(o, d)?;
        }
        Ok(cur)
    }
}

/// Gates and output of one skip-attention step.
#[derive(Debug, Clone, Copy)]
pub struct SkipAttention {
    /// `SA(CA(x))`, same shape as the input.
    pub out: Var,
    /// Length-`C` channel gate.
    pub ca_gate: Var,
    /// Length-`H·W` spatial gate.
    pub sa_gate: Var,
}

/// Channel attention followed by spatial attention on `x`, using the
/// `{prefix}.ca.*` and `{prefix}.sa.*` parameters.
pub fn skip_attention<'a>(
    cfg: &'a NetworkConfig,
    tape: &mut Tape,
    binder: &mut Binder<'a>,
    prefix: &str,
    x: Var,
) -> Result<SkipAttention> {
    let mut decisions = Decisions::free();
    let mut pass = Pass::new(cfg, tape, binder, Banks::Read(&[]), &mut decisions);
    let (s, ca_gate) = pass.channel_attention(x, prefix)?;
    let (out, sa_gate) = pass.spatial_attention(s, prefix)?;
    Ok(SkipAttention { out, ca_gate, sa_gate })
}

/// The four stage outputs of encoder 2 for a `res2×res2×1` image.
pub fn encoder2_forward<'a>(
    cfg: &'a NetworkConfig,
    tape: &mut Tape,
    binder: &mut Binder<'a>,
    image: Var,
) -> Result<Vec<Var>> {
    let mut decisions = Decisions::free();
    Pass::new(cfg, tape, binder, Banks::Read(&[]), &mut decisions).encoder2(image)
}

/// Resizes encoder-2 features onto encoder-1 geometry and adds them.
pub fn fuse_stages(tape: &mut Tape, enc1: &[Var], enc2: &[Var]) -> Result<Vec<Var>> {
    if enc1.len() != enc2.len() {
        return Err(TensorError::dim(format!("{} vs {} stages", enc1.len(), enc2.len())));
    }
    enc1.iter()
        .zip(enc2)
        .map(|(&a, &b)| {
            let (h, w, c) = hwc(tape, a)?;
            let (_, _, c2) = hwc(tape, b)?;
            if c != c2 {
                return Err(TensorError::dim(format!("fusing {c} with {c2} channels")));
            }
            let b = tape.bilinear_resize(b, h, w)?;
            tape.add(a, b)
        })
        .collect()
}

/// Full forward pass. `image1` is `res1×res1×1`, `image2` is
/// `res2×res2×1`. Discrete choices go through `decisions` in a fixed order.
pub fn forward_full<'a>(
    cfg: &'a NetworkConfig,
    tape: &mut Tape,
    binder: &mut Binder<'a>,
    banks: Banks<'_>,
    decisions: &mut Decisions,
    image1: Var,
    image2: Var,
) -> Result<ForwardOutput, MemoryError> {
    for (img, res) in [(image1, cfg.res1), (image2, cfg.res2)] {
        if tape.value(img).shape() != [res, res, 1] {
            return Err(TensorError::dim(format!(
                "image of shape {:?}, expected [{res}, {res}, 1]",
                tape.value(img).shape()
            ))
            .into());
        }
    }
    let mut pass = Pass::new(cfg, tape, binder, banks, decisions);
    let mut features = StageFeatures {
        enc1: pass.encoder1(image1)?,
        ..StageFeatures::default()
    };
    features.fused = if cfg.use_encoder2 {
        features.enc2 = pass.encoder2(image2)?;
        fuse_stages(pass.tape, &features.enc1, &features.enc2)?
    } else {
        features.enc1.clone()
    };
    let fused = features.fused.clone();
    let top = pass.decoder(&fused, &mut features)?;
    let head = pass.conv(top, "head", 1, 0)?;
    let logits = pass.tape.bilinear_resize(head, cfg.res1, cfg.res1)?;
    Ok(ForwardOutput {
        logits,
        features,
        taps: pass.taps,
    })
}

/// Bilinearly resamples a constant `H×W×C` tensor.
pub fn resize_tensor(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone())?;
    let y = tape.bilinear_resize(v, h, w)?;
    Ok(tape.value(y).clone())
}

/// Parameters plus one memory bank per DMW-LA block.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMpNet {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub banks: Vec<PrototypeMemoryBank>,
}

impl SimMpNet {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, MemoryError> {
        config
            .validate()
            .map_err(|e| TensorError::Contract(e.to_string()))?;
        let params = init_params(&config, seed)?;
        let banks = memory_block_channels(&config)
            .into_iter()
            .map(|c| PrototypeMemoryBank::new(config.classes, config.memory, c))
            .collect();
        Ok(Self { config, params, banks })
    }

    pub fn banks_ready(&self) -> bool {
        !self.config.use_memory || self.banks.iter().all(|b| b.is_initialized())
    }

    /// Fills every uninitialized bank from one forward pass over `image`,
    /// the same way training does on its first sample.
    pub fn init_banks(&mut self, image: &Tensor, seed: u64) -> Result<(), MemoryError> {
        if self.banks_ready() {
            return Ok(());
        }
        let mut tape = Tape::new();
        let (a, b) = self.inputs(&mut tape, image)?;
        let mut binder = Binder::new(&self.params, false);
        forward_full(
            &self.config,
            &mut tape,
            &mut binder,
            Banks::Init(&mut self.banks, seed),
            &mut Decisions::free(),
            a,
            b,
        )?;
        Ok(())
    }

    /// Constant inputs for both encoders from one source image.
    pub fn inputs(&self, tape: &mut Tape, image: &Tensor) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let a = if image.shape() == [cfg.res1, cfg.res1, 1] {
            image.clone()
        } else {
            resize_tensor(image, cfg.res1, cfg.res1)?
        };
        let b = resize_tensor(image, cfg.res2, cfg.res2)?;
        Ok((tape.constant(a)?, tape.constant(b)?))
    }

    /// Inference-only logits for one image (`H×W×1`), as a tensor.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor, MemoryError> {
        if !self.banks_ready() {
            return Err(MemoryError::Uninitialized);
        }
        let mut tape = Tape::new();
        let (a, b) = self.inputs(&mut tape, image)?;
        let mut binder = Binder::new(&self.params, false);
        let out = forward_full(
            &self.config,
            &mut tape,
            &mut binder,
            Banks::Read(&self.banks),
            &mut Decisions::free(),
            a,
            b,
        )?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Per-pixel argmax of `H×W×k` logits; ties go to the lower class.
pub fn argmax_labels(logits: &Tensor) -> Vec<usize> {
    logits
        .rows()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
