//! Seeded check suites shared by the unit-style tests and the acceptance
//! runner. Each returns a one-line summary, or the first failure found.

use rand::Rng;
use simmp_core::config::NetworkConfig;
use simmp_core::decisions::Decisions;
use simmp_core::dmw_la::{dmw_la_forward, DmwLaWeights, Projections};
use simmp_core::ds_gim::{decay_schedule, ds_gim_forward, DsGimWeights};
use simmp_core::gradcheck::finite_diff_check;
use simmp_core::loss::{ce_loss, combined_loss, dice_loss};
use simmp_core::metrics::{dsc, hd95};
use simmp_core::network::{forward_full, memory_block_channels, Banks, SimMpNet};
use simmp_core::params::{Binder, ParamStore};
use simmp_core::window::{window_merge, window_partition};
use simmp_core::{PrototypeMemoryBank, Result, Tape, Tensor, TensorError, Var};

use super::*;

pub type Outcome = std::result::Result<String, String>;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 5;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Tracks the worst gradient error over a suite.
struct Worst {
    err: f64,
    checks: usize,
}

impl Worst {
    fn new() -> Self {
        Self { err: 0.0, checks: 0 }
    }

    fn record(&mut self, name: &str, seed: u64, err: std::result::Result<f64, TensorError>) -> std::result::Result<(), String> {
        let err = err.map_err(|e| format!("{name} (seed {seed}): {e}"))?;
        ensure!(err <= FD_TOL, "{name} (seed {seed}): relative error {err:e}");
        self.err = self.err.max(err);
        self.checks += 1;
        Ok(())
    }

    fn summary(&self) -> Outcome {
        Ok(format!("{} checks, worst relative error {:.2e}", self.checks, self.err))
    }
}

type Case<'a> = (&'a str, Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var> + 'a>);

/// Every differentiable tape operation and both losses on random inputs.
pub fn op_gradchecks() -> Outcome {
    let mut worst = Worst::new();
    for seed in 0..SEEDS {
        let mut r = rng(100 + seed);
        let x = rand_tensor(&mut r, &[4, 6]);
        let other = rand_tensor(&mut r, &[4, 6]);
        let pos = Tensor::from_fn(&[4, 6], |i| 1.5 + 0.1 * (i as f64).sin());
        let b6 = rand_tensor(&mut r, &[6]);
        let b4 = rand_tensor(&mut r, &[4]);
        let m63 = rand_tensor(&mut r, &[6, 3]);
        let m36 = rand_tensor(&mut r, &[3, 6]);
        let img = rand_tensor(&mut r, &[5, 5, 2]);
        let ker = rand_tensor(&mut r, &[3, 3, 2, 3]);
        let logits = rand_tensor(&mut r, &[4, 4, 3]);
        let labels: Vec<usize> = (0..16).map(|_| r.gen_range(0..3)).collect();
        let mask: Vec<bool> = (0..24).map(|i| (i * 7 + seed as usize) % 3 != 0).collect();

        let cases: Vec<Case> = vec![
            ("matmul lhs", x.clone(), Box::new(|t, x| {
                let m = t.constant(m63.clone())?;
                let y = t.matmul(x, m)?;
                probe(t, y, seed)
            })),
            ("matmul rhs", m63.clone(), Box::new(|t, m| {
                let a = t.constant(x.clone())?;
                let y = t.matmul(a, m)?;
                probe(t, y, seed)
            })),
            ("matmul_nt both", x.clone(), Box::new(|t, x| {
                let y = t.matmul_nt(x, x)?;
                probe(t, y, seed)
            })),
            ("matmul_nt rhs", m36.clone(), Box::new(|t, m| {
                let a = t.constant(x.clone())?;
                let y = t.matmul_nt(a, m)?;
                probe(t, y, seed)
            })),
            ("transpose", x.clone(), Box::new(|t, x| {
                let y = t.transpose(x)?;
                probe(t, y, seed)
            })),
            ("add/sub/mul", x.clone(), Box::new(|t, x| {
                let o = t.constant(other.clone())?;
                let a = t.add(x, o)?;
                let s = t.sub(a, x)?;
                let m = t.mul(s, x)?;
                let m = t.mul(m, x)?;
                probe(t, m, seed)
            })),
            ("div", pos.clone(), Box::new(|t, p| {
                let o = t.constant(other.clone())?;
                let a = t.div(o, p)?;
                let b = t.div(p, p)?;
                let c = t.add(a, b)?;
                probe(t, c, seed)
            })),
            ("affine", x.clone(), Box::new(|t, x| {
                let y = t.affine(x, -2.5, 0.75)?;
                probe(t, y, seed)
            })),
            ("add_row/mul_row", b6.clone(), Box::new(|t, b| {
                let a = t.constant(x.clone())?;
                let y = t.add_row(a, b)?;
                let y = t.mul_row(y, b)?;
                probe(t, y, seed)
            })),
            ("mul_col", b4.clone(), Box::new(|t, b| {
                let a = t.constant(x.clone())?;
                let y = t.mul_col(a, b)?;
                probe(t, y, seed)
            })),
            ("mul_col lhs", x.clone(), Box::new(|t, x| {
                let b = t.constant(b4.clone())?;
                let y = t.mul_col(x, b)?;
                probe(t, y, seed)
            })),
            ("softmax", x.clone(), Box::new(|t, x| {
                let y = t.softmax_lastdim(x)?;
                probe(t, y, seed)
            })),
            ("log_softmax", x.clone(), Box::new(|t, x| {
                let y = t.log_softmax_lastdim(x)?;
                probe(t, y, seed)
            })),
            ("masked_softmax", x.clone(), Box::new(|t, x| {
                let y = t.masked_softmax_lastdim(x, &mask)?;
                probe(t, y, seed)
            })),
            ("sigmoid", x.clone(), Box::new(|t, x| {
                let y = t.sigmoid(x)?;
                probe(t, y, seed)
            })),
            ("gelu", x.clone(), Box::new(|t, x| {
                let y = t.gelu(x)?;
                probe(t, y, seed)
            })),
            ("relu", x.clone(), Box::new(|t, x| {
                let y = t.relu(x)?;
                probe(t, y, seed)
            })),
            ("pairwise_abs_diff", b6.clone(), Box::new(|t, s| {
                let y = t.pairwise_abs_diff(s)?;
                probe(t, y, seed)
            })),
            ("gather/reshape", x.clone(), Box::new(|t, x| {
                let g = t.gather(x, vec![3, 0, 3, 7, 23, 11], &[2, 3])?;
                let y = t.reshape(g, &[3, 2])?;
                let y = t.mul(y, y)?;
                probe(t, y, seed)
            })),
            ("conv2d input", img.clone(), Box::new(|t, x| {
                let k = t.constant(ker.clone())?;
                let y = t.conv2d(x, k, 2, 1)?;
                probe(t, y, seed)
            })),
            ("conv2d kernel", ker.clone(), Box::new(|t, k| {
                let x = t.constant(img.clone())?;
                let y = t.conv2d(x, k, 1, 1)?;
                probe(t, y, seed)
            })),
            ("conv2d 1x1", img.clone(), Box::new(|t, x| {
                let k = t.constant(Tensor::from_fn(&[1, 1, 2, 3], |i| 0.3 * i as f64 - 0.5))?;
                let y = t.conv2d(x, k, 1, 0)?;
                probe(t, y, seed)
            })),
            ("bilinear up", img.clone(), Box::new(|t, x| {
                let y = t.bilinear_resize(x, 9, 7)?;
                probe(t, y, seed)
            })),
            ("bilinear down", img.clone(), Box::new(|t, x| {
                let y = t.bilinear_resize(x, 2, 3)?;
                probe(t, y, seed)
            })),
            ("windows", Tensor::from_fn(&[4, 4, 2], |i| (i as f64 * 0.37).sin()), Box::new(|t, x| {
                let ws = window_partition(t, x, 2)?;
                let sq: Vec<_> = ws.iter().map(|&w| t.mul(w, w)).collect::<Result<_>>()?;
                let y = window_merge(t, &sq, 4, 4, 2)?;
                probe(t, y, seed)
            })),
            ("concat_lastdim", x.clone(), Box::new(|t, x| {
                let o = t.constant(other.clone())?;
                let y = t.concat_lastdim(&[x, o, x])?;
                probe(t, y, seed)
            })),
            ("reductions", x.clone(), Box::new(|t, x| {
                let a = t.sum_rows(x)?;
                let b = t.mean_cols(x)?;
                let c = t.max_rows(x)?;
                let d = t.max_cols(x)?;
                let e = t.mean(x)?;
                let s1 = probe(t, a, seed)?;
                let s2 = probe(t, b, seed + 1)?;
                let s3 = probe(t, c, seed + 2)?;
                let s4 = probe(t, d, seed + 3)?;
                let r = t.reshape(e, &[1])?;
                let u = t.add(s1, s2)?;
                let u = t.add(u, s3)?;
                let u = t.add(u, s4)?;
                t.add(u, r)
            })),
            ("dice loss", logits.clone(), Box::new(|t, v| dice_loss(t, v, &labels))),
            ("cross-entropy loss", logits.clone(), Box::new(|t, v| ce_loss(t, v, &labels))),
            ("combined loss", logits.clone(), Box::new(|t, v| combined_loss(t, v, &labels))),
        ];
        for (name, input, f) in cases {
            worst.record(name, seed, finite_diff_check(f, &input, FD_STEP))?;
        }
    }
    worst.summary()
}

/// Random DMW-LA block weights as plain tensors.
pub struct DmwLaRaw {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub psi: Tensor,
    pub psi_b: Tensor,
}

impl DmwLaRaw {
    pub fn random(seed: u64, c: usize) -> Self {
        let mut r = rng(seed);
        Self {
            wq: rand_tensor(&mut r, &[c, c]),
            bq: rand_tensor(&mut r, &[c]),
            wk: rand_tensor(&mut r, &[c, c]),
            bk: rand_tensor(&mut r, &[c]),
            wv: rand_tensor(&mut r, &[c, c]),
            bv: rand_tensor(&mut r, &[c]),
            psi: rand_tensor(&mut r, &[1, 1, c, c]),
            psi_b: rand_tensor(&mut r, &[c]),
        }
    }

    pub fn all(&self) -> [&Tensor; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.psi, &self.psi_b]
    }

    pub fn bind(&self, tape: &mut Tape) -> DmwLaWeights {
        let v: Vec<Var> = self.all().iter().map(|t| tape.param((*t).clone()).unwrap()).collect();
        dmw_la_from_vars(&v)
    }
}

pub fn dmw_la_from_vars(v: &[Var]) -> DmwLaWeights {
    DmwLaWeights {
        proj: Projections {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
        },
        psi: v[6],
        psi_b: v[7],
    }
}

/// A bank fitted by k-means to random tokens.
pub fn bank_for(seed: u64, c: usize, k: usize, m: usize) -> PrototypeMemoryBank {
    let mut r = rng(seed ^ 77);
    let toks = rand_tensor(&mut r, &[40, c]);
    PrototypeMemoryBank::init_kmeans(&toks, k, m, seed).unwrap()
}

/// Records the discrete choices of one forward pass, then checks gradients
/// with those choices replayed.
fn frozen_check(
    flat: &Tensor,
    eval: impl Fn(&mut Tape, Var, &mut Decisions) -> Result<Var>,
) -> std::result::Result<f64, TensorError> {
    let mut rec = Decisions::record();
    {
        let mut tape = Tape::new();
        let f = tape.constant(flat.clone())?;
        eval(&mut tape, f, &mut rec)?;
    }
    let log = rec.into_log();
    finite_diff_check(|tape, f| eval(tape, f, &mut Decisions::replay(log.clone())), flat, FD_STEP)
}

fn contract(e: impl std::fmt::Display) -> TensorError {
    TensorError::Contract(e.to_string())
}

/// Full DMW-LA block on 8×8×4, gradients w.r.t. the input and every weight.
pub fn dmw_la_gradcheck() -> Outcome {
    let (h, c) = (8, 4);
    let mut worst = Worst::new();
    for seed in 0..SEEDS {
        let raw = DmwLaRaw::random(100 + seed, c);
        let bank = bank_for(seed, c, 2, 4);
        let x = rand_tensor(&mut rng(200 + seed), &[h, h, c]);
        let mut shapes = vec![vec![h, h, c]];
        shapes.extend(raw.all().iter().map(|t| t.shape().to_vec()));
        let mut parts = vec![&x];
        parts.extend(raw.all());
        let flat = pack(&parts);
        let err = frozen_check(&flat, |tape, f, d| {
            let v = unpack(tape, f, &shapes)?;
            let out = dmw_la_forward(tape, v[0], &dmw_la_from_vars(&v[1..]), Some(&bank), d).map_err(contract)?;
            probe(tape, out.out, seed)
        });
        worst.record("DMW-LA block", seed, err)?;
    }
    worst.summary()
}

/// Full DS-GIM block on 4×4×3 with 2×2 windows.
pub fn ds_gim_gradcheck() -> Outcome {
    let (h, c) = (4, 3);
    let mut worst = Worst::new();
    for seed in 0..SEEDS {
        let mut r = rng(seed + 10);
        let (wa, wb) = (rand_tensor(&mut r, &[c, c]), rand_tensor(&mut r, &[c, c]));
        let x = rand_tensor(&mut rng(seed + 20), &[h, h, c]);
        let shapes = vec![vec![h, h, c], vec![c, c], vec![c, c]];
        let flat = pack(&[&x, &wa, &wb]);
        let err = frozen_check(&flat, |tape, f, d| {
            let v = unpack(tape, f, &shapes)?;
            let out = ds_gim_forward(tape, v[0], &DsGimWeights { wa: v[1], wb: v[2] }, 2, d)?;
            probe(tape, out.out, seed)
        });
        worst.record("DS-GIM block", seed, err)?;
    }
    worst.summary()
}

pub fn test_image(seed: u64, res: usize) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(&[res, res, 1], |_| r.gen_range(0.0..1.0))
}

/// Replaces every parameter with fresh uniform noise of the given scale, so
/// zero-initialised biases are exercised too.
pub fn randomize(params: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
}

/// Initialized banks with uniform random priors. Used where the coarsest
/// stage has too few distinct tokens for k-means.
pub fn random_banks(cfg: &NetworkConfig, seed: u64) -> Vec<PrototypeMemoryBank> {
    let mut r = rng(seed);
    memory_block_channels(cfg)
        .into_iter()
        .map(|c| {
            let priors = (0..cfg.classes * cfg.memory * c).map(|_| r.gen_range(-1.0..1.0)).collect();
            PrototypeMemoryBank::from_priors(cfg.classes, cfg.memory, c, priors).unwrap()
        })
        .collect()
}

/// Whole network plus loss on a 16×16 input, gradients w.r.t. the image and
/// every parameter at once.
pub fn network_gradcheck() -> Outcome {
    let cfg = NetworkConfig {
        res1: 16,
        res2: 16,
        channels: [4, 4, 4, 4],
        window: 2,
        classes: 2,
        memory: 2,
        ..NetworkConfig::default()
    };
    let mut worst = Worst::new();
    for seed in 0..SEEDS {
        let mut net = SimMpNet::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
        randomize(&mut net.params, 100 + seed, 0.5);
        let banks = random_banks(&cfg, 200 + seed);
        let mut r = rng(250 + seed);
        let img = test_image(300 + seed, 16);
        let labels: Vec<usize> = (0..256).map(|_| r.gen_range(0..cfg.classes)).collect();
        let names: Vec<String> = net.params.names().map(String::from).collect();
        let mut parts: Vec<&Tensor> = vec![&img];
        parts.extend(names.iter().map(|n| net.params.get(n).unwrap()));
        let shapes: Vec<Vec<usize>> = parts.iter().map(|t| t.shape().to_vec()).collect();
        let flat = pack(&parts);
        let err = frozen_check(&flat, |tape, f, d| {
            let v = unpack(tape, f, &shapes)?;
            let mut binder = Binder::new(&net.params, true);
            for (n, &var) in names.iter().zip(&v[1..]) {
                binder.bind(n, var)?;
            }
            let img2 = tape.constant(img.clone())?;
            let out = forward_full(&cfg, tape, &mut binder, Banks::Read(&banks), d, v[0], img2).map_err(contract)?;
            combined_loss(tape, out.logits, &labels)
        });
        worst.record("network", seed, err)?;
    }
    worst.summary()
}

/// Update budget against its closed form on random loss pairs, plus the
/// fixed points named for it.
pub fn budget_closed_form() -> Outcome {
    let mut r = rng(7);
    for _ in 0..100 {
        let m = r.gen_range(4..=128);
        let bank = PrototypeMemoryBank::new(1, m, 1);
        let (prev, curr) = (r.gen_range(0.0..3.0), r.gen_range(0.0..3.0));
        let got = bank.compute_update_budget(prev, curr).map_err(|e| e.to_string())?;
        let want = budget_oracle(prev, curr, m);
        ensure!(got == want, "M={m} losses {prev} -> {curr}: K {got}, closed form {want}");
    }
    let bank = PrototypeMemoryBank::new(1, 64, 1);
    let flat = bank.compute_update_budget(0.7, 0.7).map_err(|e| e.to_string())?;
    ensure!(flat == 32, "K for an unchanged loss at M=64 is {flat}, expected 32");
    for m in [2, 3, 7, 32, 64, 65] {
        let mut b = PrototypeMemoryBank::new(1, m, 1);
        ensure!(b.k_current() == m / 2, "initial K at M={m} is {}", b.k_current());
        let first = b.record_epoch_loss(1.3).map_err(|e| e.to_string())?;
        ensure!(first == m / 2, "K after the first epoch at M={m} is {first}");
    }
    Ok("100 random pairs match; K(ΔL=0, M=64)=32; initial K=⌊M/2⌋".into())
}

/// Decay schedule against an independent evaluation of its closed form.
pub fn decay_schedule_values() -> Outcome {
    // 2^-2.5 = 1/(4·√2)
    let want = (-(0.25 - 1.0 / (4.0 * 2f64.sqrt()))).exp();
    let g = decay_schedule(4).map_err(|e| e.to_string())?;
    ensure!((g[0] - want).abs() < 5e-13, "γ(0, 4) = {:.15}, expected {want:.15}", g[0]);
    for count in [1, 2, 4, 7, 64, 1000] {
        let g = decay_schedule(count).map_err(|e| e.to_string())?;
        ensure!(g.windows(2).all(|p| p[0] > p[1]), "schedule for {count} windows is not strictly decreasing");
        ensure!(g.iter().all(|&v| v > (-0.25f64).exp()), "schedule for {count} windows falls to exp(-0.25)");
        for (n, &v) in g.iter().enumerate() {
            let e = (-(0.25 - 2f64.powf(-2.5 - 5.0 * n as f64 / count as f64))).exp();
            ensure!((v - e).abs() < 1e-15, "γ({n}, {count}) = {v}, expected {e}");
        }
    }
    Ok(format!("γ(0, 4) = {:.12}", g[0]))
}

pub fn rows_of(bank: &PrototypeMemoryBank, i: usize) -> Vec<Vec<f64>> {
    to_rows(bank.prior(i), bank.channels())
}

/// Slot replacement against the sort-and-splice oracle on random banks.
pub fn wld_oracle_suite() -> Outcome {
    let mut r = rng(2024);
    let mut replaced = 0;
    for case in 0..200 {
        let m = r.gen_range(2..=8);
        let c = r.gen_range(1..=6);
        let k = r.gen_range(1..=3);
        let priors: Vec<f64> = (0..k * m * c).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut bank = PrototypeMemoryBank::from_priors(k, m, c, priors).map_err(|e| e.to_string())?;
        let (lo, hi) = bank.budget_range();
        let budget = r.gen_range(lo..=hi);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = r.gen_range(0..=8);
                (0..n * c).map(|_| r.gen_range(-1.0..1.0)).collect()
            })
            .collect();
        let before: Vec<Vec<Vec<f64>>> = (0..k).map(|i| rows_of(&bank, i)).collect();
        let report = bank.apply_wld_update(&groups, budget).map_err(|e| e.to_string())?;
        for i in 0..k {
            let tokens = to_rows(&groups[i], c);
            if tokens.is_empty() {
                ensure!(report.skipped.contains(&i), "case {case} cluster {i}: empty group not reported");
                ensure!(rows_of(&bank, i) == before[i], "case {case} cluster {i}: empty group changed the bank");
                continue;
            }
            let (slots, sources, after) = wld_oracle(&before[i], &tokens, budget);
            ensure!(report.replaced_slots[i] == slots, "case {case} cluster {i}: replaced slots differ");
            ensure!(report.source_tokens[i] == sources, "case {case} cluster {i}: source tokens differ");
            ensure!(rows_of(&bank, i) == after, "case {case} cluster {i}: bank contents differ");
            for ch in 0..c {
                let mean = after.iter().map(|s| s[ch]).sum::<f64>() / m as f64;
                ensure!((bank.core(i)[ch] - mean).abs() <= 1e-9, "case {case} cluster {i}: core is not the slot mean");
            }
            replaced += slots.len();
        }
    }
    Ok(format!("200 instances match, {replaced} slots replaced"))
}

/// Random blobby mask: a few random rectangles of random classes.
pub fn random_mask(r: &mut impl Rng, h: usize, w: usize, k: usize) -> Vec<usize> {
    let mut m = vec![0; h * w];
    for _ in 0..r.gen_range(0..4) {
        let class = r.gen_range(1..k);
        let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
        let (y1, x1) = (r.gen_range(y0..h), r.gen_range(x0..w));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m[y * w + x] = class;
            }
        }
    }
    // a sprinkle of isolated pixels
    for _ in 0..r.gen_range(0..6) {
        m[r.gen_range(0..h * w)] = r.gen_range(0..k);
    }
    m
}

/// DSC against direct counting and HD95 against all-pairs distances.
pub fn metric_oracle_suite() -> Outcome {
    let mut r = rng(99);
    let (h, w, k) = (16, 16, 3);
    let err = |e: TensorError| e.to_string();
    for case in 0..200 {
        let a = random_mask(&mut r, h, w, k);
        let b = random_mask(&mut r, h, w, k);
        for class in 0..k {
            let count = |f: &dyn Fn(usize, usize) -> bool| a.iter().zip(&b).filter(|(p, t)| f(**p, **t)).count();
            let tp = count(&|p, t| p == class && t == class);
            let fp = count(&|p, t| p == class && t != class);
            let fnn = count(&|p, t| p != class && t == class);
            let want = if tp + fp + fnn == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64 };
            let got = dsc(&a, &b, class).map_err(err)?;
            ensure!(got == want, "case {case} class {class}: DSC {got}, counted {want}");
            ensure!(got == dsc(&b, &a, class).map_err(err)?, "case {case} class {class}: DSC not symmetric");
            let got = hd95(&a, &b, h, w, class).map_err(err)?;
            let want = hd95_oracle(&a, &b, h, w, class);
            ensure!(got == want, "case {case} class {class}: HD95 {got:?}, brute force {want:?}");
            ensure!(got == hd95(&b, &a, h, w, class).map_err(err)?, "case {case} class {class}: HD95 not symmetric");
        }
        for class in 0..k {
            ensure!(dsc(&a, &a, class).map_err(err)? == 1.0, "case {case}: DSC of identical masks is not 1");
            if let Some(d) = hd95(&a, &a, h, w, class).map_err(err)? {
                ensure!(d == 0.0, "case {case}: HD95 of identical masks is {d}");
            }
        }
    }
    Ok("200 mask pairs match direct counting and brute force".into())
}

/// Distance matrix and mask structure of DS-GIM on random inputs.
pub fn ds_gim_structure() -> Outcome {
    let mut r = rng(31);
    for case in 0..100 {
        let p = r.gen_range(1..3);
        let c = r.gen_range(1..4);
        let side = 4 * r.gen_range(1..3);
        let (wa, wb) = (rand_tensor(&mut r, &[c, c]), rand_tensor(&mut r, &[c, c]));
        let x = rand_tensor(&mut r, &[side, side, c]);
        let mut tape = Tape::new();
        let run = |tape: &mut Tape| -> Result<_> {
            let xv = tape.constant(x)?;
            let w = DsGimWeights {
                wa: tape.constant(wa)?,
                wb: tape.constant(wb)?,
            };
            ds_gim_forward(tape, xv, &w, p, &mut Decisions::free())
        };
        let out = run(&mut tape).map_err(|e| format!("case {case}: {e}"))?;
        let t = side * side;
        let e = tape.value(out.euc);
        ensure!(e.shape() == [t, t], "case {case}: distance matrix shape {:?}", e.shape());
        for i in 0..t {
            ensure!(e.at(&[i, i]) == 0.0, "case {case}: nonzero diagonal at {i}");
            for j in 0..t {
                ensure!(e.at(&[i, j]) == e.at(&[j, i]), "case {case}: asymmetric at ({i}, {j})");
            }
        }
        ensure!(out.lower_mask.len() == t * t, "case {case}: mask length {}", out.lower_mask.len());
        let upper: Vec<bool> = out.lower_mask.iter().map(|m| !m).collect();
        let med = simmp_core::ds_gim::median(e.data());
        for (idx, (&lo, &v)) in out.lower_mask.iter().zip(e.data()).enumerate() {
            ensure!(lo == (v <= med), "case {case}: entry {idx} on the wrong side of the median");
        }
        let sm_lo = tape.masked_softmax_lastdim(out.euc, &out.lower_mask).map_err(|e| e.to_string())?;
        let sm_hi = tape.masked_softmax_lastdim(out.euc, &upper).map_err(|e| e.to_string())?;
        for (sm, mask) in [(sm_lo, &out.lower_mask), (sm_hi, &upper)] {
            for i in 0..t {
                let row = tape.value(sm).row(i);
                let any = mask[i * t..(i + 1) * t].iter().any(|&m| m);
                let s: f64 = row.iter().sum();
                let ok = if any { (s - 1.0).abs() < 1e-12 } else { s == 0.0 };
                ensure!(ok && row.iter().all(|&v| v >= 0.0), "case {case}: softmax row {i} sums to {s}");
            }
        }
        let y = tape.value(out.out);
        ensure!(y.shape() == [side, side, c], "case {case}: output shape {:?}", y.shape());
        ensure!(y.is_finite(), "case {case}: non-finite output");
    }
    Ok("100 random inputs".into())
}
