mod common;

use common::suites;
use common::*;
use proptest::prelude::*;
use simmp_core::decisions::Decisions;
use simmp_core::ds_gim::{decay_schedule, ds_gim_forward, median, window_rank_and_decay, DsGimWeights};
use simmp_core::{Tape, Tensor};

/// Step-by-step evaluation on plain vectors.
fn oracle(x: &Tensor, wa: &Tensor, wb: &Tensor, p: usize) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = wa.shape()[1];
    let (nh, nw) = (h / p, w / p);
    let px = |y: usize, xx: usize| x.data()[(y * w + xx) * c..(y * w + xx + 1) * c].to_vec();

    // window scores
    let mut scores = Vec::new();
    for wy in 0..nh {
        for wx in 0..nw {
            let toks: Vec<Vec<f64>> = (0..p * p).map(|i| px(wy * p + i / p, wx * p + i % p)).collect();
            let mut s = 0.0;
            let mut n = 0;
            for i in 0..toks.len() {
                for j in i + 1..toks.len() {
                    s += cosine(&toks[i], &toks[j]);
                    n += 1;
                }
            }
            scores.push(if n == 0 { 1.0 } else { s / n as f64 });
        }
    }
    let count = scores.len();
    let mut decayed = vec![vec![0.0; c]; h * w];
    for (win, &sc) in scores.iter().enumerate() {
        let rank = (0..count)
            .filter(|&o| scores[o] > sc || (scores[o] == sc && o < win))
            .count();
        let g = (-(0.25 - 2f64.powf(-2.5 - 5.0 * rank as f64 / count as f64))).exp();
        let (wy, wx) = (win / nw, win % nw);
        for i in 0..p * p {
            let (y, xx) = (wy * p + i / p, wx * p + i % p);
            decayed[y * w + xx] = px(y, xx).iter().map(|v| g * v).collect();
        }
    }

    let t = h * w;
    let proj = |m: &Tensor| -> Vec<Vec<f64>> {
        decayed
            .iter()
            .map(|r| (0..d).map(|j| (0..c).map(|i| r[i] * m.data()[i * d + j]).sum()).collect())
            .collect()
    };
    let (a, b) = (proj(wa), proj(wb));
    let xi: Vec<Vec<f64>> = (0..t).map(|i| (0..t).map(|j| dot(&a[i], &b[j])).collect()).collect();
    let s: Vec<f64> = xi.iter().map(|r| r.iter().sum::<f64>() / t as f64).collect();
    let euc: Vec<Vec<f64>> = (0..t).map(|i| (0..t).map(|j| (s[i] - s[j]).abs()).collect()).collect();
    let mut flat: Vec<f64> = euc.concat();
    flat.sort_by(f64::total_cmp);
    let med = (flat[t * t / 2 - 1] + flat[t * t / 2]) / 2.0;

    let masked_sm = |row: &[f64], keep: &dyn Fn(f64) -> bool| -> Vec<f64> {
        let idx: Vec<usize> = (0..row.len()).filter(|&j| keep(row[j])).collect();
        let mut out = vec![0.0; row.len()];
        if idx.is_empty() {
            return out;
        }
        let vals: Vec<f64> = idx.iter().map(|&j| row[j]).collect();
        for (&j, v) in idx.iter().zip(softmax(&vals)) {
            out[j] = v;
        }
        out
    };
    let mut out = Vec::with_capacity(t * c);
    for i in 0..t {
        let lo = masked_sm(&euc[i], &|v| v <= med);
        let hi = masked_sm(&euc[i], &|v| v > med);
        let mix: Vec<f64> = (0..t).map(|j| lo[j] * xi[i][j] + hi[j] * xi[i][j]).collect();
        for ch in 0..c {
            out.push((0..t).map(|j| mix[j] * decayed[j][ch]).sum());
        }
    }
    out
}

fn weights(seed: u64, c: usize) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    (rand_tensor(&mut r, &[c, c]), rand_tensor(&mut r, &[c, c]))
}

#[test]
fn decay_schedule_values() {
    let g = decay_schedule(4).unwrap();
    for n in 0..4 {
        let want = (-(0.25 - 2f64.powf(-2.5 - 5.0 * n as f64 / 4.0))).exp();
        assert!((g[n] - want).abs() < 1e-15);
    }
    assert!(g.windows(2).all(|p| p[0] > p[1]));
    let lo = (-0.25f64).exp();
    let hi = (-(0.25 - 2f64.powf(-2.5))).exp();
    for count in [1, 2, 7, 64, 1000] {
        for v in decay_schedule(count).unwrap() {
            assert!(v > lo && v <= hi);
        }
    }
}

#[test]
fn identical_windows_rank_by_index() {
    // two identical 2×2 windows side by side
    let half: Vec<f64> = vec![1.0, 0.5, -0.2, 0.3, 0.7, 0.1, 0.4, -0.6];
    let x = Tensor::from_fn(&[2, 4, 2], |i| {
        let (y, rest) = (i / 8, i % 8);
        let (xx, ch) = (rest / 2, rest % 2);
        half[(y * 2 + xx % 2) * 2 + ch]
    });
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let y = window_rank_and_decay(&mut tape, xv, 2, &mut Decisions::free()).unwrap();
    let g = decay_schedule(2).unwrap();
    let out = tape.value(y);
    assert_eq!(out.at(&[0, 0, 0]), g[0] * x.at(&[0, 0, 0]));
    assert_eq!(out.at(&[0, 2, 0]), g[1] * x.at(&[0, 2, 0]));
}

#[test]
fn window_ranks_follow_pairwise_cosine_oracle() {
    let mut r = rng(8);
    // window 3 is near-constant, window 0 is noise; the middle two are mixtures
    let mut x = rand_tensor(&mut r, &[4, 4, 3]);
    let base = [0.4, -0.7, 0.2];
    for y in 0..4 {
        for xx in 0..4 {
            let win = (y / 2) * 2 + xx / 2;
            let blend = win as f64 / 3.0;
            for ch in 0..3 {
                let i = (y * 4 + xx) * 3 + ch;
                x.data_mut()[i] = blend * base[ch] + (1.0 - blend) * x.data()[i];
            }
        }
    }
    let mut rec = Decisions::record();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    window_rank_and_decay(&mut tape, xv, 2, &mut rec).unwrap();
    let ranks = match &rec.into_log()[0] {
        simmp_core::decisions::Decision::Ranks(r) => r.clone(),
        d => panic!("unexpected {d:?}"),
    };
    let scores: Vec<f64> = (0..4)
        .map(|win| {
            let toks: Vec<Vec<f64>> = (0..4)
                .map(|i| {
                    let (y, xx) = ((win / 2) * 2 + i / 2, (win % 2) * 2 + i % 2);
                    x.data()[(y * 4 + xx) * 3..(y * 4 + xx + 1) * 3].to_vec()
                })
                .collect();
            let mut s = 0.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    s += cosine(&toks[i], &toks[j]);
                }
            }
            s / 6.0
        })
        .collect();
    for w in 0..4 {
        let want = (0..4).filter(|&o| scores[o] > scores[w]).count();
        assert_eq!(ranks[w], want);
    }
    assert_eq!(ranks[3], 0);
}

#[test]
fn euclidean_split_example() {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let e = tape.pairwise_abs_diff(s).unwrap();
    assert_eq!(tape.value(e).data(), &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
    let m = median(tape.value(e).data());
    assert_eq!(m, 1.0);
    let lower: Vec<bool> = tape.value(e).data().iter().map(|&v| v <= m).collect();
    assert_eq!(lower, [true, true, false, true, true, true, false, true, true]);
}

#[test]
fn constant_input_mixes_uniformly() {
    let c = 2;
    let (wa, wb) = weights(4, c);
    let x = Tensor::full(&[4, 4, c], 0.3);
    let mut tape = Tape::new();
    let xv = tape.constant(x).unwrap();
    let w = DsGimWeights {
        wa: tape.constant(wa).unwrap(),
        wb: tape.constant(wb).unwrap(),
    };
    let out = ds_gim_forward(&mut tape, xv, &w, 4, &mut Decisions::free()).unwrap();
    assert!(tape.value(out.euc).data().iter().all(|&v| v == 0.0));
    assert!(out.lower_mask.iter().all(|&m| m));
    let t = 16;
    let aff = tape.value(out.affinity);
    for (mix, a) in tape.value(out.mix).data().iter().zip(aff.data()) {
        assert!((mix - a / t as f64).abs() < 1e-15);
    }
}

#[test]
fn matches_straight_line_oracle() {
    for seed in 0..3 {
        let c = 3;
        let (wa, wb) = weights(seed, c);
        let x = rand_tensor(&mut rng(seed + 50), &[4, 4, c]);
        let want = oracle(&x, &wa, &wb, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x).unwrap();
        let w = DsGimWeights {
            wa: tape.constant(wa).unwrap(),
            wb: tape.constant(wb).unwrap(),
        };
        let out = ds_gim_forward(&mut tape, xv, &w, 2, &mut Decisions::free()).unwrap();
        assert_eq!(tape.value(out.out).shape(), &[4, 4, c]);
        for (a, b) in tape.value(out.out).data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn full_block_gradcheck_with_frozen_choices() {
    suites::ds_gim_gradcheck().unwrap();
}

#[test]
fn distance_split_structure_on_seeded_inputs() {
    suites::ds_gim_structure().unwrap();
}

#[test]
fn decay_schedule_closed_form() {
    suites::decay_schedule_values().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn distance_split_structure(seed in any::<u64>(), p in 1usize..3, c in 1usize..4) {
        let (wa, wb) = weights(seed, c);
        let x = rand_tensor(&mut rng(seed ^ 3), &[4, 4, c]);
        let mut tape = Tape::new();
        let xv = tape.constant(x).unwrap();
        let w = DsGimWeights { wa: tape.constant(wa).unwrap(), wb: tape.constant(wb).unwrap() };
        let out = ds_gim_forward(&mut tape, xv, &w, p, &mut Decisions::free()).unwrap();
        let t = 16;
        let e = tape.value(out.euc);
        for i in 0..t {
            prop_assert_eq!(e.at(&[i, i]), 0.0);
            for j in 0..t {
                prop_assert_eq!(e.at(&[i, j]), e.at(&[j, i]));
            }
        }
        let upper: Vec<bool> = out.lower_mask.iter().map(|m| !m).collect();
        prop_assert_eq!(out.lower_mask.len(), t * t);
        prop_assert!(out.lower_mask.iter().zip(&upper).all(|(a, b)| a ^ b));
        // each softmax half sums to 1 over its own mask, or contributes nothing
        let sm_lo = tape.masked_softmax_lastdim(out.euc, &out.lower_mask).unwrap();
        let sm_hi = tape.masked_softmax_lastdim(out.euc, &upper).unwrap();
        for (sm, mask) in [(sm_lo, &out.lower_mask), (sm_hi, &upper)] {
            for i in 0..t {
                let row = tape.value(sm).row(i);
                let any = mask[i * t..(i + 1) * t].iter().any(|&m| m);
                let s: f64 = row.iter().sum();
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                let ok = if any { (s - 1.0).abs() < 1e-12 } else { s == 0.0 };
                prop_assert!(ok, "row {} sums to {}", i, s);
            }
        }
        prop_assert_eq!(tape.value(out.out).shape(), &[4, 4, c]);
        prop_assert!(tape.value(out.out).is_finite());
    }
}
