//! Oracles shared by the integration tests. Nothing here calls into the
//! model code it checks.

#![allow(dead_code)]

use hcms_core::autodiff::{Tape, Tensor, Var};
use hcms_core::model::HcmsParams;
use hcms_core::{Architecture, FeatureSequence};

/// `W x + b` with explicit loops.
pub fn affine(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|r| {
            let row = &w.data()[r * cols..(r + 1) * cols];
            let mut acc = b.data()[r];
            for (wc, xc) in row.iter().zip(x) {
                acc += wc * xc;
            }
            acc
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One step of a vanilla LSTM, gate blocks ordered input, forget, cell, output.
pub fn lstm_step(
    w_x: &Tensor<f64>,
    w_h: &Tensor<f64>,
    b: &Tensor<f64>,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let zx = affine(w_x, b, x);
    let zero = Tensor::zeros(&[4 * d]);
    let zh = affine(w_h, &zero, h);
    let z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| a + b).collect();
    let mut h2 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for j in 0..d {
        let i = logistic(z[j]);
        let f = logistic(z[d + j]);
        let g = z[2 * d + j].tanh();
        let o = logistic(z[3 * d + j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

/// Unconditional three-tier stack: tier k reads the projections of tiers
/// 0..=k every step. Returns class probabilities from the top hidden state.
pub fn stacked_probs(p: &HcmsParams<f64>, arch: &Architecture, seq: &FeatureSequence) -> Vec<f64> {
    let mut state: Vec<(Vec<f64>, Vec<f64>)> = arch.hidden.iter().map(|&d| (vec![0.0; d], vec![0.0; d])).collect();
    for t in 0..seq.steps() {
        let projected: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let m = arch.order.tier(k);
                let x: Vec<f64> = seq.feature(m, t).iter().map(|&v| v as f64).collect();
                let lin = &p.projections[m.index()];
                affine(&lin.weight, &lin.bias, &x)
            })
            .collect();
        for k in 0..3 {
            let input: Vec<f64> = projected[..=k].concat();
            let l = &p.lstms[k];
            state[k] = lstm_step(&l.w_input, &l.w_hidden, &l.bias, &input, &state[k].0, &state[k].1);
        }
    }
    let logits = affine(&p.classifier.weight, &p.classifier.bias, &state[2].0);
    softmax(&logits)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// coordinate of every input, numeric by central differences with step `h`.
pub fn central_difference_error<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let run = |xs: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst = 0.0f64;
    let mut shifted = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            shifted[k].data_mut()[i] = x0 + h;
            let up = run(&shifted);
            shifted[k].data_mut()[i] = x0 - h;
            let down = run(&shifted);
            shifted[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

/// Ranks with ties given their average position, starting at 1.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Hidden and cell vectors of one tier.
pub type TierState = (Vec<f64>, Vec<f64>);

/// Per-tier `(h, c)` after running the gated model in evaluation mode, plus
/// the gate bits of every step. Gates use the larger of the two softmax
/// probabilities (index 1 means compute); a skipped tier keeps its previous
/// state except for the hidden prefix, which it takes from the tier below.
pub fn gated_transcript(
    p: &HcmsParams<f64>,
    arch: &Architecture,
    seq: &FeatureSequence,
) -> (Vec<TierState>, Vec<[u8; 2]>) {
    let mut state: Vec<(Vec<f64>, Vec<f64>)> = arch.hidden.iter().map(|&d| (vec![0.0; d], vec![0.0; d])).collect();
    let mut bits = Vec::new();
    let project = |k: usize, t: usize| -> Vec<f64> {
        let m = arch.order.tier(k);
        let x: Vec<f64> = seq.feature(m, t).iter().map(|&v| v as f64).collect();
        let lin = &p.projections[m.index()];
        affine(&lin.weight, &lin.bias, &x)
    };
    let gate = |g: usize, context: Vec<f64>| -> u8 {
        let probs = softmax(&affine(&p.gates[g].weight, &p.gates[g].bias, &context));
        u8::from(probs[1] > probs[0])
    };
    let run = |k: usize, input: &[f64], s: &(Vec<f64>, Vec<f64>)| {
        let l = &p.lstms[k];
        lstm_step(&l.w_input, &l.w_hidden, &l.bias, input, &s.0, &s.1)
    };
    let carry = |prev: &(Vec<f64>, Vec<f64>), lower: &(Vec<f64>, Vec<f64>)| {
        let mut next = prev.clone();
        let n = lower.0.len().min(prev.0.len());
        next.0[..n].copy_from_slice(&lower.0[..n]);
        if arch.fuse_cell {
            next.1[..n].copy_from_slice(&lower.1[..n]);
        }
        next
    };
    for t in 0..seq.steps() {
        let x0 = project(0, t);
        let s0 = run(0, &x0, &state[0]);
        let g1 = gate(0, [x0.clone(), state[1].0.clone(), state[1].1.clone()].concat());
        let mut g2 = 0;
        let s1;
        let s2;
        if g1 == 1 {
            let x1 = project(1, t);
            s1 = run(1, &[x0.clone(), x1.clone()].concat(), &state[1]);
            g2 = gate(
                1,
                [x0.clone(), x1.clone(), state[2].0.clone(), state[2].1.clone()].concat(),
            );
            s2 = if g2 == 1 {
                let x2 = project(2, t);
                run(2, &[x0, x1, x2].concat(), &state[2])
            } else {
                carry(&state[2], &s1)
            };
        } else {
            s1 = carry(&state[1], &s0);
            s2 = carry(&state[2], &s1);
        }
        state = vec![s0, s1, s2];
        bits.push([g1, g2]);
    }
    (state, bits)
}
