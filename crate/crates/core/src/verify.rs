//! Built-in self checks: per-op and end-to-end gradients against central
//! differences, the Gumbel-max sampling frequency, the reference cost table,
//! and all-gates-on equivalence with a plain stacked LSTM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{grad_check_many, GradCheck, Tape, Tensor, Var};
use crate::cost_ledger::{reference_table, CostModel, ReferenceRow};
use crate::data::FeatureSequence;
use crate::error::Result;
use crate::gating::{gumbel, gumbel_softmax, harden, GumbelRng, NoiseSource};
use crate::model::{
    forward_video, loss_on_tape, Architecture, Clamp, DimsPreset, ForwardOptions, Hcms, HcmsParams, LossWeights,
    Modality, Network, Unguarded,
};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const LEDGER_RELATIVE: f64 = 1e-3;
pub const LEDGER_ABSOLUTE: f64 = 5.0;
pub const ALL_ON_TOLERANCE: f64 = 1e-6;

const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Reduces a vector output to a scalar with fixed random weights, so every
/// output coordinate contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &[f64]) -> Result<Var> {
    let w = tape.constant_vec(weights);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;
type CatalogEntry = (&'static str, OpFn, Vec<Vec<usize>>, usize, bool);

/// The differentiable catalog: name, op, input shapes, output length,
/// whether inputs must be positive.
fn op_catalog() -> Vec<CatalogEntry> {
    vec![
        (
            "matvec",
            |t, v| t.matvec(v[0], v[1]),
            vec![vec![3, 4], vec![4]],
            3,
            false,
        ),
        ("add", |t, v| t.add(v[0], v[1]), vec![vec![4], vec![4]], 4, false),
        ("sub", |t, v| t.sub(v[0], v[1]), vec![vec![4], vec![4]], 4, false),
        ("mul", |t, v| t.mul(v[0], v[1]), vec![vec![4], vec![4]], 4, false),
        (
            "mul_scalar",
            |t, v| t.mul_scalar(v[0], v[1]),
            vec![vec![4], vec![1]],
            4,
            false,
        ),
        ("scale", |t, v| t.scale(v[0], -1.7), vec![vec![4]], 4, false),
        (
            "concat",
            |t, v| t.concat(&[v[0], v[1]]),
            vec![vec![2], vec![3]],
            5,
            false,
        ),
        ("slice", |t, v| t.slice(v[0], 1, 3), vec![vec![5]], 3, false),
        ("sigmoid", |t, v| t.sigmoid(v[0]), vec![vec![4]], 4, false),
        ("tanh", |t, v| t.tanh(v[0]), vec![vec![4]], 4, false),
        ("exp", |t, v| t.exp(v[0]), vec![vec![4]], 4, false),
        ("log", |t, v| t.log(v[0]), vec![vec![4]], 4, true),
        ("softmax", |t, v| t.softmax(v[0]), vec![vec![4]], 4, false),
        ("log_softmax", |t, v| t.log_softmax(v[0]), vec![vec![4]], 4, false),
        ("sum", |t, v| t.sum(v[0]), vec![vec![4]], 1, false),
        (
            "sq_diff",
            |t, v| t.sq_diff(v[0], v[1]),
            vec![vec![4], vec![4]],
            4,
            false,
        ),
        (
            "affine",
            |t, v| t.affine(v[0], v[1], v[2]),
            vec![vec![3, 4], vec![4], vec![3]],
            3,
            false,
        ),
    ]
}

/// Central-difference check of every differentiable op.
pub fn op_gradient_checks(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, op, shapes, out_len, positive) in op_catalog() {
        let points: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| {
                let t = random_tensor(&mut rng, s, 1.0);
                if positive {
                    t.map(|x| 0.5 + x.abs())
                } else {
                    t
                }
            })
            .collect();
        let weights: Vec<f64> = (0..out_len).map(|_| rng.sample(StandardNormal)).collect();
        let check = grad_check_many(
            |tape, vars| {
                let y = op(tape, vars)?;
                weighted_sum(tape, y, &weights)
            },
            &points,
            STEP,
        )?;
        out.push((name, check));
    }
    Ok(out)
}

/// Straight-through: forward is one-hot, backward passes the gradient unchanged.
pub fn straight_through_check() -> Result<bool> {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![0.2, 0.7, 0.1]));
    let y = tape.straight_through(x)?;
    let forward_ok = tape.value(y).data() == [0.0, 1.0, 0.0];
    let w = [0.3, -1.1, 2.0];
    let loss = weighted_sum(&mut tape, y, &w)?;
    let g = tape.backward(loss)?;
    Ok(forward_ok && g.get(x).data() == w)
}

/// Noise replayed from a fixed script, restarted for every evaluation.
struct ScriptedNoise<'a> {
    pairs: &'a [[f64; 2]],
    next: usize,
}

impl NoiseSource for ScriptedNoise<'_> {
    fn gumbel_pair(&mut self) -> [f64; 2] {
        let p = self.pairs[self.next % self.pairs.len()];
        self.next += 1;
        p
    }
}

/// A small layout that keeps the end-to-end check fast while keeping every
/// fusion case (prefix shorter than the upper hidden vector).
pub fn tiny_architecture() -> Architecture {
    Architecture {
        projection_dims: [3, 3, 3],
        hidden: [2, 3, 4],
        ..Architecture::from_preset(DimsPreset::Desk, [3, 4, 5], 3)
    }
}

pub fn random_sequence(rng: &mut impl Rng, id: u64, label: usize, steps: usize, dims: [usize; 3]) -> FeatureSequence {
    let streams = [0, 1, 2].map(|m| {
        (0..steps * dims[m])
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect()
    });
    FeatureSequence::new(id, label, dims, streams).expect("consistent sequence")
}

/// Full loss of a 2-step video, relaxed gates and fixed noise, checked
/// against central differences in every parameter.
pub fn hcms_gradient_check(seed: u64) -> Result<GradCheck> {
    let arch = tiny_architecture();
    let params = HcmsParams::<f64>::init(&arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let seq = random_sequence(&mut rng, 0, 1, 2, arch.feature_dims);
    let noise: Vec<[f64; 2]> = (0..4).map(|_| [gumbel(&mut rng), gumbel(&mut rng)]).collect();
    let weights = LossWeights {
        gamma: [0.5, 0.3],
        lambda: 2.0,
    };
    let opts = ForwardOptions::soft(0.7);
    let points: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    grad_check_many(
        |tape, vars| {
            let mut k = 0;
            let bound: Hcms<Var> = params.map(&mut |_| {
                k += 1;
                vars[k - 1]
            });
            let mut noise = ScriptedNoise { pairs: &noise, next: 0 };
            let out = forward_video(tape, &bound, &arch, &seq, &opts, &mut noise, &mut Unguarded)?;
            let (total, _) = loss_on_tape(tape, &out, seq.label, &weights)?;
            Ok(total)
        },
        &points,
        STEP,
    )
}

/// Fraction of hardened Gumbel-Softmax samples that pick index 0.
pub fn gumbel_frequency(probs: [f64; 2], temperature: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut noise = GumbelRng::seeded(seed);
    let mut zeros = 0usize;
    for _ in 0..samples {
        let relaxed = gumbel_softmax(probs, temperature, noise.gumbel_pair())?;
        if harden(relaxed) == 0 {
            zeros += 1;
        }
    }
    Ok(zeros as f64 / samples as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerReport {
    pub rows: Vec<ReferenceRow>,
    /// Every row with motion within the relative bound.
    pub relative_ok: bool,
    /// Every row within the absolute bound.
    pub absolute_ok: bool,
}

pub fn ledger_check(cost: &CostModel) -> LedgerReport {
    let rows = reference_table(cost);
    let relative_ok = rows
        .iter()
        .filter(|r| r.modalities.contains(Modality::Motion.letter()))
        .all(|r| r.rel_diff() <= LEDGER_RELATIVE);
    let absolute_ok = rows.iter().all(|r| r.abs_diff() <= LEDGER_ABSOLUTE);
    LedgerReport {
        rows,
        relative_ok,
        absolute_ok,
    }
}

fn plain_affine(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data()
        .chunks_exact(cols)
        .zip(b.data())
        .map(|(row, bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconditional stacked model in plain f64 arithmetic: every tier runs every
/// step and feeds on the projections of its own and all lower modalities.
pub fn stacked_oracle(params: &HcmsParams<f64>, arch: &Architecture, seq: &FeatureSequence) -> Vec<f64> {
    let mut h: Vec<Vec<f64>> = arch.hidden.iter().map(|&d| vec![0.0; d]).collect();
    let mut c = h.clone();
    for t in 0..seq.steps() {
        let mut input = Vec::new();
        for k in 0..3 {
            let m = arch.order.tier(k);
            let raw: Vec<f64> = seq.feature(m, t).iter().map(|&x| x as f64).collect();
            let p = &params.projections[m.index()];
            input.extend(plain_affine(&p.weight, &p.bias, &raw));
            let lstm = &params.lstms[k];
            let d = arch.hidden[k];
            let a = plain_affine(&lstm.w_input, &lstm.bias, &input);
            let r = plain_affine(&lstm.w_hidden, &Tensor::zeros(&[4 * d]), &h[k]);
            let z: Vec<f64> = a.iter().zip(&r).map(|(x, y)| x + y).collect();
            for j in 0..d {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[d + j]);
                let g = z[2 * d + j].tanh();
                let o = sigmoid(z[3 * d + j]);
                c[k][j] = f * c[k][j] + i * g;
                h[k][j] = o * c[k][j].tanh();
            }
        }
    }
    let logits = plain_affine(&params.classifier.weight, &params.classifier.bias, &h[2]);
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    logits.iter().map(|l| (l - top).exp() / z).collect()
}

/// Largest probability difference between the gated network with both gates
/// clamped on and [`stacked_oracle`], over `videos` random videos.
pub fn all_on_equivalence(videos: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::from_preset(DimsPreset::Desk, [6, 7, 8], 5);
    let net = Network::<f64>::init(arch.clone(), seed)?;
    let opts = ForwardOptions::eval().clamped([Clamp::On, Clamp::On]);
    let mut worst = 0.0f64;
    for i in 0..videos {
        let steps = rng.random_range(1..=12);
        let seq = random_sequence(&mut rng, i as u64, i % 5, steps, arch.feature_dims);
        let got = net.forward(&seq, &opts, &mut GumbelRng::seeded(0))?;
        let want = stacked_oracle(&net.params, &arch, &seq);
        for (a, b) in got.probs.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Runs every check. `cost` is the ledger under test.
pub fn run_all(cost: &CostModel) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut push = |name: String, passed: bool, detail: String| out.push(CheckResult { name, passed, detail });

    for (name, check) in op_gradient_checks(11)? {
        push(
            format!("gradient {name}"),
            check.max_rel_error < OP_TOLERANCE,
            format!(
                "max rel error {:.2e} over {} coords",
                check.max_rel_error, check.coordinates
            ),
        );
    }
    push(
        "gradient straight_through".into(),
        straight_through_check()?,
        "one-hot forward, identity backward".into(),
    );
    let e2e = hcms_gradient_check(5)?;
    push(
        "gradient 2-step loss".into(),
        e2e.max_rel_error < END_TO_END_TOLERANCE,
        format!(
            "max rel error {:.2e} over {} params",
            e2e.max_rel_error, e2e.coordinates
        ),
    );

    let freq = gumbel_frequency([0.7, 0.3], 0.5, 100_000, 3)?;
    push(
        "gumbel frequency".into(),
        (freq - 0.7).abs() <= 0.01,
        format!("index 0 chosen {freq:.4} of 100000 at tau 0.5, expected 0.70 +/- 0.01"),
    );

    let ledger = ledger_check(cost);
    let table: Vec<String> = ledger
        .rows
        .iter()
        .map(|r| format!("{}@{} {:.2} vs {:.1}", r.modalities, r.views, r.computed, r.reported))
        .collect();
    push(
        "ledger motion rows within 0.1%".into(),
        ledger.relative_ok,
        table.join("; "),
    );
    let worst = ledger
        .rows
        .iter()
        .max_by(|a, b| a.abs_diff().total_cmp(&b.abs_diff()))
        .expect("table has rows");
    push(
        "ledger rows within 5 GFLOPs".into(),
        ledger.absolute_ok,
        format!(
            "largest residual {:.2} at {}@{}",
            worst.abs_diff(),
            worst.modalities,
            worst.views
        ),
    );

    let diff = all_on_equivalence(100, 21)?;
    push(
        "all-on equivalence".into(),
        diff < ALL_ON_TOLERANCE,
        format!("max |p - p_oracle| {diff:.2e} over 100 videos"),
    );
    Ok(out)
}
