//! The nine acceptance criteria, each at its stated tolerance. Every
//! criterion prints one PASS/FAIL line; the test fails if any criterion does.
//!
//! Run with `cargo test -p hcms-core --test acceptance -- --nocapture` to see
//! the report.

mod common;

use hcms_core::autodiff::{Tape, Tensor, Var};
use hcms_core::data::{ClassGroup, SyntheticSplits};
use hcms_core::gating::{gumbel, gumbel_softmax, harden, FixedNoise, GumbelRng, NoiseSource};
use hcms_core::model::{forward_video, loss_on_tape, Clamp, ForwardOptions, Hcms, HcmsParams, LossWeights, Unguarded};
use hcms_core::train_eval::{
    average_precision, budget_sweep, evaluate, train, BudgetPolicy, EvalOptions, EvalReport, TrainConfig,
};
use hcms_core::{
    generate_synthetic, reference_table, Architecture, CostModel, DimsPreset, FeatureSequence, Network, SyntheticSpec,
    BACKBONE_GFLOPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng, id: u64, label: usize, steps: usize, dims: [usize; 3]) -> FeatureSequence {
    let streams = [0, 1, 2].map(|m| {
        (0..steps * dims[m])
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect()
    });
    FeatureSequence::new(id, label, dims, streams).unwrap()
}

fn criterion_1() -> Outcome {
    let rows = reference_table(&CostModel::default());
    let mut worst_rel: f64 = 0.0;
    let mut failures = Vec::new();
    for r in &rows {
        // Independent recomputation: views times the summed per-step costs.
        let names = ["A", "I", "M"];
        let per_step: f64 = r
            .modalities
            .split('+')
            .map(|m| BACKBONE_GFLOPS[names.iter().position(|n| *n == m).unwrap()])
            .sum();
        let expected = r.views as f64 * per_step;
        assert!((r.computed - expected).abs() < 1e-9, "{r:?}");
        let abs = (expected - r.reported).abs();
        let rel = abs / r.reported;
        if r.modalities.contains('M') {
            worst_rel = worst_rel.max(rel);
            if rel > 1e-3 {
                failures.push(format!("{}@{} rel {:.5}", r.modalities, r.views, rel));
            }
        }
        if abs > 5.0 {
            failures.push(format!(
                "{}@{} abs {:.2} ({:.2} vs {:.1})",
                r.modalities, r.views, abs, expected, r.reported
            ));
        }
    }
    outcome(
        rows.len() == 14 && failures.is_empty(),
        format!(
            "14 rows; worst motion rel {worst_rel:.5}; violations: {}",
            if failures.is_empty() {
                "none".into()
            } else {
                failures.join(", ")
            }
        ),
    )
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Var;

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ops: Vec<(&str, OpFn, Vec<Vec<usize>>, bool)> = vec![
        (
            "matvec",
            |t, v| t.matvec(v[0], v[1]).unwrap(),
            vec![vec![3, 4], vec![4]],
            false,
        ),
        ("add", |t, v| t.add(v[0], v[1]).unwrap(), vec![vec![4], vec![4]], false),
        ("sub", |t, v| t.sub(v[0], v[1]).unwrap(), vec![vec![4], vec![4]], false),
        ("mul", |t, v| t.mul(v[0], v[1]).unwrap(), vec![vec![4], vec![4]], false),
        (
            "mul_scalar",
            |t, v| t.mul_scalar(v[0], v[1]).unwrap(),
            vec![vec![4], vec![1]],
            false,
        ),
        ("scale", |t, v| t.scale(v[0], 0.3).unwrap(), vec![vec![4]], false),
        (
            "concat",
            |t, v| t.concat(&[v[0], v[1]]).unwrap(),
            vec![vec![3], vec![2]],
            false,
        ),
        ("slice", |t, v| t.slice(v[0], 2, 2).unwrap(), vec![vec![5]], false),
        ("sigmoid", |t, v| t.sigmoid(v[0]).unwrap(), vec![vec![4]], false),
        ("tanh", |t, v| t.tanh(v[0]).unwrap(), vec![vec![4]], false),
        ("exp", |t, v| t.exp(v[0]).unwrap(), vec![vec![4]], false),
        ("log", |t, v| t.log(v[0]).unwrap(), vec![vec![4]], true),
        ("softmax", |t, v| t.softmax(v[0]).unwrap(), vec![vec![4]], false),
        ("log_softmax", |t, v| t.log_softmax(v[0]).unwrap(), vec![vec![4]], false),
        ("sum", |t, v| t.sum(v[0]).unwrap(), vec![vec![4]], false),
        (
            "sq_diff",
            |t, v| t.sq_diff(v[0], v[1]).unwrap(),
            vec![vec![4], vec![4]],
            false,
        ),
        (
            "affine",
            |t, v| t.affine(v[0], v[1], v[2]).unwrap(),
            vec![vec![2, 3], vec![3], vec![2]],
            false,
        ),
    ];
    let mut worst_op = ("", 0.0f64);
    for (name, op, shapes, positive) in ops {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| {
                let t = random_tensor(&mut rng, s);
                if positive {
                    t.map(|x| 0.3 + x.abs())
                } else {
                    t
                }
            })
            .collect();
        let probe = random_tensor(&mut rng, &[8]);
        let err = common::central_difference_error(
            |tape, v| {
                let y = op(tape, v);
                let n = tape.value(y).len();
                let w = tape.constant_vec(&probe.data()[..n]);
                let p = tape.mul(y, w).unwrap();
                tape.sum(p).unwrap()
            },
            &inputs,
            1e-6,
        );
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }

    // Full loss over a 2-step video with relaxed gates and fixed noise.
    let arch = Architecture {
        projection_dims: [3, 2, 4],
        hidden: [3, 2, 5],
        ..Architecture::from_preset(DimsPreset::Desk, [4, 3, 5], 4)
    };
    let params = HcmsParams::<f64>::init(&arch, 8).unwrap();
    let seq = random_sequence(&mut rng, 1, 2, 2, arch.feature_dims);
    let noise = [gumbel(&mut rng), gumbel(&mut rng)];
    let weights = LossWeights {
        gamma: [0.6, 0.2],
        lambda: 2.0,
    };
    let inputs: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let e2e = common::central_difference_error(
        |tape, vars| {
            let mut k = 0;
            let bound: Hcms<Var> = params.map(&mut |_| {
                k += 1;
                vars[k - 1]
            });
            let out = forward_video(
                tape,
                &bound,
                &arch,
                &seq,
                &ForwardOptions::soft(0.8),
                &mut FixedNoise(noise),
                &mut Unguarded,
            )
            .unwrap();
            loss_on_tape(tape, &out, seq.label, &weights).unwrap().0
        },
        &inputs,
        1e-6,
    );
    outcome(
        worst_op.1 < 1e-4 && e2e < 1e-3,
        format!(
            "17 ops, worst {} at {:.2e} (< 1e-4); 2-step loss over {} tensors {:.2e} (< 1e-3)",
            worst_op.0,
            worst_op.1,
            inputs.len(),
            e2e
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut noise = GumbelRng(ChaCha8Rng::seed_from_u64(33));
    let n = 100_000;
    let zeros = (0..n)
        .filter(|_| harden(gumbel_softmax([0.7, 0.3], 0.5, noise.gumbel_pair()).unwrap()) == 0)
        .count();
    let freq = zeros as f64 / n as f64;
    outcome(
        (freq - 0.7).abs() <= 0.01,
        format!("index 0 frequency {freq:.4} (0.70 +/- 0.01)"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = Architecture::from_preset(DimsPreset::Desk, [16, 24, 32], 12);
    let net = Network::<f64>::init(arch.clone(), 40).unwrap();
    let opts = ForwardOptions::eval().clamped([Clamp::On, Clamp::On]);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let steps = rng.random_range(1..=16);
        let seq = random_sequence(&mut rng, i, (i % 12) as usize, steps, arch.feature_dims);
        let got = net.forward(&seq, &opts, &mut GumbelRng::seeded(i)).unwrap();
        let want = common::stacked_probs(&net.params, &arch, &seq);
        for (a, b) in got.probs.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("max |p - p_oracle| {worst:.2e} over 100 videos (< 1e-6)"),
    )
}

fn gated_config(gamma: [f64; 2]) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.loss = LossWeights { gamma, lambda: 2.0 };
    cfg
}

fn criterion_5(data: &SyntheticSplits) -> Outcome {
    let gamma = [0.5, 0.8];
    let cfg = gated_config(gamma);
    let out = train(&cfg, &data.train, Some(&data.validation), &CostModel::default()).unwrap();
    let dist = |u: [f64; 2]| (u[0] - gamma[0]).abs().max((u[1] - gamma[1]).abs());
    let usage: Vec<[f64; 2]> = out.curve.iter().map(|r| r.validation.as_ref().unwrap().usage).collect();
    let last = *usage.last().unwrap();
    let (closest_epoch, closest) = usage
        .iter()
        .enumerate()
        .min_by(|a, b| dist(*a.1).total_cmp(&dist(*b.1)))
        .unwrap();
    outcome(
        usage.len() == 30 && dist(last) <= 0.1,
        format!(
            "validation usage after 30 epochs {:.3}/{:.3}, target 0.5/0.8 +/- 0.1; closest at epoch {} {:.3}/{:.3}",
            last[0], last[1], closest_epoch, closest[0], closest[1]
        ),
    )
}

fn group_motion_usage(report: &EvalReport, spec: &SyntheticSpec, group: ClassGroup) -> f64 {
    let per_class = report.per_class_usage(spec.classes());
    let members: Vec<f64> = (0..spec.classes())
        .filter(|&c| spec.group_of(c) == group)
        .map(|c| per_class[c][1])
        .collect();
    members.iter().sum::<f64>() / members.len() as f64
}

fn criterion_6(report: &EvalReport, spec: &SyntheticSpec) -> Outcome {
    let audio = group_motion_usage(report, spec, ClassGroup::Audio);
    let motion = group_motion_usage(report, spec, ClassGroup::Motion);
    let acc = report.metrics.accuracy;
    outcome(
        acc >= 0.95 && audio < motion,
        format!("test accuracy {acc:.4} (>= 0.95); motion usage audio classes {audio:.3} < motion classes {motion:.3}"),
    )
}

fn criterion_7(net: &Network<f32>, data: &SyntheticSplits) -> Outcome {
    let cost = CostModel::default();
    let budgets = [1.12, 10.0, 30.0, 70.0, 140.0, 280.0, 560.0, 1068.16];
    let rows = budget_sweep(net, &data.test, &budgets, &cost, BudgetPolicy::default(), 1).unwrap();
    let acc: Vec<f64> = rows.iter().map(|r| r.metrics.accuracy).collect();
    let monotone = acc.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let rho = common::spearman(&budgets, &acc);
    // Guard bound: never more than the budget plus one always-on step.
    let within = rows.iter().all(|r| r.max_gflops <= r.budget + cost.tier_cost(0));
    let strictly = rows.iter().all(|r| r.max_gflops <= r.budget);
    let listed: Vec<String> = acc.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        monotone && rho >= 0.9 && within,
        format!(
            "accuracy [{}]; non-decreasing within 2%: {monotone}; spearman {rho:.3} (>= 0.9); spend within bound: {within} (within budget itself: {strictly})",
            listed.join(", ")
        ),
    )
}

fn criterion_8(gated: &EvalReport, all_on: &EvalReport) -> Outcome {
    let (a, b) = (gated.metrics.accuracy, all_on.metrics.accuracy);
    let ratio = gated.metrics.mean_gflops / all_on.metrics.mean_gflops;
    outcome(
        (a - b).abs() <= 0.01 && ratio <= 0.7,
        format!(
            "gated accuracy {a:.4} vs all-on {b:.4} (within 0.01); GFLOPs {:.1} vs {:.1} = {:.1}% (<= 70%)",
            gated.metrics.mean_gflops,
            all_on.metrics.mean_gflops,
            100.0 * ratio
        ),
    )
}

fn criterion_9() -> Outcome {
    // (scores, labels, AP enumerated by hand over the stable descending order)
    let cases: [(&[f64], &[u8], f64); 20] = [
        (&[0.9, 0.8, 0.1], &[1, 0, 1], (1.0 + 2.0 / 3.0) / 2.0),
        (&[3.0, 2.0, 1.0], &[1, 1, 0], 1.0),
        (&[3.0, 2.0, 1.0], &[0, 0, 1], 1.0 / 3.0),
        (&[3.0, 2.0, 1.0], &[0, 1, 0], 1.0 / 2.0),
        (&[3.0, 2.0, 1.0], &[0, 1, 1], (1.0 / 2.0 + 2.0 / 3.0) / 2.0),
        (&[1.0, 2.0, 3.0], &[1, 0, 0], 1.0 / 3.0),
        (&[0.5, 0.5], &[1, 0], 1.0),
        (&[0.5, 0.5], &[0, 1], 1.0 / 2.0),
        (&[4.0, 3.0, 2.0, 1.0], &[1, 0, 1, 0], (1.0 + 2.0 / 3.0) / 2.0),
        (&[4.0, 3.0, 2.0, 1.0], &[0, 1, 0, 1], (1.0 / 2.0 + 2.0 / 4.0) / 2.0),
        (&[4.0, 3.0, 2.0, 1.0], &[1, 1, 1, 1], 1.0),
        (&[4.0, 3.0, 2.0, 1.0], &[0, 0, 0, 1], 1.0 / 4.0),
        (&[0.1, 0.9, 0.5, 0.7], &[1, 1, 0, 0], (1.0 + 2.0 / 4.0) / 2.0),
        (
            &[5.0, 4.0, 3.0, 2.0, 1.0],
            &[1, 0, 0, 1, 1],
            (1.0 + 2.0 / 4.0 + 3.0 / 5.0) / 3.0,
        ),
        (
            &[5.0, 4.0, 3.0, 2.0, 1.0],
            &[0, 1, 0, 1, 0],
            (1.0 / 2.0 + 2.0 / 4.0) / 2.0,
        ),
        (
            &[5.0, 4.0, 3.0, 2.0, 1.0],
            &[0, 0, 1, 1, 1],
            (1.0 / 3.0 + 2.0 / 4.0 + 3.0 / 5.0) / 3.0,
        ),
        (&[1.0, 1.0, 1.0], &[0, 0, 1], 1.0 / 3.0),
        (&[2.0, 1.0, 1.0], &[0, 1, 1], (1.0 / 2.0 + 2.0 / 3.0) / 2.0),
        (&[0.3, 0.2, 0.2, 0.1], &[0, 0, 1, 1], (1.0 / 3.0 + 2.0 / 4.0) / 2.0),
        (
            &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            &[1, 0, 1, 0, 1, 0],
            (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0,
        ),
    ];
    let mut worst = 0.0f64;
    for (scores, labels, want) in cases {
        let labels: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let got = average_precision(scores, &labels).unwrap().unwrap();
        worst = worst.max((got - want).abs());
    }
    let example = average_precision(&[0.9, 0.8, 0.1], &[true, false, true])
        .unwrap()
        .unwrap();
    outcome(
        worst <= 1e-15 && format!("{example:.4}") == "0.8333",
        format!("20 lists, max deviation {worst:.1e}; worked example {example:.4}"),
    )
}

#[test]
fn acceptance() {
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec).unwrap();
    let cost = CostModel::default();

    // The gated model behind criteria 6 to 8, and the unconditional baseline.
    let gated_cfg = gated_config([0.5, 0.3]);
    let gated = train(&gated_cfg, &data.train, Some(&data.validation), &cost)
        .unwrap()
        .network;
    let gated_report = evaluate(&gated, &data.test, &cost, &EvalOptions::default()).unwrap();

    let mut all_on_cfg = gated_config([1.0, 1.0]);
    all_on_cfg.clamp = [Clamp::On, Clamp::On];
    all_on_cfg.epochs = 20;
    let all_on = train(&all_on_cfg, &data.train, Some(&data.validation), &cost)
        .unwrap()
        .network;
    let all_on_opts = EvalOptions {
        clamp: [Clamp::On, Clamp::On],
        ..EvalOptions::default()
    };
    let all_on_report = evaluate(&all_on, &data.test, &cost, &all_on_opts).unwrap();

    let results = [
        ("1 cost table reproduction", criterion_1()),
        ("2 gradient suite", criterion_2()),
        ("3 gumbel-max frequency", criterion_3()),
        ("4 all-on equivalence", criterion_4()),
        ("5 usage convergence", criterion_5(&data)),
        ("6 modality selectivity", criterion_6(&gated_report, &spec)),
        ("7 budget sweep trend", criterion_7(&gated, &data)),
        ("8 efficiency", criterion_8(&gated_report, &all_on_report)),
        ("9 average precision oracle", criterion_9()),
    ];
    for (name, o) in &results {
        println!(
            "criterion {name}: {} | {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
