//! Library results against independent re-implementations.

mod common;

use hcms_core::autodiff::Tensor;
use hcms_core::data::ClassGroup;
use hcms_core::gating::{gumbel_softmax, GumbelRng};
use hcms_core::layers::{LinearParams, LstmParams, LstmState};
use hcms_core::model::{set_modality_order, Clamp, ForwardOptions};
use hcms_core::train_eval::{average_precision, mean_average_precision};
use hcms_core::{
    generate_synthetic, Architecture, CostModel, DecisionTrace, DimsPreset, FeatureSequence, Modality, ModalityOrder,
    Network, SyntheticSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn linear_matches_loop_oracle() {
    let lin = LinearParams::<f64>::init_seeded(5, 3, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = normal_vec(&mut rng, 5);
    let got = lin.forward(&Tensor::vector(x.clone())).unwrap();
    let want = common::affine(&lin.weight, &lin.bias, &x);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn lstm_matches_scalar_oracle() {
    let cell = LstmParams::<f64>::init_seeded(4, 6, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = LstmState {
        h: Tensor::vector(normal_vec(&mut rng, 6)),
        c: Tensor::vector(normal_vec(&mut rng, 6)),
    };
    let (mut h, mut c) = (state.h.data().to_vec(), state.c.data().to_vec());
    for _ in 0..5 {
        let x = normal_vec(&mut rng, 4);
        state = cell.step(&Tensor::vector(x.clone()), &state).unwrap();
        (h, c) = common::lstm_step(&cell.w_input, &cell.w_hidden, &cell.bias, &x, &h, &c);
        for (a, b) in state.h.data().iter().zip(&h).chain(state.c.data().iter().zip(&c)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn forget_bias_starts_at_one() {
    let cell = LstmParams::<f64>::init_seeded(3, 4, 0);
    assert_eq!(&cell.bias.data()[4..8], &[1.0; 4]);
    let bound = (1.0f64 / 3.0).sqrt();
    assert!(cell.bias.data()[..4]
        .iter()
        .chain(&cell.bias.data()[8..])
        .all(|b| b.abs() <= bound));
}

#[test]
fn all_on_model_is_a_plain_stack_in_every_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = Architecture::from_preset(DimsPreset::Desk, [5, 7, 9], 4);
    let opts = ForwardOptions::eval().clamped([Clamp::On, Clamp::On]);
    for (i, order) in ModalityOrder::all().into_iter().enumerate() {
        let arch = set_modality_order(&base, order);
        let net = Network::<f64>::init(arch.clone(), i as u64).unwrap();
        for v in 0..5 {
            let steps = rng.random_range(1..=6);
            let streams = [0, 1, 2].map(|m| {
                (0..steps * arch.feature_dims[m])
                    .map(|_| rng.sample::<f32, _>(StandardNormal))
                    .collect()
            });
            let seq = FeatureSequence::new(v, 0, arch.feature_dims, streams).unwrap();
            let got = net.forward(&seq, &opts, &mut GumbelRng::seeded(0)).unwrap();
            let want = common::stacked_probs(&net.params, &arch, &seq);
            for (a, b) in got.probs.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "order {order:?}: {a} vs {b}");
            }
            assert_eq!(got.reads, [steps; 3]);
        }
    }
}

#[test]
fn relaxed_sample_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let p0: f64 = rng.random_range(0.01..0.99);
        let probs = [p0, 1.0 - p0];
        let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let tau: f64 = rng.random_range(0.1..3.0);
        let z: Vec<f64> = (0..2).map(|i| (probs[i].ln() + noise[i]) / tau).collect();
        let want = common::softmax(&z);
        let got = gumbel_softmax(probs, tau, noise).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    }
}

#[test]
fn trace_cost_is_the_sum_of_step_costs() {
    let cost = CostModel::default();
    let bits = [[1, 1], [0, 0], [1, 0], [1, 1], [0, 0], [1, 0]];
    let trace = DecisionTrace::from_bits(&bits);
    let by_hand = 6.0 * 0.07 + 4.0 * 0.99 + 2.0 * 65.7;
    assert!((cost.trace_cost(&trace) - by_hand).abs() < 1e-9);
    let summed: f64 = bits.iter().map(|&g| cost.step_cost(g)).sum();
    assert!((cost.trace_cost(&trace) - summed).abs() < 1e-9);
    assert!((cost.all_on_cost(16) - 16.0 * (0.07 + 0.99 + 65.7)).abs() < 1e-9);
}

/// Precision at every positive, read off the stable descending order.
fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0.0;
    let mut total = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        if labels[i] {
            hits += 1.0;
            total += hits / (rank + 1) as f64;
        }
    }
    (hits > 0.0).then(|| total / hits)
}

#[test]
fn map_matches_per_class_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let classes = 5;
    let probs: Vec<Vec<f64>> = (0..40)
        .map(|_| common::softmax(&normal_vec(&mut rng, classes)))
        .collect();
    // Class 4 never appears and is left out of the mean.
    let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
    let mut per_class = Vec::new();
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        assert_eq!(
            average_precision(&scores, &positives).unwrap(),
            ap_oracle(&scores, &positives)
        );
        if let Some(ap) = ap_oracle(&scores, &positives) {
            per_class.push(ap);
        }
    }
    let want = per_class.iter().sum::<f64>() / per_class.len() as f64;
    let got = mean_average_precision(&probs, &labels, classes).unwrap();
    assert!((got - want).abs() < 1e-12);
}

/// Time-averaged features of one modality, classified by nearest class mean
/// among the classes of one group.
fn centroid_accuracy(spec: &SyntheticSpec, group: ClassGroup, m: Modality) -> f64 {
    let data = generate_synthetic(spec).unwrap();
    let d = spec.dims[m.index()];
    let mean_feature = |v: &FeatureSequence| -> Vec<f64> {
        let mut acc = vec![0.0; d];
        for t in 0..v.steps() {
            for (a, x) in acc.iter_mut().zip(v.feature(m, t)) {
                *a += *x as f64 / v.steps() as f64;
            }
        }
        acc
    };
    let members: Vec<usize> = (0..spec.classes()).filter(|&c| spec.group_of(c) == group).collect();
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|&c| {
            let rows: Vec<Vec<f64>> = data
                .train
                .videos
                .iter()
                .filter(|v| v.label == c)
                .map(mean_feature)
                .collect();
            (0..d)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        })
        .collect();
    let tests: Vec<&FeatureSequence> = data.test.videos.iter().filter(|v| members.contains(&v.label)).collect();
    let correct = tests
        .iter()
        .filter(|v| {
            let f = mean_feature(v);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..members.len())
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            members[best] == v.label
        })
        .count();
    correct as f64 / tests.len() as f64
}

#[test]
fn class_signal_lives_only_in_the_group_modality() {
    let spec = SyntheticSpec::default();
    for group in [ClassGroup::Audio, ClassGroup::Appearance, ClassGroup::Motion] {
        for m in Modality::ALL {
            let acc = centroid_accuracy(&spec, group, m);
            if m == group.modality() {
                assert!(acc > 0.9, "{group:?} read from {m:?}: {acc}");
            } else {
                // Four classes per group, so chance is 0.25.
                assert!(acc < 0.45, "{group:?} leaks into {m:?}: {acc}");
            }
        }
    }
}
