mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sigstack::experiments::hurst::HurstModel;
use sigstack::experiments::train::{self, random_stream, GateConfig};
use sigstack::streamnet::{
    sig_of_lift, Activation, BlockSpec, DeepSigModel, HeadKind, HeadSpec, Lift, MapKind, MapSpec, ModelOutput,
    ModelSpec,
};
use sigstack::synth::{generate_batch, ProcessKind};
use sigstack::{sig_dim, signature, time_augment, Stream};

fn stream(n: usize, d: usize, seed: u64) -> Stream {
    random_stream(n, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn map_kind() -> impl Strategy<Value = MapKind> {
    prop_oneof![
        Just(MapKind::Pointwise),
        (1usize..=4, 1usize..=3).prop_map(|(window, stride)| MapKind::Windowed { window, stride }),
        (1usize..=4).prop_map(|window| MapKind::Recurrent { window }),
    ]
}

fn lift() -> impl Strategy<Value = Lift> {
    prop_oneof![
        Just(Lift::Expanding),
        Just(Lift::Block),
        (2usize..=4).prop_map(|window| Lift::Sliding { window }),
        Just(Lift::Trivial),
    ]
}

fn pointwise_head(outputs: usize) -> HeadSpec {
    HeadSpec {
        kind: HeadKind::Pointwise,
        hidden: Vec::new(),
        outputs,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shapes_follow_the_closed_forms(
        n in 8usize..20,
        d in 1usize..=3,
        kind in map_kind(),
        lift in lift(),
        depth in 1usize..=3,
        outputs in 1usize..=3,
        preserve in any::<bool>(),
    ) {
        let spec = ModelSpec {
            input_channels: d,
            input_length: None,
            blocks: vec![BlockSpec {
                map: Some(MapSpec {
                    kind,
                    hidden: vec![4],
                    outputs,
                    preserve_original: preserve,
                    inputs: None,
                    hidden_activation: Activation::Relu,
                    output_activation: Activation::Identity,
                }),
                lift,
                depth,
            }],
            head: pointwise_head(2),
        };
        let (m, stride) = match kind {
            MapKind::Pointwise => (1, 1),
            MapKind::Windowed { window, stride } => (window, stride),
            MapKind::Recurrent { window } => (window, 1),
        };
        let mapped_len = (n - m) / stride + 1;
        let needed = match lift {
            Lift::Sliding { window } => window,
            _ => 2,
        };
        prop_assume!(mapped_len >= needed);
        let (model, params) = DeepSigModel::build(&spec, 1).unwrap();
        let x = stream(n, d, n as u64);
        let map = model.blocks[0].map.as_ref().unwrap();
        let mapped = map.apply(&params.values[..map.net.param_count()], &x).unwrap();
        prop_assert_eq!(mapped.len(), mapped_len);
        prop_assert_eq!(mapped.channels(), outputs + if preserve { d } else { 0 });

        let lifted_len = match lift {
            Lift::Expanding => mapped_len - 1,
            Lift::Block => mapped_len / 2,
            Lift::Sliding { window } => mapped_len + 1 - window,
            Lift::Trivial => 1,
        };
        let sig_stream = sig_of_lift(lift, &mapped, depth).unwrap();
        prop_assert_eq!(sig_stream.len(), lifted_len);
        prop_assert_eq!(sig_stream.channels(), sig_dim(mapped.channels(), depth, false));

        let out = model.forward(&params, &x).unwrap().into_stream().unwrap();
        prop_assert_eq!(out.len(), lifted_len);
        prop_assert_eq!(model.output_len(n).unwrap(), lifted_len);
        prop_assert_eq!(out.channels(), 2);
    }
}

#[test]
fn lifts_cut_the_documented_pieces() {
    let x = Stream::new((0..5).map(f64::from).collect(), 1).unwrap();
    let firsts = |l: Lift| -> Vec<Vec<f64>> { l.apply(&x).unwrap().iter().map(|s| s.points().to_vec()).collect() };
    assert_eq!(firsts(Lift::Block), vec![vec![0.0, 1.0], vec![2.0, 3.0]]);
    assert_eq!(
        firsts(Lift::sliding()),
        vec![vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]
    );
    let four = x.slice(0, 4);
    let prefixes: Vec<usize> = Lift::Expanding.apply(&four).unwrap().iter().map(Stream::len).collect();
    assert_eq!(prefixes, vec![2, 3, 4]);
}

#[test]
fn trivial_lift_gives_the_whole_signature() {
    let x = stream(7, 2, 3);
    let s = sig_of_lift(Lift::Trivial, &x, 3).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.point(0), signature(&x, 3).unwrap().flatten_nonconstant().as_slice());
}

#[test]
fn deep_sig_net_outputs_a_probability() {
    let spec = HurstModel::DeepSig.spec(40).unwrap();
    let (model, params) = DeepSigModel::build(&spec, 2).unwrap();
    let path = &generate_batch(ProcessKind::Fbm { hurst: 0.3 }, 40, 3, 1).unwrap();
    for p in path {
        match model.forward(&params, &time_augment(p)).unwrap() {
            ModelOutput::Vector(v) => {
                assert_eq!(v.len(), 1);
                assert!(v[0] > 0.0 && v[0] < 1.0);
            }
            ModelOutput::Stream(_) => panic!("flatten head gives a vector"),
        }
    }
}

#[test]
fn every_architecture_passes_the_gradient_gate() {
    let cfg = GateConfig {
        coordinates: 50,
        ..GateConfig::default()
    };
    for model in [HurstModel::Feedforward, HurstModel::NeuralSig, HurstModel::DeepSig] {
        let r = train::gate(&model.spec(16).unwrap(), 16, 7, &cfg).unwrap();
        assert!(r.passed, "{}: {r:?}", model.name());
    }
    let stacked = ModelSpec {
        input_channels: 2,
        input_length: Some(12),
        blocks: vec![
            BlockSpec {
                map: Some(MapSpec {
                    kind: MapKind::Recurrent { window: 2 },
                    hidden: Vec::new(),
                    outputs: 2,
                    preserve_original: true,
                    inputs: None,
                    hidden_activation: Activation::Relu,
                    output_activation: Activation::Identity,
                }),
                lift: Lift::sliding(),
                depth: 2,
            },
            BlockSpec {
                map: Some(MapSpec {
                    kind: MapKind::Windowed { window: 2, stride: 2 },
                    hidden: vec![4],
                    outputs: 2,
                    preserve_original: false,
                    inputs: None,
                    hidden_activation: Activation::Tanh,
                    output_activation: Activation::Identity,
                }),
                lift: Lift::Expanding,
                depth: 2,
            },
        ],
        head: HeadSpec {
            kind: HeadKind::Flatten,
            hidden: vec![6],
            outputs: 1,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
        },
    };
    let r = train::gate(&stacked, 12, 8, &cfg).unwrap();
    assert!(r.passed, "stacked: {r:?}");
}

#[test]
fn signature_regression_improves_with_depth() {
    let train_x = generate_batch(ProcessKind::Brownian, 20, 200, 31).unwrap();
    let test_x = generate_batch(ProcessKind::Brownian, 20, 200, 32).unwrap();
    let target = |s: &Stream| s.points().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let design = |xs: &[Stream], depth: usize| -> Vec<Vec<f64>> {
        xs.iter().map(|s| signature(&time_augment(s), depth).unwrap().into_vec()).collect()
    };
    let y_train: Vec<f64> = train_x.iter().map(target).collect();
    let y_test: Vec<f64> = test_x.iter().map(target).collect();
    let mut errors = Vec::new();
    for depth in 1..=4 {
        let beta = support::least_squares(&design(&train_x, depth), &y_train);
        let pred: Vec<f64> = design(&test_x, depth)
            .iter()
            .map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect();
        errors.push(train::mean_sq_err(&pred, &y_test));
    }
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "held-out MSE by depth: {errors:?}");
    }
}
