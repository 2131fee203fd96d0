use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::seed;

fn single_layer(w: Array2<f64>, b: Array1<f64>, act: Activation) -> MlpNetwork {
    MlpNetwork::from_layers(vec![Dense::new(w, b, act).unwrap()]).unwrap()
}

/// `L = sum(probe .* f(x))`, a scalar whose gradient backprop must reproduce.
fn probe_loss(net: &MlpNetwork, x: &Array2<f64>, probe: &Array2<f64>) -> f64 {
    (&net.predict(x.view()).unwrap() * probe).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

#[test]
fn init_zero_biases_and_determinism() {
    let net = MlpNetwork::new(&[2, 2], &[Activation::Identity], 3).unwrap();
    assert_eq!(net.layers()[0].bias().to_vec(), vec![0.0, 0.0]);
    let again = MlpNetwork::new(&[2, 2], &[Activation::Identity], 3).unwrap();
    assert_eq!(net.flat_params(), again.flat_params());
    let other = MlpNetwork::new(&[2, 2], &[Activation::Identity], 4).unwrap();
    assert_ne!(net.flat_params(), other.flat_params());
}

#[test]
fn init_respects_fan_in_bound() {
    let net = MlpNetwork::new(&[4, 8, 4], &[Activation::Relu, Activation::Identity], 7).unwrap();
    assert!(net.layers()[0].weights().iter().all(|w| w.abs() <= 0.5));
    let bound = 1.0 / 8f64.sqrt();
    assert!(net.layers()[1].weights().iter().all(|w| w.abs() <= bound));
}

#[test]
fn init_rejects_bad_dims() {
    assert!(matches!(
        MlpNetwork::new(&[3], &[], 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        MlpNetwork::new(&[3, 2], &[Activation::Relu, Activation::Relu], 0),
        Err(Error::Config(_))
    ));
    let a = Dense::new(Array2::zeros((2, 3)), Array1::zeros(2), Activation::Relu).unwrap();
    let b = Dense::new(Array2::zeros((1, 4)), Array1::zeros(1), Activation::Relu).unwrap();
    assert!(matches!(MlpNetwork::from_layers(vec![a, b]), Err(Error::Shape(_))));
}

#[test]
fn forward_identity_and_zero_weight_cases() {
    let net = single_layer(Array2::eye(2), Array1::zeros(2), Activation::Identity);
    assert_eq!(net.forward(&[2.0, 3.0]).unwrap().0, vec![2.0, 3.0]);

    let net = single_layer(Array2::zeros((2, 2)), array![1.0, -1.0], Activation::Identity);
    assert_eq!(net.forward(&[5.0, -7.0]).unwrap().0, vec![1.0, -1.0]);

    let net = single_layer(array![[1.0, 1.0]], array![0.0], Activation::Sigmoid);
    assert_eq!(net.forward(&[0.0, 0.0]).unwrap().0, vec![0.5]);
}

#[test]
fn forward_rejects_wrong_width() {
    let net = single_layer(Array2::eye(2), Array1::zeros(2), Activation::Identity);
    assert!(matches!(net.forward(&[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
}

#[test]
fn backward_hand_chain_rule() {
    let net = single_layer(Array2::eye(2), Array1::zeros(2), Activation::Identity);
    let (_, cache) = net.forward(&[1.0, 0.0]).unwrap();
    let (g, dx) = net.backward(&cache, array![[1.0, 0.0]].view()).unwrap();
    assert_eq!(g.layers[0].weights, array![[1.0, 0.0], [0.0, 0.0]]);
    assert_eq!(g.layers[0].bias, array![1.0, 0.0]);
    assert_eq!(dx, array![[1.0, 0.0]]);
}

#[test]
fn backward_zero_upstream_gives_zero_gradients() {
    let net = MlpNetwork::new(&[3, 5, 2], &[Activation::Tanh, Activation::Sigmoid], 1).unwrap();
    let (_, cache) = net.forward(&[0.3, -0.2, 0.9]).unwrap();
    let (g, dx) = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
    assert!(g.is_zero());
    assert!(dx.iter().all(|&v| v == 0.0));
}

#[test]
fn stale_cache_is_rejected() {
    let mut net = MlpNetwork::new(&[2, 2], &[Activation::Tanh], 1).unwrap();
    let (_, cache) = net.forward(&[0.1, 0.2]).unwrap();
    let grads = net.backward(&cache, array![[1.0, 1.0]].view()).unwrap().0;
    sgd_step(&mut net, &grads, &OptimizerConfig::default()).unwrap();
    assert!(matches!(
        net.backward(&cache, array![[1.0, 1.0]].view()),
        Err(Error::Contract(_))
    ));
    let other = MlpNetwork::new(&[2, 2], &[Activation::Tanh], 1).unwrap();
    assert!(matches!(
        other.input_gradient(&cache, array![[1.0, 1.0]].view()),
        Err(Error::Contract(_))
    ));
}

/// Central finite differences against backprop over random small networks:
/// 100 randomly chosen parameter probes per network.
#[test]
fn backward_matches_finite_differences() {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Identity, Activation::Relu];
    let mut rng = seed::rng(99);
    for trial in 0..12u64 {
        let depth = 1 + (trial as usize % 3);
        let mut dims = vec![rng.random_range(1..=8)];
        for _ in 0..depth {
            dims.push(rng.random_range(1..=64usize.min(16)));
        }
        let activations: Vec<_> = (0..depth).map(|i| acts[(trial as usize + i) % 4]).collect();
        let mut net = MlpNetwork::new(&dims, &activations, trial).unwrap();
        let batch = 3;
        let x = Array2::from_shape_fn((batch, dims[0]), |_| rng.random_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((batch, *dims.last().unwrap()), |_| {
            rng.random_range(-1.0..1.0)
        });
        let cache = net.forward_batch(x.view()).unwrap();
        let (grads, dx) = net.backward(&cache, probe.view()).unwrap();
        let analytic = grads.flatten();
        let base = net.flat_params();
        let h = 1e-5;
        for _ in 0..100 {
            let i = rng.random_range(0..base.len());
            let mut p = base.clone();
            p[i] = base[i] + h;
            net.set_flat_params(&p).unwrap();
            let up = probe_loss(&net, &x, &probe);
            p[i] = base[i] - h;
            net.set_flat_params(&p).unwrap();
            let down = probe_loss(&net, &x, &probe);
            let numeric = (up - down) / (2.0 * h);
            assert!(
                rel_err(analytic[i], numeric) < 1e-4,
                "trial {trial} param {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
        net.set_flat_params(&base).unwrap();
        // input gradient
        for r in 0..batch {
            for c in 0..dims[0] {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let up = probe_loss(&net, &xp, &probe);
                xp[[r, c]] -= 2.0 * h;
                let down = probe_loss(&net, &xp, &probe);
                let numeric = (up - down) / (2.0 * h);
                assert!(rel_err(dx[[r, c]], numeric) < 1e-4);
            }
        }
        let cache = net.forward_batch(x.view()).unwrap();
        assert_eq!(net.input_gradient(&cache, probe.view()).unwrap(), dx);
    }
}

#[test]
fn sgd_step_arithmetic() {
    let mut net = single_layer(array![[1.0]], array![1.0], Activation::Identity);
    let g = Gradients {
        layers: vec![LayerGradient {
            weights: array![[1.0]],
            bias: array![1.0],
        }],
    };
    let cfg = OptimizerConfig::new(0.01).unwrap();
    sgd_step(&mut net, &g, &cfg).unwrap();
    assert_eq!(net.flat_params(), vec![0.99, 0.99]);
    sgd_step(&mut net, &g, &cfg).unwrap();
    let expected = 1.0 - 2.0 * 0.01;
    for p in net.flat_params() {
        assert!((p - expected).abs() < 1e-15);
    }
}

#[test]
fn sgd_zero_gradient_is_noop_and_non_finite_is_rejected() {
    let mut net = MlpNetwork::new(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 5).unwrap();
    let before = net.flat_params();
    let zeros = Gradients::zeros_like(&net);
    sgd_step(&mut net, &zeros, &OptimizerConfig::default()).unwrap();
    assert_eq!(before, net.flat_params());

    let mut g = Gradients::zeros_like(&net);
    g.layers[1].bias[0] = f64::NAN;
    match sgd_step(&mut net, &g, &OptimizerConfig::default()) {
        Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 1),
        other => panic!("expected non-finite error, got {other:?}"),
    }
    assert_eq!(before, net.flat_params());
}

#[test]
fn optimizer_config_bounds() {
    assert!(OptimizerConfig::new(0.0).is_err());
    assert!(OptimizerConfig::new(1.5).is_err());
    assert!(OptimizerConfig::new(1.0).is_ok());
}

/// Loss (p - c)^2 on a single bias parameter, eta = 0.1.
#[test]
fn sgd_converges_on_scalar_quadratic() {
    let c = 3.7;
    let mut net = single_layer(array![[0.0]], array![0.0], Activation::Identity);
    let cfg = OptimizerConfig::new(0.1).unwrap();
    let mut steps = 0;
    loop {
        let (out, cache) = net.forward(&[0.0]).unwrap();
        if (out[0] - c).abs() < 1e-6 {
            break;
        }
        let upstream = array![[2.0 * (out[0] - c)]];
        let (g, _) = net.backward(&cache, upstream.view()).unwrap();
        sgd_step(&mut net, &g, &cfg).unwrap();
        steps += 1;
        assert!(steps <= 200, "did not converge in 200 steps");
    }
}

#[test]
fn soft_update_examples() {
    let source = single_layer(array![[1.0]], array![1.0], Activation::Identity);
    let mut target = single_layer(array![[0.0]], array![0.0], Activation::Identity);
    soft_update(&mut target, &source, 0.001).unwrap();
    assert_eq!(target.flat_params(), vec![0.001, 0.001]);

    let mut target = single_layer(array![[-4.0]], array![9.0], Activation::Identity);
    soft_update(&mut target, &source, 1.0).unwrap();
    assert_eq!(target, source);

    let mut same = source.clone();
    soft_update(&mut same, &source, 0.37).unwrap();
    assert_eq!(same, source);

    let wider = single_layer(array![[1.0, 2.0]], array![1.0], Activation::Identity);
    assert!(matches!(soft_update(&mut same, &wider, 0.5), Err(Error::Shape(_))));
    assert!(matches!(soft_update(&mut same, &source, 0.0), Err(Error::Config(_))));
}

#[test]
fn blob_round_trip_is_bit_exact() {
    let net = MlpNetwork::new(&[5, 7, 3], &[Activation::Tanh, Activation::Sigmoid], 11).unwrap();
    let bytes = serialize_params(&net);
    let back = deserialize_params(&bytes).unwrap();
    assert_eq!(back, net);
    let a: Vec<u64> = net.flat_params().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);

    let other = MlpNetwork::new(&[5, 7, 3], &[Activation::Tanh, Activation::Sigmoid], 12).unwrap();
    assert_ne!(serialize_params(&other), bytes);
}

#[test]
fn blob_rejects_corruption() {
    let net = MlpNetwork::new(&[2, 3], &[Activation::Relu], 1).unwrap();
    let bytes = serialize_params(&net);
    assert!(matches!(deserialize_params(&bytes[..bytes.len() - 3]), Err(Error::Blob(_))));
    assert!(matches!(deserialize_params(&bytes[..6]), Err(Error::Blob(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(deserialize_params(&extra), Err(Error::Blob(_))));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(deserialize_params(&bad_magic), Err(Error::Blob(_))));
}

#[test]
fn blob_shape_mismatch_is_a_schema_error() {
    let mut blob = ParamBlob::new();
    blob.meta.insert("layer_count".into(), "1".into());
    blob.meta.insert("layers.0.activation".into(), "relu".into());
    blob.push("layers.0.weight", ParamTensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
    blob.push("layers.0.bias", ParamTensor::new(vec![3], vec![0.0; 3]).unwrap());
    let bytes = blob.to_bytes();
    assert!(matches!(deserialize_params(&bytes), Err(Error::Schema(_))));
}

fn arb_net() -> impl Strategy<Value = (Vec<usize>, u64)> {
    (prop::collection::vec(1usize..6, 2..4), any::<u64>())
}

proptest! {
    #[test]
    fn soft_update_is_a_convex_combination((dims, s) in arb_net(), tau in 0.0001f64..=1.0) {
        let acts = vec![Activation::Tanh; dims.len() - 1];
        let mut target = MlpNetwork::new(&dims, &acts, s).unwrap();
        let source = MlpNetwork::new(&dims, &acts, s.wrapping_add(1)).unwrap();
        let before = target.flat_params();
        soft_update(&mut target, &source, tau).unwrap();
        for ((t0, t1), s) in before.iter().zip(target.flat_params()).zip(source.flat_params()) {
            prop_assert!(t1 >= t0.min(s) && t1 <= t0.max(s));
        }
    }

    #[test]
    fn forward_backward_update_are_deterministic((dims, s) in arb_net()) {
        let acts = vec![Activation::Sigmoid; dims.len() - 1];
        let run = || {
            let mut net = MlpNetwork::new(&dims, &acts, s).unwrap();
            let x = Array2::from_elem((2, dims[0]), 0.25);
            let cache = net.forward_batch(x.view()).unwrap();
            let up = Array2::from_elem(cache.output().dim(), 1.0);
            let (g, _) = net.backward(&cache, up.view()).unwrap();
            sgd_step(&mut net, &g, &OptimizerConfig::default()).unwrap();
            net.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
