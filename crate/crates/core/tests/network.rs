//! Network engine against a straight-line reimplementation built on the
//! direct convolution formula.

use polynas::nnet::{backward, fisher_potential, forward, legality_fisher, Batch, FisherDecision, Network};
use polynas::{reference_conv, ConvSpec, Tensor};

/// Mean cross-entropy computed layer by layer with `reference_conv`.
#[allow(clippy::needless_range_loop)]
fn loss_by_hand(specs: &[(ConvSpec, bool)], net: &Network, batch: &Batch) -> f64 {
    let n = batch.len();
    let x = batch.inputs.to_f64_vec();
    let per: usize = batch.inputs.shape()[1..].iter().product();
    let mut total = 0.0;
    for i in 0..n {
        let mut act = Tensor::from_f64(&specs[0].0.input_shape(), x[i * per..(i + 1) * per].to_vec()).unwrap();
        for ((spec, relu), layer) in specs.iter().zip(&net.layers) {
            let w = Tensor::from_f64(&spec.weight_shape(), layer.weights.clone()).unwrap();
            let mut out = reference_conv(spec, &act, &w).unwrap().to_f64_vec();
            if *relu {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            act = Tensor::from_f64(&spec.output_shape(), out).unwrap();
        }
        let shape = act.shape().to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let v = act.to_f64_vec();
        let mut pooled = vec![0.0; c];
        for ch in 0..c {
            for k in 0..hw {
                pooled[ch] += v[ch * hw + k];
            }
            pooled[ch] /= hw as f64;
        }
        let mut logits = vec![0.0; net.num_classes];
        for k in 0..net.num_classes {
            logits[k] = net.head_b[k];
            for ch in 0..c {
                logits[k] += net.head_w[k * c + ch] * pooled[ch];
            }
        }
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        total += -(logits[batch.labels[i]] - m - z.ln());
    }
    total / n as f64
}

fn specs() -> Vec<(ConvSpec, bool)> {
    vec![
        (ConvSpec::new(3, 4, 6, 6, 3, 3).with_pad(1).with_stride(2), true),
        (ConvSpec::new(4, 4, 3, 3, 3, 3).with_pad(1).with_groups(2), true),
        (ConvSpec::new(4, 6, 3, 3, 1, 1).with_bottleneck(2), false),
    ]
}

#[test]
fn loss_matches_straight_line_reimplementation() {
    let specs = specs();
    for seed in 0..5 {
        let net = Network::from_specs(&specs, 4, seed).unwrap();
        let batch = Batch::synthetic(&[3, 6, 6], 5, 4, seed + 100).unwrap();
        let (loss, _) = forward(&net, &batch).unwrap();
        let want = loss_by_hand(&specs, &net, &batch);
        assert!((loss - want).abs() <= 1e-10 * want.abs(), "{loss} vs {want}");
    }
}

#[test]
fn identity_one_by_one_layer_passes_relu_of_input() {
    let spec = ConvSpec::new(2, 2, 3, 3, 1, 1);
    let mut net = Network::from_specs(&[(spec, true)], 2, 0).unwrap();
    net.layers[0].weights = vec![1.0, 0.0, 0.0, 1.0];
    let batch = Batch::synthetic(&[2, 3, 3], 2, 2, 1).unwrap();
    let (_, acts) = forward(&net, &batch).unwrap();
    let want: Vec<f64> = batch.inputs.to_f64_vec().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(acts[0].to_f64_vec(), want);
}

#[test]
fn dead_channel_passes_no_gradient() {
    let spec = ConvSpec::new(2, 3, 4, 4, 3, 3).with_pad(1);
    let mut net = Network::from_specs(&[(spec.clone(), true), (ConvSpec::new(3, 2, 4, 4, 1, 1), true)], 2, 3).unwrap();
    // Output channel 0 of the first layer: zero weights, so its relu output is 0.
    let per = 2 * 3 * 3;
    net.layers[0].weights[..per].iter_mut().for_each(|w| *w = 0.0);
    let batch = Batch::synthetic(&[2, 4, 4], 4, 2, 8).unwrap();
    let g = backward(&net, &batch).unwrap();
    assert!(g.weight_grads[0][..per].iter().all(|v| *v == 0.0));
    assert!(g.weight_grads[0][per..].iter().any(|v| *v != 0.0));
    let a = g.activations[0].to_f64_vec();
    let hw = 16;
    for i in 0..4 {
        assert!(a[i * 3 * hw..i * 3 * hw + hw].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn zeroed_first_layer_is_rejected_and_self_is_accepted() {
    let net = Network::from_specs(&specs(), 4, 2).unwrap();
    let batch = Batch::synthetic(&[3, 6, 6], 8, 4, 3).unwrap();
    assert_eq!(legality_fisher(&net, &net, &batch).unwrap(), FisherDecision::Accept);
    let mut dead = net.clone();
    dead.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
    assert!(fisher_potential(&dead, &batch).unwrap().total == 0.0);
    assert!(matches!(legality_fisher(&net, &dead, &batch).unwrap(), FisherDecision::Reject(_)));
}

#[test]
fn equal_shapes_get_equal_weights_across_networks() {
    let a = Network::from_specs(&specs(), 4, 9).unwrap();
    let mut other = specs();
    other[2].0 = ConvSpec::new(4, 6, 3, 3, 1, 1);
    let b = Network::from_specs(&other, 4, 9).unwrap();
    assert_eq!(a.layers[0].weights, b.layers[0].weights);
    assert_eq!(a.layers[1].weights, b.layers[1].weights);
    assert_ne!(a.layers[2].weights.len(), b.layers[2].weights.len());
}
