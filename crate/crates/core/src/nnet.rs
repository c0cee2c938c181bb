//! Minimal conv/relu network engine with reverse-mode gradients and the
//! Fisher Potential score.
//!
//! A network is a chain of loop-nest layers followed by global average
//! pooling and a linear classifier. Each layer is flattened into a
//! [`MacProgram`], so any transformed nest (grouped, bottlenecked, split,
//! tiled, ...) runs unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::{conv_nest, ConvError, ConvSpec};
use crate::interp::{InterpError, MacProgram, Tensor};
use crate::ir::LoopNest;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("network has no layers")]
    EmptyNetwork,
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Conv(#[from] ConvError),
}

/// Derives an independent seed for a sub-stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
    z * std
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub nest: LoopNest,
    pub relu: bool,
    pub program: MacProgram,
    pub weights: Vec<f64>,
}

impl Layer {
    pub fn out_channels(&self) -> usize {
        self.program.output_shape[0]
    }

    /// Average multiply-accumulates per output cell.
    pub fn fan_in(&self) -> f64 {
        self.program.mac_count() as f64 / self.program.output_len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    /// `num_classes x C` row-major, `C` the last layer's channel count.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub seed: u64,
}

const HEAD_STREAM: u64 = 0xFFFF;

impl Network {
    pub fn from_specs(
        layers: &[(ConvSpec, bool)],
        num_classes: usize,
        seed: u64,
    ) -> Result<Network, NnetError> {
        let nests = layers
            .iter()
            .map(|(s, relu)| Ok((conv_nest(s)?, *relu)))
            .collect::<Result<Vec<_>, NnetError>>()?;
        Network::from_nests(nests, num_classes, seed)
    }

    /// Builds a network from layer nests with seeded fan-in scaled Gaussian
    /// weights. Layer `l` draws from its own stream, so layers with equal
    /// shapes get equal weights across networks built from the same seed.
    pub fn from_nests(
        layers: Vec<(LoopNest, bool)>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Network, NnetError> {
        if layers.is_empty() {
            return Err(NnetError::EmptyNetwork);
        }
        if num_classes == 0 {
            return Err(NnetError::ShapeMismatch("num_classes must be positive".into()));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (l, (nest, relu)) in layers.into_iter().enumerate() {
            let program = MacProgram::compile(&nest)?;
            if program.output_shape.len() != 3 || program.input_shape.len() != 3 {
                return Err(NnetError::ShapeMismatch(format!(
                    "layer {l}: input and output must be C x H x W"
                )));
            }
            let mut layer = Layer {
                nest,
                relu,
                weights: Vec::new(),
                program,
            };
            let std = (2.0 / layer.fan_in().max(1.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, l as u64));
            layer.weights = (0..layer.program.weight_len()).map(|_| normal(&mut rng, std)).collect();
            out.push(layer);
        }
        for (l, pair) in out.windows(2).enumerate() {
            if pair[0].program.output_shape != pair[1].program.input_shape {
                return Err(NnetError::ShapeMismatch(format!(
                    "layer {l} produces {:?} but layer {} expects {:?}",
                    pair[0].program.output_shape,
                    l + 1,
                    pair[1].program.input_shape
                )));
            }
        }
        let c = out.last().expect("non-empty").out_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, HEAD_STREAM));
        // Unit variance regardless of width: a 1/sqrt(C) head would make the
        // expected score independent of channel counts.
        let head_w = (0..num_classes * c).map(|_| normal(&mut rng, 1.0)).collect();
        Ok(Network {
            layers: out,
            num_classes,
            head_w,
            head_b: vec![0.0; num_classes],
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].program.input_shape
    }

    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
    }

    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(|l| l.program.mac_count() as u64).sum()
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), NnetError> {
        let shape = batch.inputs.shape();
        if shape.len() != 4 || shape[1..] != *self.input_shape() {
            return Err(NnetError::ShapeMismatch(format!(
                "batch shape {shape:?} does not match network input {:?}",
                self.input_shape()
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(NnetError::InvalidBatch(format!(
                "label {bad} outside {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Loss with layer `from`'s activations replaced by `acts` (N x C x H x W
    /// flattened). Used for finite-difference checks.
    pub fn loss_from_layer(&self, batch: &Batch, from: usize, acts: &[f64]) -> Result<f64, NnetError> {
        self.check_batch(batch)?;
        let per = self.layers[from].program.output_len();
        let n = batch.len();
        let mut loss = 0.0;
        for i in 0..n {
            let mut x = acts[i * per..(i + 1) * per].to_vec();
            for layer in &self.layers[from + 1..] {
                let mut z = vec![0.0; layer.program.output_len()];
                layer.program.forward(&x, &layer.weights, &mut z);
                if layer.relu {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                x = z;
            }
            let (l, _) = self.head_loss(&x, batch.labels[i]);
            loss += l;
        }
        Ok(loss / n as f64)
    }

    /// Cross-entropy of one example and the pooled features.
    fn head_loss(&self, last: &[f64], label: usize) -> (f64, Vec<f64>) {
        let feats = self.pool(last);
        let probs = self.softmax(&feats);
        (-probs[label].ln(), feats)
    }

    fn pool(&self, last: &[f64]) -> Vec<f64> {
        let c = self.layers.last().expect("non-empty").out_channels();
        let hw = last.len() / c;
        (0..c)
            .map(|k| last[k * hw..(k + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect()
    }

    fn softmax(&self, feats: &[f64]) -> Vec<f64> {
        let c = feats.len();
        let logits: Vec<f64> = (0..self.num_classes)
            .map(|k| {
                self.head_b[k]
                    + self.head_w[k * c..(k + 1) * c]
                        .iter()
                        .zip(feats)
                        .map(|(w, f)| w * f)
                        .sum::<f64>()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// A minibatch: `N x C x H x W` float inputs and class labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Batch, NnetError> {
        let shape = inputs.shape();
        if shape.len() != 4 || shape[0] == 0 {
            return Err(NnetError::InvalidBatch(format!("inputs of shape {shape:?} are not N x C x H x W")));
        }
        if labels.len() != shape[0] {
            return Err(NnetError::InvalidBatch(format!(
                "{} labels for {} examples",
                labels.len(),
                shape[0]
            )));
        }
        let inputs = inputs.to_mode(crate::interp::ElementMode::Float64)?;
        Ok(Batch { inputs, labels })
    }

    /// Standard normal inputs and uniform labels from a seed.
    pub fn synthetic(shape: &[usize], n: usize, num_classes: usize, seed: u64) -> Result<Batch, NnetError> {
        if n == 0 || num_classes == 0 {
            return Err(NnetError::InvalidBatch("need at least one example and one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut full = vec![n];
        full.extend_from_slice(shape);
        let inputs = Tensor::random_normal(&full, 1.0, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
        Batch::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn example(&self, i: usize) -> &[f64] {
        let per: usize = self.inputs.shape()[1..].iter().product();
        &self.inputs.as_f64().expect("float batch")[i * per..(i + 1) * per]
    }
}

/// Everything a forward and backward pass produces.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    /// Post-nonlinearity activations per layer, `N x C x H x W`.
    pub activations: Vec<Tensor>,
    /// `dL/dA` per layer, same shapes as `activations`.
    pub activation_grads: Vec<Tensor>,
    pub weight_grads: Vec<Vec<f64>>,
    pub head_w_grad: Vec<f64>,
    pub head_b_grad: Vec<f64>,
}

fn batch_shape(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(shape);
    s
}

/// Loss and per-layer activations.
pub fn forward(net: &Network, batch: &Batch) -> Result<(f64, Vec<Tensor>), NnetError> {
    let g = backward_scaled(net, batch, 1.0)?;
    Ok((g.loss, g.activations))
}

/// `dL/dA` for every recorded activation.
pub fn activation_gradients(net: &Network, batch: &Batch) -> Result<Vec<Tensor>, NnetError> {
    Ok(backward_scaled(net, batch, 1.0)?.activation_grads)
}

pub fn backward(net: &Network, batch: &Batch) -> Result<Gradients, NnetError> {
    backward_scaled(net, batch, 1.0)
}

/// Forward and reverse pass for the loss multiplied by `scale`.
pub fn backward_scaled(net: &Network, batch: &Batch, scale: f64) -> Result<Gradients, NnetError> {
    net.check_batch(batch)?;
    let n = batch.len();
    let nl = net.layers.len();
    let mut acts: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| vec![0.0; n * l.program.output_len()])
        .collect();
    let mut agrads: Vec<Vec<f64>> = acts.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut wgrads: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let c = net.layers[nl - 1].out_channels();
    let mut hw_grad = vec![0.0; net.head_w.len()];
    let mut hb_grad = vec![0.0; net.num_classes];
    let mut loss = 0.0;
    for i in 0..n {
        // forward
        for (l, layer) in net.layers.iter().enumerate() {
            let per = layer.program.output_len();
            let (before, rest) = acts.split_at_mut(l);
            let x = if l == 0 {
                batch.example(i)
            } else {
                let p = net.layers[l - 1].program.output_len();
                &before[l - 1][i * p..(i + 1) * p]
            };
            let out = &mut rest[0][i * per..(i + 1) * per];
            layer.program.forward(x, &layer.weights, out);
            if layer.relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let last_len = net.layers[nl - 1].program.output_len();
        let last = &acts[nl - 1][i * last_len..(i + 1) * last_len];
        let feats = net.pool(last);
        let probs = net.softmax(&feats);
        let y = batch.labels[i];
        loss += -probs[y].ln();

        // reverse: head
        let mut dfeat = vec![0.0; c];
        for k in 0..net.num_classes {
            let dlogit = scale * (probs[k] - if k == y { 1.0 } else { 0.0 }) / n as f64;
            hb_grad[k] += dlogit;
            for j in 0..c {
                hw_grad[k * c + j] += dlogit * feats[j];
                dfeat[j] += dlogit * net.head_w[k * c + j];
            }
        }
        let hw = last_len / c;
        {
            let g = &mut agrads[nl - 1][i * last_len..(i + 1) * last_len];
            for j in 0..c {
                for v in &mut g[j * hw..(j + 1) * hw] {
                    *v = dfeat[j] / hw as f64;
                }
            }
        }
        // reverse: layers
        for l in (0..nl).rev() {
            let layer = &net.layers[l];
            let per = layer.program.output_len();
            let a = &acts[l][i * per..(i + 1) * per];
            let mut dz: Vec<f64> = agrads[l][i * per..(i + 1) * per].to_vec();
            if layer.relu {
                for (d, &v) in dz.iter_mut().zip(a) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x: Vec<f64> = if l == 0 {
                batch.example(i).to_vec()
            } else {
                let p = net.layers[l - 1].program.output_len();
                acts[l - 1][i * p..(i + 1) * p].to_vec()
            };
            let mut dx = vec![0.0; x.len()];
            layer.program.backward(&x, &layer.weights, &dz, &mut dx, &mut wgrads[l]);
            if l > 0 {
                let p = net.layers[l - 1].program.output_len();
                agrads[l - 1][i * p..(i + 1) * p].copy_from_slice(&dx);
            }
        }
    }
    let to_tensors = |bufs: Vec<Vec<f64>>| -> Result<Vec<Tensor>, NnetError> {
        bufs.into_iter()
            .zip(&net.layers)
            .map(|(b, l)| Ok(Tensor::from_f64(&batch_shape(n, &l.program.output_shape), b)?))
            .collect()
    };
    Ok(Gradients {
        loss: scale * loss / n as f64,
        activations: to_tensors(acts)?,
        activation_grads: to_tensors(agrads)?,
        weight_grads: wgrads,
        head_w_grad: hw_grad,
        head_b_grad: hb_grad,
    })
}

/// Channel error of one channel: `1/(2N) * sum_n (-sum_ij A[n,i,j] g[n,i,j])^2`
/// for `A`, `g` of shape `N x H x W`.
pub fn fisher_channel(a: &Tensor, g: &Tensor) -> Result<f64, NnetError> {
    if a.shape() != g.shape() || a.shape().is_empty() {
        return Err(NnetError::ShapeMismatch(format!(
            "activation {:?} and gradient {:?} differ",
            a.shape(),
            g.shape()
        )));
    }
    let n = a.shape()[0];
    let per = a.len() / n;
    let (av, gv) = (a.to_f64_vec(), g.to_f64_vec());
    Ok(channel_error(&av, &gv, n, per, per, 0))
}

/// Channel error over strided storage: example `i` of the channel occupies
/// `[i * stride + offset, i * stride + offset + len)`.
fn channel_error(a: &[f64], g: &[f64], n: usize, stride: usize, len: usize, offset: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        let base = i * stride + offset;
        let dot: f64 = a[base..base + len]
            .iter()
            .zip(&g[base..base + len])
            .map(|(x, y)| x * y)
            .sum();
        sum += dot * dot;
    }
    sum / (2.0 * n as f64)
}

/// Sum of channel errors over the output channels (dimension 1) of
/// `N x C x H x W` activations and gradients.
pub fn fisher_layer(acts: &Tensor, grads: &Tensor) -> Result<f64, NnetError> {
    if acts.shape() != grads.shape() || acts.shape().len() < 2 {
        return Err(NnetError::ShapeMismatch(format!(
            "activation {:?} and gradient {:?} differ",
            acts.shape(),
            grads.shape()
        )));
    }
    let (n, c) = (acts.shape()[0], acts.shape()[1]);
    let stride = acts.len() / n;
    let len = stride / c;
    let (av, gv) = (acts.to_f64_vec(), grads.to_f64_vec());
    Ok((0..c).map(|k| channel_error(&av, &gv, n, stride, len, k * len)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub per_layer: Vec<f64>,
    pub total: f64,
    pub seed: u64,
}

impl FisherReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for (l, d) in self.per_layer.iter().enumerate() {
            out.push_str(&format!("layer {l} delta {d:.12e}\n"));
        }
        out.push_str(&format!("total {:.12e}\n", self.total));
        out
    }
}

pub fn fisher_potential(net: &Network, batch: &Batch) -> Result<FisherReport, NnetError> {
    let g = backward(net, batch)?;
    let per_layer = g
        .activations
        .iter()
        .zip(&g.activation_grads)
        .map(|(a, d)| fisher_layer(a, d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FisherReport {
        total: per_layer.iter().sum(),
        per_layer,
        seed: net.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum FisherDecision {
    Accept,
    Reject(String),
}

impl FisherDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, FisherDecision::Accept)
    }
}

/// Acceptance rule on precomputed reports. The whole-network rule accepts
/// when the candidate total is not below the original total. With
/// `layer_veto = Some(f)`, a candidate is also rejected when any layer's
/// score drops below `f` times the original layer's score.
pub fn fisher_decision(
    original: &FisherReport,
    candidate: &FisherReport,
    layer_veto: Option<f64>,
) -> FisherDecision {
    if candidate.total < original.total {
        return FisherDecision::Reject(format!(
            "potential {:.6e} below original {:.6e}",
            candidate.total, original.total
        ));
    }
    if let Some(frac) = layer_veto {
        for (l, (c, o)) in candidate.per_layer.iter().zip(&original.per_layer).enumerate() {
            if *c < frac * o {
                return FisherDecision::Reject(format!(
                    "layer {l} potential {c:.6e} below {frac} of original {o:.6e}"
                ));
            }
        }
    }
    FisherDecision::Accept
}

pub fn legality_fisher(original: &Network, candidate: &Network, batch: &Batch) -> Result<FisherDecision, NnetError> {
    let o = fisher_potential(original, batch)?;
    let c = fisher_potential(candidate, batch)?;
    Ok(fisher_decision(&o, &c, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Network {
        Network::from_specs(
            &[
                (ConvSpec::new(2, 3, 4, 4, 3, 3).with_pad(1), true),
                (ConvSpec::new(3, 4, 4, 4, 3, 3).with_pad(1), true),
            ],
            3,
            5,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_loss_and_zero_potential() {
        let mut net = toy();
        net.zero_weights();
        let batch = Batch::synthetic(&[2, 4, 4], 4, 3, 1).unwrap();
        let (loss, _) = forward(&net, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert_eq!(fisher_potential(&net, &batch).unwrap().total, 0.0);
    }

    #[test]
    fn hand_channel_value() {
        let a = Tensor::from_f64(&[1, 1, 1], vec![2.0]).unwrap();
        let g = Tensor::from_f64(&[1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(fisher_channel(&a, &g).unwrap(), 18.0);
        let z = Tensor::from_f64(&[1, 1, 1], vec![0.0]).unwrap();
        assert_eq!(fisher_channel(&z, &g).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_examples_leave_channel_error_unchanged() {
        let a = Tensor::from_f64(&[2, 2, 1], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let g = Tensor::from_f64(&[2, 2, 1], vec![0.3, -0.2, 0.7, 0.1]).unwrap();
        let a2 = Tensor::from_f64(&[4, 2, 1], [a.to_f64_vec(), a.to_f64_vec()].concat()).unwrap();
        let g2 = Tensor::from_f64(&[4, 2, 1], [g.to_f64_vec(), g.to_f64_vec()].concat()).unwrap();
        let d1 = fisher_channel(&a, &g).unwrap();
        let d2 = fisher_channel(&a2, &g2).unwrap();
        assert!((d1 - d2).abs() <= 1e-15 * d1.abs());
    }

    #[test]
    fn reflexive_acceptance_and_determinism() {
        let net = toy();
        let batch = Batch::synthetic(&[2, 4, 4], 4, 3, 9).unwrap();
        assert!(legality_fisher(&net, &net, &batch).unwrap().accepted());
        let a = fisher_potential(&net, &batch).unwrap();
        let b = fisher_potential(&toy(), &batch).unwrap();
        assert_eq!(a, b);
        assert!(a.per_layer.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn loss_scaling_scales_gradients() {
        let net = toy();
        let batch = Batch::synthetic(&[2, 4, 4], 3, 3, 2).unwrap();
        let g1 = backward_scaled(&net, &batch, 1.0).unwrap();
        let g3 = backward_scaled(&net, &batch, 3.0).unwrap();
        for (a, b) in g1.activation_grads.iter().zip(&g3.activation_grads) {
            for (x, y) in a.to_f64_vec().iter().zip(b.to_f64_vec()) {
                assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let r = Network::from_specs(
            &[
                (ConvSpec::new(2, 3, 4, 4, 1, 1), true),
                (ConvSpec::new(4, 4, 4, 4, 1, 1), true),
            ],
            3,
            0,
        );
        assert!(matches!(r, Err(NnetError::ShapeMismatch(_))));
    }
}
