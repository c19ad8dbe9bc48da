//! Fixed-architecture micro-CNNs with hand-written forward and backward
//! passes.
//!
//! Two networks are supported:
//!
//! ```text
//! Net2D  3x64x64     conv3x3(16) relu pool2 | conv3x3(32) relu pool2 | conv3x3(64) relu* pool2 | fc(4096)
//! Net3D  3x16x32x32  conv3^3(16) relu pool(1,2,2) | conv3^3(32) relu pool2 | conv3^3(64) relu* pool2 | fc(4096)
//! ```
//!
//! `*` marks the final-conv tap used by the CAM family of saliency methods.
//! Net3D's tap has 8 frames for a 16-frame input.

mod backward;
mod checkpoint;
pub(crate) mod kernels;
mod train;

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;
use kernels::{ConvGeom, Dims, Scalar};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use backward::InputAndTap;
pub use train::{accuracy, train_sgd, EpochMetrics, Labeled, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetKind {
    Net2D,
    Net3D,
}

impl NetKind {
    pub fn input_shape(self) -> Vec<usize> {
        match self {
            NetKind::Net2D => vec![3, 64, 64],
            NetKind::Net3D => vec![3, 16, 32, 32],
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetKind::Net2D => "net2d",
            NetKind::Net3D => "net3d",
        })
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "net2d" | "2d" => Ok(NetKind::Net2D),
            "net3d" | "3d" => Ok(NetKind::Net3D),
            _ => Err(Error::invalid(format!("unknown network kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetKind,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackwardMode {
    Standard,
    /// ReLUs additionally drop negative incoming gradients.
    Guided,
}

/// Which scalar the gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GradientSource {
    /// The pre-softmax score of the class.
    #[default]
    Logit,
    /// The softmax probability of the class.
    Probability,
}

/// Class whose score is differentiated, and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub class: usize,
    pub source: GradientSource,
}

impl From<usize> for Target {
    fn from(class: usize) -> Self {
        Target {
            class,
            source: GradientSource::Logit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    /// Subtracts a constant from every element (input centring).
    Shift(f32),
    Conv { geom: ConvGeom, param: usize },
    Relu,
    MaxPool { window: [usize; 3] },
    Fc { param: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Param {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A micro-CNN and its parameters. Immutable during inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// `dims[i]` is the input of layer `i`; the last entry is the logits.
    dims: Vec<Dims>,
    /// Index of the layer whose output is the final-conv tap.
    tap: usize,
    params: Vec<Param>,
}

// Per-thread pass counters. Each forward or backward call on a network
// bumps the counter of the calling thread.
thread_local! {
    static PASSES: Cell<PassCounts> = const { Cell::new(PassCounts { forward: 0, backward: 0 }) };
}

/// Number of network passes observed on the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward: usize,
    pub backward: usize,
}

fn bump(forward: usize, backward: usize) {
    PASSES.with(|p| {
        let mut c = p.get();
        c.forward += forward;
        c.backward += backward;
        p.set(c);
    });
}

/// Runs `f` and reports how many passes it made on this thread.
pub fn count_passes<R>(f: impl FnOnce() -> R) -> (R, PassCounts) {
    let before = PASSES.with(|p| p.get());
    let out = f();
    let after = PASSES.with(|p| p.get());
    (
        out,
        PassCounts {
            forward: after.forward - before.forward,
            backward: after.backward - before.backward,
        },
    )
}

/// Activations cached by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f32>,
    outputs: Vec<Vec<f32>>,
    argmax: Vec<Option<Vec<u32>>>,
    logits: Vec<f32>,
    probabilities: Vec<f32>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn probabilities(&self) -> &[f32] {
        &self.probabilities
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / total) as f32).collect()
}

/// Anything that maps an input to class probabilities.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn input_shape(&self) -> &[usize];
    fn probabilities(&self, input: &Tensor) -> Result<Vec<f32>>;

    fn predict(&self, input: &Tensor) -> Result<(usize, Vec<f32>)> {
        let p = self.probabilities(input)?;
        Ok((argmax(&p), p))
    }
}

impl Network {
    /// Builds the architecture for `spec` with He-uniform weights,
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`, and zero biases.
    pub fn init_weights(spec: NetworkSpec, seed: u64) -> Result<Self> {
        if spec.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let (kernel, pad, pools): ([usize; 3], [usize; 3], [[usize; 3]; 3]) = match spec.kind {
            NetKind::Net2D => ([1, 3, 3], [0, 1, 1], [[1, 2, 2]; 3]),
            NetKind::Net3D => ([3, 3, 3], [1, 1, 1], [[1, 2, 2], [2, 2, 2], [2, 2, 2]]),
        };
        let input_shape = spec.kind.input_shape();
        let mut dims = input_dims(&input_shape);
        let mut layers = vec![Layer::Shift(0.5)];
        let mut param_shapes = Vec::new();
        let mut tap = 0;
        for (i, (&out_c, pool)) in [16usize, 32, 64].iter().zip(pools).enumerate() {
            let geom = ConvGeom {
                input: dims,
                out_c,
                kernel,
                pad,
            };
            let mut wshape = vec![out_c, dims.c];
            wshape.extend(match spec.kind {
                NetKind::Net2D => &kernel[1..],
                NetKind::Net3D => &kernel[..],
            });
            param_shapes.push((format!("conv{}", i + 1), wshape, out_c));
            layers.push(Layer::Conv { geom, param: i });
            layers.push(Layer::Relu);
            tap = layers.len() - 1;
            layers.push(Layer::MaxPool { window: pool });
            dims = kernels::pool_output(geom.output(), pool);
        }
        param_shapes.push(("fc".into(), vec![spec.num_classes, dims.len()], spec.num_classes));
        layers.push(Layer::Fc { param: 3 });

        let mut rng = Prng::new(seed);
        let params = param_shapes
            .into_iter()
            .map(|(name, wshape, n_out)| {
                let fan_in: usize = wshape[1..].iter().product();
                let bound = (6.0 / fan_in as f32).sqrt();
                let weight = Tensor::from_fn(wshape, |_| rng.uniform(-bound, bound))?;
                let bias = Tensor::zeros(vec![n_out])?;
                Ok(Param { name, weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_layers(spec, input_shape, layers, tap, params)
    }

    pub(crate) fn from_layers(
        spec: NetworkSpec,
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        tap: usize,
        params: Vec<Param>,
    ) -> Result<Self> {
        let mut dims = vec![input_dims(&input_shape)];
        for layer in &layers {
            let d = *dims.last().unwrap();
            let next = match layer {
                Layer::Conv { geom, param } => {
                    let p = &params[*param];
                    if geom.input != d || p.weight.len() != geom.out_c * geom.patch() || p.bias.len() != geom.out_c {
                        return Err(Error::invalid(format!("conv parameter {} does not fit", p.name)));
                    }
                    geom.output()
                }
                Layer::Shift(_) | Layer::Relu => d,
                Layer::MaxPool { window } => kernels::pool_output(d, *window),
                Layer::Fc { param } => {
                    let p = &params[*param];
                    let n_out = p.bias.len();
                    if p.weight.len() != n_out * d.len() {
                        return Err(Error::invalid(format!("fc parameter {} does not fit", p.name)));
                    }
                    Dims { c: n_out, d: 1, h: 1, w: 1 }
                }
            };
            dims.push(next);
        }
        if dims.last().unwrap().len() != spec.num_classes {
            return Err(Error::invalid("network output does not match num_classes"));
        }
        Ok(Network {
            spec,
            input_shape,
            layers,
            dims,
            tap,
            params,
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Shape of the final-conv tap: `[64, 16, 16]` or `[64, 8, 8, 8]`.
    pub fn tap_shape(&self) -> Vec<usize> {
        let d = self.dims[self.tap + 1];
        self.shape_of(d)
    }

    fn shape_of(&self, d: Dims) -> Vec<usize> {
        if self.input_shape.len() == 4 {
            vec![d.c, d.d, d.h, d.w]
        } else {
            vec![d.c, d.h, d.w]
        }
    }

    /// `(name, weight, bias)` for each parameterized layer, input to output.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.weight, &p.bias))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub(crate) fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.spec.num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.spec.num_classes,
            });
        }
        Ok(())
    }

    /// Runs layers `start..` on `x`, returning the logits. Generic so the
    /// finite-difference checks can evaluate the same network in f64.
    fn run_from<'p, S: Scalar>(
        &self,
        start: usize,
        mut x: Vec<S>,
        params: impl Fn(usize) -> (&'p [S], &'p [S]),
    ) -> Vec<S> {
        let mut cols = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            x = match layer {
                Layer::Conv { geom, param } => {
                    let (w, b) = params(*param);
                    kernels::conv_forward(&x, geom, w, b, &mut cols)
                }
                Layer::Shift(c) => {
                    let c = S::from_f32(-*c);
                    x.into_iter().map(|v| v + c).collect()
                }
                Layer::Relu => kernels::relu_forward(&x),
                Layer::MaxPool { window } => kernels::maxpool_forward(&x, self.dims[i], *window).0,
                Layer::Fc { param } => {
                    let (w, b) = params(*param);
                    kernels::fc_forward(&x, w, b)
                }
            };
        }
        x
    }

    fn params_as<S: Scalar>(&self) -> Vec<(Vec<S>, Vec<S>)> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.weight.data().iter().map(|&v| S::from_f32(v)).collect(),
                    p.bias.data().iter().map(|&v| S::from_f32(v)).collect(),
                )
            })
            .collect()
    }

    /// Full forward pass caching every activation.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        self.check_input(input)?;
        bump(1, 0);
        let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        let mut argmaxes = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let x = outputs.last().map_or(input.data(), |v| v.as_slice());
            let (out, am) = match layer {
                Layer::Conv { geom, param } => {
                    let p = &self.params[*param];
                    (kernels::conv_forward(x, geom, p.weight.data(), p.bias.data(), &mut cols), None)
                }
                Layer::Shift(c) => (x.iter().map(|v| v - c).collect(), None),
                Layer::Relu => (kernels::relu_forward(x), None),
                Layer::MaxPool { window } => {
                    let (v, a) = kernels::maxpool_forward(x, self.dims[i], *window);
                    (v, Some(a))
                }
                Layer::Fc { param } => {
                    let p = &self.params[*param];
                    (kernels::fc_forward(x, p.weight.data(), p.bias.data()), None)
                }
            };
            outputs.push(out);
            argmaxes.push(am);
        }
        let logits = outputs.last().unwrap().clone();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let probabilities = softmax(&logits);
        Ok(ForwardTrace {
            input: input.data().to_vec(),
            outputs,
            argmax: argmaxes,
            logits,
            probabilities,
        })
    }

    /// Inference-only forward pass; keeps no activations.
    pub fn logits(&self, input: &Tensor) -> Result<Vec<f32>> {
        self.check_input(input)?;
        bump(1, 0);
        let logits = self.run_from(0, input.data().to_vec(), |i| {
            (self.params[i].weight.data(), self.params[i].bias.data())
        });
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(logits)
    }

    /// Logits evaluated entirely in f64. Not counted as a pass; meant for
    /// numerical checks.
    pub fn logits_f64(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.dims[0].len() {
            return Err(Error::invalid("input length does not match network"));
        }
        let params = self.params_as::<f64>();
        Ok(self.run_from(0, input.to_vec(), |i| (&params[i].0[..], &params[i].1[..])))
    }

    /// Logits from a given final-conv tap, evaluated in f64.
    pub fn head_logits_f64(&self, tap: &[f64]) -> Result<Vec<f64>> {
        if tap.len() != self.dims[self.tap + 1].len() {
            return Err(Error::invalid("tap length does not match network"));
        }
        let params = self.params_as::<f64>();
        Ok(self.run_from(self.tap + 1, tap.to_vec(), |i| (&params[i].0[..], &params[i].1[..])))
    }

    /// Argmax class and probabilities; ties go to the lowest class id.
    pub fn predict(&self, input: &Tensor) -> Result<(usize, Vec<f32>)> {
        let p = softmax(&self.logits(input)?);
        Ok((argmax(&p), p))
    }

    pub(crate) fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.input.len() == self.dims[0].len()
            && trace.outputs.len() == self.layers.len()
            && trace
                .outputs
                .iter()
                .zip(&self.dims[1..])
                .all(|(o, d)| o.len() == d.len());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("forward trace was not produced by this network"))
        }
    }
}

impl Classifier for Network {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn probabilities(&self, input: &Tensor) -> Result<Vec<f32>> {
        Ok(softmax(&self.logits(input)?))
    }
}

fn input_dims(shape: &[usize]) -> Dims {
    match *shape {
        [c, h, w] => Dims { c, d: 1, h, w },
        [c, d, h, w] => Dims { c, d, h, w },
        [n] => Dims { c: n, d: 1, h: 1, w: 1 },
        _ => panic!("unsupported input rank {shape:?}"),
    }
}

#[cfg(test)]
pub(crate) mod test_nets {
    use super::*;

    /// Linear classifier straight on the pixels (no conv stack).
    pub fn linear(input_shape: Vec<usize>, num_classes: usize, seed: u64) -> Network {
        let n: usize = input_shape.iter().product();
        let mut rng = Prng::new(seed);
        let weight = Tensor::from_fn(vec![num_classes, n], |_| rng.uniform(-1.0, 1.0)).unwrap();
        let bias = Tensor::from_fn(vec![num_classes], |_| rng.uniform(-1.0, 1.0)).unwrap();
        Network::from_layers(
            NetworkSpec {
                kind: NetKind::Net2D,
                num_classes,
            },
            input_shape,
            vec![Layer::Fc { param: 0 }],
            0,
            vec![Param {
                name: "fc".into(),
                weight,
                bias,
            }],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = Prng::new(seed);
        Tensor::from_fn(shape, |_| rng.next_f32()).unwrap()
    }

    #[test]
    fn architecture_shapes() {
        let n2 = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 0).unwrap();
        assert_eq!(n2.tap_shape(), vec![64, 16, 16]);
        let fc = n2.parameters().last().unwrap().1.shape().to_vec();
        assert_eq!(fc, vec![4, 4096]);
        let n3 = Network::init_weights(NetworkSpec { kind: NetKind::Net3D, num_classes: 4 }, 0).unwrap();
        assert_eq!(n3.tap_shape(), vec![64, 8, 8, 8]);
        let shapes: Vec<Vec<usize>> = n3.parameters().map(|p| p.1.shape().to_vec()).collect();
        assert_eq!(shapes[0], vec![16, 3, 3, 3, 3]);
        assert_eq!(shapes[3], vec![4, 4096]);
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec { kind: NetKind::Net2D, num_classes: 4 };
        let a = Network::init_weights(spec, 1).unwrap();
        assert_eq!(a, Network::init_weights(spec, 1).unwrap());
        assert_ne!(a, Network::init_weights(spec, 2).unwrap());
        for (_, w, b) in a.parameters() {
            assert!(b.data().iter().all(|&v| v == 0.0));
            let fan_in: usize = w.shape()[1..].iter().product();
            let bound = (6.0 / fan_in as f32).sqrt();
            assert!(w.data().iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn softmax_is_normalized() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 3).unwrap();
        for seed in 0..3 {
            let t = net.forward(&random_input(vec![3, 64, 64], seed)).unwrap();
            let s: f32 = t.probabilities().iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(t.probabilities().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 3).unwrap();
        for p in &mut net.params {
            p.weight = Tensor::zeros(p.weight.shape().to_vec()).unwrap();
        }
        let t = net.forward(&Tensor::zeros(vec![3, 64, 64]).unwrap()).unwrap();
        assert!(t.logits().iter().all(|&z| z == t.logits()[0]));
        assert!(t.probabilities().iter().all(|&p| (p - 0.25).abs() < 1e-7));
        assert_eq!(t.predicted(), 0);
    }

    #[test]
    fn one_by_one_conv_reduced_net() {
        let geom = ConvGeom {
            input: Dims { c: 1, d: 1, h: 1, w: 1 },
            out_c: 1,
            kernel: [1, 1, 1],
            pad: [0, 0, 0],
        };
        let params = vec![
            Param {
                name: "conv1".into(),
                weight: Tensor::new(vec![1, 1, 1, 1], vec![-1.5]).unwrap(),
                bias: Tensor::new(vec![1], vec![0.25]).unwrap(),
            },
            Param {
                name: "fc".into(),
                weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                bias: Tensor::new(vec![1], vec![0.0]).unwrap(),
            },
        ];
        let net = Network::from_layers(
            NetworkSpec { kind: NetKind::Net2D, num_classes: 1 },
            vec![1, 1, 1],
            vec![Layer::Conv { geom, param: 0 }, Layer::Fc { param: 1 }],
            0,
            params,
        )
        .unwrap();
        let t = net.forward(&Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap()).unwrap();
        assert_eq!(t.outputs[0], vec![-1.5 * 2.0 + 0.25]);
    }

    #[test]
    fn predict_tie_break_and_purity() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.0, 5.0, 1.0]), 1);
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 9).unwrap();
        let before = net.clone();
        let x = random_input(vec![3, 64, 64], 1);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.probabilities(), a.1.as_slice());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 9).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(vec![3, 32, 32]).unwrap()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn f64_path_agrees_with_f32() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net3D, num_classes: 4 }, 2).unwrap();
        let x = random_input(vec![3, 16, 32, 32], 4);
        let a = net.logits(&x).unwrap();
        let xd: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let b = net.logits_f64(&xd).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((*u as f64 - v).abs() < 1e-3 * v.abs().max(1.0));
        }
    }
}
