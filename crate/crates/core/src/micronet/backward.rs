use super::kernels;
use super::{bump, BackwardMode, ForwardTrace, GradientSource, Layer, Network, Target};
use crate::error::Result;
use crate::tensor::Tensor;

pub(crate) type ParamGrads = Vec<(Vec<f32>, Vec<f32>)>;

#[derive(Default)]
pub(crate) struct Backward {
    pub tap: Option<Vec<f32>>,
    pub input: Option<Vec<f32>>,
}

/// Gradients from a single backward pass that reaches the input.
#[derive(Debug, Clone)]
pub struct InputAndTap {
    pub input_gradient: Tensor,
    pub tap_activation: Tensor,
    pub tap_gradient: Tensor,
}

impl Network {
    pub(crate) fn zero_grads(&self) -> ParamGrads {
        self.params
            .iter()
            .map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]))
            .collect()
    }

    fn seed(&self, trace: &ForwardTrace, target: Target) -> Vec<f32> {
        let n = self.spec.num_classes;
        match target.source {
            GradientSource::Logit => (0..n).map(|j| (j == target.class) as u8 as f32).collect(),
            GradientSource::Probability => {
                let p = &trace.probabilities;
                let pc = p[target.class];
                (0..n)
                    .map(|j| pc * ((j == target.class) as u8 as f32 - p[j]))
                    .collect()
            }
        }
    }

    /// Walks the layers top-down from `seed` (the gradient at the logits).
    /// `observe` sees every gradient leaving a ReLU, with the layer index.
    pub(crate) fn backward_impl(
        &self,
        trace: &ForwardTrace,
        seed: Vec<f32>,
        mode: BackwardMode,
        want_tap: bool,
        want_input: bool,
        mut grads: Option<&mut ParamGrads>,
        observe: &mut dyn FnMut(usize, &[f32]),
    ) -> Backward {
        let guided = mode == BackwardMode::Guided;
        let full = want_input || grads.is_some();
        let mut out = Backward::default();
        let mut g = seed;
        let mut cols = Vec::new();
        for i in (0..self.layers.len()).rev() {
            if i == self.tap {
                if want_tap {
                    out.tap = Some(g.clone());
                }
                if !full {
                    return out;
                }
            }
            let x: &[f32] = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let need_dx = i > 0 || want_input;
            let next = match &self.layers[i] {
                Layer::Conv { geom, param } => {
                    let pg = grads.as_deref_mut().map(|gs| {
                        let (w, b) = &mut gs[*param];
                        (w.as_mut_slice(), b.as_mut_slice())
                    });
                    let w = self.params[*param].weight.data();
                    kernels::conv_backward(x, geom, w, &g, need_dx, pg, &mut cols)
                }
                Layer::Shift(_) => Some(g.clone()),
                Layer::Relu => {
                    let gi = kernels::relu_backward(&trace.outputs[i], &g, guided);
                    observe(i, &gi);
                    Some(gi)
                }
                Layer::MaxPool { .. } => {
                    let am = trace.argmax[i].as_ref().expect("pool argmax cached");
                    Some(kernels::maxpool_backward(&g, am, self.dims[i].len()))
                }
                Layer::Fc { param } => {
                    let pg = grads.as_deref_mut().map(|gs| {
                        let (w, b) = &mut gs[*param];
                        (w.as_mut_slice(), b.as_mut_slice())
                    });
                    kernels::fc_backward(x, self.params[*param].weight.data(), &g, need_dx, pg)
                }
            };
            match next {
                Some(n) => g = n,
                None => break,
            }
        }
        if want_input {
            out.input = Some(g);
        }
        out
    }

    /// Final-conv activations recorded in `trace`.
    pub fn tap_activation(&self, trace: &ForwardTrace) -> Tensor {
        Tensor::from_parts(self.tap_shape(), trace.outputs[self.tap].clone())
    }

    fn prepare(&self, trace: &ForwardTrace, target: Target) -> Result<Vec<f32>> {
        self.check_class(target.class)?;
        self.check_trace(trace)?;
        Ok(self.seed(trace, target))
    }

    /// Gradient of the target score with respect to the input.
    pub fn backward_to_input(
        &self,
        trace: &ForwardTrace,
        target: impl Into<Target>,
        mode: BackwardMode,
    ) -> Result<Tensor> {
        let seed = self.prepare(trace, target.into())?;
        bump(0, 1);
        let b = self.backward_impl(trace, seed, mode, false, true, None, &mut |_, _| {});
        Ok(Tensor::from_parts(self.input_shape.clone(), b.input.unwrap()))
    }

    /// Final-conv activations and the target score's gradient at the tap.
    /// `mode` only affects ReLUs above the tap, of which these networks
    /// have none, so both modes give the same gradient here.
    pub fn final_conv_capture(
        &self,
        trace: &ForwardTrace,
        target: impl Into<Target>,
        mode: BackwardMode,
    ) -> Result<(Tensor, Tensor)> {
        let seed = self.prepare(trace, target.into())?;
        bump(0, 1);
        let b = self.backward_impl(trace, seed, mode, true, false, None, &mut |_, _| {});
        let grad = Tensor::from_parts(self.tap_shape(), b.tap.unwrap());
        Ok((self.tap_activation(trace), grad))
    }

    /// Input gradient in `mode` plus tap activations and gradients, all
    /// from one backward pass.
    pub fn input_and_tap_gradients(
        &self,
        trace: &ForwardTrace,
        target: impl Into<Target>,
        mode: BackwardMode,
    ) -> Result<InputAndTap> {
        let seed = self.prepare(trace, target.into())?;
        bump(0, 1);
        let b = self.backward_impl(trace, seed, mode, true, true, None, &mut |_, _| {});
        Ok(InputAndTap {
            input_gradient: Tensor::from_parts(self.input_shape.clone(), b.input.unwrap()),
            tap_activation: self.tap_activation(trace),
            tap_gradient: Tensor::from_parts(self.tap_shape(), b.tap.unwrap()),
        })
    }

    /// Cross-entropy parameter gradients for one labelled example; returns
    /// the loss.
    pub(crate) fn loss_gradients(&self, trace: &ForwardTrace, label: usize, grads: &mut ParamGrads) -> f32 {
        let p = &trace.probabilities;
        let seed: Vec<f32> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| pj - (j == label) as u8 as f32)
            .collect();
        self.backward_impl(trace, seed, BackwardMode::Standard, false, false, Some(grads), &mut |_, _| {});
        // log-softmax from logits is more accurate than log(p) for confident p.
        let z = &trace.logits;
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = max as f64 + z.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln();
        (lse - z[label] as f64) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_nets;
    use super::super::{NetKind, NetworkSpec};
    use super::*;
    use crate::Prng;

    fn random_input(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = Prng::new(seed);
        Tensor::from_fn(shape, |_| rng.next_f32()).unwrap()
    }

    #[test]
    fn linear_net_gradient_is_weight_row() {
        let net = test_nets::linear(vec![3, 4, 5], 3, 11);
        let x = random_input(vec![3, 4, 5], 1);
        let trace = net.forward(&x).unwrap();
        let (_, w, _) = net.parameters().next().unwrap();
        for class in 0..3 {
            let g = net.backward_to_input(&trace, class, BackwardMode::Standard).unwrap();
            assert_eq!(g.data(), &w.data()[class * 60..(class + 1) * 60]);
        }
    }

    #[test]
    fn guided_gate_nonnegative_at_every_relu() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 5).unwrap();
        let x = random_input(vec![3, 64, 64], 2);
        let trace = net.forward(&x).unwrap();
        let mut seen = 0;
        for class in 0..4 {
            let seed = net.seed(&trace, class.into());
            net.backward_impl(&trace, seed, BackwardMode::Guided, false, true, None, &mut |_, g| {
                seen += 1;
                assert!(g.iter().all(|&v| v >= 0.0));
            });
        }
        assert_eq!(seen, 12);
    }

    #[test]
    fn standard_mode_has_negative_gradients() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 5).unwrap();
        let trace = net.forward(&random_input(vec![3, 64, 64], 2)).unwrap();
        let g = net.backward_to_input(&trace, 0, BackwardMode::Standard).unwrap();
        assert!(g.min() < 0.0);
    }

    #[test]
    fn class_and_trace_errors() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 5).unwrap();
        let trace = net.forward(&random_input(vec![3, 64, 64], 2)).unwrap();
        assert!(net.backward_to_input(&trace, 4, BackwardMode::Standard).is_err());
        let other = test_nets::linear(vec![3, 4, 5], 4, 1);
        assert!(other.backward_to_input(&trace, 0, BackwardMode::Standard).is_err());
    }

    #[test]
    fn probability_source_scales_logit_gradient() {
        // With a linear model, d p_c / d x = p_c * (w_c - sum_j p_j w_j).
        let net = test_nets::linear(vec![2, 2, 2], 3, 4);
        let x = random_input(vec![2, 2, 2], 3);
        let trace = net.forward(&x).unwrap();
        let target = Target { class: 1, source: GradientSource::Probability };
        let g = net.backward_to_input(&trace, target, BackwardMode::Standard).unwrap();
        let p = trace.probabilities();
        let (_, w, _) = net.parameters().next().unwrap();
        for i in 0..8 {
            let mean: f32 = (0..3).map(|j| p[j] * w.data()[j * 8 + i]).sum();
            let expect = p[1] * (w.data()[8 + i] - mean);
            assert!((g.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn one_backward_gives_both_gradients() {
        let net = Network::init_weights(NetworkSpec { kind: NetKind::Net2D, num_classes: 4 }, 6).unwrap();
        let trace = net.forward(&random_input(vec![3, 64, 64], 7)).unwrap();
        let both = net.input_and_tap_gradients(&trace, 2, BackwardMode::Guided).unwrap();
        let input = net.backward_to_input(&trace, 2, BackwardMode::Guided).unwrap();
        let (act, tap) = net.final_conv_capture(&trace, 2, BackwardMode::Standard).unwrap();
        assert_eq!(both.input_gradient, input);
        assert_eq!(both.tap_gradient, tap);
        assert_eq!(both.tap_activation, act);
        assert!(act.min() >= 0.0);
    }
    #[test]
    fn parameter_gradients_match_differences() {
        for kind in [NetKind::Net2D, NetKind::Net3D] {
            let mut net = Network::init_weights(NetworkSpec { kind, num_classes: 4 }, 8).unwrap();
            let x = random_input(kind.input_shape(), 9);
            let label = 1;
            let trace = net.forward(&x).unwrap();
            let mut grads = net.zero_grads();
            net.loss_gradients(&trace, label, &mut grads);
            let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            let loss = |net: &Network| {
                let z = net.logits_f64(&x64).unwrap();
                let max = z.iter().cloned().fold(f64::MIN, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[label]
            };
            let mut rng = Prng::new(10);
            let eps = 1e-5f32;
            let mut bad = 0;
            for p in 0..net.params.len() {
                for _ in 0..10 {
                    let bias = rng.below(4) == 0;
                    let len = if bias { net.params[p].bias.len() } else { net.params[p].weight.len() };
                    let j = rng.below(len);
                    let bump = |net: &mut Network, d: f32| {
                        let t = if bias { &mut net.params[p].bias } else { &mut net.params[p].weight };
                        let mut data = t.data().to_vec();
                        data[j] += d;
                        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
                    };
                    bump(&mut net, eps);
                    let up = loss(&net);
                    bump(&mut net, -2.0 * eps);
                    let down = loss(&net);
                    bump(&mut net, eps);
                    let num = (up - down) / (2.0 * eps as f64);
                    let g = if bias { grads[p].1[j] } else { grads[p].0[j] } as f64;
                    if (g - num).abs() > 1e-3 * g.abs().max(num.abs()).max(1e-2) {
                        bad += 1;
                        eprintln!("{kind} param {p} bias {bias} [{j}]: analytic {g}, numeric {num}");
                    }
                }
            }
            assert!(bad <= 1, "{bad} mismatches");
        }
    }
}
