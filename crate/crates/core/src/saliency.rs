//! Pixel-scoring methods.
//!
//! Every method runs one forward pass and at most one backward pass.
//! Gradient maps are reduced over colour channels with `R(x) = sum_c |x_c|`;
//! class activation maps are formed on the final-conv tap and resized to
//! the input with bilinear (2D) or trilinear (3D) interpolation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micronet::{BackwardMode, ForwardTrace, Network, Target};
use crate::resample::{resize_bilinear_2d, resize_trilinear_3d};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaliencyMethod {
    Vanilla,
    GuidedVanilla,
    InputXGradient,
    ReluActivation,
    GradCam,
    GuidedGradCam,
    GradCamPP,
    ActXGradCam,
    GuidedActXGradCam,
}

impl SaliencyMethod {
    pub const ALL: [SaliencyMethod; 9] = [
        SaliencyMethod::Vanilla,
        SaliencyMethod::GuidedVanilla,
        SaliencyMethod::InputXGradient,
        SaliencyMethod::ReluActivation,
        SaliencyMethod::GradCam,
        SaliencyMethod::GuidedGradCam,
        SaliencyMethod::GradCamPP,
        SaliencyMethod::ActXGradCam,
        SaliencyMethod::GuidedActXGradCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SaliencyMethod::Vanilla => "vanilla",
            SaliencyMethod::GuidedVanilla => "guided-vanilla",
            SaliencyMethod::InputXGradient => "input-x-gradient",
            SaliencyMethod::ReluActivation => "relu-activation",
            SaliencyMethod::GradCam => "grad-cam",
            SaliencyMethod::GuidedGradCam => "guided-grad-cam",
            SaliencyMethod::GradCamPP => "grad-cam-pp",
            SaliencyMethod::ActXGradCam => "act-x-grad-cam",
            SaliencyMethod::GuidedActXGradCam => "guided-act-x-grad-cam",
        }
    }

    /// False only for `ReluActivation`, which ignores the target class.
    pub fn is_class_specific(self) -> bool {
        self != SaliencyMethod::ReluActivation
    }
}

impl fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SaliencyMethod {
    type Err = Error;

    /// Accepts `grad-cam-pp`, `GradCamPP`, `grad_cam_pp` and similar.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        SaliencyMethod::ALL
            .into_iter()
            .find(|m| m.name().replace('-', "") == key)
            .ok_or_else(|| Error::invalid(format!("unknown saliency method {s:?}")))
    }
}

/// Non-negative score per pixel or voxel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyMap {
    values: Tensor,
}

impl SaliencyMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if !(2..=3).contains(&values.rank()) {
            return Err(Error::InvalidShape(values.shape().to_vec()));
        }
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("saliency values must be non-negative"));
        }
        Ok(SaliencyMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn data(&self) -> &[f32] {
        self.values.data()
    }
}

/// Scores every pixel of `input` for `target` with one forward and at
/// most one backward pass.
pub fn pixel_scores(
    net: &Network,
    input: &Tensor,
    target: impl Into<Target>,
    method: SaliencyMethod,
) -> Result<SaliencyMap> {
    let target = target.into();
    net.check_class(target.class)?;
    let trace = net.forward(input)?;
    scores_from_trace(net, &trace, input, target, method)
}

/// As [`pixel_scores`], reusing an existing forward trace of `input`.
pub fn scores_from_trace(
    net: &Network,
    trace: &ForwardTrace,
    input: &Tensor,
    target: impl Into<Target>,
    method: SaliencyMethod,
) -> Result<SaliencyMap> {
    use SaliencyMethod::*;
    let target = target.into();
    net.check_class(target.class)?;
    net.check_input(input)?;
    let spatial = input.spatial_shape().to_vec();
    let values = match method {
        Vanilla | GuidedVanilla => {
            let mode = if method == Vanilla {
                BackwardMode::Standard
            } else {
                BackwardMode::Guided
            };
            channel_abs_sum(&net.backward_to_input(trace, target, mode)?)
        }
        InputXGradient => {
            let g = net.backward_to_input(trace, target, BackwardMode::Standard)?;
            let prod: Vec<f32> = g.data().iter().zip(input.data()).map(|(g, x)| g * x).collect();
            channel_abs_sum(&Tensor::from_parts(g.shape().to_vec(), prod))
        }
        ReluActivation => {
            let a = net.tap_activation(trace);
            let tap_spatial = a.spatial_shape().to_vec();
            let n = tap_spatial.iter().product::<usize>();
            let mut sum = vec![0.0f64; n];
            for c in 0..a.shape()[0] {
                for (s, &v) in sum.iter_mut().zip(a.channel(c)) {
                    *s += v as f64;
                }
            }
            upsample(&tap_spatial, &sum, &spatial)?
        }
        GradCam | GradCamPP | ActXGradCam => {
            let (a, da) = net.final_conv_capture(trace, target, BackwardMode::Standard)?;
            let cam = class_activation_map(&a, &da, method);
            upsample(&a.spatial_shape().to_vec(), &cam, &spatial)?
        }
        GuidedGradCam | GuidedActXGradCam => {
            let both = net.input_and_tap_gradients(trace, target, BackwardMode::Guided)?;
            let base = if method == GuidedGradCam { GradCam } else { ActXGradCam };
            let a = &both.tap_activation;
            let cam = class_activation_map(a, &both.tap_gradient, base);
            let cam = upsample(&a.spatial_shape().to_vec(), &cam, &spatial)?;
            let guided = channel_abs_sum(&both.input_gradient);
            let data = guided.data().iter().zip(cam.data()).map(|(g, c)| g * c).collect();
            Tensor::from_parts(spatial, data)
        }
    };
    SaliencyMap::new(values)
}

/// `sum_c |x_c|` of a channel-first tensor.
pub fn channel_abs_sum(x: &Tensor) -> Tensor {
    let spatial = x.spatial_shape().to_vec();
    let n: usize = spatial.iter().product();
    let mut out = vec![0.0f64; n];
    for c in 0..x.shape()[0] {
        for (o, &v) in out.iter_mut().zip(x.channel(c)) {
            *o += v.abs() as f64;
        }
    }
    Tensor::from_parts(spatial, out.into_iter().map(|v| v as f32).collect())
}

/// Rectified channel-weighted sum of activations at tap resolution.
fn class_activation_map(a: &Tensor, da: &Tensor, method: SaliencyMethod) -> Vec<f64> {
    let k = a.shape()[0];
    let n = a.len() / k;
    let mut cam = vec![0.0f64; n];
    for c in 0..k {
        let ac = a.channel(c);
        let gc = da.channel(c);
        let weight = match method {
            SaliencyMethod::GradCam => gc.iter().map(|&g| g as f64).sum::<f64>() / n as f64,
            SaliencyMethod::ActXGradCam => {
                ac.iter().zip(gc).map(|(&a, &g)| a as f64 * g as f64).sum::<f64>() / n as f64
            }
            SaliencyMethod::GradCamPP => {
                let cube: f64 = ac.iter().zip(gc).map(|(&a, &g)| a as f64 * (g as f64).powi(3)).sum();
                gc.iter()
                    .map(|&g| {
                        let g = g as f64;
                        let g2 = g * g;
                        g2 / (2.0 * g2 + cube + 1e-8) * g.max(0.0)
                    })
                    .sum()
            }
            _ => unreachable!("not a CAM method"),
        };
        for (m, &v) in cam.iter_mut().zip(ac) {
            *m += weight * v as f64;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

fn upsample(from: &[usize], values: &[f64], to: &[usize]) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(from);
    let t = Tensor::from_parts(shape, values.iter().map(|&v| v as f32).collect());
    let resized = match *to {
        [h, w] => resize_bilinear_2d(&t, h, w)?,
        [d, h, w] => resize_trilinear_3d(&t, d, h, w)?,
        _ => return Err(Error::InvalidShape(to.to_vec())),
    };
    resized.reshape(to.to_vec())
}
