//! Synthetic datasets with ground-truth masks.
//!
//! * shapes-2D: one square, circle, triangle or cross (the class) on a
//!   64x64 noisy grey background.
//! * two-shape composites: two different-class shapes in one image, with a
//!   mask per class.
//! * moving shapes: a 16-frame 32x32 clip of one shape translating up,
//!   down, left or right (the class). Shape, colour and mid-clip position
//!   carry no class information.
//!
//! Every sample draws from its own stream `Prng::derive(seed, index)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micronet::Labeled;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;
pub const SHAPE_NAMES: [&str; 4] = ["square", "circle", "triangle", "cross"];
pub const DIRECTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

const IMAGE: usize = 64;
const CLIP_FRAMES: usize = 16;
const CLIP_SIZE: usize = 32;
const NOISE: f32 = 0.1;

/// Binary raster marking the discriminative object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(Error::invalid("mask size does not match shape"));
        }
        Ok(Mask { shape, bits })
    }

    fn empty(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Mask {
            shape,
            bits: vec![false; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.bits.iter().map(|&b| b as u8 as f32).collect())
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Mask {
            shape: t.shape().to_vec(),
            bits: t.data().iter().map(|&v| v > 0.5).collect(),
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
    pub truth_mask: Mask,
}

impl Labeled for Sample {
    fn input(&self) -> &Tensor {
        &self.input
    }

    fn label(&self) -> usize {
        self.label
    }
}

/// Two different-class shapes in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoShapeSample {
    pub input: Tensor,
    pub labels: [usize; 2],
    pub masks: [Mask; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Cross,
}

impl ShapeKind {
    fn from_class(c: usize) -> Self {
        [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle, ShapeKind::Cross][c % 4]
    }

    /// Whether cell `(r, c)` of an `s x s` box belongs to the shape.
    fn contains(self, s: usize, r: usize, c: usize) -> bool {
        let half = s as f32 / 2.0;
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => (y - half).powi(2) + (x - half).powi(2) <= half * half,
            ShapeKind::Triangle => (x - half).abs() <= y / 2.0,
            ShapeKind::Cross => {
                let arm = (s as f32 / 3.0).round().max(2.0) / 2.0;
                (x - half).abs() <= arm || (y - half).abs() <= arm
            }
        }
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let sector = h6.floor() as usize;
    let f = h6 - sector as f32;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_color(rng: &mut Prng) -> [f32; 3] {
    let h = rng.next_f32();
    let s = rng.uniform(0.5, 1.0);
    let v = rng.uniform(0.6, 1.0);
    hsv_to_rgb(h, s, v)
}

/// Grey background with uniform luminance noise of amplitude `NOISE`,
/// shared by the three channels.
fn background(spatial: &[usize], rng: &mut Prng) -> Vec<f32> {
    let n: usize = spatial.iter().product();
    let grey: Vec<f32> = (0..n).map(|_| 0.5 + rng.uniform(-NOISE, NOISE)).collect();
    grey.repeat(3)
}

/// Paints a shape with its top-left box corner at `(y0, x0)` into frame
/// `frame` of a `[3, frames, h, w]` buffer, clipping at the borders.
#[allow(clippy::too_many_arguments)]
fn paint(
    data: &mut [f32],
    mask: &mut [bool],
    dims: [usize; 3],
    frame: usize,
    kind: ShapeKind,
    size: usize,
    y0: isize,
    x0: isize,
    color: [f32; 3],
) {
    let [frames, h, w] = dims;
    let plane = frames * h * w;
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (y0 + r as isize, x0 + c as isize);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize || !kind.contains(size, r, c) {
                continue;
            }
            let i = (frame * h + y as usize) * w + x as usize;
            mask[i] = true;
            for (ch, &v) in color.iter().enumerate() {
                data[ch * plane + i] = v;
            }
        }
    }
}

fn shape_image(class: usize, rng: &mut Prng) -> Sample {
    let mut data = background(&[IMAGE, IMAGE], rng);
    let mut mask = Mask::empty(vec![IMAGE, IMAGE]);
    let size = 10 + rng.below(15);
    let y0 = rng.below(IMAGE - size + 1) as isize;
    let x0 = rng.below(IMAGE - size + 1) as isize;
    let color = random_color(rng);
    paint(&mut data, &mut mask.bits, [1, IMAGE, IMAGE], 0, ShapeKind::from_class(class), size, y0, x0, color);
    Sample {
        input: Tensor::from_parts(vec![3, IMAGE, IMAGE], data),
        label: class,
        truth_mask: mask,
    }
}

/// Balanced shapes-2D dataset: sample `i` has class `i % 4`.
pub fn gen_shapes_2d(n: usize, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| shape_image(i % NUM_CLASSES, &mut Prng::derive(seed, i as u64)))
        .collect()
}

/// Composites of two non-overlapping shapes of different classes.
pub fn gen_two_shape_2d(n: usize, seed: u64) -> Vec<TwoShapeSample> {
    (0..n)
        .map(|i| {
            let mut rng = Prng::derive(seed, i as u64);
            let a = i % NUM_CLASSES;
            let b = (a + 1 + rng.below(NUM_CLASSES - 1)) % NUM_CLASSES;
            let mut data = background(&[IMAGE, IMAGE], &mut rng);
            let mut masks = [Mask::empty(vec![IMAGE, IMAGE]), Mask::empty(vec![IMAGE, IMAGE])];
            let mut boxes: Vec<(usize, usize, usize)> = Vec::new();
            for (slot, class) in [a, b].into_iter().enumerate() {
                let (size, y0, x0) = loop {
                    let size = 10 + rng.below(11);
                    let y0 = rng.below(IMAGE - size + 1);
                    let x0 = rng.below(IMAGE - size + 1);
                    // Boxes separated by a 2-pixel gap.
                    let clear = boxes.iter().all(|&(s, y, x)| {
                        y0 + size + 2 <= y || y + s + 2 <= y0 || x0 + size + 2 <= x || x + s + 2 <= x0
                    });
                    if clear {
                        break (size, y0, x0);
                    }
                };
                boxes.push((size, y0, x0));
                let color = random_color(&mut rng);
                paint(
                    &mut data,
                    &mut masks[slot].bits,
                    [1, IMAGE, IMAGE],
                    0,
                    ShapeKind::from_class(class),
                    size,
                    y0 as isize,
                    x0 as isize,
                    color,
                );
            }
            TwoShapeSample {
                input: Tensor::from_parts(vec![3, IMAGE, IMAGE], data),
                labels: [a, b],
                masks,
            }
        })
        .collect()
}

/// Balanced moving-shapes dataset: sample `i` moves in direction `i % 4`
/// (up, down, left, right) at 1 to 1.5 px per frame.
pub fn gen_moving_shapes_3d(n: usize, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = Prng::derive(seed, i as u64);
            let label = i % NUM_CLASSES;
            let kind = ShapeKind::from_class(rng.below(4));
            let size = 4 + rng.below(4);
            let speed = rng.uniform(1.0, 1.5);
            let mid = CLIP_FRAMES / 2;
            let span = (CLIP_SIZE - size) as f32;
            // Position at the middle frame is drawn from the same square for
            // every direction, so no single frame reveals the motion axis.
            let reach = speed * mid as f32;
            let cy = rng.uniform(reach, span - reach);
            let cx = rng.uniform(reach, span - reach);
            let color = random_color(&mut rng);
            let mut data = background(&[CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE], &mut rng);
            let mut mask = Mask::empty(vec![CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE]);
            for t in 0..CLIP_FRAMES {
                let moved = speed * (t as f32 - mid as f32);
                let (y, x) = match label {
                    0 => (cy - moved, cx),
                    1 => (cy + moved, cx),
                    2 => (cy, cx - moved),
                    _ => (cy, cx + moved),
                };
                paint(
                    &mut data,
                    &mut mask.bits,
                    [CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE],
                    t,
                    kind,
                    size,
                    y.round() as isize,
                    x.round() as isize,
                    color,
                );
            }
            Sample {
                input: Tensor::from_parts(vec![3, CLIP_FRAMES, CLIP_SIZE, CLIP_SIZE], data),
                label,
                truth_mask: mask,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes() {
        let data = gen_shapes_2d(400, 1);
        for c in 0..4 {
            assert_eq!(data.iter().filter(|s| s.label == c).count(), 100);
        }
        let odd = gen_shapes_2d(7, 1);
        let counts: Vec<usize> = (0..4).map(|c| odd.iter().filter(|s| s.label == c).count()).collect();
        assert_eq!(counts, vec![2, 2, 2, 1]);
    }

    #[test]
    fn mask_area_bounds_for_every_shape_and_size() {
        // Exhaustive over the generator's size range.
        for class in 0..4 {
            let kind = ShapeKind::from_class(class);
            for size in 10..=24 {
                let area = (0..size)
                    .flat_map(|r| (0..size).map(move |c| (r, c)))
                    .filter(|&(r, c)| kind.contains(size, r, c))
                    .count();
                assert!((40..=576).contains(&area), "{kind:?} size {size}: {area}");
            }
        }
        for s in gen_shapes_2d(200, 3) {
            assert!((40..=576).contains(&s.truth_mask.count()));
        }
    }

    #[test]
    fn deterministic_generation() {
        assert_eq!(gen_shapes_2d(20, 5), gen_shapes_2d(20, 5));
        assert_ne!(gen_shapes_2d(4, 5), gen_shapes_2d(4, 6));
        assert_eq!(gen_two_shape_2d(10, 5), gen_two_shape_2d(10, 5));
        assert_eq!(gen_moving_shapes_3d(8, 5), gen_moving_shapes_3d(8, 5));
    }

    #[test]
    fn values_in_unit_range() {
        for s in gen_shapes_2d(20, 2).iter().chain(&gen_moving_shapes_3d(8, 2)) {
            assert!(s.input.min() >= 0.0 && s.input.max() <= 1.0);
        }
    }

    #[test]
    fn two_shape_masks_disjoint_and_labels_distinct() {
        for s in gen_two_shape_2d(100, 4) {
            assert_ne!(s.labels[0], s.labels[1]);
            assert!(!s.masks[0].intersects(&s.masks[1]));
            assert!(s.masks[0].count() > 0 && s.masks[1].count() > 0);
        }
    }

    fn centroid(mask: &Mask, frame: usize) -> (f32, f32) {
        let (h, w) = (mask.shape[1], mask.shape[2]);
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if mask.bits[(frame * h + y) * w + x] {
                    sy += y as f32;
                    sx += x as f32;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0, "shape left the frame");
        (sy / n, sx / n)
    }

    #[test]
    fn motion_matches_label() {
        for s in gen_moving_shapes_3d(40, 8) {
            let (y0, x0) = centroid(&s.truth_mask, 0);
            let (y1, x1) = centroid(&s.truth_mask, 15);
            let (dy, dx) = (y1 - y0, x1 - x0);
            match s.label {
                0 => assert!(dy < -10.0 && dx.abs() < 0.5),
                1 => assert!(dy > 10.0 && dx.abs() < 0.5),
                2 => assert!(dx < -10.0 && dy.abs() < 0.5),
                _ => assert!(dx > 10.0 && dy.abs() < 0.5),
            }
        }
    }

    #[test]
    fn middle_frame_position_ignores_direction() {
        let clips = gen_moving_shapes_3d(800, 4);
        let mut stats = [[(0.0, 0.0); 2]; 4];
        for s in &clips {
            let (y, x) = centroid(&s.truth_mask, 8);
            for (a, v) in [y, x].into_iter().enumerate() {
                stats[s.label][a].0 += v / 200.0;
                stats[s.label][a].1 += v * v / 200.0;
            }
        }
        let moments = |c: usize, a: usize| {
            let (m, sq) = stats[c][a];
            (m, (sq - m * m).sqrt())
        };
        let (m0, s0) = moments(0, 0);
        for c in 0..4 {
            for a in 0..2 {
                let (m, sd) = moments(c, a);
                assert!((m - m0).abs() < 0.6, "class {c} axis {a}: mean {m} vs {m0}");
                assert!((sd - s0).abs() < 0.6, "class {c} axis {a}: sd {sd} vs {s0}");
            }
        }
    }

    #[test]
    fn per_frame_masks_match_painted_pixels() {
        let s = &gen_moving_shapes_3d(1, 3)[0];
        let plane = 16 * 32 * 32;
        for (i, &m) in s.truth_mask.bits.iter().enumerate() {
            // Shape pixels carry a flat colour; background is noisy grey.
            if m {
                let px: Vec<f32> = (0..3).map(|c| s.input.data()[c * plane + i]).collect();
                let first = s.truth_mask.bits.iter().position(|&b| b).unwrap();
                let ref_px: Vec<f32> = (0..3).map(|c| s.input.data()[c * plane + first]).collect();
                assert_eq!(px, ref_px);
            }
        }
    }
}
