//! Deterministic synthetic models and datasets.
//!
//! Images are noisy samples of per-class prototypes. Hidden layers carry
//! small SplitMix64 weights; the output layer is a nearest-centroid
//! classifier fitted on a separate training draw. Each layer's shift is
//! the smallest one that avoids clipping on the training images, chosen
//! layer by layer on the quantized outputs of the layers before it.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fault::argmax;
use crate::lowering::lower_layer;
use crate::model::{ConvParams, LayerKind, LayerSpec, ModelSpec, PoolSpec};
use crate::model_io::{save_dataset, save_model, Dataset, DatasetImage};
use crate::quant::{mac, Lut, Shift};
use crate::rng::SplitMix64;
use crate::scheduler::reference_inference;
use crate::tensor::{TensorI32, TensorI8};

pub const FIXTURE_IMAGES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// 784 -> 128 -> 64 -> 10 with ReLU between layers.
    Fc3,
    /// Single-channel 20x20 LeNet: two conv + pool stages, two fc layers.
    LenetLike,
    /// The same LeNet with three input channels and dense inputs.
    LenetRgb,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 3] = [FixtureKind::Fc3, FixtureKind::LenetLike, FixtureKind::LenetRgb];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Fc3 => "fc3",
            FixtureKind::LenetLike => "lenet-like",
            FixtureKind::LenetRgb => "lenet-rgb",
        }
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixtureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fixture kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub model: ModelSpec,
    pub dataset: Dataset,
}

impl Fixture {
    /// Writes `model.json` and `dataset.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_model(&self.model, &dir.join("model.json"))?;
        save_dataset(&self.dataset, &dir.join("dataset.json"))
    }
}

enum Stage {
    Fc { out: usize, relu: bool },
    Conv { out: usize, kernel: usize, pool: bool },
}

pub const CLASSES: usize = 10;
/// Training images per class used for calibration and for fitting the
/// output layer.
pub const TRAIN_PER_CLASS: usize = 12;

fn small_i8(rng: &mut SplitMix64, max: i64) -> i8 {
    (rng.below((2 * max + 1) as u64) as i64 - max) as i8
}

/// Per-class prototypes: pen strokes on a dark background for the
/// single-channel kinds, blocky colour textures for `LenetRgb`.
fn gen_templates(kind: FixtureKind, shape: &[usize], rng: &mut SplitMix64) -> Vec<Vec<u8>> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    (0..CLASSES)
        .map(|_| {
            let mut t = vec![0u8; c * h * w];
            if kind == FixtureKind::LenetRgb {
                let cell = 5;
                let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
                for ch in 0..c {
                    let grid: Vec<u8> = (0..gh * gw).map(|_| rng.below(128) as u8).collect();
                    for y in 0..h {
                        for x in 0..w {
                            t[(ch * h + y) * w + x] = grid[(y / cell) * gw + x / cell];
                        }
                    }
                }
            } else {
                for _ in 0..3 {
                    let (mut y, mut x) = (2 + rng.below(h as u64 - 4) as i64, 2 + rng.below(w as u64 - 4) as i64);
                    let (mut dy, mut dx) = (rng.below(3) as i64 - 1, rng.below(3) as i64 - 1);
                    for _ in 0..h {
                        for (oy, ox) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let (py, px) = (y + oy, x + ox);
                            if (0..h as i64).contains(&py) && (0..w as i64).contains(&px) {
                                t[py as usize * w + px as usize] = 1;
                            }
                        }
                        if rng.below(4) == 0 {
                            dy = rng.below(3) as i64 - 1;
                            dx = rng.below(3) as i64 - 1;
                        }
                        y = (y + dy).clamp(0, h as i64 - 2);
                        x = (x + dx).clamp(0, w as i64 - 2);
                    }
                }
            }
            t
        })
        .collect()
}

/// One noisy sample of `template`.
fn gen_image(kind: FixtureKind, shape: &[usize], template: &[u8], rng: &mut SplitMix64) -> TensorI8 {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut data = vec![0i8; c * h * w];
    if kind == FixtureKind::LenetRgb {
        for (d, &t) in data.iter_mut().zip(template) {
            let noise = rng.below(128) as u32;
            *d = ((t as u32 * 2 + noise * 3) / 5) as i8;
        }
    } else {
        let dy = rng.below(3) as i64 - 1;
        let dx = rng.below(3) as i64 - 1;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sy, sx) = (y - dy, x - dx);
                let on = (0..h as i64).contains(&sy)
                    && (0..w as i64).contains(&sx)
                    && template[sy as usize * w + sx as usize] == 1;
                let on = on != (rng.below(50) == 0);
                if on {
                    data[y as usize * w + x as usize] = 64 + rng.below(64) as i8;
                }
            }
        }
    }
    TensorI8::new(vec![c, h, w], data).expect("length matches shape")
}

/// Raw int32 accumulators of `layer` for one input.
fn accumulators(layer: &LayerSpec, input: &TensorI8) -> Result<Vec<i32>> {
    let p = lower_layer(layer, input)?;
    let (m, k, n) = (p.m(), p.k(), p.n());
    let mut out = Vec::with_capacity(m * n);
    for row in 0..m {
        for col in 0..n {
            let mut acc = p.bias.data()[col];
            for i in 0..k {
                acc = mac(p.a.at2(row, i), p.w.at2(i, col), acc);
            }
            out.push(acc);
        }
    }
    Ok(out)
}

fn calibrated_shift(layer: &LayerSpec, acts: &[TensorI8]) -> Result<Shift> {
    let mut max_abs = 1i64;
    for x in acts {
        for a in accumulators(layer, x)? {
            max_abs = max_abs.max((a as i64).abs());
        }
    }
    let s = (0..=31u32).find(|&s| (max_abs >> s) <= 127).unwrap_or(31);
    Shift::new(s)
}

/// Nearest-centroid output layer over the features `acts` of labelled
/// training images: column `j` is the scaled offset of class centroid `j`
/// from the mean centroid, and the bias places each decision boundary
/// halfway between centroids.
fn fit_output_layer(layer: &mut LayerSpec, acts: &[TensorI8], labels: &[usize]) -> Result<()> {
    let k = layer.in_len();
    let n = layer.out_features();
    let mut centroids = vec![vec![0f64; k]; n];
    let mut counts = vec![0usize; n];
    for (x, &label) in acts.iter().zip(labels) {
        counts[label] += 1;
        for (c, &v) in centroids[label].iter_mut().zip(x.data()) {
            *c += v as f64;
        }
    }
    for (c, &cnt) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= cnt.max(1) as f64);
    }
    let mean: Vec<f64> = (0..k)
        .map(|i| centroids.iter().map(|c| c[i]).sum::<f64>() / n as f64)
        .collect();
    let spread = centroids
        .iter()
        .flat_map(|c| c.iter().zip(&mean).map(|(a, b)| (a - b).abs()))
        .fold(1e-9f64, f64::max);
    let scale = 63.0 / spread;
    let mut w = vec![0i8; k * n];
    let mut bias = vec![0i32; n];
    for j in 0..n {
        let mut b = 0f64;
        for i in 0..k {
            let wij = ((centroids[j][i] - mean[i]) * scale).round() as i8;
            w[i * n + j] = wij;
            b -= wij as f64 * (mean[i] + centroids[j][i]) / 2.0;
        }
        bias[j] = b.round() as i32;
    }
    layer.weights = TensorI8::new(vec![k, n], w)?;
    layer.bias = TensorI32::new(vec![n], bias)?;
    Ok(())
}

/// Generates the fixture; the same `(kind, seed)` always gives the same
/// model and images.
pub fn gen_fixture(kind: FixtureKind, seed: u64) -> Result<Fixture> {
    let mut rng = SplitMix64::new(seed ^ (kind as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let (input, stages) = match kind {
        FixtureKind::Fc3 => (
            vec![1, 28, 28],
            vec![
                Stage::Fc { out: 128, relu: true },
                Stage::Fc { out: 64, relu: true },
                Stage::Fc { out: CLASSES, relu: false },
            ],
        ),
        FixtureKind::LenetLike | FixtureKind::LenetRgb => (
            vec![if kind == FixtureKind::LenetRgb { 3 } else { 1 }, 28, 28],
            vec![
                Stage::Conv { out: 6, kernel: 5, pool: true },
                Stage::Conv { out: 16, kernel: 5, pool: true },
                Stage::Fc { out: 120, relu: true },
                Stage::Fc { out: 84, relu: true },
                Stage::Fc { out: CLASSES, relu: false },
            ],
        ),
    };
    let templates = gen_templates(kind, &input, &mut rng);
    let train_labels: Vec<usize> = (0..CLASSES * TRAIN_PER_CLASS).map(|i| i % CLASSES).collect();
    let train: Vec<TensorI8> = train_labels
        .iter()
        .map(|&l| gen_image(kind, &input, &templates[l], &mut rng))
        .collect();
    let labels: Vec<usize> = (0..FIXTURE_IMAGES).map(|i| i % CLASSES).collect();
    let images: Vec<TensorI8> = labels
        .iter()
        .map(|&l| gen_image(kind, &input, &templates[l], &mut rng))
        .collect();

    let mut model = ModelSpec::new(kind.name(), Vec::new());
    model
        .extra
        .insert("fixture_seed".into(), serde_json::Value::from(seed));
    let mut shape = input;
    let mut acts = train.clone();
    let last = stages.len() - 1;
    for (li, stage) in stages.iter().enumerate() {
        let mut layer = match *stage {
            Stage::Fc { out, relu } => {
                let k: usize = shape.iter().product();
                let w = (0..k * out).map(|_| small_i8(&mut rng, 31)).collect();
                LayerSpec {
                    kind: LayerKind::Fc,
                    in_shape: vec![k],
                    out_shape: vec![out],
                    weights: TensorI8::new(vec![k, out], w)?,
                    bias: TensorI32::zeros(vec![out]),
                    shift: Shift::new(0)?,
                    nlf: if relu { Lut::relu() } else { Lut::identity() },
                    pool: None,
                }
            }
            Stage::Conv { out, kernel, pool } => {
                let (c, h, w_) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h - kernel + 1, w_ - kernel + 1);
                let n_w = out * c * kernel * kernel;
                let w = (0..n_w).map(|_| small_i8(&mut rng, 31)).collect();
                let out_shape = if pool { vec![out, oh / 2, ow / 2] } else { vec![out, oh, ow] };
                LayerSpec {
                    kind: LayerKind::Conv2d(ConvParams {
                        kernel: [kernel, kernel],
                        stride: [1, 1],
                        padding: [0, 0],
                    }),
                    in_shape: shape.clone(),
                    out_shape,
                    weights: TensorI8::new(vec![out, c, kernel, kernel], w)?,
                    bias: TensorI32::zeros(vec![out]),
                    shift: Shift::new(0)?,
                    nlf: Lut::relu(),
                    pool: pool.then(PoolSpec::default),
                }
            }
        };
        if li == last {
            fit_output_layer(&mut layer, &acts, &train_labels)?;
            layer.shift = calibrated_shift(&layer, &acts)?;
        } else {
            layer.shift = calibrated_shift(&layer, &acts)?;
            let unit = 1i64 << layer.shift.get();
            let bias: Vec<i32> = (0..layer.out_features())
                .map(|_| (small_i8(&mut rng, 8) as i64 * unit).clamp(i32::MIN as i64, i32::MAX as i64) as i32)
                .collect();
            layer.bias = TensorI32::new(vec![bias.len()], bias)?;
        }
        shape = layer.out_shape.clone();
        model.layers.push(layer);
        let prefix = ModelSpec::new(kind.name(), model.layers.clone());
        acts = train
            .iter()
            .map(|img| reference_inference(&prefix, img))
            .collect::<Result<_>>()?;
    }
    model.validate()?;

    let mut correct = 0usize;
    let mut dataset = Dataset::default();
    for (image, &label) in images.into_iter().zip(&labels) {
        let logits = reference_inference(&model, &image)?;
        correct += usize::from(argmax(logits.data()) == Some(label));
        dataset.images.push(DatasetImage {
            label: label as i64,
            image,
        });
    }
    model.claimed_accuracy = Some(correct as f64 / FIXTURE_IMAGES as f64);
    Ok(Fixture { model, dataset })
}
