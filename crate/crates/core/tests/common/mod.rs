#![allow(dead_code)]

use safi_core::lowering::{MatmulProblem, PoolGeometry};
use safi_core::model::{ConvParams, LayerKind, LayerSpec, PoolSpec};
use safi_core::rng::SplitMix64;
use safi_core::{Lut, ModelSpec, SaConfig, Shift, TensorI32, TensorI8};

pub fn i8s(rng: &mut SplitMix64, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.next_u64() as i8).collect()
}

pub fn small_i8s(rng: &mut SplitMix64, n: usize, max: i64) -> Vec<i8> {
    (0..n)
        .map(|_| (rng.below((2 * max + 1) as u64) as i64 - max) as i8)
        .collect()
}

pub fn pick<T: Copy>(rng: &mut SplitMix64, items: &[T]) -> T {
    items[rng.below(items.len() as u64) as usize]
}

pub fn random_sa(rng: &mut SplitMix64) -> SaConfig {
    SaConfig::new(pick(rng, &[1, 2, 4]), pick(rng, &[1, 2, 4])).unwrap()
}

/// Random matmul problem with `M, K, N <= 16`.
pub fn random_problem(rng: &mut SplitMix64) -> MatmulProblem {
    let pool = rng.below(3) == 0;
    let (m, pool) = if pool {
        let (h, w) = (pick(rng, &[2, 4]), pick(rng, &[2, 4]));
        (h * w, Some(PoolGeometry { out_h: h, out_w: w }))
    } else {
        (1 + rng.below(16) as usize, None)
    };
    let k = 1 + rng.below(16) as usize;
    let n = 1 + rng.below(16) as usize;
    let bias = (0..n).map(|_| (rng.next_u64() as i32) >> rng.below(32)).collect();
    MatmulProblem {
        a: TensorI8::new(vec![m, k], i8s(rng, m * k)).unwrap(),
        w: TensorI8::new(vec![k, n], i8s(rng, k * n)).unwrap(),
        bias: TensorI32::new(vec![n], bias).unwrap(),
        shift: Shift::new(rng.below(9) as u32).unwrap(),
        nlf: if rng.below(2) == 0 { Lut::relu() } else { Lut::identity() },
        pool,
    }
}

pub fn fc_layer(rng: &mut SplitMix64, k: usize, n: usize, shift: u32, relu: bool) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Fc,
        in_shape: vec![k],
        out_shape: vec![n],
        weights: TensorI8::new(vec![k, n], small_i8s(rng, k * n, 20)).unwrap(),
        bias: TensorI32::new(vec![n], (0..n).map(|_| rng.below(200) as i32 - 100).collect()).unwrap(),
        shift: Shift::new(shift).unwrap(),
        nlf: if relu { Lut::relu() } else { Lut::identity() },
        pool: None,
    }
}

pub fn conv_layer(
    rng: &mut SplitMix64,
    in_shape: [usize; 3],
    out_c: usize,
    k: usize,
    pool: bool,
    shift: u32,
) -> LayerSpec {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    LayerSpec {
        kind: LayerKind::Conv2d(ConvParams {
            kernel: [k, k],
            stride: [1, 1],
            padding: [0, 0],
        }),
        in_shape: in_shape.to_vec(),
        out_shape: if pool { vec![out_c, oh / 2, ow / 2] } else { vec![out_c, oh, ow] },
        weights: TensorI8::new(vec![out_c, c, k, k], small_i8s(rng, out_c * c * k * k, 20)).unwrap(),
        bias: TensorI32::new(vec![out_c], (0..out_c).map(|_| rng.below(200) as i32 - 100).collect()).unwrap(),
        shift: Shift::new(shift).unwrap(),
        nlf: Lut::relu(),
        pool: pool.then(PoolSpec::default),
    }
}

/// conv(1x6x6, 2@3x3) -> pool -> fc 8 -> fc 4: small enough for
/// exhaustive-ish fault sweeps, covering conv, pool and bypass.
pub fn tiny_model(seed: u64) -> (ModelSpec, Vec<TensorI8>) {
    let mut rng = SplitMix64::new(seed);
    let conv = conv_layer(&mut rng, [1, 6, 6], 2, 3, true, 6);
    let fc1 = fc_layer(&mut rng, 8, 8, 6, true);
    let fc2 = fc_layer(&mut rng, 8, 4, 5, false);
    let model = ModelSpec::new("tiny", vec![conv, fc1, fc2]);
    let images = (0..4)
        .map(|_| TensorI8::new(vec![1, 6, 6], small_i8s(&mut rng, 36, 127)).unwrap())
        .collect();
    (model, images)
}
