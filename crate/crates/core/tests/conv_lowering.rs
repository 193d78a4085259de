//! im2col lowering against a direct nested-loop convolution.

mod common;

use common::{i8s, pick};
use safi_core::lowering::{lower_layer, pool_plan, ConvGeometry};
use safi_core::model::{ConvParams, LayerKind, LayerSpec, PoolSpec};
use safi_core::quant::{mac, requantize};
use safi_core::rng::SplitMix64;
use safi_core::scheduler::{reference_inference, run_golden};
use safi_core::{Lut, ModelSpec, SaConfig, Shift, TensorI32, TensorI8};

/// Output `[OC, OH, OW]` (pooled if requested) computed straight from the
/// definition of a zero-padded strided convolution.
fn direct_conv(layer: &LayerSpec, x: &TensorI8) -> Vec<i8> {
    let LayerKind::Conv2d(p) = layer.kind else { unreachable!() };
    let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let ws = layer.weights.shape();
    let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (h + 2 * p.padding[0] - kh) / p.stride[0] + 1;
    let ow = (w + 2 * p.padding[1] - kw) / p.stride[1] + 1;
    let mut y = vec![0i8; oc * oh * ow];
    for o in 0..oc {
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = layer.bias.data()[o];
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let yy = (r * p.stride[0] + i) as isize - p.padding[0] as isize;
                            let xx = (q * p.stride[1] + j) as isize - p.padding[1] as isize;
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let a = x.data()[(ci * h + yy as usize) * w + xx as usize];
                            let wt = layer.weights.data()[((o * c + ci) * kh + i) * kw + j];
                            acc = mac(a, wt, acc);
                        }
                    }
                }
                y[(o * oh + r) * ow + q] = layer.nlf.apply(requantize(acc, layer.shift));
            }
        }
    }
    if layer.pool.is_none() {
        return y;
    }
    let (ph, pw) = (oh / 2, ow / 2);
    let mut pooled = vec![0i8; oc * ph * pw];
    for o in 0..oc {
        for r in 0..ph {
            for q in 0..pw {
                let at = |dr: usize, dq: usize| y[(o * oh + 2 * r + dr) * ow + 2 * q + dq];
                pooled[(o * ph + r) * pw + q] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    pooled
}

fn random_conv(rng: &mut SplitMix64) -> Option<(LayerSpec, TensorI8)> {
    let c = 1 + rng.below(4) as usize;
    let h = 1 + rng.below(6) as usize;
    let w = 1 + rng.below(6) as usize;
    let k = [1 + rng.below(3) as usize, 1 + rng.below(3) as usize];
    let stride = [pick(rng, &[1, 2]), pick(rng, &[1, 2])];
    let padding = [rng.below(2) as usize, rng.below(2) as usize];
    let oc = 1 + rng.below(4) as usize;
    let geom = ConvGeometry {
        in_channels: c,
        in_h: h,
        in_w: w,
        out_channels: oc,
        k_h: k[0],
        k_w: k[1],
        stride_h: stride[0],
        stride_w: stride[1],
        pad_h: padding[0],
        pad_w: padding[1],
    };
    geom.validate().ok()?;
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let pool = rng.below(2) == 0 && pool_plan(oh, ow).is_ok();
    let layer = LayerSpec {
        kind: LayerKind::Conv2d(ConvParams { kernel: k, stride, padding }),
        in_shape: vec![c, h, w],
        out_shape: if pool { vec![oc, oh / 2, ow / 2] } else { vec![oc, oh, ow] },
        weights: TensorI8::new(vec![oc, c, k[0], k[1]], i8s(rng, oc * c * k[0] * k[1])).unwrap(),
        bias: TensorI32::new(vec![oc], (0..oc).map(|_| rng.next_u64() as i32 >> 12).collect()).unwrap(),
        shift: Shift::new(rng.below(12) as u32).unwrap(),
        nlf: if rng.below(2) == 0 { Lut::relu() } else { Lut::identity() },
        pool: pool.then(PoolSpec::default),
    };
    layer.validate(0).ok()?;
    let x = TensorI8::new(vec![c, h, w], i8s(rng, c * h * w)).unwrap();
    Some((layer, x))
}

#[test]
fn lowered_conv_matches_direct_conv() {
    let mut rng = SplitMix64::new(0xC0417);
    let mut cases = 0;
    let mut pooled = 0;
    while cases < 400 {
        let Some((layer, x)) = random_conv(&mut rng) else { continue };
        let model = ModelSpec::new("conv", vec![layer.clone()]);
        let want = direct_conv(&layer, &x);
        let got = reference_inference(&model, &x).unwrap();
        assert_eq!(got.data(), want.as_slice(), "{layer:?}");
        assert!(lower_layer(&layer, &x).unwrap().validate().is_ok());
        if cases % 8 == 0 {
            let sa = SaConfig::new(1 + rng.below(3) as usize, 1 + rng.below(3) as usize).unwrap();
            let run = run_golden(&model, &x, sa).unwrap();
            assert_eq!(run.logits, want, "pipeline {sa} {layer:?}");
        }
        pooled += usize::from(layer.pool.is_some());
        cases += 1;
    }
    assert!(pooled > 20);
}
