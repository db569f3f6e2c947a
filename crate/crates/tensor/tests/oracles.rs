use ldg_tensor::nn::{conv2d, global_avg_pool, pool, upsample_bilinear, Conv2dSpec, PoolKind, PoolSpec};
use ldg_tensor::{no_grad, stats, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct seven-deep loop over the definition of grouped cross-correlation.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, s: &Conv2dSpec) -> Tensor<f64> {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (ho, wo) = s.output_hw(h, wd).unwrap();
    let (cig, cog) = (cin / s.groups, s.out_ch / s.groups);
    let (kh, kw) = s.kernel;
    let mut out = vec![0.0; n * s.out_ch * ho * wo];
    for ni in 0..n {
        for co in 0..s.out_ch {
            let g = co / cog;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cig {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s.stride + ky * s.dilation) as isize - s.padding as isize;
                                let ix = (ox * s.stride + kx * s.dilation) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + g * cig + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cig + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * s.out_ch + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(out, vec![n, s.out_ch, ho, wo]).unwrap()
}

fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, s: &Conv2dSpec) -> Tensor<f64> {
    let bv = b.map(|b| Var::constant(b.clone()));
    conv2d(&Var::constant(x.clone()), &Var::constant(w.clone()), bv.as_ref(), s)
        .unwrap()
        .value()
        .clone()
}

#[test]
fn depthwise_matches_naive_exactly() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let c = r.gen_range(1..6);
        let k = [1, 3, 5][r.gen_range(0..3)];
        let d = r.gen_range(1..3);
        let spec = Conv2dSpec::depthwise(c, k, d).stride(r.gen_range(1..3)).bias(false);
        let (h, w) = (r.gen_range(3..10), r.gen_range(3..10));
        if spec.output_hw(h, w).is_err() {
            continue;
        }
        let x = Tensor::randn(&[2, c, h, w], &mut r);
        let wt = Tensor::randn(&spec.weight_shape(), &mut r);
        let fast = run(&x, &wt, None, &spec);
        let slow = naive_conv(&x, &wt, None, &spec);
        assert!(fast.bit_eq(&slow), "{spec:?}: {}", fast.max_abs_diff(&slow).unwrap());
    }
}

#[test]
fn general_conv_matches_naive() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..40 {
        let groups = r.gen_range(1..4);
        let spec = Conv2dSpec {
            in_ch: groups * r.gen_range(1..4),
            out_ch: groups * r.gen_range(1..4),
            kernel: (r.gen_range(1..4), r.gen_range(1..4)),
            stride: r.gen_range(1..3),
            padding: r.gen_range(0..3),
            dilation: r.gen_range(1..3),
            groups,
            bias: r.gen_bool(0.5),
        };
        let (h, w) = (r.gen_range(3..10), r.gen_range(3..10));
        if spec.output_hw(h, w).is_err() {
            continue;
        }
        let x = Tensor::randn(&[2, spec.in_ch, h, w], &mut r);
        let wt = Tensor::randn(&spec.weight_shape(), &mut r);
        let b = spec.bias.then(|| Tensor::randn(&[spec.out_ch], &mut r));
        let fast = run(&x, &wt, b.as_ref(), &spec);
        let slow = naive_conv(&x, &wt, b.as_ref(), &spec);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "{spec:?}");
    }
}

#[test]
fn identity_pointwise_and_ones_kernel() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::<f64>::randn(&[1, 4, 5, 5], &mut r);
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 5] = 1.0;
    }
    let spec = Conv2dSpec::new(4, 4, 1).bias(false);
    let y = run(&x, &Tensor::new(eye, vec![4, 4, 1, 1]).unwrap(), None, &spec);
    assert!(y.bit_eq(&x));

    let spec = Conv2dSpec::new(1, 1, 3).padding(1).bias(false);
    let y = run(&Tensor::ones(&[1, 1, 3, 3]), &Tensor::ones(&[1, 1, 3, 3]), None, &spec);
    assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn conv_flop_count() {
    let spec = Conv2dSpec::new(16, 16, 3).padding(1).bias(false);
    assert_eq!(spec.flops(1, 64, 64), 2 * 16 * 16 * 9 * 64 * 64);
    assert_eq!(spec.flops(1, 64, 64), 18_874_368);
    let x = Var::constant(Tensor::<f32>::zeros(&[1, 16, 64, 64]));
    let w = Var::constant(Tensor::<f32>::zeros(&spec.weight_shape()));
    let (_, flops, _) = stats::measure(|| no_grad(|| conv2d(&x, &w, None, &spec).unwrap()));
    assert_eq!(flops, 18_874_368);
    assert_eq!(Conv2dSpec::new(64, 2, 1).bias(false).param_count(), 128);
}

/// Bilinear interpolation of the source grid at continuous coordinates.
fn sample(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (y1, x1) = ((y0 + 1.0).min((h - 1) as f64), (x0 + 1.0).min((w - 1) as f64));
    let at = |yy: f64, xx: f64| src[yy as usize * w + xx as usize];
    let (fy, fx) = (y - y0, x - x0);
    at(y0, x0) * (1.0 - fy) * (1.0 - fx) + at(y0, x1) * (1.0 - fy) * fx + at(y1, x0) * fy * (1.0 - fx) + at(y1, x1) * fy * fx
}

#[test]
fn upsample_matches_direct_interpolation() {
    let src = [0.0, 1.0, 2.0, 3.0];
    let x = Var::<f64>::constant(Tensor::from_f64(&src, &[1, 1, 2, 2]).unwrap());
    let y = upsample_bilinear(&x, 2).unwrap();
    let mut expect = Vec::new();
    for oy in 0..4 {
        for ox in 0..4 {
            let to_src = |o: usize| (o as f64 + 0.5) / 2.0 - 0.5;
            expect.push(sample(&src, 2, 2, to_src(oy), to_src(ox)));
        }
    }
    for (a, b) in y.value().data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15, "{:?} vs {expect:?}", y.value().data());
    }
    assert_eq!(&expect[..4], &[0.0, 0.25, 0.75, 1.0]);

    let mut r = ChaCha8Rng::seed_from_u64(14);
    let data: Vec<f64> = (0..5 * 7).map(|_| r.gen()).collect();
    let x = Var::<f64>::constant(Tensor::from_f64(&data, &[1, 1, 5, 7]).unwrap());
    let y = upsample_bilinear(&x, 3).unwrap();
    for oy in 0..15 {
        for ox in 0..21 {
            let to_src = |o: usize| (o as f64 + 0.5) / 3.0 - 0.5;
            let e = sample(&data, 5, 7, to_src(oy), to_src(ox));
            assert!((y.value().data()[oy * 21 + ox] - e).abs() < 1e-14);
        }
    }
}

#[test]
fn upsample_preserves_global_mean_on_constants_and_ramps() {
    for (h, w) in [(8, 8), (9, 12)] {
        let constant = vec![0.3; h * w];
        let ramp_x: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 * 0.5 - 1.0).collect();
        let ramp_xy: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 + 2.0 * (i / w) as f64).collect();
        for data in [constant, ramp_x, ramp_xy] {
            let x = Var::<f64>::constant(Tensor::from_f64(&data, &[1, 1, h, w]).unwrap());
            let base = global_avg_pool(&x).unwrap().value().data()[0];
            for s in [2, 3, 4] {
                let up = global_avg_pool(&upsample_bilinear(&x, s).unwrap()).unwrap().value().data()[0];
                assert!((up - base).abs() < 1e-6, "{h}x{w} scale {s}: {up} vs {base}");
            }
        }
    }
}

#[test]
fn pooling_examples() {
    let x = Var::<f64>::constant(Tensor::from_f64(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap());
    assert_eq!(pool(PoolKind::Max, &x, PoolSpec::new(2, 2)).unwrap().value().data(), &[4.0]);
    assert_eq!(pool(PoolKind::Avg, &x, PoolSpec::new(2, 2)).unwrap().value().data(), &[2.5]);
}
