use ldg_tensor::gradcheck::{check_gradients, GradCheckOptions};
use ldg_tensor::nn::{
    channel_max, channel_mean, conv2d, pool, upsample_bilinear, BatchNorm2d, Conv2dSpec, LayerNorm2d, Linear, PoolKind,
    PoolSpec,
};
use ldg_tensor::{Result, Tensor, UnaryKind, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn param(shape: &[usize], r: &mut ChaCha8Rng) -> Var<f64> {
    Var::parameter(Tensor::randn(shape, r))
}

/// Random values kept at least `gap` away from every point in `kinks`.
fn param_away_from(shape: &[usize], kinks: &[f64], gap: f64, r: &mut ChaCha8Rng) -> Var<f64> {
    let t = Tensor::<f64>::rand_uniform(shape, -4.0, 4.0, r).map(|mut v| {
        for &k in kinks {
            if (v - k).abs() < gap {
                v = k + gap.copysign(v - k);
            }
        }
        v
    });
    Var::parameter(t)
}

fn assert_grad(name: &str, vars: &[Var<f64>], f: impl Fn() -> Result<Var<f64>>) {
    let report = check_gradients(vars, f, GradCheckOptions::default()).unwrap();
    assert!(report.passes(TOL), "{name}: {report:?}");
}

fn image_shape(r: &mut ChaCha8Rng, n: usize, c: usize) -> [usize; 4] {
    [n, c, r.gen_range(3..=9), r.gen_range(3..=9)]
}

#[test]
fn binary_ops_with_broadcasting() {
    let mut r = rng(1);
    let cases: [(&[usize], &[usize]); 4] = [(&[2, 3], &[2, 3]), (&[2, 3, 4], &[3, 1]), (&[4], &[2, 1, 4]), (&[1, 3, 1, 1], &[2, 3, 5, 4])];
    for (sa, sb) in cases {
        let a = param(sa, &mut r);
        let b = Var::parameter(Tensor::<f64>::rand_uniform(sb, 0.5, 2.0, &mut r));
        assert_grad("add", &[a.clone(), b.clone()], || a.add(&b));
        assert_grad("sub", &[a.clone(), b.clone()], || a.sub(&b));
        assert_grad("mul", &[a.clone(), b.clone()], || a.mul(&b));
        assert_grad("div", &[a.clone(), b.clone()], || a.div(&b));
    }
}

#[test]
fn unary_ops() {
    let mut r = rng(2);
    let smooth = [
        UnaryKind::Neg,
        UnaryKind::Exp,
        UnaryKind::Square,
        UnaryKind::Sigmoid,
        UnaryKind::Silu,
        UnaryKind::Softplus,
        UnaryKind::Tanh,
    ];
    for kind in smooth {
        let x = param(&[3, 5], &mut r);
        assert_grad(kind.name(), &[x.clone()], || Ok(x.unary(kind)));
    }
    let x = param_away_from(&[4, 4], &[0.0], 1e-3, &mut r);
    assert_grad("abs", &[x.clone()], || Ok(x.abs()));
    assert_grad("relu", &[x.clone()], || Ok(x.relu()));
    let x = param_away_from(&[4, 4], &[-3.0, 3.0], 1e-3, &mut r);
    assert_grad("hardswish", &[x.clone()], || Ok(x.hardswish()));
    assert_grad("hardsigmoid", &[x.clone()], || Ok(x.hardsigmoid()));
    let pos = Var::parameter(Tensor::<f64>::rand_uniform(&[3, 3], 0.2, 3.0, &mut r));
    assert_grad("ln", &[pos.clone()], || Ok(pos.ln()));
    assert_grad("sqrt", &[pos.clone()], || Ok(pos.sqrt()));
    assert_grad("affine", &[pos.clone()], || Ok(pos.affine(-1.5, 0.25)));
}

#[test]
fn matmul_3x4_by_4x2() {
    let mut r = rng(3);
    let a = param(&[3, 4], &mut r);
    let b = param(&[4, 2], &mut r);
    assert_grad("matmul", &[a.clone(), b.clone()], || a.matmul(&b));
}

#[test]
fn reductions_and_layout() {
    let mut r = rng(4);
    let x = param(&[2, 3, 4], &mut r);
    for axes in [&[0usize][..], &[1], &[2], &[0, 2], &[0, 1, 2]] {
        assert_grad("sum", &[x.clone()], || x.sum(axes, false));
        assert_grad("mean", &[x.clone()], || x.mean(axes, true));
        assert_grad("max", &[x.clone()], || x.max(axes, false));
    }
    assert_grad("softmax", &[x.clone()], || x.softmax(1));
    assert_grad("log_softmax", &[x.clone()], || x.log_softmax(2));
    assert_grad("permute", &[x.clone()], || x.permute(&[2, 0, 1]));
    assert_grad("reshape", &[x.clone()], || x.reshape(&[6, 4]));
    assert_grad("narrow", &[x.clone()], || x.narrow(2, 1, 2));
    let y = param(&[2, 1, 4], &mut r);
    assert_grad("concat", &[x.clone(), y.clone()], || Var::concat(&[&x, &y], 1));
}

#[test]
fn conv2d_variants() {
    let mut r = rng(5);
    let specs = [
        Conv2dSpec::new(3, 4, 3).padding(1),
        Conv2dSpec::new(3, 4, 3).stride(2).padding(1).bias(false),
        Conv2dSpec::new(4, 6, 3).groups(2).padding(2).dilation(2),
        Conv2dSpec::depthwise(5, 3, 2),
        Conv2dSpec::depthwise(3, 3, 1).stride(2),
        Conv2dSpec::new(4, 3, 1),
        Conv2dSpec::new(2, 3, 1).stride(2),
        Conv2dSpec { kernel: (1, 3), ..Conv2dSpec::new(2, 2, 1) },
    ];
    for spec in specs {
        let xs = image_shape(&mut r, 2, spec.in_ch);
        let x = param(&xs, &mut r);
        let w = param(&spec.weight_shape(), &mut r);
        let b = spec.bias.then(|| param(&[spec.out_ch], &mut r));
        let mut vars = vec![x.clone(), w.clone()];
        vars.extend(b.clone());
        assert_grad(&format!("{spec:?}"), &vars, || conv2d(&x, &w, b.as_ref(), &spec));
    }
}

#[test]
fn pooling() {
    let mut r = rng(6);
    let x = param(&image_shape(&mut r, 2, 3), &mut r);
    for (kind, spec) in [
        (PoolKind::Max, PoolSpec::new(2, 2)),
        (PoolKind::Max, PoolSpec::new(3, 1).padding(1)),
        (PoolKind::Avg, PoolSpec::new(3, 2).padding(1)),
        (PoolKind::GlobalAvg, PoolSpec::new(1, 1)),
        (PoolKind::GlobalMax, PoolSpec::new(1, 1)),
    ] {
        assert_grad(&format!("{kind:?}"), &[x.clone()], || pool(kind, &x, spec));
    }
    assert_grad("channel_max", &[x.clone()], || channel_max(&x));
    assert_grad("channel_mean", &[x.clone()], || channel_mean(&x));
}

#[test]
fn normalization() {
    let mut r = rng(7);
    let xs = image_shape(&mut r, 2, 3);
    let x = param(&xs, &mut r);
    let bn = BatchNorm2d::new(3);
    bn.gamma.set_value(Tensor::rand_uniform(&[3], 0.5, 1.5, &mut r)).unwrap();
    bn.beta.set_value(Tensor::randn(&[3], &mut r)).unwrap();
    let vars = [x.clone(), bn.gamma.clone(), bn.beta.clone()];
    assert_grad("batchnorm train", &vars, || bn.forward(&x));
    bn.set_training(false);
    *bn.running_mean.borrow_mut() = Tensor::randn(&[3], &mut r);
    *bn.running_var.borrow_mut() = Tensor::rand_uniform(&[3], 0.5, 2.0, &mut r);
    assert_grad("batchnorm eval", &vars, || bn.forward(&x));

    let ln = LayerNorm2d::new(3);
    ln.gamma.set_value(Tensor::rand_uniform(&[3], 0.5, 1.5, &mut r)).unwrap();
    let vars = [x.clone(), ln.gamma.clone(), ln.beta.clone()];
    assert_grad("layernorm", &vars, || ln.forward(&x));
}

#[test]
fn upsample_and_linear() {
    let mut r = rng(8);
    let x = param(&image_shape(&mut r, 1, 2), &mut r);
    for s in [2, 3, 4] {
        assert_grad("upsample", &[x.clone()], || upsample_bilinear(&x, s));
    }
    let lin = Linear::<f64>::new(5, 3, true, &mut r);
    let inp = param(&[4, 5], &mut r);
    let vars = [inp.clone(), lin.weight.clone(), lin.bias.clone().unwrap()];
    assert_grad("linear", &vars, || lin.forward(&inp));
}

#[test]
fn sum_of_products_matches_finite_difference() {
    // d/da sum(a * b) at a = [1, 2], b = [3, 4]
    let a = Var::parameter(Tensor::from_f64(&[1.0, 2.0], &[2]).unwrap());
    let b = Var::constant(Tensor::from_f64(&[3.0, 4.0], &[2]).unwrap());
    let f = |a0: f64, a1: f64| a0 * 3.0 + a1 * 4.0;
    let h = 1e-4;
    let fd = [(f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2.0 * h), (f(1.0, 2.0 + h) - f(1.0, 2.0 - h)) / (2.0 * h)];
    a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
    let g = a.grad().unwrap();
    for (x, y) in g.data().iter().zip(fd) {
        assert!((x - y).abs() < 1e-9);
    }
}
