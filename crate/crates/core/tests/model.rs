use ldg_tensor::nn::{self, global_avg_pool, Conv2dSpec, Module};
use ldg_tensor::{Tensor, Var};
use ldgnet::backbone::Backbone;
use ldgnet::blocks::Init;
use ldgnet::decoder::{diff_weighting, dynamic_fuse, refined_diff, DadfLevel};
use ldgnet::dgm::{abs_diff, dgm_fuse, DifferenceAdapter, SpatialChannelAttention};
use ldgnet::vssm::VssBlock;
use ldgnet::{BackboneConfig, ChannelGate, LdgNet, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_img(shape: &[usize], seed: u64) -> Var<f32> {
    Var::constant(Tensor::rand_uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn randn(shape: &[usize], seed: u64) -> Var<f64> {
    Var::constant(Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn bits(v: &Var<f32>) -> Vec<u32> {
    v.value().data().iter().map(|x| x.to_bits()).collect()
}

fn constant(shape: &[usize], v: f64) -> Var<f64> {
    Var::constant(Tensor::full(shape, v))
}

#[test]
fn backbone_levels_follow_strides() {
    let cfg = BackboneConfig::default();
    let bb = Backbone::<f32>::new(&cfg, 4, 0, "enc").unwrap();
    nn::set_training(&bb, false);
    let mut x = rand_img(&[1, 3, 256, 256], 1);
    let want = [[1, 16, 64, 64], [1, 24, 32, 32], [1, 48, 16, 16], [1, 96, 8, 8]];
    for (j, w) in want.iter().enumerate() {
        x = bb.forward_layer(j + 1, &x).unwrap();
        assert_eq!(x.shape(), w.to_vec());
    }
    assert_eq!(cfg.stage_strides(), [4, 8, 16, 32]);
}

#[test]
fn width_multiplier_rounds_to_multiples_of_eight() {
    let mut cfg = BackboneConfig::default();
    cfg.width_multiplier = 0.5;
    assert_eq!(cfg.widths(), [8, 16, 24, 48]);
    cfg.width_multiplier = 0.3;
    // 4.8, 7.2, 14.4, 28.8
    assert_eq!(cfg.widths(), [8, 8, 16, 32]);
    for m in [0.25, 0.35, 0.75, 1.3, 2.0] {
        cfg.width_multiplier = m;
        for (w, c) in cfg.widths().iter().zip(cfg.stage_channels) {
            assert_eq!(w % 8, 0);
            assert!(*w >= 8);
            assert!((*w as f64 - (c as f64 * m).max(8.0)).abs() <= 4.0);
        }
    }
}

#[test]
fn backbone_rejects_bad_layer_counts_and_inputs() {
    let cfg = BackboneConfig::default();
    assert!(Backbone::<f32>::new(&cfg, 2, 0, "x").is_err());
    assert!(Backbone::<f32>::new(&cfg, 5, 0, "x").is_err());
    let bb = Backbone::<f32>::new(&cfg, 3, 0, "x").unwrap();
    assert!(bb.forward_layer(2, &rand_img(&[1, 3, 32, 32], 0)).is_err());
    assert!(bb.forward_layer(4, &rand_img(&[1, 24, 8, 8], 0)).is_err());
}

#[test]
fn backbone_init_is_seeded() {
    let cfg = BackboneConfig::default();
    let flat = |seed: u64| -> Vec<u32> {
        nn::parameters(&Backbone::<f32>::new(&cfg, 4, seed, "enc").unwrap())
            .iter()
            .flat_map(|p| bits(p))
            .collect()
    };
    assert_eq!(flat(5), flat(5));
    assert_ne!(flat(5), flat(6));
}

#[test]
fn backbone_param_count_closed_form() {
    // (in, out, hidden) per block of the default stack; every hidden width is
    // already a multiple of 8
    let blocks = [
        (16, 16, 32),
        (16, 16, 32),
        (16, 24, 64),
        (24, 24, 96),
        (24, 48, 96),
        (48, 48, 192),
        (48, 48, 192),
        (48, 96, 288),
        (96, 96, 576),
    ];
    let bn = |c: usize| 2 * c;
    let stem = 3 * 16 * 9 + bn(16);
    let body: usize = blocks
        .iter()
        .map(|&(i, o, h)| i * h + bn(h) + 9 * h + bn(h) + h * o + bn(o))
        .sum();
    let bb = Backbone::<f32>::new(&BackboneConfig::default(), 4, 0, "enc").unwrap();
    assert_eq!(nn::param_count(&bb), stem + body);
}

#[test]
fn zeros_in_eval_mode_stay_finite() {
    let bb = Backbone::<f32>::new(&BackboneConfig::default(), 4, 0, "enc").unwrap();
    nn::set_training(&bb, false);
    let mut x = Var::constant(Tensor::zeros(&[1, 3, 64, 64]));
    for j in 1..=4 {
        x = bb.forward_layer(j, &x).unwrap();
        assert!(x.value().all_finite());
    }
    // zero biases and zero shifts keep every activation at zero
    assert!(x.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn absolute_difference_image() {
    let d = abs_diff(&constant(&[1, 3, 2, 2], 0.2), &constant(&[1, 3, 2, 2], 0.7)).unwrap();
    assert!(d.value().data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    let (a, b) = (randn(&[2, 3, 4, 4], 1), randn(&[2, 3, 4, 4], 2));
    assert!(abs_diff(&a, &b).unwrap().value().bit_eq(&abs_diff(&b, &a).unwrap().value()));
    assert!(abs_diff(&a, &a).unwrap().value().data().iter().all(|&v| v == 0.0));
    assert!(abs_diff(&a, &randn(&[2, 3, 4, 5], 3)).is_err());
}

#[test]
fn adapter_residual_identity_and_zero_input() {
    let da = DifferenceAdapter::<f64>::new(&Init { seed: 4 }, "da", 8, 8).unwrap();
    let x = randn(&[2, 8, 6, 6], 5);
    da.pointwise.weight.set_value(Tensor::zeros(&da.pointwise.weight.shape())).unwrap();
    assert!(da.forward(&x).unwrap().value().bit_eq(&x.value()));
    let da = DifferenceAdapter::<f64>::new(&Init { seed: 4 }, "da", 8, 8).unwrap();
    nn::set_training(&da, false);
    let z = constant(&[1, 8, 5, 5], 0.0);
    assert!(da.forward(&z).unwrap().value().data().iter().all(|&v| v == 0.0));
    assert_eq!(Conv2dSpec::depthwise(8, 3, 2).receptive_field(), (5, 5));
}

#[test]
fn attention_scale_and_ranges() {
    let sca = SpatialChannelAttention::<f64>::new(&Init { seed: 6 }, "sca", 16, 4, ChannelGate::Silu).unwrap();
    let f = randn(&[2, 16, 7, 5], 7).mul_scalar(10.0);
    let (out, maps) = sca.forward(&f).unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), f.shape());
    assert_eq!(maps.spatial.shape(), vec![2, 1, 7, 5]);
    assert_eq!(maps.channel.shape(), vec![2, 16, 1, 1]);
    assert!(maps.spatial.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(maps.channel.value().all_finite());
    let m1 = global_avg_pool(&f).unwrap().value().to_f64_vec();
    let m2 = global_avg_pool(&f.mul_scalar(2.0)).unwrap().value().to_f64_vec();
    for (a, b) in m1.iter().zip(&m2) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn guidance_fuse_identities() {
    let f = randn(&[1, 4, 3, 3], 8);
    assert!(dgm_fuse(&f, &constant(&[1, 4, 3, 3], 0.0)).unwrap().value().bit_eq(&f.value()));
    let twice = dgm_fuse(&f, &constant(&[1, 4, 3, 3], 1.0)).unwrap();
    assert!(twice.value().bit_eq(&f.mul_scalar(2.0).value()));
    assert!(dgm_fuse(&f, &constant(&[1, 4, 3, 2], 0.0)).is_err());
}

fn net(dgm: bool, dadf: bool) -> LdgNet<f32> {
    LdgNet::new(&ModelConfig {
        dgm,
        dadf,
        ..ModelConfig::tiny()
    })
    .unwrap()
}

#[test]
fn inert_guidance_matches_plain_siamese_encoder() {
    let (guided, plain) = (net(true, true), net(false, true));
    let (pre, post) = (rand_img(&[2, 3, 64, 64], 1), rand_img(&[2, 3, 64, 64], 2));
    let a = guided.encode(&pre, &post).unwrap();
    let b = plain.encode(&pre, &post).unwrap();
    for j in 0..4 {
        assert_eq!(bits(&a.pre[j]), bits(&b.pre[j]));
        assert_eq!(bits(&a.post[j]), bits(&b.post[j]));
    }
    let same = guided.encode(&pre, &pre).unwrap();
    for j in 0..4 {
        assert_eq!(bits(&same.pre[j]), bits(&same.post[j]));
    }
    assert_eq!(
        [0, 1, 2, 3].map(|j| a.pre[j].shape()[2]),
        [16, 8, 4, 2],
        "levels at /4, /8, /16, /32"
    );
}

#[test]
fn swapping_dates_swaps_streams() {
    let m = net(true, true);
    m.set_alpha(0.8).unwrap();
    m.set_training(false);
    let (pre, post) = (rand_img(&[1, 3, 64, 64], 3), rand_img(&[1, 3, 64, 64], 4));
    let a = m.encode(&pre, &post).unwrap();
    let b = m.encode(&post, &pre).unwrap();
    for j in 0..4 {
        assert_eq!(bits(&a.pre[j]), bits(&b.post[j]));
        assert_eq!(bits(&a.post[j]), bits(&b.pre[j]));
    }
}

#[test]
fn zero_alpha_without_fusion_is_the_baseline() {
    let (pre, post) = (rand_img(&[2, 3, 64, 64], 5), rand_img(&[2, 3, 64, 64], 6));
    for train in [true, false] {
        let (guided, base) = (net(true, false), net(false, false));
        guided.set_training(train);
        base.set_training(train);
        let a = guided.forward(&pre, &post).unwrap();
        let b = base.forward(&pre, &post).unwrap();
        assert_eq!(bits(&a), bits(&b), "train={train}");
    }
}

#[test]
fn ablation_parameter_ordering() {
    let count = |dgm, dadf| net(dgm, dadf).param_count();
    let (base, with_dgm, with_dadf, full) = (count(false, false), count(true, false), count(false, true), count(true, true));
    assert!(base < with_dgm && base < with_dadf);
    assert!(with_dgm < full && with_dadf < full);
    // the fusion-free decoder is a strict subset of the full one
    let names = |m: &LdgNet<f32>| -> Vec<(String, Vec<usize>)> {
        nn::named_parameters(&m.decoder).into_iter().map(|(n, v)| (n, v.shape())).collect()
    };
    let (small, big) = (names(&net(true, false)), names(&net(true, true)));
    assert!(small.len() < big.len());
    assert!(small.iter().all(|p| big.contains(p)));
}

#[test]
fn refined_difference_and_weighting() {
    let a = Var::<f64>::constant(Tensor::from_f64(&[1.0, 4.0], &[1, 2, 1, 1]).unwrap());
    let b = Var::<f64>::constant(Tensor::from_f64(&[3.0, 1.0], &[1, 2, 1, 1]).unwrap());
    assert_eq!(refined_diff(&a, &b).unwrap().value().data(), &[2.0, 3.0]);
    assert_eq!(refined_diff(&b, &a).unwrap().value().data(), &[2.0, 3.0]);
    let f = randn(&[1, 3, 4, 4], 9);
    assert!(diff_weighting(&f, &constant(&[1, 3, 4, 4], 0.0)).unwrap().value().bit_eq(&f.value()));
    assert!(diff_weighting(&f, &constant(&[1, 3, 4, 4], 1.0))
        .unwrap()
        .value()
        .bit_eq(&f.mul_scalar(2.0).value()));
}

#[test]
fn dynamic_fuse_boundaries() {
    let (p, q) = (randn(&[1, 3, 4, 4], 10), randn(&[1, 3, 4, 4], 11));
    let one = dynamic_fuse(&p, &q, &constant(&[1, 1, 4, 4], 1.0)).unwrap();
    assert!(one.value().max_abs_diff(&p.mul_scalar(2.0).value()).unwrap() < 1e-15);
    let zero = dynamic_fuse(&p, &q, &constant(&[1, 1, 4, 4], 0.0)).unwrap();
    assert!(zero.value().max_abs_diff(&q.add(&p).unwrap().value()).unwrap() < 1e-15);
}

#[test]
fn vss_fusion_shapes_and_order() {
    let cfg = ModelConfig {
        c_dec: 16,
        ..ModelConfig::tiny()
    };
    let level = DadfLevel::<f64>::new(&Init { seed: 12 }, "l", 24, &cfg).unwrap();
    let (a, b) = (randn(&[1, 24, 5, 6], 13), randn(&[1, 24, 5, 6], 14));
    let ab = level.fuse_vss(&a, &b).unwrap();
    let ba = level.fuse_vss(&b, &a).unwrap();
    assert_eq!(ab.shape(), vec![1, 16, 5, 6]);
    assert!(ab.value().max_abs_diff(&ba.value()).unwrap() > 1e-6);
    let (p, trace) = level.forward(&a, &b).unwrap();
    assert_eq!(p.shape(), vec![1, 16, 5, 6]);
    let attn = trace.diff_attn.unwrap();
    assert!(attn.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn vss_block_residual_and_shapes() {
    let vss = VssBlock::<f64>::new(&Init { seed: 15 }, "v", 8, 2, 8, None, false).unwrap();
    for (h, w) in [(1, 1), (1, 7), (5, 3), (6, 6)] {
        let x = randn(&[2, 8, h, w], 16);
        assert_eq!(vss.forward(&x).unwrap().shape(), x.shape());
    }
    vss.proj_out.weight.set_value(Tensor::zeros(&vss.proj_out.weight.shape())).unwrap();
    let x = randn(&[1, 8, 4, 4], 17);
    assert!(vss.forward(&x).unwrap().value().bit_eq(&x.value()));
    let zero = constant(&[1, 16, 3, 3], 0.0);
    assert!(vss.ss2d.forward(&zero).unwrap().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_forward_shapes_and_ranges() {
    let mut cfg = ModelConfig::tiny();
    cfg.channel_gate = ChannelGate::Sigmoid;
    let m = LdgNet::<f64>::new(&cfg).unwrap();
    m.set_alpha(0.5).unwrap();
    m.set_training(false);
    let img = |seed| Var::constant(Tensor::rand_uniform(&[2, 3, 256, 256], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let out = m.forward_full(&img(18), &img(19)).unwrap();
    assert_eq!(out.logits.shape(), vec![2, 2, 256, 256]);
    assert!(out.logits.value().all_finite());
    let in_unit = |v: &Var<f64>| v.value().data().iter().all(|&x| x > 0.0 && x < 1.0);
    for maps in &out.encoder.attention {
        assert!(in_unit(&maps.spatial));
        assert!(in_unit(&maps.channel));
    }
    for level in &out.levels {
        assert!(in_unit(level.diff_attn.as_ref().unwrap()));
    }
}

#[test]
fn identical_dates_give_zero_refined_difference() {
    let m = net(true, true);
    m.set_alpha(0.5).unwrap();
    m.set_training(false);
    let x = rand_img(&[1, 3, 128, 128], 20);
    let out = m.forward_full(&x, &x).unwrap();
    for (j, level) in out.levels.iter().enumerate() {
        let hat = level.f_diff_hat.as_ref().unwrap();
        assert!(hat.value().data().iter().all(|&v| v == 0.0), "level {}", j + 1);
        // a zero input to the attention conv leaves only its bias
        let attn = level.diff_attn.as_ref().unwrap();
        let first = attn.value().data()[0];
        assert!(attn.value().data().iter().all(|&v| v == first));
    }
}

#[test]
fn forward_is_deterministic() {
    let m = net(true, true);
    m.set_alpha(0.3).unwrap();
    m.set_training(false);
    let (pre, post) = (rand_img(&[1, 3, 64, 64], 21), rand_img(&[1, 3, 64, 64], 22));
    assert_eq!(bits(&m.forward(&pre, &post).unwrap()), bits(&m.forward(&pre, &post).unwrap()));
    let other = net(true, true);
    other.set_alpha(0.3).unwrap();
    other.set_training(false);
    assert_eq!(bits(&m.forward(&pre, &post).unwrap()), bits(&other.forward(&pre, &post).unwrap()));
    let _ = nn::named_parameters(&m as &dyn Module<f32>);
}
