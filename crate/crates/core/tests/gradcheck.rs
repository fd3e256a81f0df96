//! Central finite-difference gradient checks in double precision.
//!
//! Every layer kind, every composite block, and every mini backbone (width 1)
//! is checked against a numeric oracle via [`scopenet_core::gradcheck`]:
//! relative error `|analytic - numeric| / max(|analytic|, |numeric|, 1)`
//! within 1e-6 on sampled parameter and input coordinates over 5 random
//! inputs each.

use rand_chacha::ChaCha8Rng;
use scopenet_core::arch::{
    build_inception_block, build_model, build_resnet_block, build_xception_block, Arch,
    BackboneKind,
};
use scopenet_core::gradcheck::check_model;
use scopenet_core::graph::{GraphBuilder, ModelGraph};
use scopenet_core::layers::{LayerSpec, Padding};

const TRIALS: usize = 5;

fn check(label: &str, model: &ModelGraph<f64>, input_shape: &[usize], seed: u64) {
    check_model(label, model, input_shape, TRIALS, seed).unwrap_or_else(|e| panic!("{e}"));
}

/// Single-layer graph over a `[B, C, 8, 8]` input.
fn single_layer(spec: LayerSpec, in_ch: usize, seed: u64) -> ModelGraph<f64> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(&mut rng);
    let i = b
        .add(
            "input",
            LayerSpec::Input {
                shape: vec![in_ch, 8, 8],
            },
            &[],
        )
        .unwrap();
    b.add("layer", spec, &[i]).unwrap();
    b.finish_with_last().unwrap()
}

#[test]
fn conv2d_same_stride1() {
    let g = single_layer(
        LayerSpec::Conv2d {
            in_ch: 3,
            out_ch: 4,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        },
        3,
        1,
    );
    check("conv_same_s1", &g, &[2, 3, 8, 8], 10);
}

#[test]
fn conv2d_valid_stride2() {
    let g = single_layer(
        LayerSpec::Conv2d {
            in_ch: 2,
            out_ch: 3,
            kernel: 3,
            stride: 2,
            padding: Padding::Valid,
        },
        2,
        2,
    );
    check("conv_valid_s2", &g, &[2, 2, 8, 8], 11);
}

#[test]
fn depthwise_conv() {
    let g = single_layer(
        LayerSpec::DepthwiseConv2d {
            channels: 3,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        },
        3,
        3,
    );
    check("depthwise", &g, &[2, 3, 8, 8], 12);
}

#[test]
fn maxpool() {
    let g = single_layer(LayerSpec::max_pool_2x2(), 2, 4);
    check("maxpool", &g, &[2, 2, 8, 8], 13);
}

#[test]
fn maxpool_stride1_same() {
    let g = single_layer(
        LayerSpec::MaxPool {
            size: 3,
            stride: 1,
            padding: Padding::Same,
        },
        2,
        24,
    );
    check("maxpool_s1_same", &g, &[2, 2, 8, 8], 25);
}

#[test]
fn batchnorm_train_mode() {
    let g = single_layer(LayerSpec::batch_norm(3), 3, 5);
    check("batchnorm", &g, &[2, 3, 8, 8], 14);
}

#[test]
fn dense_relu_softmax_stack() {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut b = GraphBuilder::new(&mut rng);
    let i = b
        .add("input", LayerSpec::Input { shape: vec![2, 4, 4] }, &[])
        .unwrap();
    let f = b.add("flatten", LayerSpec::Flatten, &[i]).unwrap();
    let d = b
        .add(
            "dense1",
            LayerSpec::Dense {
                in_dim: 32,
                out_dim: 10,
            },
            &[f],
        )
        .unwrap();
    let r = b.add("relu", LayerSpec::Relu, &[d]).unwrap();
    let d2 = b
        .add(
            "dense2",
            LayerSpec::Dense {
                in_dim: 10,
                out_dim: 5,
            },
            &[r],
        )
        .unwrap();
    b.add("softmax", LayerSpec::Softmax, &[d2]).unwrap();
    let g = b.finish_with_last().unwrap();
    check("dense_relu_softmax", &g, &[3, 2, 4, 4], 15);
}

#[test]
fn add_and_concat() {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut b = GraphBuilder::new(&mut rng);
    let i = b
        .add("input", LayerSpec::Input { shape: vec![2, 6, 6] }, &[])
        .unwrap();
    let c1 = b
        .add(
            "conv_a",
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
            },
            &[i],
        )
        .unwrap();
    let c2 = b
        .add(
            "conv_b",
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 1,
                stride: 1,
                padding: Padding::Same,
            },
            &[i],
        )
        .unwrap();
    let a = b.add("add", LayerSpec::Add, &[c1, c2]).unwrap();
    b.add("concat", LayerSpec::Concat, &[a, c1]).unwrap();
    let g = b.finish_with_last().unwrap();
    check("add_concat", &g, &[2, 2, 6, 6], 16);
}

fn block_graph(build: impl FnOnce(&mut GraphBuilder<f64, ChaCha8Rng>, usize)) -> ModelGraph<f64> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut b = GraphBuilder::new(&mut rng);
    let i = b
        .add("input", LayerSpec::Input { shape: vec![4, 8, 8] }, &[])
        .unwrap();
    build(&mut b, i);
    b.finish_with_last().unwrap()
}

#[test]
fn inception_block() {
    let g = block_graph(|b, i| {
        build_inception_block(b, "blk", i, 4, (2, 2, 2, 2)).unwrap();
    });
    check("inception_block", &g, &[2, 4, 8, 8], 17);
}

#[test]
fn xception_block() {
    let g = block_graph(|b, i| {
        build_xception_block(b, "blk", i, 4, 6).unwrap();
    });
    check("xception_block", &g, &[2, 4, 8, 8], 18);
}

#[test]
fn resnet_block() {
    let g = block_graph(|b, i| {
        build_resnet_block(b, "blk", i, 4, 6).unwrap();
    });
    check("resnet_block", &g, &[2, 4, 8, 8], 19);
}

fn check_mini(arch: Arch, seed: u64) {
    use rand::SeedableRng;
    let kind = BackboneKind::new(arch, 1, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model: ModelGraph<f64> = build_model(&kind, 3, &mut rng).unwrap();
    check(&format!("{arch:?}"), &model, &[2, 3, 16, 16], seed + 100);
}

#[test]
fn vgg_mini_full_model() {
    check_mini(Arch::VggMini, 20);
}

#[test]
fn inception_mini_full_model() {
    check_mini(Arch::InceptionMini, 21);
}

#[test]
fn xception_mini_full_model() {
    check_mini(Arch::XceptionMini, 22);
}

#[test]
fn resnet_mini_full_model() {
    check_mini(Arch::ResNetMini, 23);
}
