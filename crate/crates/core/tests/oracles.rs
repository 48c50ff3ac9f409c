//! Library kernels against naive-loop and compositional reference
//! implementations on random small instances.

mod common;

use common::*;
use dflow_core::conv::{conv2d_same, conv2d_same_backward, conv3d_same, conv3d_same_backward};
use dflow_core::network::{dflow_forward, single_flow_forward, FlowUnit};
use dflow_core::recurrent::{block_forward, convmgu_step, stack2_forward, ConvMguBlock, ConvMguCell, ConvMguStack};
use dflow_core::{build_dflow, DFlowConfig, FlowColor, Preset, Tensor};
use rand::Rng;

const TOL: f64 = 1e-12;
const INSTANCES: u64 = 25;

fn odd_kernel(rng: &mut impl Rng) -> usize {
    [1, 3, 5][rng.random_range(0..3)]
}

#[test]
fn conv2d_matches_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (cin, cout, h, w, m) = (
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..8),
            r.random_range(1..8),
            odd_kernel(&mut r),
        );
        let x = random_tensor(&[cin, h, w], &mut r);
        let k = random_tensor(&[cout, cin, m, m], &mut r);
        let b = random_tensor(&[cout], &mut r);
        let bias = r.random_bool(0.5).then_some(&b);
        let got = conv2d_same(&x, &k, bias).unwrap();
        assert!(max_abs_diff(&got, &naive_conv2d(&x, &k, bias)) < TOL, "seed {seed}");
    }
}

#[test]
fn conv3d_matches_naive_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let (cin, cout, t, h, w, f) = (
            r.random_range(1..3),
            r.random_range(1..3),
            r.random_range(1..6),
            r.random_range(1..6),
            r.random_range(1..6),
            [1, 3][r.random_range(0..2)],
        );
        let x = random_tensor(&[cin, t, h, w], &mut r);
        let k = random_tensor(&[cout, cin, f, f, f], &mut r);
        let b = random_tensor(&[cout], &mut r);
        let got = conv3d_same(&x, &k, Some(&b)).unwrap();
        assert!(max_abs_diff(&got, &naive_conv3d(&x, &k, Some(&b))) < TOL, "seed {seed}");
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn conv2d_backward_matches_adjoint_and_naive_kernel_gradient() {
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let (cin, cout, h, w, m) = (2, 3, r.random_range(2..7), r.random_range(2..7), odd_kernel(&mut r));
        let x = random_tensor(&[cin, h, w], &mut r);
        let k = random_tensor(&[cout, cin, m, m], &mut r);
        let g = random_tensor(&[cout, h, w], &mut r);
        let grads = conv2d_same_backward(&x, &k, &g).unwrap();
        // <g, conv(x, k)> is bilinear, so it equals <x, dx> and <k, dk>.
        let lhs = dot(&g, &naive_conv2d(&x, &k, None));
        assert!((lhs - dot(&x, &grads.input)).abs() < 1e-11);
        assert!((lhs - dot(&k, &grads.kernel)).abs() < 1e-11);
        // Naive kernel gradient.
        let rr = (m / 2) as isize;
        for o in 0..cout {
            for c in 0..cin {
                for i in 0..m {
                    for j in 0..m {
                        let mut acc = 0.0;
                        for y in 0..h as isize {
                            for xx in 0..w as isize {
                                let (sy, sx) = (y + i as isize - rr, xx + j as isize - rr);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    acc += g.data()[(o * h + y as usize) * w + xx as usize]
                                        * x.data()[(c * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        let got = grads.kernel.data()[((o * cin + c) * m + i) * m + j];
                        assert!((got - acc).abs() < TOL);
                    }
                }
            }
        }
        for o in 0..cout {
            let s: f64 = g.data()[o * h * w..(o + 1) * h * w].iter().sum();
            assert!((grads.bias.data()[o] - s).abs() < TOL);
        }
    }
}

#[test]
fn conv3d_backward_satisfies_adjoint_identity() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let x = random_tensor(&[2, 3, 4, 5], &mut r);
        let k = random_tensor(&[2, 2, 3, 3, 3], &mut r);
        let g = random_tensor(&[2, 3, 4, 5], &mut r);
        let grads = conv3d_same_backward(&x, &k, &g).unwrap();
        let lhs = dot(&g, &naive_conv3d(&x, &k, None));
        assert!((lhs - dot(&x, &grads.input)).abs() < 1e-11);
        assert!((lhs - dot(&k, &grads.kernel)).abs() < 1e-11);
    }
}

fn random_cell(cin: usize, n: usize, m: usize, r: &mut impl Rng) -> ConvMguCell<f64> {
    ConvMguCell::new(
        random_tensor(&[n, cin, m, m], r),
        random_tensor(&[n, n, m, m], r),
        random_tensor(&[n], r),
        random_tensor(&[n, cin, m, m], r),
        random_tensor(&[n, n, m, m], r),
        random_tensor(&[n], r),
    )
    .unwrap()
}

#[test]
fn convmgu_step_matches_equations() {
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let (cin, n, h, w, m) = (
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..7),
            r.random_range(1..7),
            odd_kernel(&mut r),
        );
        let cell = random_cell(cin, n, m, &mut r);
        let x = random_tensor(&[cin, h, w], &mut r);
        let hp = random_tensor(&[n, h, w], &mut r);
        let got = convmgu_step(&cell, &x, &hp).unwrap();
        let (want_h, want_f) = naive_step(&cell, &x, &hp);
        assert!(max_abs_diff(&got.hidden, &want_h) < TOL, "seed {seed}");
        assert!(max_abs_diff(&got.gate, &want_f) < TOL, "seed {seed}");
    }
}

#[test]
fn stack2_matches_unrolled_steps() {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let (cin, n, h, w, t) = (
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(2..6),
            r.random_range(2..6),
            r.random_range(1..5),
        );
        let l1 = random_cell(cin, n, 3, &mut r);
        let l2 = random_cell(n, n, 3, &mut r);
        let frames: Vec<_> = (0..t).map(|_| random_tensor(&[cin, h, w], &mut r)).collect();
        let got = stack2_forward(&l1, &l2, &frames).unwrap();
        let want = naive_stack_states(&l1, &l2, &frames).pop().unwrap();
        assert!(max_abs_diff(&got, &want) < TOL, "seed {seed}");
    }
}

#[test]
fn block_matches_stack_plus_shortcut() {
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let (cin, n, h, w, t) = (
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(2..6),
            r.random_range(2..6),
            r.random_range(1..5),
        );
        let l1 = random_cell(cin, n, 3, &mut r);
        let l2 = random_cell(n, n, 3, &mut r);
        let sk = random_tensor(&[n, cin, 3, 3, 3], &mut r);
        let sb = random_tensor(&[n], &mut r);
        let block = ConvMguBlock::new(
            ConvMguStack::new(l1.clone(), l2.clone()).unwrap(),
            sk.clone(),
            sb.clone(),
        )
        .unwrap();
        let frames: Vec<_> = (0..t).map(|_| random_tensor(&[cin, h, w], &mut r)).collect();
        let got = block_forward(&block, &frames).unwrap();
        assert_eq!(got.shape(), [t, n, h, w]);
        for (i, want) in naive_block(&l1, &l2, &sk, &sb, &frames).iter().enumerate() {
            assert!(
                max_abs_diff(&got.index_outer(i).unwrap(), want) < TOL,
                "seed {seed} step {i}"
            );
        }
    }
}

fn flow_last(unit: &FlowUnit<f64>, frames: &[Tensor<f64>]) -> Tensor<f64> {
    match unit {
        FlowUnit::Stack(s) => naive_stack_states(&s.layer1, &s.layer2, frames).pop().unwrap(),
        FlowUnit::Block(b) => naive_block(
            &b.stack.layer1,
            &b.stack.layer2,
            &b.shortcut_kernel,
            &b.shortcut_bias,
            frames,
        )
        .pop()
        .unwrap(),
    }
}

#[test]
fn dflow_forward_matches_composition() {
    for seed in 0..INSTANCES {
        let mut r = rng(700 + seed);
        let cfg = DFlowConfig {
            channels: r.random_range(1..4),
            k: r.random_range(1..4),
            use_block: r.random_bool(0.5),
            ..DFlowConfig::preset(Preset::Small)
        };
        let model = build_dflow::<f64>(cfg, seed).unwrap();
        let (h, w) = (r.random_range(2..6), r.random_range(2..6));
        let fa: Vec<_> = (0..=cfg.k).map(|_| random_tensor(&[3, h, w], &mut r)).collect();
        let fb: Vec<_> = (0..=cfg.k).map(|_| random_tensor(&[3, h, w], &mut r)).collect();
        let got = dflow_forward(&model, &fa, &fb).unwrap();
        let a = flow_last(&model.flow_a, &fa);
        let b = flow_last(model.flow_b.as_ref().unwrap(), &fb);
        let sum = Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let z = naive_conv2d(&sum, &model.decoder_kernel, Some(&model.decoder_bias));
        let want = z.map(|v| 1.0 / (1.0 + (-v).exp()));
        assert!(max_abs_diff(&got, &want) < TOL, "seed {seed}");
    }
}

#[test]
fn single_flow_forward_matches_composition() {
    for seed in 0..INSTANCES {
        let mut r = rng(800 + seed);
        let cfg = DFlowConfig {
            channels: 2,
            k: 2,
            ..DFlowConfig::preset(Preset::Small).with_colors(FlowColor::YOnly, None)
        };
        let model = build_dflow::<f64>(cfg, seed).unwrap();
        let frames: Vec<_> = (0..3).map(|_| random_tensor(&[1, 4, 5], &mut r)).collect();
        let got = single_flow_forward(&model, &frames).unwrap();
        let z = naive_conv2d(
            &flow_last(&model.flow_a, &frames),
            &model.decoder_kernel,
            Some(&model.decoder_bias),
        );
        assert!(max_abs_diff(&got, &z.map(|v| 1.0 / (1.0 + (-v).exp()))) < TOL);
    }
}
