//! Independent reference implementations shared by the integration tests.
//! Everything here is written with plain index loops over `Vec<f64>` so it
//! shares no code with the library kernels.

#![allow(dead_code)]

use dflow_core::color::{ColorImage, ColorSpace};
use dflow_core::recurrent::ConvMguCell;
use dflow_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> ColorImage<f64> {
    let data = (0..3 * h * w).map(|_| rng.random_range(0.0..=1.0)).collect();
    ColorImage::new(Tensor::new(vec![3, h, w], data).unwrap(), ColorSpace::Rgb).unwrap()
}

/// Same-padded 2D cross-correlation, `cin×H×W` by `cout×cin×m×m`.
pub fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, m) = (k.shape()[0], k.shape()[2]);
    let r = (m / 2) as isize;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = b.map_or(0.0, |b| b.data()[o]);
                for c in 0..cin {
                    for i in 0..m as isize {
                        for j in 0..m as isize {
                            let (sy, sx) = (y + i - r, xx + j - r);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let kv = k.data()[((o * cin + c) * m + i as usize) * m + j as usize];
                            acc += kv * x.data()[(c * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y as usize) * w + xx as usize] = acc;
            }
        }
    }
    Tensor::new(vec![cout, h, w], out).unwrap()
}

/// Same-padded 3D cross-correlation, `cin×T×H×W` by `cout×cin×f×f×f`.
pub fn naive_conv3d(x: &Tensor<f64>, k: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let s = x.shape();
    let (cin, t, h, w) = (s[0], s[1], s[2], s[3]);
    let (cout, f) = (k.shape()[0], k.shape()[2]);
    let r = (f / 2) as isize;
    let mut out = vec![0.0; cout * t * h * w];
    let inside = |v: isize, n: usize| v >= 0 && v < n as isize;
    for o in 0..cout {
        for z in 0..t as isize {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        for a in 0..f as isize {
                            for i in 0..f as isize {
                                for j in 0..f as isize {
                                    let (sz, sy, sx) = (z + a - r, y + i - r, xx + j - r);
                                    if !(inside(sz, t) && inside(sy, h) && inside(sx, w)) {
                                        continue;
                                    }
                                    let kv =
                                        k.data()[(((o * cin + c) * f + a as usize) * f + i as usize) * f + j as usize];
                                    acc += kv * x.data()[((c * t + sz as usize) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[((o * t + z as usize) * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
    }
    Tensor::new(vec![cout, t, h, w], out).unwrap()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn zip3(a: &[f64], b: &[f64], c: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).zip(c).map(|((&x, &y), &z)| f(x, y, z)).collect()
}

/// One cell step written directly from the update equations.
pub fn naive_step(cell: &ConvMguCell<f64>, x: &Tensor<f64>, h: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let shape = h.shape().to_vec();
    let wx_f = naive_conv2d(x, &cell.w_f, Some(&cell.b_f));
    let uh_f = naive_conv2d(h, &cell.u_f, None);
    let f: Vec<f64> = wx_f.data().iter().zip(uh_f.data()).map(|(a, b)| sig(a + b)).collect();
    let fh: Vec<f64> = f.iter().zip(h.data()).map(|(a, b)| a * b).collect();
    let fh = Tensor::new(shape.clone(), fh).unwrap();
    let wx_h = naive_conv2d(x, &cell.w_h, Some(&cell.b_h));
    let u_fh = naive_conv2d(&fh, &cell.u_h, None);
    let cand: Vec<f64> = wx_h
        .data()
        .iter()
        .zip(u_fh.data())
        .map(|(a, b)| (a + b).tanh())
        .collect();
    let new_h = zip3(&f, h.data(), &cand, |f, h, c| (1.0 - f) * h + f * c);
    (
        Tensor::new(shape.clone(), new_h).unwrap(),
        Tensor::new(shape, f).unwrap(),
    )
}

/// Layer-2 hidden states after every step of a two-layer stack.
pub fn naive_stack_states(l1: &ConvMguCell<f64>, l2: &ConvMguCell<f64>, frames: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let (hh, ww) = (frames[0].shape()[1], frames[0].shape()[2]);
    let mut h1 = Tensor::zeros(vec![l1.hidden_channels(), hh, ww]);
    let mut h2 = Tensor::zeros(vec![l2.hidden_channels(), hh, ww]);
    let mut out = Vec::new();
    for x in frames {
        h1 = naive_step(l1, x, &h1).0;
        h2 = naive_step(l2, &h1, &h2).0;
        out.push(h2.clone());
    }
    out
}

/// Frames stacked into a `γ×T×H×W` volume.
pub fn naive_volume(frames: &[Tensor<f64>]) -> Tensor<f64> {
    let (c, h, w) = (frames[0].shape()[0], frames[0].shape()[1], frames[0].shape()[2]);
    let t = frames.len();
    let mut v = vec![0.0; c * t * h * w];
    for (ti, f) in frames.iter().enumerate() {
        for ci in 0..c {
            for p in 0..h * w {
                v[(ci * t + ti) * h * w + p] = f.data()[ci * h * w + p];
            }
        }
    }
    Tensor::new(vec![c, t, h, w], v).unwrap()
}

/// Block outputs per step: stack state plus the matching time slice of the
/// 3D shortcut over all frames.
pub fn naive_block(
    l1: &ConvMguCell<f64>,
    l2: &ConvMguCell<f64>,
    sk: &Tensor<f64>,
    sb: &Tensor<f64>,
    frames: &[Tensor<f64>],
) -> Vec<Tensor<f64>> {
    let states = naive_stack_states(l1, l2, frames);
    let res = naive_conv3d(&naive_volume(frames), sk, Some(sb));
    let (n, t, h, w) = (res.shape()[0], res.shape()[1], res.shape()[2], res.shape()[3]);
    states
        .into_iter()
        .enumerate()
        .map(|(ti, s)| {
            let mut d = s.data().to_vec();
            for c in 0..n {
                for p in 0..h * w {
                    d[c * h * w + p] += res.data()[(c * t + ti) * h * w + p];
                }
            }
            Tensor::new(vec![n, h, w], d).unwrap()
        })
        .collect()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// An in-memory dataset of rendered synthetic sequences, split in order
/// train, val, test.
pub fn synth_dataset(
    params: &dflow_core::data::synth::SynthSceneParams,
    counts: [usize; 3],
    len: usize,
) -> dflow_core::Dataset<f64> {
    use dflow_core::data::{synth::render_sequence, LoadedSource};
    use dflow_core::Split;
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut sources = Vec::new();
    let mut i = 0;
    for (split, n) in splits.into_iter().zip(counts) {
        for _ in 0..n {
            let seq = render_sequence(params, i, len).unwrap();
            sources.push(LoadedSource {
                id: format!("seq_{i:03}"),
                split,
                frames: seq.frames,
                labels: seq.labels,
            });
            i += 1;
        }
    }
    dflow_core::Dataset { sources }
}

pub fn small_scene(size: usize) -> dflow_core::data::synth::SynthSceneParams {
    dflow_core::data::synth::SynthSceneParams {
        height: size,
        width: size,
        ..Default::default()
    }
}
