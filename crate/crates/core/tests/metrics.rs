//! Loss and metric values against hand and brute-force enumerations.

mod common;

use common::*;
use dflow_core::color::{ColorImage, ColorSpace};
use dflow_core::metrics::{bce_loss, bce_loss_grad, dice_coefficient, focal_loss, silhouette_score};
use dflow_core::{BinaryMask, FocalParams, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_mask(h: usize, w: usize, p: f64, r: &mut impl Rng) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| r.random_bool(p))
}

fn random_probs(h: usize, w: usize, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::new(vec![1, h, w], (0..h * w).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap()
}

#[test]
fn dice_enumerated_examples() {
    // Four cells each, two shared.
    let a = BinaryMask::from_fn(3, 3, |y, x| y < 2 && x < 2);
    let b = BinaryMask::from_fn(3, 3, |y, x| y < 2 && (1..3).contains(&x));
    assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.5);
    assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
    let c = BinaryMask::from_fn(3, 3, |y, _| y == 2);
    assert_eq!(dice_coefficient(&a, &c).unwrap(), 0.0);
}

#[test]
fn dice_matches_enumeration_and_is_symmetric() {
    let mut r = rng(1);
    for _ in 0..100 {
        let (h, w) = (r.random_range(1..8), r.random_range(1..8));
        let a = random_mask(h, w, 0.4, &mut r);
        let b = random_mask(h, w, 0.6, &mut r);
        let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
        let want = if a.count() + b.count() == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (a.count() + b.count()) as f64
        };
        assert_eq!(dice_coefficient(&a, &b).unwrap(), want);
        assert_eq!(dice_coefficient(&b, &a).unwrap(), want);
    }
}

fn brute_silhouette(img: &ColorImage<f64>, mask: &BinaryMask) -> f64 {
    let n = mask.data().len();
    let w = img.width();
    let px = |i: usize| img.pixel(i / w, i % w);
    let n1 = mask.count();
    if n1 == 0 || n1 == n {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = if mask.data()[i] { n1 } else { n - n1 };
        if own == 1 {
            continue;
        }
        let (mut a, mut b) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (p, q) = (px(i), px(j));
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            if mask.data()[j] == mask.data()[i] {
                a += d;
            } else {
                b += d;
            }
        }
        let (a, b) = (a / (own - 1) as f64, b / (n - own) as f64);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

#[test]
fn silhouette_matches_brute_force() {
    let mut r = rng(2);
    for _ in 0..30 {
        let (h, w) = (r.random_range(1..7), r.random_range(2..7));
        let img = random_image(h, w, &mut r);
        let mask = random_mask(h, w, 0.5, &mut r);
        let got = silhouette_score(&mask, &img, 1000, 7).unwrap();
        assert!((got - brute_silhouette(&img, &mask)).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&got));
    }
}

#[test]
fn silhouette_is_seed_deterministic_when_subsampling() {
    let mut r = rng(3);
    let img = random_image(12, 12, &mut r);
    let mask = random_mask(12, 12, 0.5, &mut r);
    let a = silhouette_score(&mask, &img, 10, 42).unwrap();
    assert_eq!(a, silhouette_score(&mask, &img, 10, 42).unwrap());
}

#[test]
fn metrics_invariant_under_spatial_permutation() {
    let mut r = rng(4);
    let (h, w) = (5, 6);
    let img = random_image(h, w, &mut r);
    let pred = random_mask(h, w, 0.5, &mut r);
    let label = random_mask(h, w, 0.5, &mut r);
    let probs = random_probs(h, w, &mut r);
    // Transpose-free permutation: reverse the pixel order.
    let n = h * w;
    let rev_mask = |m: &BinaryMask| BinaryMask::new(h, w, m.data().iter().rev().copied().collect()).unwrap();
    let mut t = img.tensor().clone();
    for c in 0..3 {
        t.data_mut()[c * n..(c + 1) * n].reverse();
    }
    let img_p = ColorImage::new(t, ColorSpace::Rgb).unwrap();
    let probs_p = Tensor::new(vec![1, h, w], probs.data().iter().rev().copied().collect()).unwrap();
    let (pp, lp) = (rev_mask(&pred), rev_mask(&label));
    assert_eq!(
        dice_coefficient(&pred, &label).unwrap(),
        dice_coefficient(&pp, &lp).unwrap()
    );
    assert!((bce_loss(&probs, &label).unwrap() - bce_loss(&probs_p, &lp).unwrap()).abs() < 1e-12);
    let s = silhouette_score(&pred, &img, 1000, 0).unwrap();
    assert!((s - silhouette_score(&pp, &img_p, 1000, 0).unwrap()).abs() < 1e-12);
}

#[test]
fn focal_reduces_to_half_bce() {
    let mut r = rng(5);
    let params = FocalParams { alpha: 0.5, gamma: 0.0 };
    for _ in 0..100 {
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let p = random_probs(h, w, &mut r);
        let y = random_mask(h, w, 0.5, &mut r);
        let f = focal_loss(&p, &y, params).unwrap();
        let b = bce_loss(&p, &y).unwrap();
        assert!((f - 0.5 * b).abs() < 1e-12, "{f} vs {b}");
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut r = rng(6);
    let y = random_mask(3, 4, 0.5, &mut r);
    let p: Tensor<f64> = Tensor::new(vec![1, 3, 4], (0..12).map(|_| r.random_range(0.05..0.95)).collect()).unwrap();
    let g = bce_loss_grad(&p, &y).unwrap();
    let h: f64 = 1e-6;
    for i in 0..12 {
        let (mut up, mut dn) = (p.clone(), p.clone());
        up.data_mut()[i] += h;
        dn.data_mut()[i] -= h;
        let num = (bce_loss(&up, &y).unwrap() - bce_loss(&dn, &y).unwrap()) / (2.0 * h);
        assert!((num - g.data()[i]).abs() < 1e-7 * g.data()[i].abs().max(1.0));
    }
}

proptest! {
    #[test]
    fn dice_lies_in_unit_interval(bits in prop::collection::vec(any::<(bool, bool)>(), 1..64)) {
        let n = bits.len();
        let a = BinaryMask::new(1, n, bits.iter().map(|b| b.0).collect()).unwrap();
        let b = BinaryMask::new(1, n, bits.iter().map(|b| b.1).collect()).unwrap();
        let d = dice_coefficient(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
