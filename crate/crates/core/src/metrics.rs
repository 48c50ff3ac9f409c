//! Training objectives and evaluation metrics over predicted masks.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::ColorImage;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SILHOUETTE_SAMPLES: usize = 1000;

/// A binary `H×W` map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

/// Ground-truth target-area labels.
pub type LabelMask = BinaryMask;

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return shape_err(
                "BinaryMask",
                format!("{height}×{width} needs {} values, got {}", height * width, data.len()),
            );
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    /// Reads a `1×H×W` tensor of zeros and ones.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 1 {
            return shape_err("BinaryMask", format!("expected 1×H×W, got {s:?}"));
        }
        let mut data = Vec::with_capacity(t.len());
        for &v in t.data() {
            if v == T::one() {
                data.push(true);
            } else if v == T::zero() {
                data.push(false);
            } else {
                return Err(Error::Image(format!("label value {v} is not binary")));
            }
        }
        Ok(Self {
            height: s[1],
            width: s[2],
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![1, self.height, self.width],
            self.data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        )
    }

    fn expect_same_dims(&self, h: usize, w: usize, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (h, w) {
            return shape_err(op, format!("{}×{} vs {h}×{w}", self.height, self.width));
        }
        Ok(())
    }
}

/// Per-pixel target probabilities plus their thresholded map.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMask<T> {
    pub probs: Tensor<T>,
    pub binary: BinaryMask,
    pub threshold: T,
}

impl<T: Scalar> SegMask<T> {
    /// Thresholds `probs` (`1×H×W`): a pixel is target iff its probability exceeds `threshold`.
    pub fn from_probs(probs: Tensor<T>, threshold: T) -> Result<Self> {
        let s = probs.shape();
        if s.len() != 3 || s[0] != 1 {
            return shape_err("SegMask", format!("expected 1×H×W, got {s:?}"));
        }
        let binary = BinaryMask {
            height: s[1],
            width: s[2],
            data: probs.data().iter().map(|&p| p > threshold).collect(),
        };
        Ok(Self {
            probs,
            binary,
            threshold,
        })
    }
}

fn check_probs<T: Scalar>(p: &Tensor<T>, y: &LabelMask, op: &'static str) -> Result<()> {
    let s = p.shape();
    if s.len() != 3 || s[0] != 1 {
        return shape_err(op, format!("probabilities must be 1×H×W, got {s:?}"));
    }
    y.expect_same_dims(s[1], s[2], op)
}

/// Mean binary cross entropy with probabilities clamped to `[ε, 1-ε]`.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, y: &LabelMask) -> Result<T> {
    check_probs(p, y, "bce_loss")?;
    let eps = T::lit(BCE_EPSILON);
    let n = T::from_usize_lossy(p.len());
    let total: T = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            if t {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`bce_loss`] with respect to each probability, `(p-y)/(p(1-p))/N`,
/// zero where the clamp is active.
pub fn bce_loss_grad<T: Scalar>(p: &Tensor<T>, y: &LabelMask) -> Result<Tensor<T>> {
    check_probs(p, y, "bce_loss_grad")?;
    let eps = T::lit(BCE_EPSILON);
    let n = T::from_usize_lossy(p.len());
    let data = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| {
            if p < eps || p > T::one() - eps {
                return T::zero();
            }
            let yv = if t { T::one() } else { T::zero() };
            (p - yv) / (p * (T::one() - p)) / n
        })
        .collect();
    Ok(Tensor::from_parts(p.shape().to_vec(), data))
}

/// Focal-loss weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "focal alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

/// Mean of `-α_t (1-p_t)^γ ln p_t` with the same probability clamp as [`bce_loss`].
pub fn focal_loss<T: Scalar>(p: &Tensor<T>, y: &LabelMask, params: FocalParams) -> Result<T> {
    check_probs(p, y, "focal_loss")?;
    params.validate()?;
    let eps = T::lit(BCE_EPSILON);
    let (alpha, gamma) = (T::lit(params.alpha), T::lit(params.gamma));
    let n = T::from_usize_lossy(p.len());
    let total: T = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            let (pt, at) = if t {
                (p, alpha)
            } else {
                (T::one() - p, T::one() - alpha)
            };
            -at * (T::one() - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / n)
}

/// `2|A∩B| / (|A|+|B|)`, defined as 1 when both masks are empty.
pub fn dice_coefficient(pred: &BinaryMask, label: &LabelMask) -> Result<f64> {
    label.expect_same_dims(pred.height, pred.width, "dice_coefficient")?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &l) in pred.data.iter().zip(&label.data) {
        inter += usize::from(p && l);
        a += usize::from(p);
        b += usize::from(l);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Per-point silhouette values `s(i) = (b - a) / max(a, b)` for points with
/// feature vectors of length `dim`, clustered by `labels`.
///
/// Points in singleton clusters get `s = 0`; every point gets 0 when either
/// cluster is empty.
pub fn silhouette_samples(features: &[f64], dim: usize, labels: &[bool]) -> Result<Vec<f64>> {
    if dim == 0 || features.len() != dim * labels.len() {
        return shape_err(
            "silhouette",
            format!(
                "{} features for {} points of dimension {dim}",
                features.len(),
                labels.len()
            ),
        );
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Ok(vec![0.0; labels.len()]);
    }
    let point = |i: usize| &features[i * dim..(i + 1) * dim];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let own = if labels[i] { n1 } else { n0 };
        if own == 1 {
            out.push(0.0);
            continue;
        }
        let (mut same, mut other) = (0.0, 0.0);
        let pi = point(i);
        for j in 0..labels.len() {
            if j == i {
                continue;
            }
            let d = dist(pi, point(j));
            if labels[j] == labels[i] {
                same += d;
            } else {
                other += d;
            }
        }
        let a = same / (own - 1) as f64;
        let b = other / (labels.len() - own) as f64;
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Ok(out)
}

/// Mean of [`silhouette_samples`].
pub fn silhouette_from_features(features: &[f64], dim: usize, labels: &[bool]) -> Result<f64> {
    let s = silhouette_samples(features, dim, labels)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Silhouette of the predicted two-way partition of an image, with each
/// pixel's colour channels as its feature vector. At most `sample_n`
/// pixels per class take part, drawn deterministically from `seed`.
pub fn silhouette_score<T: Scalar>(pred: &BinaryMask, img: &ColorImage<T>, sample_n: usize, seed: u64) -> Result<f64> {
    pred.expect_same_dims(img.height(), img.width(), "silhouette_score")?;
    if pred.data.len() < 2 {
        return Err(Error::InvalidConfig("silhouette needs at least 2 pixels".into()));
    }
    if sample_n < 2 {
        return Err(Error::InvalidConfig(format!("sample_n {sample_n} must be >= 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for class in [true, false] {
        let members: Vec<usize> = (0..pred.data.len()).filter(|&i| pred.data[i] == class).collect();
        if members.len() <= sample_n {
            chosen.extend(members);
        } else {
            let mut pick: Vec<usize> = index::sample(&mut rng, members.len(), sample_n).into_iter().collect();
            pick.sort_unstable();
            chosen.extend(pick.into_iter().map(|k| members[k]));
        }
    }
    let mut features = Vec::with_capacity(chosen.len() * 3);
    let mut labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let p = img.pixel(i / img.width(), i % img.width());
        features.extend(p.iter().map(|v| v.as_f64()));
        labels.push(pred.data[i]);
    }
    silhouette_from_features(&features, 3, &labels)
}
