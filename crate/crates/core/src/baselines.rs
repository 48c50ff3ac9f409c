//! Handcrafted target-area segmenters: mean and Gaussian adaptive
//! thresholding, and the distance-transform foreground step of watershed
//! extraction.
//!
//! Window statistics replicate edge pixels at the borders.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdParams {
    /// Odd window side, at least 3.
    pub window: usize,
    /// Offset subtracted from the local mean.
    pub offset_c: f64,
    /// Gaussian window sigma; `None` means `window / 6`.
    pub gaussian_sigma: Option<f64>,
    /// Fraction of the maximum distance kept by the distance-transform method.
    pub dt_fraction: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            window: 11,
            offset_c: 2.0 / 255.0,
            gaussian_sigma: None,
            dt_fraction: 0.5,
        }
    }
}

impl ThresholdParams {
    pub fn sigma(&self) -> f64 {
        self.gaussian_sigma.unwrap_or(self.window as f64 / 6.0)
    }

    /// Checks every field, whichever method will use them.
    pub fn validate(&self) -> Result<()> {
        self.validate_window()?;
        if !self.offset_c.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "offset C {} must be finite",
                self.offset_c
            )));
        }
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gaussian sigma {sigma} must be positive")));
        }
        if !(self.dt_fraction > 0.0 && self.dt_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dt_fraction {} outside (0, 1)",
                self.dt_fraction
            )));
        }
        Ok(())
    }

    fn validate_window(&self) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(Error::EvenKernel(self.window));
        }
        if self.window < 3 {
            return Err(Error::InvalidConfig(format!("window {} must be >= 3", self.window)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Mean,
    Gaussian,
    #[serde(rename = "dtransform")]
    DistanceTransform,
}

impl BaselineMethod {
    pub fn run<T: Scalar>(self, gray: &Tensor<T>, p: &ThresholdParams) -> Result<BinaryMask> {
        match self {
            Self::Mean => adaptive_threshold_mean(gray, p),
            Self::Gaussian => adaptive_threshold_gaussian(gray, p),
            Self::DistanceTransform => distance_transform_threshold(gray, p),
        }
    }
}

fn gray_dims<T: Scalar>(gray: &Tensor<T>) -> Result<(usize, usize)> {
    let s = gray.shape();
    if s.len() != 3 || s[0] != 1 {
        return shape_err("baseline", format!("expected 1×H×W grayscale, got {s:?}"));
    }
    Ok((s[1], s[2]))
}

/// Separable weighted window average with replicated borders. `weights`
/// has odd length and is applied along rows, then columns.
fn separable_filter(src: &[f64], h: usize, w: usize, weights: &[f64]) -> Vec<f64> {
    let r = (weights.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &wt) in weights.iter().enumerate() {
                acc += wt * src[y * w + clampi(x as isize + i as isize - r, w)];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &wt) in weights.iter().enumerate() {
                acc += wt * rows[clampi(y as isize + i as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Local window mean of every pixel.
pub fn local_mean<T: Scalar>(gray: &Tensor<T>, window: usize) -> Result<Vec<f64>> {
    let (h, w) = gray_dims(gray)?;
    let src: Vec<f64> = gray.data().iter().map(|v| v.as_f64()).collect();
    let weights = vec![1.0 / window as f64; window];
    Ok(separable_filter(&src, h, w, &weights))
}

/// Local Gaussian-weighted mean with normalised weights.
pub fn local_gaussian_mean<T: Scalar>(gray: &Tensor<T>, window: usize, sigma: f64) -> Result<Vec<f64>> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("gaussian sigma {sigma} must be positive")));
    }
    let (h, w) = gray_dims(gray)?;
    let src: Vec<f64> = gray.data().iter().map(|v| v.as_f64()).collect();
    let r = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
    Ok(separable_filter(&src, h, w, &weights))
}

fn threshold_against<T: Scalar>(gray: &Tensor<T>, reference: &[f64], c: f64) -> Result<BinaryMask> {
    let (h, w) = gray_dims(gray)?;
    let data = gray
        .data()
        .iter()
        .zip(reference)
        .map(|(&v, &m)| v.as_f64() > m - c)
        .collect();
    BinaryMask::new(h, w, data)
}

/// Target where a pixel exceeds its window mean minus `C`.
pub fn adaptive_threshold_mean<T: Scalar>(gray: &Tensor<T>, p: &ThresholdParams) -> Result<BinaryMask> {
    p.validate_window()?;
    let mean = local_mean(gray, p.window)?;
    threshold_against(gray, &mean, p.offset_c)
}

/// Target where a pixel exceeds its Gaussian-weighted window mean minus `C`.
pub fn adaptive_threshold_gaussian<T: Scalar>(gray: &Tensor<T>, p: &ThresholdParams) -> Result<BinaryMask> {
    p.validate_window()?;
    let mean = local_gaussian_mean(gray, p.window, p.sigma())?;
    threshold_against(gray, &mean, p.offset_c)
}

/// Otsu's threshold over a 256-bin histogram; returns the bin index `t`
/// such that pixels in bins `> t` are foreground, or `None` for a
/// constant image.
pub fn otsu_threshold<T: Scalar>(gray: &Tensor<T>) -> Option<usize> {
    let mut hist = [0u64; 256];
    for v in gray.data() {
        hist[quantize(v.as_f64())] += 1;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return None;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &c) in hist.iter().enumerate().take(255) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(best.1)
}

fn quantize(v: f64) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest background
/// (false) pixel. Returns `None` when the mask has no background.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Option<Vec<f64>> {
    let (h, w) = (mask.height(), mask.width());
    if mask.data().iter().all(|&b| b) {
        return None;
    }
    // Larger than any squared in-image distance but small enough to keep
    // the envelope intersections finite.
    let big = ((h * h + w * w) as f64 + 1.0) * 4.0;
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    let mut sq = vec![0.0; h * w];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = if mask.get(y, x) { big } else { 0.0 };
        }
        edt_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        let row = sq[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut row_out, &mut v, &mut z);
        sq[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    Some(sq.into_iter().map(f64::sqrt).collect())
}

/// Otsu binarisation, then keep foreground pixels farther than
/// `dt_fraction × max` from the background.
pub fn distance_transform_threshold<T: Scalar>(gray: &Tensor<T>, p: &ThresholdParams) -> Result<BinaryMask> {
    if !(p.dt_fraction > 0.0 && p.dt_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "dt_fraction {} outside (0, 1)",
            p.dt_fraction
        )));
    }
    let (h, w) = gray_dims(gray)?;
    let Some(t) = otsu_threshold(gray) else {
        return Ok(BinaryMask::empty(h, w));
    };
    let fg = BinaryMask::new(h, w, gray.data().iter().map(|v| quantize(v.as_f64()) > t).collect())?;
    let Some(dist) = euclidean_distance_transform(&fg) else {
        // No background at all: every pixel is maximally confident.
        return Ok(fg);
    };
    let max = dist.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(BinaryMask::empty(h, w));
    }
    let cut = p.dt_fraction * max;
    BinaryMask::new(h, w, dist.iter().map(|&d| d > cut).collect())
}
