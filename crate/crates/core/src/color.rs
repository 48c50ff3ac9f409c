//! Pixel-exact colour-space conversions.
//!
//! YUV is the full-range (JPEG-style) variant with chroma offset by 0.5 so
//! every channel shares the `[0, 1]` range. HSV hue is normalised to
//! `[0, 1)` and is not treated as circular.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Yuv,
    Hsv,
}

impl ColorSpace {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rgb => "RGB",
            Self::Yuv => "YUV",
            Self::Hsv => "HSV",
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const RGB_TO_YUV: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
];

/// Exact inverse of [`RGB_TO_YUV`], computed once from its cofactors.
fn yuv_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = RGB_TO_YUV;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

/// A `3×H×W` image tagged with its colour space.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage<T> {
    tensor: Tensor<T>,
    space: ColorSpace,
}

impl<T: Scalar> ColorImage<T> {
    /// Wraps a `3×H×W` tensor whose values all lie in `[0, 1]`.
    pub fn new(tensor: Tensor<T>, space: ColorSpace) -> Result<Self> {
        if tensor.rank() != 3 || tensor.shape()[0] != 3 {
            return shape_err("ColorImage", format!("expected 3×H×W, got {:?}", tensor.shape()));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Image(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self { tensor, space })
    }

    /// Image filled with one colour.
    pub fn uniform(space: ColorSpace, height: usize, width: usize, color: [T; 3]) -> Result<Self> {
        let plane = height * width;
        let t = Tensor::from_fn(vec![3, height, width], |i| color[i / plane]);
        Self::new(t, space)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [T; 3] {
        let plane = self.height() * self.width();
        let i = y * self.width() + x;
        let d = self.tensor.data();
        [d[i], d[plane + i], d[2 * plane + i]]
    }

    fn expect(&self, expected: ColorSpace) -> Result<()> {
        if self.space == expected {
            Ok(())
        } else {
            Err(Error::WrongColorSpace {
                expected: expected.name(),
                actual: self.space.name(),
            })
        }
    }

    fn map_pixels(&self, space: ColorSpace, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        let plane = self.height() * self.width();
        let src = self.tensor.data();
        let mut out = vec![T::zero(); 3 * plane];
        for i in 0..plane {
            let p = f([src[i], src[plane + i], src[2 * plane + i]]);
            out[i] = p[0];
            out[plane + i] = p[1];
            out[2 * plane + i] = p[2];
        }
        Self {
            tensor: Tensor::from_parts(self.tensor.shape().to_vec(), out),
            space,
        }
    }
}

fn affine<T: Scalar>(m: &[[f64; 3]; 3], p: [T; 3], offset: [f64; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (o, (row, off)) in out.iter_mut().zip(m.iter().zip(offset)) {
        *o = T::lit(row[0]) * p[0] + T::lit(row[1]) * p[1] + T::lit(row[2]) * p[2] + T::lit(off);
    }
    out
}

fn clamp01<T: Scalar>(p: [T; 3]) -> [T; 3] {
    p.map(|v| v.max(T::zero()).min(T::one()))
}

/// Full-range RGB → YUV before clamping.
pub fn rgb_to_yuv_pixel<T: Scalar>(p: [T; 3]) -> [T; 3] {
    affine(&RGB_TO_YUV, p, [0.0, 0.5, 0.5])
}

/// Exact inverse of [`rgb_to_yuv_pixel`] before clamping.
pub fn yuv_to_rgb_pixel<T: Scalar>(p: [T; 3]) -> [T; 3] {
    let inv = yuv_to_rgb_matrix();
    let centred = [p[0], p[1] - T::lit(0.5), p[2] - T::lit(0.5)];
    affine(&inv, centred, [0.0; 3])
}

pub fn rgb_to_hsv_pixel<T: Scalar>([r, g, b]: [T; 3]) -> [T; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > T::zero() { delta / max } else { T::zero() };
    let six = T::lit(6.0);
    let h = if delta <= T::zero() {
        T::zero()
    } else if max == r {
        let h = (g - b) / delta;
        if h < T::zero() {
            h + six
        } else {
            h
        }
    } else if max == g {
        (b - r) / delta + T::lit(2.0)
    } else {
        (r - g) / delta + T::lit(4.0)
    };
    [h / six, s, v]
}

pub fn rgb_to_yuv<T: Scalar>(img: &ColorImage<T>) -> Result<ColorImage<T>> {
    img.expect(ColorSpace::Rgb)?;
    Ok(img.map_pixels(ColorSpace::Yuv, |p| clamp01(rgb_to_yuv_pixel(p))))
}

pub fn yuv_to_rgb<T: Scalar>(img: &ColorImage<T>) -> Result<ColorImage<T>> {
    img.expect(ColorSpace::Yuv)?;
    Ok(img.map_pixels(ColorSpace::Rgb, |p| clamp01(yuv_to_rgb_pixel(p))))
}

pub fn rgb_to_hsv<T: Scalar>(img: &ColorImage<T>) -> Result<ColorImage<T>> {
    img.expect(ColorSpace::Rgb)?;
    Ok(img.map_pixels(ColorSpace::Hsv, rgb_to_hsv_pixel))
}

/// The luma channel of a YUV image as a `1×H×W` tensor.
pub fn extract_y<T: Scalar>(img: &ColorImage<T>) -> Result<Tensor<T>> {
    img.expect(ColorSpace::Yuv)?;
    let plane = img.height() * img.width();
    Ok(Tensor::from_parts(
        vec![1, img.height(), img.width()],
        img.tensor.data()[..plane].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(space: ColorSpace, c: [f64; 3]) -> ColorImage<f64> {
        ColorImage::uniform(space, 2, 2, c).unwrap()
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn yuv_reference_colours() {
        let black = rgb_to_yuv(&px(ColorSpace::Rgb, [0.0; 3])).unwrap();
        close(black.pixel(0, 0), [0.0, 0.5, 0.5], 1e-15);
        let white = rgb_to_yuv(&px(ColorSpace::Rgb, [1.0; 3])).unwrap();
        close(white.pixel(1, 1), [1.0, 0.5, 0.5], 1e-15);
        let red = rgb_to_yuv(&px(ColorSpace::Rgb, [1.0, 0.0, 0.0])).unwrap();
        close(red.pixel(0, 1), [0.299, 0.331264, 1.0], 1e-15);
    }

    #[test]
    fn yuv_inverse_reference_colours() {
        let black = yuv_to_rgb(&px(ColorSpace::Yuv, [0.0, 0.5, 0.5])).unwrap();
        close(black.pixel(0, 0), [0.0; 3], 1e-12);
        let white = yuv_to_rgb(&px(ColorSpace::Yuv, [1.0, 0.5, 0.5])).unwrap();
        close(white.pixel(0, 0), [1.0; 3], 1e-12);
    }

    #[test]
    fn hsv_reference_colours() {
        let gray = rgb_to_hsv(&px(ColorSpace::Rgb, [0.5; 3])).unwrap();
        close(gray.pixel(0, 0), [0.0, 0.0, 0.5], 0.0);
        let green = rgb_to_hsv(&px(ColorSpace::Rgb, [0.0, 1.0, 0.0])).unwrap();
        close(green.pixel(0, 0), [1.0 / 3.0, 1.0, 1.0], 1e-15);
        let black = rgb_to_hsv(&px(ColorSpace::Rgb, [0.0; 3])).unwrap();
        close(black.pixel(0, 0), [0.0; 3], 0.0);
    }

    #[test]
    fn y_extraction() {
        let y = extract_y(&rgb_to_yuv(&px(ColorSpace::Rgb, [1.0; 3])).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let y = extract_y(&rgb_to_yuv(&px(ColorSpace::Rgb, [0.0; 3])).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = extract_y(&rgb_to_yuv(&px(ColorSpace::Rgb, [1.0, 0.0, 0.0])).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.299).abs() < 1e-15));
    }

    #[test]
    fn wrong_space_rejected() {
        let img = px(ColorSpace::Yuv, [0.2; 3]);
        assert!(matches!(rgb_to_yuv(&img), Err(Error::WrongColorSpace { .. })));
        assert!(rgb_to_hsv(&img).is_err());
        assert!(yuv_to_rgb(&px(ColorSpace::Rgb, [0.2; 3])).is_err());
        assert!(extract_y(&px(ColorSpace::Hsv, [0.2; 3])).is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        let t = Tensor::full(vec![3, 1, 1], 1.5);
        assert!(ColorImage::new(t, ColorSpace::Rgb).is_err());
    }
}
