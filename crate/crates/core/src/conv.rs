//! "Same"-padded, stride-1 2D and 3D convolutions with their adjoints.
//!
//! All kernels follow the cross-correlation convention (no kernel flip) and
//! zero-pad so the output keeps the input's spatial (and temporal) extent.
//! Both ranks share one implementation that treats a 2D convolution as a
//! 3D one with a single time slice and a kernel depth of one.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    cout: usize,
    t: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    fn kvolume(&self) -> usize {
        self.kt * self.kh * self.kw
    }
}

/// Valid output index range `[lo, hi)` for a tap at offset `d` along an axis of length `n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Visits every (kernel tap, output row) pair with valid source row. The
/// callback receives the flat kernel tap index within `kt×kh×kw`, the
/// flat output row offset, the source row offset, the horizontal tap
/// offset and the valid column range.
#[inline]
fn for_each_row(g: &Geometry, mut visit: impl FnMut(usize, usize, usize, isize, usize, usize)) {
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    for dt_i in 0..g.kt {
        let dt = dt_i as isize - pt;
        let (t0, t1) = span(g.t, dt);
        for dy_i in 0..g.kh {
            let dy = dy_i as isize - ph;
            let (y0, y1) = span(g.h, dy);
            for dx_i in 0..g.kw {
                let dx = dx_i as isize - pw;
                let (x0, x1) = span(g.w, dx);
                if x0 >= x1 {
                    continue;
                }
                let tap = (dt_i * g.kh + dy_i) * g.kw + dx_i;
                for t in t0..t1 {
                    let st = (t as isize + dt) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let out_row = (t * g.h + y) * g.w;
                        let src_row = (st * g.h + sy) * g.w;
                        visit(tap, out_row, src_row, dx, x0, x1);
                    }
                }
            }
        }
    }
}

fn forward<T: Scalar>(g: &Geometry, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let vol = g.volume();
    let kvol = g.kvolume();
    let mut out = vec![T::zero(); g.cout * vol];
    for co in 0..g.cout {
        let o = &mut out[co * vol..(co + 1) * vol];
        if let Some(b) = bias {
            o.fill(b[co]);
        }
        for ci in 0..g.cin {
            let src = &input[ci * vol..(ci + 1) * vol];
            let k = &kernel[(co * g.cin + ci) * kvol..(co * g.cin + ci + 1) * kvol];
            for_each_row(g, |tap, orow, srow, dx, x0, x1| {
                let w = k[tap];
                if w != T::zero() {
                    let s0 = (x0 as isize + dx) as usize;
                    axpy(&mut o[orow + x0..orow + x1], &src[srow + s0..srow + s0 + (x1 - x0)], w);
                }
            });
        }
    }
    out
}

fn backward_input<T: Scalar>(g: &Geometry, kernel: &[T], grad_out: &[T]) -> Vec<T> {
    let vol = g.volume();
    let kvol = g.kvolume();
    let mut gin = vec![T::zero(); g.cin * vol];
    for ci in 0..g.cin {
        let gi = &mut gin[ci * vol..(ci + 1) * vol];
        for co in 0..g.cout {
            let go = &grad_out[co * vol..(co + 1) * vol];
            let k = &kernel[(co * g.cin + ci) * kvol..(co * g.cin + ci + 1) * kvol];
            for_each_row(g, |tap, orow, srow, dx, x0, x1| {
                let w = k[tap];
                if w != T::zero() {
                    let s0 = (x0 as isize + dx) as usize;
                    axpy(&mut gi[srow + s0..srow + s0 + (x1 - x0)], &go[orow + x0..orow + x1], w);
                }
            });
        }
    }
    gin
}

fn backward_kernel<T: Scalar>(g: &Geometry, input: &[T], grad_out: &[T]) -> Vec<T> {
    let vol = g.volume();
    let kvol = g.kvolume();
    let mut gk = vec![T::zero(); g.cout * g.cin * kvol];
    for co in 0..g.cout {
        let go = &grad_out[co * vol..(co + 1) * vol];
        for ci in 0..g.cin {
            let src = &input[ci * vol..(ci + 1) * vol];
            let k = &mut gk[(co * g.cin + ci) * kvol..(co * g.cin + ci + 1) * kvol];
            for_each_row(g, |tap, orow, srow, dx, x0, x1| {
                let s0 = (x0 as isize + dx) as usize;
                k[tap] += dot(&go[orow + x0..orow + x1], &src[srow + s0..srow + s0 + (x1 - x0)]);
            });
        }
    }
    gk
}

fn backward_bias<T: Scalar>(g: &Geometry, grad_out: &[T]) -> Vec<T> {
    let vol = g.volume();
    (0..g.cout)
        .map(|co| grad_out[co * vol..(co + 1) * vol].iter().copied().sum())
        .collect()
}

fn geometry_2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Geometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 || ks.len() != 4 {
        return shape_err("conv2d_same", format!("input {is:?}, kernel {ks:?}"));
    }
    if ks[2] != ks[3] {
        return shape_err("conv2d_same", format!("non-square kernel {ks:?}"));
    }
    if ks[2] % 2 == 0 {
        return Err(Error::EvenKernel(ks[2]));
    }
    if ks[1] != is[0] {
        return shape_err(
            "conv2d_same",
            format!("kernel expects {} input channels, input has {}", ks[1], is[0]),
        );
    }
    check_bias("conv2d_same", ks[0], bias)?;
    Ok(Geometry {
        cin: is[0],
        cout: ks[0],
        t: 1,
        h: is[1],
        w: is[2],
        kt: 1,
        kh: ks[2],
        kw: ks[3],
    })
}

fn geometry_3d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Geometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 4 || ks.len() != 5 {
        return shape_err("conv3d_same", format!("input {is:?}, kernel {ks:?}"));
    }
    if ks[2] != ks[3] || ks[3] != ks[4] {
        return shape_err("conv3d_same", format!("non-cubic kernel {ks:?}"));
    }
    if ks[2] % 2 == 0 {
        return Err(Error::EvenKernel(ks[2]));
    }
    if ks[1] != is[0] {
        return shape_err(
            "conv3d_same",
            format!("kernel expects {} input channels, input has {}", ks[1], is[0]),
        );
    }
    check_bias("conv3d_same", ks[0], bias)?;
    Ok(Geometry {
        cin: is[0],
        cout: ks[0],
        t: is[1],
        h: is[2],
        w: is[3],
        kt: ks[2],
        kh: ks[3],
        kw: ks[4],
    })
}

fn check_bias<T: Scalar>(op: &'static str, cout: usize, bias: Option<&Tensor<T>>) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [cout] => shape_err(op, format!("bias {:?} for {cout} outputs", b.shape())),
        _ => Ok(()),
    }
}

/// Gradients of a convolution with respect to each of its operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `input: cin×H×W`, `kernel: cout×cin×m×m`, `bias: cout` → `cout×H×W`.
pub fn conv2d_same<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let g = geometry_2d(input, kernel, bias)?;
    let out = forward(&g, input.data(), kernel.data(), bias.map(|b| b.data()));
    Ok(Tensor::from_parts(vec![g.cout, g.h, g.w], out))
}

/// Adjoint of [`conv2d_same`] given the upstream gradient `grad_out: cout×H×W`.
pub fn conv2d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry_2d(input, kernel, None)?;
    if grad_out.shape() != [g.cout, g.h, g.w] {
        return shape_err("conv2d_same_backward", format!("grad_out {:?}", grad_out.shape()));
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(
            input.shape().to_vec(),
            backward_input(&g, kernel.data(), grad_out.data()),
        ),
        kernel: Tensor::from_parts(
            kernel.shape().to_vec(),
            backward_kernel(&g, input.data(), grad_out.data()),
        ),
        bias: Tensor::from_parts(vec![g.cout], backward_bias(&g, grad_out.data())),
    })
}

/// `input: cin×T×H×W`, `kernel: cout×cin×f×f×f`, `bias: cout` → `cout×T×H×W`.
pub fn conv3d_same<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let g = geometry_3d(input, kernel, bias)?;
    let out = forward(&g, input.data(), kernel.data(), bias.map(|b| b.data()));
    Ok(Tensor::from_parts(vec![g.cout, g.t, g.h, g.w], out))
}

pub fn conv3d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry_3d(input, kernel, None)?;
    if grad_out.shape() != [g.cout, g.t, g.h, g.w] {
        return shape_err("conv3d_same_backward", format!("grad_out {:?}", grad_out.shape()));
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(
            input.shape().to_vec(),
            backward_input(&g, kernel.data(), grad_out.data()),
        ),
        kernel: Tensor::from_parts(
            kernel.shape().to_vec(),
            backward_kernel(&g, input.data(), grad_out.data()),
        ),
        bias: Tensor::from_parts(vec![g.cout], backward_bias(&g, grad_out.data())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::ones(vec![1, 5, 5]);
        let k = Tensor::ones(vec![1, 1, 1, 1]);
        let b = Tensor::zeros(vec![1]);
        assert_eq!(conv2d_same(&x, &k, Some(&b)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::<f64>::ones(vec![1, 5, 5]);
        let k = Tensor::ones(vec![1, 1, 3, 3]);
        let y = conv2d_same(&x, &k, Some(&Tensor::zeros(vec![1]))).unwrap();
        let d = y.data();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[4], 4.0);
        assert_eq!(d[24], 4.0);
        assert_eq!(d[2], 6.0);
        assert_eq!(d[10], 6.0);
        assert_eq!(d[12], 9.0);
        assert_eq!(d[6], 9.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f64>::ones(vec![1, 5, 5]);
        let k = Tensor::ones(vec![1, 1, 2, 2]);
        assert!(matches!(conv2d_same(&x, &k, None), Err(Error::EvenKernel(2))));
        let x3 = Tensor::<f64>::ones(vec![1, 2, 5, 5]);
        let k3 = Tensor::ones(vec![1, 1, 4, 4, 4]);
        assert!(matches!(conv3d_same(&x3, &k3, None), Err(Error::EvenKernel(4))));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::ones(vec![2, 5, 5]);
        let k = Tensor::ones(vec![1, 3, 3, 3]);
        assert!(matches!(conv2d_same(&x, &k, None), Err(Error::ShapeMismatch { .. })));
        let k = Tensor::ones(vec![1, 2, 3, 3]);
        let b = Tensor::zeros(vec![2]);
        assert!(conv2d_same(&x, &k, Some(&b)).is_err());
    }

    #[test]
    fn zero_kernel_3d() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4, 4], |i| i as f64);
        let k = Tensor::zeros(vec![3, 2, 3, 3, 3]);
        let y = conv3d_same(&x, &k, Some(&Tensor::zeros(vec![3]))).unwrap();
        assert_eq!(y.shape(), &[3, 3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_uses_central_time_slice() {
        let x = Tensor::<f64>::from_fn(vec![2, 1, 5, 5], |i| ((i * 7) % 11) as f64 / 11.0);
        let mut k3 = Tensor::<f64>::zeros(vec![3, 2, 3, 3, 3]);
        let k2 = Tensor::<f64>::from_fn(vec![3, 2, 3, 3], |i| (i as f64 * 0.31).cos());
        for co in 0..3 {
            for ci in 0..2 {
                for tap in 0..9 {
                    let dst = ((co * 2 + ci) * 3 + 1) * 9 + tap;
                    k3.data_mut()[dst] = k2.data()[(co * 2 + ci) * 9 + tap];
                }
            }
        }
        let b = Tensor::from_fn(vec![3], |i| i as f64);
        let y3 = conv3d_same(&x, &k3, Some(&b)).unwrap();
        let x2 = x.clone().reshape(vec![2, 5, 5]).unwrap();
        let y2 = conv2d_same(&x2, &k2, Some(&b)).unwrap();
        assert_eq!(y3.data(), y2.data());

        // Off-centre time taps see only zero padding when T = 1.
        let mut k3b = k3.clone();
        for co in 0..3 {
            for ci in 0..2 {
                for tap in 0..9 {
                    k3b.data_mut()[((co * 2 + ci) * 3) * 9 + tap] = 5.0;
                    k3b.data_mut()[((co * 2 + ci) * 3 + 2) * 9 + tap] = -2.0;
                }
            }
        }
        assert_eq!(conv3d_same(&x, &k3b, Some(&b)).unwrap(), y3);
    }
}
