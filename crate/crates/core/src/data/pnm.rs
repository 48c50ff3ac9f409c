//! Binary PPM (P6) and PGM (P5) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::color::{ColorImage, ColorSpace};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoded samples of a PNM file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

fn quantize<T: Scalar>(v: T, maxval: u16) -> u16 {
    (v.as_f64().clamp(0.0, 1.0) * maxval as f64).round() as u16
}

pub fn encode(p: &Pnm) -> Result<Vec<u8>> {
    let magic = match p.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Image(format!("unsupported channel count {c}"))),
    };
    if p.samples.len() != p.width * p.height * p.channels {
        return Err(Error::Image("sample count does not match dimensions".into()));
    }
    let mut out = format!("{magic}\n{} {}\n{}\n", p.width, p.height, p.maxval).into_bytes();
    if p.maxval < 256 {
        out.extend(p.samples.iter().map(|&s| s as u8));
    } else {
        for &s in &p.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Image("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Image(format!("unsupported magic `{m}`"))),
    };
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("bad header field `{s}`")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("bad maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * channels;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Image(format!("raster truncated: need {need} bytes")))?;
    let samples = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Pnm> {
    decode(&fs::read(path)?).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes an image's three channels as 8-bit P6, whatever its colour space.
pub fn write_ppm<T: Scalar>(path: &Path, img: &ColorImage<T>) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut samples = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            samples.extend(img.pixel(y, x).iter().map(|&v| quantize(v, 255)));
        }
    }
    write_file(
        path,
        &encode(&Pnm {
            width: w,
            height: h,
            channels: 3,
            maxval: 255,
            samples,
        })?,
    )
}

/// Reads a P6 file as an RGB image scaled to `[0, 1]`.
pub fn read_ppm<T: Scalar>(path: &Path) -> Result<ColorImage<T>> {
    let p = read(path)?;
    if p.channels != 3 {
        return Err(Error::Image(format!("{}: expected P6", path.display())));
    }
    let plane = p.width * p.height;
    let scale = T::lit(p.maxval as f64);
    let mut data = vec![T::zero(); 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = T::lit(p.samples[3 * i + c] as f64) / scale;
        }
    }
    ColorImage::new(Tensor::new(vec![3, p.height, p.width], data)?, ColorSpace::Rgb)
}

/// Writes a mask as 8-bit P5 with 0 / 255 values.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_file(
        path,
        &encode(&Pnm {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            maxval: 255,
            samples: mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        })?,
    )
}

/// Reads a P5 mask; samples above half of maxval are target.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let p = read(path)?;
    if p.channels != 1 {
        return Err(Error::Image(format!("{}: expected P5", path.display())));
    }
    let half = p.maxval / 2;
    BinaryMask::new(p.height, p.width, p.samples.iter().map(|&s| s > half).collect())
}

/// Writes a `1×H×W` probability map as 16-bit P5.
pub fn write_probability_map<T: Scalar>(path: &Path, probs: &Tensor<T>) -> Result<()> {
    let s = probs.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Image(format!("probability map must be 1×H×W, got {s:?}")));
    }
    write_file(
        path,
        &encode(&Pnm {
            width: s[2],
            height: s[1],
            channels: 1,
            maxval: 65535,
            samples: probs.data().iter().map(|&v| quantize(v, 65535)).collect(),
        })?,
    )
}

/// Reads a single-channel P5 file scaled to `[0, 1]`, as `1×H×W`.
pub fn read_gray<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let p = read(path)?;
    if p.channels != 1 {
        return Err(Error::Image(format!("{}: expected P5", path.display())));
    }
    let scale = T::lit(p.maxval as f64);
    Tensor::new(
        vec![1, p.height, p.width],
        p.samples.iter().map(|&s| T::lit(s as f64) / scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let p = decode(&bytes).unwrap();
        assert_eq!((p.width, p.height, p.channels), (2, 1, 1));
        assert_eq!(p.samples, vec![0, 255]);
    }

    #[test]
    fn sixteen_bit_big_endian() {
        let p = Pnm {
            width: 2,
            height: 1,
            channels: 1,
            maxval: 65535,
            samples: vec![1, 65534],
        };
        let bytes = encode(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 1, 255, 254]);
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn truncated_raster_rejected() {
        assert!(decode(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode(b"P3\n1 1\n255\n0 0 0").is_err());
    }
}
