//! Dataset ingestion, resampling and sequence windowing.

pub mod manifest;
pub mod pnm;
pub mod synth;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::color::ColorImage;
use crate::error::{shape_err, Error, Result};
use crate::metrics::{BinaryMask, LabelMask};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use manifest::{load_manifest, DatasetManifest, SourceMetadata, SourceRecord, Split};

/// `k + 1` consecutive frames and the label of the last one.
#[derive(Clone, Debug)]
pub struct FrameSequence<T> {
    pub frames: Vec<ColorImage<T>>,
    pub label: LabelMask,
    pub source_id: String,
    pub frame_indices: Vec<usize>,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn new(
        frames: Vec<ColorImage<T>>,
        label: LabelMask,
        source_id: String,
        frame_indices: Vec<usize>,
    ) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        let (h, w) = (first.height(), first.width());
        if frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
            return shape_err("FrameSequence", "frames differ in size");
        }
        if (label.height(), label.width()) != (h, w) {
            return shape_err(
                "FrameSequence",
                format!("label {}×{} vs frames {h}×{w}", label.height(), label.width()),
            );
        }
        if frame_indices.len() != frames.len() || frame_indices.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidConfig(
                "frame indices must be strictly increasing, one per frame".into(),
            ));
        }
        Ok(Self {
            frames,
            label,
            source_id,
            frame_indices,
        })
    }

    pub fn final_frame(&self) -> &ColorImage<T> {
        self.frames.last().expect("non-empty")
    }
}

/// Location of one window: source index and the index of its final frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub source: usize,
    pub end: usize,
}

/// Sliding windows of `k + 1` frames with stride 1 that never cross
/// sources. Sources shorter than `k + 1` yield nothing.
pub fn window_refs(lengths: &[usize], k: usize) -> Vec<WindowRef> {
    lengths
        .iter()
        .enumerate()
        .flat_map(|(source, &len)| (k..len).map(move |end| WindowRef { source, end }))
        .collect()
}

/// Lazily loads every window of every source in the manifest.
pub fn window_sequences<T: Scalar>(
    manifest: &DatasetManifest,
    k: usize,
) -> impl Iterator<Item = Result<FrameSequence<T>>> + '_ {
    for s in &manifest.sources {
        if s.frames.len() < k + 1 {
            warn!(
                "source `{}` has {} frames, fewer than k+1 = {}; skipped",
                s.id,
                s.frames.len(),
                k + 1
            );
        }
    }
    let lengths: Vec<usize> = manifest.sources.iter().map(|s| s.frames.len()).collect();
    window_refs(&lengths, k).into_iter().map(move |r| {
        let src = &manifest.sources[r.source];
        let idx: Vec<usize> = (r.end - k..=r.end).collect();
        let frames = idx
            .iter()
            .map(|&i| pnm::read_ppm(&manifest.frame_path(src, i)))
            .collect::<Result<Vec<_>>>()?;
        let label = pnm::read_mask(&manifest.label_path(src, r.end))?;
        FrameSequence::new(frames, label, src.id.clone(), idx)
    })
}

/// A source held in memory.
#[derive(Clone, Debug)]
pub struct LoadedSource<T> {
    pub id: String,
    pub split: Split,
    pub frames: Vec<ColorImage<T>>,
    pub labels: Vec<LabelMask>,
}

/// All sources of a manifest decoded into memory.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub sources: Vec<LoadedSource<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Loads every source, optionally downsampling frames and labels by four.
    pub fn load(manifest: &DatasetManifest, downsample: Option<Downsample>) -> Result<Self> {
        let mut sources = Vec::with_capacity(manifest.sources.len());
        for s in &manifest.sources {
            let mut frames = Vec::with_capacity(s.frames.len());
            let mut labels = Vec::with_capacity(s.labels.len());
            for i in 0..s.frames.len() {
                let f = pnm::read_ppm(&manifest.frame_path(s, i))?;
                let l = pnm::read_mask(&manifest.label_path(s, i))?;
                match downsample {
                    Some(mode) => {
                        frames.push(downsample4(&f, mode)?);
                        labels.push(downsample4_mask(&l)?);
                    }
                    None => {
                        frames.push(f);
                        labels.push(l);
                    }
                }
            }
            sources.push(LoadedSource {
                id: s.id.clone(),
                split: s.split,
                frames,
                labels,
            });
        }
        Ok(Self { sources })
    }

    /// Window references restricted to one split; `source` indexes `self.sources`.
    pub fn windows(&self, split: Split, k: usize) -> Vec<WindowRef> {
        let lengths: Vec<usize> = self
            .sources
            .iter()
            .map(|s| if s.split == split { s.frames.len() } else { 0 })
            .collect();
        window_refs(&lengths, k)
    }

    pub fn sequence(&self, r: WindowRef, k: usize) -> Result<FrameSequence<T>> {
        let s = &self.sources[r.source];
        let idx: Vec<usize> = (r.end - k..=r.end).collect();
        FrameSequence::new(
            s.frames[r.end - k..=r.end].to_vec(),
            s.labels[r.end].clone(),
            s.id.clone(),
            idx,
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsample {
    /// 4×4 box average.
    #[default]
    Box,
    /// Top-left sample of each 4×4 block.
    Nearest,
}

/// Reduces each spatial extent by four.
pub fn downsample4<T: Scalar>(img: &ColorImage<T>, mode: Downsample) -> Result<ColorImage<T>> {
    let (h, w) = (img.height(), img.width());
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return shape_err("downsample4", format!("{h}×{w} not divisible by 4"));
    }
    let (oh, ow) = (h / 4, w / 4);
    let src = img.tensor().data();
    let sixteenth = T::lit(1.0 / 16.0);
    let mut out = vec![T::zero(); 3 * oh * ow];
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                let v = match mode {
                    Downsample::Nearest => src[(c * h + 4 * y) * w + 4 * x],
                    Downsample::Box => {
                        let mut acc = T::zero();
                        for dy in 0..4 {
                            for dx in 0..4 {
                                acc += src[(c * h + 4 * y + dy) * w + 4 * x + dx];
                            }
                        }
                        acc * sixteenth
                    }
                };
                out[(c * oh + y) * ow + x] = v.max(T::zero()).min(T::one());
            }
        }
    }
    ColorImage::new(Tensor::new(vec![3, oh, ow], out)?, img.space())
}

/// Majority vote over each 4×4 block (ties are background).
pub fn downsample4_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    if h % 4 != 0 || w % 4 != 0 {
        return shape_err("downsample4_mask", format!("{h}×{w} not divisible by 4"));
    }
    Ok(BinaryMask::from_fn(h / 4, w / 4, |y, x| {
        let mut n = 0;
        for dy in 0..4 {
            for dx in 0..4 {
                n += usize::from(mask.get(4 * y + dy, 4 * x + dx));
            }
        }
        n > 8
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::ColorSpace;

    #[test]
    fn window_counts() {
        assert_eq!(window_refs(&[10], 4).len(), 6);
        assert_eq!(window_refs(&[5], 4).len(), 1);
        assert_eq!(window_refs(&[3], 4).len(), 0);
        let w = window_refs(&[6, 6], 4);
        assert_eq!(w.len(), 4);
        assert_eq!(
            w,
            vec![
                WindowRef { source: 0, end: 4 },
                WindowRef { source: 0, end: 5 },
                WindowRef { source: 1, end: 4 },
                WindowRef { source: 1, end: 5 },
            ]
        );
    }

    #[test]
    fn downsample_block_mean() {
        let t = Tensor::<f64>::from_fn(vec![3, 4, 4], |i| (i % 16) as f64 / 15.0);
        let img = ColorImage::new(t, ColorSpace::Rgb).unwrap();
        let d = downsample4(&img, Downsample::Box).unwrap();
        assert_eq!((d.height(), d.width()), (1, 1));
        assert!(d.pixel(0, 0).iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(downsample4(&img, Downsample::Nearest).unwrap().pixel(0, 0), [0.0; 3]);
    }

    #[test]
    fn downsample_rejects_ragged() {
        let img = ColorImage::<f64>::uniform(ColorSpace::Rgb, 6, 8, [0.1; 3]).unwrap();
        assert!(downsample4(&img, Downsample::Box).is_err());
    }

    #[test]
    fn sequence_requires_increasing_indices() {
        let f = ColorImage::<f64>::uniform(ColorSpace::Rgb, 2, 2, [0.1; 3]).unwrap();
        let l = BinaryMask::empty(2, 2);
        assert!(FrameSequence::new(vec![f.clone(), f.clone()], l.clone(), "s".into(), vec![1, 1]).is_err());
        assert!(FrameSequence::new(vec![f.clone(), f], l, "s".into(), vec![0, 1]).is_ok());
    }
}
