//! Deterministic synthetic scenes standing in for robot-camera footage.
//!
//! Each sequence shows a green-dominant quadrilateral "field" drifting over
//! a textured, non-green background. Global brightness drifts over time,
//! small green distractor patches flicker outside the field, and Gaussian
//! noise is added per channel. Labels are the exactly rasterised polygon,
//! including any field lines drawn inside it.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SourceMetadata, SourceRecord, Split, MANIFEST_FILE};
use super::pnm;
use crate::color::{ColorImage, ColorSpace};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

pub const POLYGON_FILE: &str = "polygons.json";
/// Frames per generated sequence unless configured otherwise.
pub const DEFAULT_SEQUENCE_LEN: usize = 10;

/// Quadrilateral vertices as `(x, y)` in pixel units; pixel `(r, c)` covers
/// `[c, c+1) × [r, r+1)`.
pub type Polygon = [[f64; 2]; 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSceneParams {
    pub height: usize,
    pub width: usize,
    /// Upper bound on the field's centre speed, pixels per frame.
    pub max_speed: f64,
    /// Per-vertex oscillation amplitude, pixels.
    pub wobble: f64,
    /// Maximum fractional darkening from the brightness drift, in `[0, 1]`.
    pub drift_amplitude: f64,
    pub distractors: usize,
    /// Per-frame probability that a distractor toggles visibility, in `[0, 1]`.
    pub flicker_rate: f64,
    /// Standard deviation of additive pixel noise, in `[0, 1]`.
    pub noise: f64,
    /// White line segments drawn inside the field (labelled as field).
    pub field_lines: usize,
    /// Minimum amount by which the field's green channel exceeds red and blue.
    pub margin: f64,
    pub seed: u64,
}

impl Default for SynthSceneParams {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            max_speed: 1.5,
            wobble: 0.75,
            drift_amplitude: 0.4,
            distractors: 2,
            flicker_rate: 0.3,
            noise: 0.02,
            field_lines: 1,
            margin: 0.1,
            seed: 0,
        }
    }
}

impl SynthSceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidConfig("synthetic images must be at least 4×4".into()));
        }
        for (name, v) in [
            ("drift_amplitude", self.drift_amplitude),
            ("flicker_rate", self.flicker_rate),
            ("noise", self.noise),
            ("margin", self.margin),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.max_speed >= 0.0 && self.wobble >= 0.0) {
            return Err(Error::InvalidConfig("speeds must be non-negative".into()));
        }
        if self.margin > 0.25 {
            return Err(Error::InvalidConfig(
                "margin above 0.25 leaves no room for field colours".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 20,
            val: 4,
            test: 4,
        }
    }
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.train {
            Split::Train
        } else if i < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &Polygon, x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

/// Pixels whose centres fall inside the polygon.
pub fn rasterize_polygon(poly: &Polygon, height: usize, width: usize) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| {
        point_in_polygon(poly, x as f64 + 0.5, y as f64 + 0.5)
    })
}

/// One generated sequence in memory.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub frames: Vec<ColorImage<f64>>,
    pub labels: Vec<BinaryMask>,
    pub polygons: Vec<Polygon>,
    pub metadata: SourceMetadata,
}

/// Reflects `v` into `[lo, hi]` (triangle wave).
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

struct Distractor {
    x: usize,
    y: usize,
    size: usize,
}

/// Generates sequence `index` of a dataset; depends only on `params` and `index`.
pub fn render_sequence(params: &SynthSceneParams, index: usize, len: usize) -> Result<SynthSequence> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let (hf, wf) = (h as f64, w as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);

    // Background: green never exceeds max(red, blue).
    let bg_r = rng.random_range(0.35..0.65);
    let bg_b = rng.random_range(0.30..0.60);
    let bg_g = f64::max(bg_r, bg_b) * rng.random_range(0.5..0.85);
    let tex_freq = [rng.random_range(0.2..0.7), rng.random_range(0.2..0.7)];
    let tex_phase = rng.random_range(0.0..TAU);
    let speckle: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Field colour: green exceeds red and blue by at least margin + 0.1.
    let field_g = rng.random_range(0.45..0.70);
    let field_d = rng.random_range(params.margin + 0.1..params.margin + 0.35).min(field_g);
    let field = [field_g - field_d, field_g, field_g - field_d];

    // Field geometry and motion.
    let c0 = [wf * rng.random_range(0.35..0.65), hf * rng.random_range(0.4..0.7)];
    let ext = [wf * rng.random_range(0.25..0.4), hf * rng.random_range(0.2..0.35)];
    let corners = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let base: Vec<[f64; 2]> = corners
        .iter()
        .map(|c| {
            [
                c[0] * ext[0] * rng.random_range(0.85..1.15),
                c[1] * ext[1] * rng.random_range(0.85..1.15),
            ]
        })
        .collect();
    let heading = rng.random_range(0.0..TAU);
    let speed = params.max_speed * rng.random_range(0.3..1.0);
    let vel = [speed * heading.cos(), speed * heading.sin()];
    let wob: Vec<[f64; 2]> = (0..4)
        .map(|_| [rng.random_range(0.3..1.2), rng.random_range(0.0..TAU)])
        .collect();

    // Field lines connect points on opposite sides of the base shape.
    let lines: Vec<([f64; 2], [f64; 2])> = (0..params.field_lines)
        .map(|_| {
            let a = rng.random_range(0.2..0.8);
            let b = rng.random_range(0.2..0.8);
            if rng.random_bool(0.5) {
                ([-1.2, 2.0 * a - 1.0], [1.2, 2.0 * b - 1.0])
            } else {
                ([2.0 * a - 1.0, -1.2], [2.0 * b - 1.0, 1.2])
            }
        })
        .collect();

    let distractors: Vec<Distractor> = (0..params.distractors)
        .map(|_| {
            let size = rng.random_range(3..=4).min(h).min(w);
            Distractor {
                x: rng.random_range(0..=w - size),
                y: rng.random_range(0..=h - size),
                size,
            }
        })
        .collect();
    let mut visible = vec![true; distractors.len()];

    let drift_period = rng.random_range(6.0..12.0);
    let drift_phase = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, params.noise.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut frames = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    let mut polygons = Vec::with_capacity(len);
    for t in 0..len {
        let tf = t as f64;
        let centre = [
            reflect(c0[0] + vel[0] * tf, 0.25 * wf, 0.75 * wf),
            reflect(c0[1] + vel[1] * tf, 0.3 * hf, 0.8 * hf),
        ];
        let mut poly: Polygon = [[0.0; 2]; 4];
        for (i, v) in poly.iter_mut().enumerate() {
            let phase = wob[i][0] * tf + wob[i][1];
            v[0] = centre[0] + base[i][0] + params.wobble * phase.sin();
            v[1] = centre[1] + base[i][1] + params.wobble * phase.cos();
        }
        let label = rasterize_polygon(&poly, h, w);

        if t > 0 {
            for v in visible.iter_mut() {
                if rng.random_bool(params.flicker_rate) {
                    *v = !*v;
                }
            }
        }
        let gain = 1.0 - params.drift_amplitude * (0.5 + 0.5 * (TAU * tf / drift_period + drift_phase).sin());

        let mut rgb = vec![[0.0f64; 3]; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                rgb[i] = if label.get(y, x) {
                    let grain = 0.04 * speckle[i];
                    field.map(|c| c + grain)
                } else {
                    let tex =
                        0.06 * (tex_freq[0] * x as f64 + tex_freq[1] * y as f64 + tex_phase).sin() + 0.05 * speckle[i];
                    [bg_r + tex, bg_g + tex, bg_b + tex]
                };
            }
        }
        for (a, b) in &lines {
            let to_px = |p: &[f64; 2]| [centre[0] + p[0] * ext[0], centre[1] + p[1] * ext[1]];
            let (pa, pb) = (to_px(a), to_px(b));
            let steps = ((pb[0] - pa[0]).abs().max((pb[1] - pa[1]).abs()).ceil() as usize).max(1) * 2;
            for s in 0..=steps {
                let u = s as f64 / steps as f64;
                let (x, y) = (pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1]));
                if x < 0.0 || y < 0.0 || x >= wf || y >= hf {
                    continue;
                }
                let (xi, yi) = (x as usize, y as usize);
                if label.get(yi, xi) {
                    rgb[yi * w + xi] = [0.9, 0.9, 0.9];
                }
            }
        }
        for (d, &on) in distractors.iter().zip(&visible) {
            if !on {
                continue;
            }
            for y in d.y..d.y + d.size {
                for x in d.x..d.x + d.size {
                    if !label.get(y, x) {
                        rgb[y * w + x] = field;
                    }
                }
            }
        }

        let plane = h * w;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in rgb.iter().enumerate() {
            for c in 0..3 {
                let mut v = px[c] * gain;
                if params.noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data[c * plane + i] = v.clamp(0.0, 1.0);
            }
        }
        frames.push(ColorImage::new(Tensor::new(vec![3, h, w], data)?, ColorSpace::Rgb)?);
        labels.push(label);
        polygons.push(poly);
    }

    Ok(SynthSequence {
        frames,
        labels,
        polygons,
        metadata: SourceMetadata {
            location: "synthetic".into(),
            lighting: format!("drift {:.2}", params.drift_amplitude),
            motion: format!("{speed:.2} px/frame"),
        },
    })
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.ppm")
}

pub fn label_name(i: usize) -> String {
    format!("label_{i:05}.pgm")
}

/// Writes `counts.total()` sequences of `len` frames under `root` and
/// returns the manifest (also written to `root/manifest.json`).
pub fn synth_generate(
    root: &Path,
    params: &SynthSceneParams,
    counts: SplitCounts,
    len: usize,
) -> Result<DatasetManifest> {
    params.validate()?;
    if len == 0 {
        return Err(Error::InvalidConfig("sequence length must be positive".into()));
    }
    fs::create_dir_all(root)?;
    let mut manifest = DatasetManifest::new(root);
    for i in 0..counts.total() {
        let seq = render_sequence(params, i, len)?;
        let id = format!("seq_{i:03}");
        let dir = root.join(&id);
        fs::create_dir_all(&dir)?;
        for t in 0..len {
            pnm::write_ppm(&dir.join(frame_name(t)), &seq.frames[t])?;
            pnm::write_mask(&dir.join(label_name(t)), &seq.labels[t])?;
        }
        let mut poly = serde_json::to_string(&seq.polygons)?;
        poly.push('\n');
        fs::write(dir.join(POLYGON_FILE), poly)?;
        manifest.sources.push(SourceRecord {
            id,
            frames: (0..len).map(frame_name).collect(),
            labels: (0..len).map(label_name).collect(),
            split: counts.split_of(i),
            metadata: seq.metadata,
        });
    }
    manifest.write(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads the stored polygons of a generated source directory.
pub fn read_polygons(source_dir: &Path) -> Result<Vec<Polygon>> {
    Ok(serde_json::from_str(&fs::read_to_string(
        source_dir.join(POLYGON_FILE),
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_rasterises() {
        let poly = [[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]];
        let m = rasterize_polygon(&poly, 4, 4);
        let expect = BinaryMask::from_fn(4, 4, |y, x| (1..3).contains(&y) && (1..3).contains(&x));
        assert_eq!(m, expect);
    }

    #[test]
    fn reflect_stays_in_range() {
        for i in -50..50 {
            let v = reflect(i as f64 * 0.7, 2.0, 5.0);
            assert!((2.0..=5.0).contains(&v));
        }
        assert_eq!(reflect(6.0, 2.0, 5.0), 4.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SynthSceneParams {
            noise: 1.5,
            ..Default::default()
        };
        assert!(render_sequence(&p, 0, 2).is_err());
    }

    #[test]
    fn labels_are_nonempty_and_partial() {
        let p = SynthSceneParams::default();
        for i in 0..6 {
            let s = render_sequence(&p, i, 8).unwrap();
            for l in &s.labels {
                let n = l.count();
                assert!(n > 50 && n < 32 * 32 - 50, "sequence {i}: {n} target pixels");
            }
        }
    }
}
