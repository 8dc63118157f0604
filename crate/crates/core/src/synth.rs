//! Seeded synthetic scenes for desk-scale testing.
//!
//! A scene is a union of elliptical hand blobs plus K learner maps derived
//! from it: Gaussian pixel noise, clamping, a separable Gaussian blur, then
//! attenuation inside the blobs. Each perturbation stands in for one test
//! condition (blur for motion blur, attenuation for gloves, a second lobe per
//! blob for unusual gestures). They only promise that accuracy drops and
//! uncertainty rises as they grow.
//!
//! Random streams come from ChaCha8 keyed by the scene seed: stream 0 draws
//! the blobs and stream `k + 1` the noise of learner `k`. The algorithm is
//! identified by [`GENERATOR`]; any change to it must bump that string.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestItem};
use crate::metrics::{ImageMetrics, IouMode, LogBase, MetricConfig};
use crate::par;
use crate::raster::{self, Dims, GroundTruthMask, ProbabilityMap};
use crate::rng::{splitmix, SeededRng};
use crate::taxonomy::{self, Background, ConditionTagSet, Tag, View};

pub const GENERATOR: &str = "handuq-synth/chacha8/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dims: Dims,
    /// 0 to 4 hands; 3 or more implies a second operator.
    pub n_hands: u8,
    /// Multiplicative attenuation `exp(-glove_shift)` of hand-pixel probabilities.
    pub glove_shift: f64,
    /// In (0, 1]: each blob gains a second lobe overlapping it by this fraction.
    pub gesture_overlap: f64,
    /// Gaussian blur of learner maps, in pixels.
    pub blur_sigma: f64,
    /// Standard deviation of per-pixel Gaussian noise on learner maps.
    pub learner_noise: f64,
    pub k: usize,
    pub seed: u64,
    pub background: Background,
    pub view: View,
}

impl SynthSpec {
    /// A noiseless single-hand scene.
    pub fn clean(dims: Dims, seed: u64) -> Self {
        SynthSpec {
            dims,
            n_hands: 1,
            glove_shift: 0.0,
            gesture_overlap: 0.0,
            blur_sigma: 0.0,
            learner_noise: 0.0,
            k: 1,
            seed,
            background: Background::Cluttered,
            view: View::Side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} = {v}")))
            }
        };
        finite_nonneg("glove_shift", self.glove_shift)?;
        finite_nonneg("blur_sigma", self.blur_sigma)?;
        finite_nonneg("learner_noise", self.learner_noise)?;
        if !(0.0..=1.0).contains(&self.gesture_overlap) {
            return Err(Error::Parameter(format!(
                "gesture_overlap = {}",
                self.gesture_overlap
            )));
        }
        if self.n_hands > 4 {
            return Err(Error::Parameter(format!("n_hands = {}", self.n_hands)));
        }
        if self.k == 0 {
            return Err(Error::Parameter("K = 0".into()));
        }
        Ok(())
    }

    pub fn tags(&self) -> ConditionTagSet {
        let mut tags = vec![if self.n_hands >= 3 { Tag::O2 } else { Tag::O1 }];
        if self.glove_shift > 0.0 {
            tags.push(Tag::GH);
        }
        if self.gesture_overlap > 0.0 {
            tags.push(Tag::RG);
        }
        if self.blur_sigma > 0.0 {
            tags.push(Tag::MBN);
        }
        ConditionTagSet::from_tags(&tags, self.background, self.view)
            .expect("exactly one operator tag")
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub gt: GroundTruthMask,
    pub maps: Vec<ProbabilityMap>,
    pub tags: ConditionTagSet,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn draw_blobs(spec: &SynthSpec, rng: &mut SeededRng) -> Vec<Ellipse> {
    let w = f64::from(spec.dims.width);
    let h = f64::from(spec.dims.height);
    let scale = w.min(h);
    let mut out = Vec::new();
    for _ in 0..spec.n_hands {
        let cx = rng.range(0.15 * w, 0.85 * w);
        let cy = rng.range(0.15 * h, 0.85 * h);
        let a = rng.range(0.10, 0.20) * scale;
        let b = rng.range(0.06, 0.12) * scale;
        let angle = rng.range(0.0, PI);
        let (sin, cos) = angle.sin_cos();
        let blob = Ellipse {
            cx,
            cy,
            a,
            b,
            cos,
            sin,
        };
        out.push(blob);
        if spec.gesture_overlap > 0.0 {
            // A finger-like lobe along the blob's minor axis; centers move apart as overlap shrinks.
            let lobe_a = 0.5 * a;
            let lobe_b = 0.5 * b;
            let offset = (1.0 - spec.gesture_overlap) * (b + lobe_a) + 0.5 * b;
            let (lsin, lcos) = (angle + PI / 2.0).sin_cos();
            out.push(Ellipse {
                cx: cx + offset * lcos,
                cy: cy + offset * lsin,
                a: lobe_a,
                b: lobe_b,
                cos: lcos,
                sin: lsin,
            });
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(values: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let w = dims.width as i64;
    let h = dims.height as i64;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kw) in kernel.iter().enumerate() {
                let xx = (x + j as i64 - radius).clamp(0, w - 1);
                s += kw * values[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = s;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kw) in kernel.iter().enumerate() {
                let yy = (y + j as i64 - radius).clamp(0, h - 1);
                s += kw * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = s.clamp(0.0, 1.0);
        }
    }
    out
}

fn learner_map(spec: &SynthSpec, gt: &[bool], k: usize) -> ProbabilityMap {
    let mut rng = SeededRng::stream(spec.seed, k as u64 + 1);
    let mut values: Vec<f64> = gt.iter().map(|&h| f64::from(u8::from(h))).collect();
    if spec.learner_noise > 0.0 {
        let mut spare = None;
        for v in values.iter_mut() {
            let z = match spare.take() {
                Some(z) => z,
                None => {
                    let (a, b) = rng.normal_pair();
                    spare = Some(b);
                    a
                }
            };
            *v = (*v + spec.learner_noise * z).clamp(0.0, 1.0);
        }
    }
    let mut values = blur(&values, spec.dims, spec.blur_sigma);
    if spec.glove_shift > 0.0 {
        let factor = (-spec.glove_shift).exp();
        for (v, &h) in values.iter_mut().zip(gt) {
            if h {
                *v = (*v * factor).clamp(0.0, 1.0);
            }
        }
    }
    ProbabilityMap::new(spec.dims, values).expect("generator keeps values in [0, 1]")
}

/// Generates the ground truth, K learner maps and the tags implied by the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = SeededRng::stream(spec.seed, 0);
    let blobs = draw_blobs(spec, &mut rng);
    let w = spec.dims.width as usize;
    let gt: Vec<bool> = (0..spec.dims.len())
        .map(|i| {
            let x = (i % w) as f64 + 0.5;
            let y = (i / w) as f64 + 0.5;
            blobs.iter().any(|b| b.contains(x, y))
        })
        .collect();
    let maps = (0..spec.k).map(|k| learner_map(spec, &gt, k)).collect();
    Ok(SynthScene {
        gt: GroundTruthMask::new(spec.dims, gt)?,
        maps,
        tags: spec.tags(),
    })
}

/// Reference metrics by plain scalar loops, written independently of the metrics module.
pub fn oracle_metrics(
    gt: &GroundTruthMask,
    maps: &[ProbabilityMap],
    config: &MetricConfig,
) -> Result<ImageMetrics> {
    if maps.is_empty() {
        return Err(Error::Parameter("K = 0".into()));
    }
    for m in maps {
        gt.dims().ensure_same(m.dims())?;
    }
    let n = gt.dims().len();
    let mut entropy_total = 0.0;
    let mut hand_total = 0.0;
    let mut hand_pixels = 0u64;
    let (mut inter, mut union, mut bg_inter, mut bg_union) = (0u64, 0u64, 0u64, 0u64);
    for p in 0..n {
        let mut acc = 0.0;
        for m in maps {
            let v = m.values()[p];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range { index: p, value: v });
            }
            acc += v;
        }
        let prob = acc / maps.len() as f64;
        let mut e = 0.0;
        for q in [prob, 1.0 - prob] {
            if q > 0.0 {
                e -= q * match config.log_base {
                    LogBase::Natural => q.ln(),
                    LogBase::Base2 => q.log2(),
                };
            }
        }
        entropy_total += e;
        let is_hand = gt.values()[p];
        let predicted = prob >= config.tau;
        if is_hand {
            hand_total += e;
            hand_pixels += 1;
        }
        if is_hand && predicted {
            inter += 1;
        }
        if is_hand || predicted {
            union += 1;
        }
        if !is_hand && !predicted {
            bg_inter += 1;
        }
        if !is_hand || !predicted {
            bg_union += 1;
        }
    }
    let hand_iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let bg_iou = if bg_union == 0 {
        1.0
    } else {
        bg_inter as f64 / bg_union as f64
    };
    Ok(ImageMetrics {
        iou: match config.iou_mode {
            IouMode::Hand => hand_iou,
            IouMode::TwoClass => (hand_iou + bg_iou) / 2.0,
        },
        e_bar: entropy_total / n as f64,
        e_hand: if hand_pixels == 0 {
            None
        } else {
            Some(hand_total / hand_pixels as f64)
        },
        n_h: hand_pixels,
    })
}

/// Maximum entropy per base, for oracle-side checks.
pub fn oracle_max_entropy(base: LogBase) -> f64 {
    match base {
        LogBase::Natural => LN_2,
        LogBase::Base2 => 1.0,
    }
}

/// Layout of a synthetic dataset on disk.
#[derive(Debug, Clone)]
pub struct SynthDatasetOptions {
    pub seed: u64,
    pub per_condition: usize,
    pub k: usize,
    pub dims: Dims,
    pub views: Vec<View>,
}

impl Default for SynthDatasetOptions {
    fn default() -> Self {
        SynthDatasetOptions {
            seed: 0,
            per_condition: 20,
            k: 4,
            dims: Dims {
                width: 64,
                height: 48,
            },
            views: vec![View::Side],
        }
    }
}

/// Scene parameters for one capture condition.
pub fn condition_spec(tags: &ConditionTagSet, dims: Dims, k: usize, seed: u64) -> SynthSpec {
    let mut rng = SeededRng::stream(seed, u64::MAX);
    let n_hands = if tags.two_operators {
        3 + rng.below(2) as u8
    } else {
        rng.below(3) as u8
    };
    SynthSpec {
        dims,
        n_hands,
        glove_shift: if tags.gloves { 0.65 } else { 0.0 },
        gesture_overlap: if tags.rare_gestures { 0.5 } else { 0.0 },
        blur_sigma: if tags.motion_blur { 1.5 } else { 0.0 },
        learner_noise: match tags.background {
            Background::Simple => 0.03,
            Background::Cluttered => 0.08,
        },
        k,
        seed,
        background: tags.background,
        view: tags.view,
    }
}

/// Unit-free learner labels, half per architecture family.
pub fn learner_ids(k: usize) -> Vec<String> {
    (0..k)
        .map(|j| {
            if j < k.div_ceil(2) {
                format!("unet-s{j}")
            } else {
                format!("refinenet-s{j}")
            }
        })
        .collect()
}

fn scene_image(gt: &GroundTruthMask, seed: u64) -> RgbImage {
    let d = gt.dims();
    RgbImage::from_fn(d.width, d.height, |x, y| {
        let i = (y * d.width + x) as usize;
        let texture = (splitmix(seed ^ i as u64) % 24) as u8;
        if gt.values()[i] {
            Rgb([196 + texture / 2, 148 + texture / 2, 120 + texture / 2])
        } else {
            Rgb([80 + texture, 84 + texture, 90 + texture])
        }
    })
}

fn write_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

/// Writes masks, learner maps, scene images and `manifest.json` under `out_dir`.
pub fn write_synthetic_dataset(
    out_dir: &Path,
    options: &SynthDatasetOptions,
) -> Result<DatasetManifest> {
    if options.per_condition == 0 || options.k == 0 {
        return Err(Error::Parameter(
            "per-condition count and K must be positive".into(),
        ));
    }
    for sub in ["masks", "maps", "images"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| write_err(&p, e))?;
    }

    let mut jobs = Vec::new();
    for (vi, view) in options.views.iter().enumerate() {
        for (ci, tags) in taxonomy::capture_conditions(*view).into_iter().enumerate() {
            for i in 0..options.per_condition {
                let key = ((vi as u64) << 48) | ((ci as u64) << 32) | i as u64;
                let seed = splitmix(options.seed ^ splitmix(key));
                let label = tags.condition_label().replace('+', "-").to_lowercase();
                let id = format!("{view}-{label}-{}-{i:03}", tags.background);
                jobs.push((id, tags, seed));
            }
        }
    }

    let items = par::map(&jobs, |(id, tags, seed)| -> Result<ManifestItem> {
        let spec = condition_spec(tags, options.dims, options.k, *seed);
        let scene = generate(&spec)?;
        let mask_rel = PathBuf::from("masks").join(format!("{id}.png"));
        raster::write_mask(&scene.gt, out_dir.join(&mask_rel))?;
        let image_rel = PathBuf::from("images").join(format!("{id}.png"));
        let image_path = out_dir.join(&image_rel);
        scene_image(&scene.gt, *seed)
            .save_with_format(&image_path, image::ImageFormat::Png)
            .map_err(|e| Error::image(&image_path, e))?;
        let mut maps = Vec::with_capacity(options.k);
        for (k, m) in scene.maps.iter().enumerate() {
            let rel = PathBuf::from("maps").join(format!("{id}.k{k}.pmap"));
            raster::write_pmap(m, out_dir.join(&rel))?;
            maps.push(rel);
        }
        Ok(ManifestItem {
            id: id.clone(),
            image_path: Some(image_rel),
            gt_mask_path: mask_rel,
            learner_map_paths: maps,
            tags: *tags,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(items);
    manifest.learner_ids = Some(learner_ids(options.k));
    manifest.generator = Some(format!("{GENERATOR} seed={}", options.seed));
    manifest.base_dir = out_dir.to_path_buf();
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
