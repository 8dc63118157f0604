//! Predictive-entropy and overlap metrics.
//!
//! Binary entropy of the fused hand probability `p`:
//! `E(p) = -(p log p + (1 - p) log(1 - p))`, with `0 log 0 = 0`.
//! `Ē` is its mean over all pixels and `Ē_h` its mean over ground-truth hand pixels.
//! IoU is hand-class intersection over union with an empty union scoring 1.0.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{self, EnsembleSet, DEFAULT_TAU};
use crate::par;
use crate::raster::{Dims, EntropyMap, GroundTruthMask, PredictionMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
}

impl LogBase {
    /// Entropy of a fair binary split: ln 2 or 1 bit.
    pub fn max_entropy(self) -> f64 {
        match self {
            LogBase::Natural => LN_2,
            LogBase::Base2 => 1.0,
        }
    }

    #[inline]
    fn convert_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Natural => nats,
            LogBase::Base2 => nats / LN_2,
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Natural => "natural",
            LogBase::Base2 => "base2",
        })
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" | "e" | "ln" => Ok(LogBase::Natural),
            "base2" | "2" | "bits" => Ok(LogBase::Base2),
            other => Err(Error::Parameter(format!("log base {other:?}"))),
        }
    }
}

/// How per-image IoU is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// IoU of the hand class only.
    #[default]
    Hand,
    /// Mean of hand-class and background-class IoU.
    TwoClass,
}

impl fmt::Display for IouMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouMode::Hand => "hand",
            IouMode::TwoClass => "two_class",
        })
    }
}

impl FromStr for IouMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand" => Ok(IouMode::Hand),
            "two_class" | "two-class" => Ok(IouMode::TwoClass),
            other => Err(Error::Parameter(format!("iou mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub log_base: LogBase,
    pub tau: f64,
    pub iou_mode: IouMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            log_base: LogBase::Natural,
            tau: DEFAULT_TAU,
            iou_mode: IouMode::Hand,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        fusion::check_tau(self.tau)
    }
}

/// Per-image accuracy and uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub iou: f64,
    pub e_bar: f64,
    /// Undefined (None) exactly when the image has no hand pixels.
    pub e_hand: Option<f64>,
    pub n_h: u64,
}

#[inline]
fn entropy_nats(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (-p).ln_1p();
    }
    h.clamp(0.0, LN_2)
}

#[inline]
fn entropy_unchecked(p: f64, base: LogBase) -> f64 {
    base.convert_nats(entropy_nats(p))
}

/// Binary predictive entropy of one hand probability.
pub fn pixel_entropy(p: f64, config: &MetricConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range { index: 0, value: p });
    }
    Ok(entropy_unchecked(p, config.log_base))
}

pub fn entropy_map(map: &ProbabilityMap, config: &MetricConfig) -> EntropyMap {
    let base = config.log_base;
    let values = map.values();
    let mut out = vec![0.0; values.len()];
    par::fill(&mut out, |start, chunk| {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = entropy_unchecked(values[start + i], base);
        }
    });
    EntropyMap::from_trusted(map.dims(), base, out)
}

/// Checked variant for raw probability slices; reports the first bad pixel.
pub fn entropy_values(dims: Dims, values: &[f64], config: &MetricConfig) -> Result<EntropyMap> {
    let map = ProbabilityMap::new(dims, values.to_vec())?;
    Ok(entropy_map(&map, config))
}

/// Image-mean entropy Ē.
pub fn mean_entropy(emap: &EntropyMap) -> f64 {
    let values = emap.values();
    let sum = par::chunked_sum(values.len(), |r| {
        let mut s = 0.0;
        for &v in &values[r] {
            s += v;
        }
        s
    });
    (sum / values.len() as f64).min(emap.base().max_entropy())
}

/// Hand-region entropy Ē_h; `None` when the ground truth has no hand pixels.
pub fn hand_entropy(emap: &EntropyMap, gt: &GroundTruthMask) -> Result<Option<f64>> {
    emap.dims().ensure_same(gt.dims())?;
    let values = emap.values();
    let hand = gt.values();
    let n_h = gt.hand_count();
    if n_h == 0 {
        return Ok(None);
    }
    let sum = par::chunked_sum(values.len(), |r| {
        let mut s = 0.0;
        for i in r {
            if hand[i] {
                s += values[i];
            }
        }
        s
    });
    Ok(Some((sum / n_h as f64).min(emap.base().max_entropy())))
}

/// Confusion counts for the hand class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count(pred: &PredictionMask, gt: &GroundTruthMask) -> Result<Self> {
        gt.dims().ensure_same(pred.dims())?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.values().iter().zip(gt.values()) {
            c.add(p, g);
        }
        Ok(c)
    }

    #[inline]
    fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn hand_iou(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn background_iou(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp + self.fn_)
    }

    pub fn iou(&self, mode: IouMode) -> f64 {
        match mode {
            IouMode::Hand => self.hand_iou(),
            IouMode::TwoClass => 0.5 * (self.hand_iou() + self.background_iou()),
        }
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Hand-class IoU; two empty masks score 1.0.
pub fn iou(pred: &PredictionMask, gt: &GroundTruthMask) -> Result<f64> {
    Ok(Confusion::count(pred, gt)?.hand_iou())
}

/// Mean of hand and background IoU.
pub fn two_class_iou(pred: &PredictionMask, gt: &GroundTruthMask) -> Result<f64> {
    Ok(Confusion::count(pred, gt)?.iou(IouMode::TwoClass))
}

pub fn mean_iou(records: &[ImageMetrics]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let sum = records.iter().fold(0.0, |acc, m| acc + m.iou);
    Ok(sum / records.len() as f64)
}

#[derive(Default)]
struct Partial {
    sum_e: f64,
    sum_eh: f64,
    confusion: Confusion,
}

/// Fuse, threshold, entropy and all per-image metrics in one pass over the pixels.
///
/// Produces bit-identical results to chaining `fuse`, `threshold`, `entropy_map`,
/// `mean_entropy`, `hand_entropy` and `iou`.
pub fn evaluate_image(
    ensemble: &EnsembleSet,
    gt: &GroundTruthMask,
    config: &MetricConfig,
) -> Result<ImageMetrics> {
    config.validate()?;
    ensemble.dims().ensure_same(gt.dims())?;
    let n = gt.dims().len();
    let slices = ensemble.slices();
    let hand = gt.values();
    let base = config.log_base;
    let tau = config.tau;

    let partials = par::chunk_partials(n, |r| {
        let mut acc = Partial::default();
        for i in r {
            let p = ensemble.fused_at(&slices, i);
            let e = entropy_unchecked(p, base);
            acc.sum_e += e;
            if hand[i] {
                acc.sum_eh += e;
            }
            acc.confusion.add(p >= tau, hand[i]);
        }
        acc
    });

    let mut sum_e = 0.0;
    let mut sum_eh = 0.0;
    let mut confusion = Confusion::default();
    for p in &partials {
        sum_e += p.sum_e;
        sum_eh += p.sum_eh;
        confusion.merge(&p.confusion);
    }
    let n_h = confusion.tp + confusion.fn_;
    let max = base.max_entropy();
    Ok(ImageMetrics {
        iou: confusion.iou(config.iou_mode),
        e_bar: (sum_e / n as f64).min(max),
        e_hand: (n_h > 0).then(|| (sum_eh / n_h as f64).min(max)),
        n_h,
    })
}

/// The same metrics computed by materializing every intermediate raster.
pub fn evaluate_image_staged(
    ensemble: &EnsembleSet,
    gt: &GroundTruthMask,
    config: &MetricConfig,
) -> Result<ImageMetrics> {
    config.validate()?;
    ensemble.dims().ensure_same(gt.dims())?;
    let fused = fusion::fuse(ensemble);
    let pred = fusion::threshold(&fused, config.tau)?;
    let emap = entropy_map(&fused, config);
    Ok(ImageMetrics {
        iou: Confusion::count(&pred, gt)?.iou(config.iou_mode),
        e_bar: mean_entropy(&emap),
        e_hand: hand_entropy(&emap, gt)?,
        n_h: gt.hand_count(),
    })
}
