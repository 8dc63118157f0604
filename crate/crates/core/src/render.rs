//! Visual outputs: entropy heatmaps and TP/FP/FN overlays.

use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{Dims, EntropyMap, GroundTruthMask, PredictionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    /// `[0, max entropy]` maps to `[0, 255]`; comparable across images.
    #[default]
    Fixed,
    /// Per-image min..max stretch.
    MinMax,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Scale::Fixed),
            "minmax" | "min-max" => Ok(Scale::MinMax),
            _ => Err(Error::Parameter(format!(
                "scale {s:?} (expected fixed or minmax)"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Fixed => "fixed",
            Scale::MinMax => "minmax",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub image: GrayImage,
    pub warnings: Vec<String>,
}

pub fn render_entropy(emap: &EntropyMap, scale: Scale) -> Heatmap {
    let dims = emap.dims();
    let values = emap.values();
    let mut warnings = Vec::new();
    let (lo, hi) = match scale {
        Scale::Fixed => (0.0, emap.base().max_entropy()),
        Scale::MinMax => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            }),
    };
    let flat = hi <= lo;
    if flat && scale == Scale::MinMax {
        warnings.push(format!(
            "entropy is constant ({lo:.6}); min-max heatmap rendered as mid-gray"
        ));
    }
    let bytes = values
        .iter()
        .map(|&v| {
            if flat {
                128
            } else {
                (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
            }
        })
        .collect();
    let image =
        GrayImage::from_raw(dims.width, dims.height, bytes).expect("buffer matches dimensions");
    Heatmap { image, warnings }
}

const STOPS: [(u8, [u8; 3]); 5] = [
    (0, [0, 0, 4]),
    (64, [87, 16, 110]),
    (128, [188, 55, 84]),
    (192, [249, 142, 9]),
    (255, [252, 255, 164]),
];

const fn build_colormap() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        let mut s = 0;
        while s + 2 < STOPS.len() && i > STOPS[s + 1].0 as usize {
            s += 1;
        }
        let (a, ca) = STOPS[s];
        let (b, cb) = STOPS[s + 1];
        let span = (b - a) as i32;
        let t = i as i32 - a as i32;
        let mut c = 0;
        while c < 3 {
            let d = cb[c] as i32 - ca[c] as i32;
            lut[i][c] = (ca[c] as i32 + (d * t + span / 2).div_euclid(span)) as u8;
            c += 1;
        }
        i += 1;
    }
    lut
}

/// 256-entry dark-to-bright lookup table for colored heatmaps.
pub const COLORMAP: [[u8; 3]; 256] = build_colormap();

pub fn colorize(gray: &GrayImage) -> RgbImage {
    RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let Luma([v]) = *gray.get_pixel(x, y);
        Rgb(COLORMAP[v as usize])
    })
}

pub const TP_COLOR: [u8; 3] = [0, 200, 0];
pub const FP_COLOR: [u8; 3] = [230, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 90, 255];

pub const LEGEND: &str = "\
true positive (predicted hand, annotated hand): green #00C800
false positive (predicted hand, annotated background): red #E60000
false negative (predicted background, annotated hand): blue #005AFF
true negative: grayscale source image (mid-gray when no image is given)
";

/// Colors TP/FP/FN pixels over a grayscale copy of `image` (or flat gray).
pub fn render_overlay(
    image: Option<&RgbImage>,
    gt: &GroundTruthMask,
    pred: &PredictionMask,
) -> Result<RgbImage> {
    let dims = gt.dims();
    dims.ensure_same(pred.dims())?;
    if let Some(img) = image {
        dims.ensure_same(Dims::new(img.width(), img.height())?)?;
    }
    let w = dims.width as usize;
    let (g, p) = (gt.values(), pred.values());
    Ok(RgbImage::from_fn(dims.width, dims.height, |x, y| {
        let i = y as usize * w + x as usize;
        match (p[i], g[i]) {
            (true, true) => Rgb(TP_COLOR),
            (true, false) => Rgb(FP_COLOR),
            (false, true) => Rgb(FN_COLOR),
            (false, false) => {
                let v = image.map_or(128, |img| {
                    let Rgb([r, gg, b]) = *img.get_pixel(x, y);
                    // Kept away from the saturated category colors.
                    let l = (0.2126 * f64::from(r) + 0.7152 * f64::from(gg) + 0.0722 * f64::from(b))
                        .round() as u8;
                    l / 2 + 64
                });
                Rgb([v, v, v])
            }
        }
    }))
}
