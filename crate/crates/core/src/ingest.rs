//! From raw captures to manifests: annotation import, frame de-duplication
//! and balanced per-condition sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::ImageReader;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SamplingRecord};
use crate::par;
use crate::raster::{self, Dims, GroundTruthMask};
use crate::rng::SeededRng;

/// The only accepted region label.
pub const HAND_LABEL: &str = "hand";

pub const SAMPLER: &str = "handuq-sample/chacha8-fisher-yates/v1";

#[derive(Debug, Deserialize)]
struct Task {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    data: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

#[derive(Debug, Deserialize)]
struct Annotation {
    #[serde(default)]
    was_cancelled: bool,
    #[serde(default)]
    result: Vec<Region>,
}

#[derive(Debug, Deserialize)]
struct Region {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    original_width: Option<u32>,
    #[serde(default)]
    original_height: Option<u32>,
    #[serde(default)]
    value: RegionValue,
}

#[derive(Debug, Default, Deserialize)]
struct RegionValue {
    #[serde(default)]
    points: Vec<[f64; 2]>,
    #[serde(default)]
    polygonlabels: Vec<String>,
    #[serde(default)]
    brushlabels: Vec<String>,
    #[serde(default)]
    rle: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportedMask {
    pub image_id: String,
    pub mask_path: PathBuf,
    pub hand_pixels: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ImportReport {
    pub masks: Vec<ImportedMask>,
    pub warnings: Vec<String>,
}

fn image_ref(task: &Task) -> Option<&str> {
    task.data
        .get("image")
        .or_else(|| task.data.values().find(|v| v.is_string()))
        .and_then(|v| v.as_str())
}

fn image_id(task: &Task) -> Result<String> {
    if let Some(stem) = image_ref(task)
        .and_then(|r| Path::new(r.split('?').next().unwrap_or(r)).file_stem())
        .and_then(|s| s.to_str())
    {
        return Ok(stem.to_string());
    }
    match &task.id {
        Some(id) => Ok(format!("task-{}", id.to_string().trim_matches('"'))),
        None => Err(Error::Format(
            "task has neither an image reference nor an id".into(),
        )),
    }
}

fn task_dims(task: &Task, regions: &[Region], search: &[&Path]) -> Result<Dims> {
    if let Some(r) = regions
        .iter()
        .find(|r| r.original_width.is_some() && r.original_height.is_some())
    {
        return Dims::new(r.original_width.unwrap(), r.original_height.unwrap());
    }
    // No regions carry the image size: read it from the referenced image.
    let reference = image_ref(task).ok_or_else(|| {
        Error::Format("task without regions has no image reference to size its mask".into())
    })?;
    let given = PathBuf::from(reference);
    let mut candidates = vec![given.clone()];
    if let Some(name) = given.file_name() {
        candidates.extend(search.iter().map(|dir| dir.join(name)));
    }
    for c in &candidates {
        if c.is_file() {
            return raster::read_image_dims(c);
        }
    }
    Err(Error::Format(format!(
        "cannot size mask for {reference:?}: no region dimensions and image not found"
    )))
}

fn check_labels(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Label(String::new()));
    }
    match labels.iter().find(|l| !l.eq_ignore_ascii_case(HAND_LABEL)) {
        Some(other) => Err(Error::Label(other.clone())),
        None => Ok(()),
    }
}

/// Polygon vertex from percent-of-dimension coordinates, rounded half-up to the pixel grid.
fn to_grid(pct: f64, size: u32) -> i64 {
    (pct / 100.0 * f64::from(size) + 0.5).floor() as i64
}

fn orientation(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i64 {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).signum()
}

fn segments_cross(a: (i64, i64), b: (i64, i64), c: (i64, i64), d: (i64, i64)) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0 {
        return true;
    }
    let on = |p: (i64, i64), q: (i64, i64), r: (i64, i64)| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    (o1 == 0 && on(a, b, c))
        || (o2 == 0 && on(a, b, d))
        || (o3 == 0 && on(c, d, a))
        || (o4 == 0 && on(c, d, b))
}

/// True when two non-adjacent edges of the closed polygon touch.
pub fn self_intersects(vertices: &[(i64, i64)]) -> bool {
    let n = vertices.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Sets every pixel whose center lies inside the polygon under the even-odd rule.
pub fn fill_polygon(mask: &mut [bool], dims: Dims, vertices: &[(i64, i64)]) {
    let n = vertices.len();
    if n < 3 {
        return;
    }
    let w = dims.width as usize;
    for y in 0..dims.height as usize {
        let cy = y as f64 + 0.5;
        // Crossings of the scanline through the pixel centers.
        let mut xs = Vec::new();
        for i in 0..n {
            let (x0, y0) = (vertices[i].0 as f64, vertices[i].1 as f64);
            let (x1, y1) = (
                vertices[(i + 1) % n].0 as f64,
                vertices[(i + 1) % n].1 as f64,
            );
            if (y0 <= cy) != (y1 <= cy) {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        // A center is inside when an odd number of crossings lie strictly to its right.
        for xc in xs {
            let end = ((xc - 0.5).ceil() as i64).min(w as i64);
            for x in 0..end.max(0) {
                mask[y * w + x as usize] ^= true;
            }
        }
    }
}

/// Decodes a brush region's run-length payload into per-pixel RGBA bytes.
pub fn decode_brush_rle(rle: &[u8]) -> Result<Vec<u8>> {
    struct Bits<'a> {
        data: &'a [u8],
        pos: usize,
    }
    impl Bits<'_> {
        fn read(&mut self, n: usize) -> Result<u64> {
            let mut v = 0u64;
            for _ in 0..n {
                let byte = *self
                    .data
                    .get(self.pos / 8)
                    .ok_or_else(|| Error::Format("brush RLE ends early".into()))?;
                let bit = (byte >> (7 - self.pos % 8)) & 1;
                v = (v << 1) | u64::from(bit);
                self.pos += 1;
            }
            Ok(v)
        }
    }
    let mut bits = Bits { data: rle, pos: 0 };
    let total = bits.read(32)? as usize;
    let word_size = bits.read(5)? as usize + 1;
    let mut run_sizes = [0usize; 4];
    for s in &mut run_sizes {
        *s = bits.read(4)? as usize + 1;
    }
    let mut out = vec![0u8; total];
    let mut i = 0;
    while i < total {
        let repeat = bits.read(1)? == 1;
        let size_class = bits.read(2)? as usize;
        let j = i + 1 + bits.read(run_sizes[size_class])? as usize;
        if j > total {
            return Err(Error::Format("brush RLE run overflows the image".into()));
        }
        if repeat {
            let v = bits.read(word_size)? as u8;
            out[i..j].fill(v);
            i = j;
        } else {
            while i < j {
                out[i] = bits.read(word_size)? as u8;
                i += 1;
            }
        }
    }
    Ok(out)
}

fn rasterize_task(
    task: &Task,
    search: &[&Path],
    warnings: &mut Vec<String>,
) -> Result<(String, GroundTruthMask)> {
    let id = image_id(task)?;
    let regions: &[Region] = task
        .annotations
        .iter()
        .find(|a| !a.was_cancelled)
        .map(|a| a.result.as_slice())
        .unwrap_or(&[]);
    let dims = task_dims(task, regions, search)?;
    let mut mask = vec![false; dims.len()];
    for (r_idx, region) in regions.iter().enumerate() {
        if let (Some(w), Some(h)) = (region.original_width, region.original_height) {
            dims.ensure_same(Dims::new(w, h)?)?;
        }
        match region.kind.as_str() {
            "polygonlabels" => {
                check_labels(&region.value.polygonlabels)?;
                let vertices: Vec<(i64, i64)> = region
                    .value
                    .points
                    .iter()
                    .map(|[x, y]| (to_grid(*x, dims.width), to_grid(*y, dims.height)))
                    .collect();
                if self_intersects(&vertices) {
                    warnings.push(format!(
                        "{id}: polygon {r_idx} self-intersects; filled with the even-odd rule"
                    ));
                }
                let mut poly = vec![false; dims.len()];
                fill_polygon(&mut poly, dims, &vertices);
                for (m, p) in mask.iter_mut().zip(poly) {
                    *m |= p;
                }
            }
            "brushlabels" => {
                check_labels(&region.value.brushlabels)?;
                let rgba = decode_brush_rle(&region.value.rle)?;
                if rgba.len() != dims.len() * 4 {
                    return Err(Error::Format(format!(
                        "{id}: brush region decodes to {} bytes, expected {}",
                        rgba.len(),
                        dims.len() * 4
                    )));
                }
                for (m, px) in mask.iter_mut().zip(rgba.chunks_exact(4)) {
                    *m |= px[3] > 0;
                }
            }
            other => {
                return Err(Error::Format(format!(
                    "{id}: unsupported region type {other:?}"
                )))
            }
        }
    }
    Ok((id, GroundTruthMask::new(dims, mask)?))
}

/// Rasterizes a labeling-tool JSON export into one 0/255 PNG mask per image.
///
/// Polygons: vertices are percent-of-dimension coordinates, rounded half-up to
/// pixel-grid corners; a pixel is hand when its center is inside under the
/// even-odd rule. Brush regions: run-length RGBA, hand where alpha is non-zero.
/// Images without regions get an all-background mask; their size comes from
/// the referenced image, looked up as given and then by file name in
/// `image_dir` and next to the export.
pub fn import_annotations(
    export_file: &Path,
    out_dir: &Path,
    image_dir: Option<&Path>,
) -> Result<ImportReport> {
    let text = fs::read_to_string(export_file).map_err(|e| Error::io(export_file, e))?;
    let tasks: Vec<Task> = serde_json::from_str(&text).map_err(|e| {
        Error::Format(format!(
            "{}: not an annotation export: {e}",
            export_file.display()
        ))
    })?;
    let export_dir = export_file.parent().unwrap_or(Path::new("."));
    let mut search: Vec<&Path> = image_dir.into_iter().collect();
    search.push(export_dir);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let rasterized = par::map(&tasks, |task| {
        let mut warnings = Vec::new();
        rasterize_task(task, &search, &mut warnings).map(|r| (r, warnings))
    });

    let mut report = ImportReport::default();
    let mut seen = HashSet::new();
    for result in rasterized {
        let ((id, mask), warnings) = result?;
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!(
                "image {id:?} appears twice in export"
            )));
        }
        let mask_path = out_dir.join(format!("{id}.png"));
        raster::write_mask(&mask, &mask_path)?;
        report.warnings.extend(warnings);
        report.masks.push(ImportedMask {
            image_id: id,
            mask_path,
            hand_pixels: mask.hand_count(),
        });
    }
    Ok(report)
}

fn luminance(path: &Path) -> Result<(Dims, Vec<f32>)> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))?
        .into_rgb8();
    let dims = Dims::new(img.width(), img.height())?;
    // Rec. 709 luma, normalized to [0, 1].
    let luma = img
        .pixels()
        .map(|p| {
            (0.2126 * f32::from(p[0]) + 0.7152 * f32::from(p[1]) + 0.0722 * f32::from(p[2])) / 255.0
        })
        .collect();
    Ok((dims, luma))
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    let sum = par::chunked_sum(a.len(), |r| {
        a[r.clone()]
            .iter()
            .zip(&b[r])
            .map(|(x, y)| f64::from((x - y).abs()))
            .sum()
    });
    sum / a.len() as f64
}

/// Greedy near-duplicate filter: keeps a frame when its mean absolute
/// luminance difference from the last kept frame is at least `min_difference`.
/// The first frame is always kept. Returns indices into `frames`.
pub fn select_frames(frames: &[PathBuf], min_difference: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&min_difference) {
        return Err(Error::Parameter(format!(
            "min_difference = {min_difference}"
        )));
    }
    let mut kept = Vec::new();
    let mut last: Option<(Dims, Vec<f32>)> = None;
    for (i, path) in frames.iter().enumerate() {
        let (dims, luma) = luminance(path)?;
        let keep = match &last {
            None => true,
            Some((d, prev)) => {
                d.ensure_same(dims)?;
                mean_abs_diff(prev, &luma) >= min_difference
            }
        };
        if keep {
            kept.push(i);
            last = Some((dims, luma));
        }
    }
    Ok(kept)
}

/// Draws exactly `n_per_condition` items from every (condition, background, view) group.
///
/// Groups are visited in table order and each is permuted by a partial
/// Fisher-Yates shuffle from one seeded stream. Selected items keep their
/// manifest order.
pub fn balanced_sample(
    manifest: &DatasetManifest,
    n_per_condition: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, item) in manifest.items.iter().enumerate() {
        let t = item.tags;
        groups
            .entry((t.row_order(), t.background, t.view))
            .or_default()
            .push(i);
    }
    let mut rng = SeededRng::stream(seed, 0);
    let mut chosen = Vec::with_capacity(groups.len() * n_per_condition);
    for (key, mut members) in groups {
        if members.len() < n_per_condition {
            let label = manifest.items[members[0]].tags.condition_label();
            return Err(Error::Sample {
                group: format!("{label} / {} / {}", key.1, key.2),
                size: members.len(),
                needed: n_per_condition,
            });
        }
        rng.partial_shuffle(&mut members, n_per_condition);
        chosen.extend_from_slice(&members[..n_per_condition]);
    }
    chosen.sort_unstable();

    let mut out = manifest.clone();
    out.items = chosen
        .into_iter()
        .map(|i| manifest.items[i].clone())
        .collect();
    out.sampling = Some(SamplingRecord {
        algorithm: SAMPLER.to_string(),
        seed,
        per_group: n_per_condition,
    });
    Ok(out)
}
