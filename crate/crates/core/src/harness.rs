//! Manifest-driven evaluation runs and per-condition reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::EnsembleSet;
use crate::manifest::{DatasetManifest, ManifestItem};
use crate::metrics::{self, ImageMetrics, IouMode, LogBase, MetricConfig};
use crate::par;
use crate::raster;
use crate::taxonomy::{
    classify, Background, ConditionTagSet, DistributionKind, DistributionLabel, ScenarioProfile,
    View,
};

/// One evaluated image under one training profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub profile: String,
    pub label: DistributionLabel,
    pub tags: ConditionTagSet,
    pub metrics: ImageMetrics,
}

/// Records of one run together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub config: MetricConfig,
    pub records: Vec<EvalRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub error: String,
}

impl RecordSet {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("records serialize");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: invalid record file: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record failing items and continue instead of aborting.
    pub skip_errors: bool,
}

pub fn load_ensemble(manifest: &DatasetManifest, item: &ManifestItem) -> Result<EnsembleSet> {
    let maps = item
        .learner_map_paths
        .iter()
        .map(|p| raster::read_pmap(manifest.resolve(p)))
        .collect::<Result<Vec<_>>>()?;
    let mut ids = manifest.learner_labels();
    if ids.len() != maps.len() {
        ids = (0..maps.len()).map(|k| format!("learner-{k}")).collect();
    }
    EnsembleSet::new(maps, ids)
}

fn evaluate_item(
    manifest: &DatasetManifest,
    item: &ManifestItem,
    config: &MetricConfig,
) -> Result<ImageMetrics> {
    let gt = raster::read_mask(manifest.resolve(&item.gt_mask_path))?;
    let ensemble = load_ensemble(manifest, item)?;
    metrics::evaluate_image(&ensemble, &gt, config)
}

/// Evaluates every item once and labels it under each profile.
///
/// Records are ordered by profile, then manifest item order, independent of worker count.
pub fn run_evaluation_profiles(
    manifest: &DatasetManifest,
    profiles: &[ScenarioProfile],
    config: &MetricConfig,
    options: RunOptions,
) -> Result<RecordSet> {
    config.validate()?;
    let results = par::map(&manifest.items, |item| {
        evaluate_item(manifest, item, config).map_err(|e| e.in_item(&item.id))
    });

    let mut evaluated = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (item, result) in manifest.items.iter().zip(results) {
        match result {
            Ok(m) => evaluated.push((item, m)),
            Err(e) if options.skip_errors => failures.push(ItemFailure {
                item_id: item.id.clone(),
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }

    let mut records = Vec::with_capacity(evaluated.len() * profiles.len());
    for profile in profiles {
        for (item, m) in &evaluated {
            records.push(EvalRecord {
                item_id: item.id.clone(),
                profile: profile.name.clone(),
                label: classify(&item.tags, profile),
                tags: item.tags,
                metrics: *m,
            });
        }
    }
    Ok(RecordSet {
        config: *config,
        records,
        failures,
    })
}

pub fn run_evaluation(
    manifest: &DatasetManifest,
    profile: &ScenarioProfile,
    config: &MetricConfig,
    options: RunOptions,
) -> Result<RecordSet> {
    run_evaluation_profiles(manifest, std::slice::from_ref(profile), config, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Profile,
    Kind,
    Condition,
    Background,
    View,
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "profile" => Ok(GroupKey::Profile),
            "kind" | "id_ood" => Ok(GroupKey::Kind),
            "condition" => Ok(GroupKey::Condition),
            "background" => Ok(GroupKey::Background),
            "view" => Ok(GroupKey::View),
            other => Err(Error::Parameter(format!("group key {other:?}"))),
        }
    }
}

/// Parses a comma-separated grouping spec such as `profile,kind,condition`.
pub fn parse_group_by(spec: &str) -> Result<Vec<GroupKey>> {
    let keys = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<GroupKey>>>()?;
    let mut unique = keys.clone();
    unique.sort_by_key(|k| *k as u8);
    unique.dedup();
    if unique.len() != keys.len() {
        return Err(Error::Parameter(format!(
            "group spec {spec:?} repeats a key"
        )));
    }
    Ok(keys)
}

/// Per-profile ID/OOD rows by condition.
pub const ID_OOD_LAYOUT: [GroupKey; 3] = [GroupKey::Profile, GroupKey::Kind, GroupKey::Condition];
/// Per-profile rows by condition and background.
pub const BACKGROUND_LAYOUT: [GroupKey; 3] =
    [GroupKey::Profile, GroupKey::Condition, GroupKey::Background];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub profile: String,
    pub id_ood: String,
    pub condition: String,
    pub n_images: usize,
    pub avg_miou: f64,
    pub avg_e_bar: f64,
    /// Absent when every image in the group has zero hand pixels.
    pub avg_e_hand: Option<f64>,
    pub n_zero_hand_excluded: usize,
}

/// Report rows plus the run settings needed to read them.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub iou_mode: IouMode,
    pub log_base: LogBase,
    pub rows: Vec<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupSortKey {
    profile: Option<usize>,
    kind: Option<DistributionKind>,
    condition: Option<(bool, bool, bool, bool)>,
    background: Option<Background>,
    view: Option<View>,
}

fn group_key(rec: &EvalRecord, keys: &[GroupKey], profile_rank: usize) -> GroupSortKey {
    let has = |k| keys.contains(&k);
    GroupSortKey {
        profile: has(GroupKey::Profile).then_some(profile_rank),
        kind: has(GroupKey::Kind).then_some(rec.label.kind),
        condition: has(GroupKey::Condition).then(|| rec.tags.row_order()),
        background: has(GroupKey::Background).then_some(rec.tags.background),
        view: has(GroupKey::View).then_some(rec.tags.view),
    }
}

const ALL: &str = "all";

/// Groups records and averages each group.
///
/// Ē_h is averaged over images with hand pixels only; the rest are counted
/// in `n_zero_hand_excluded`.
pub fn aggregate(records: &[EvalRecord], group_by: &[GroupKey]) -> Result<Vec<ConditionReport>> {
    if records.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let mut profile_order: Vec<&str> = Vec::new();
    for r in records {
        if !profile_order.contains(&r.profile.as_str()) {
            profile_order.push(&r.profile);
        }
    }

    let mut groups: BTreeMap<GroupSortKey, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let rank = profile_order.iter().position(|p| *p == r.profile).unwrap();
        groups
            .entry(group_key(r, group_by, rank))
            .or_default()
            .push(r);
    }

    let mut out = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let first = members[0];
        let metrics: Vec<ImageMetrics> = members.iter().map(|r| r.metrics).collect();
        let n = metrics.len();
        let avg_miou = metrics::mean_iou(&metrics)?;
        let avg_e_bar = metrics.iter().fold(0.0, |acc, m| acc + m.e_bar) / n as f64;
        let hands: Vec<f64> = metrics.iter().filter_map(|m| m.e_hand).collect();
        let avg_e_hand = (!hands.is_empty())
            .then(|| hands.iter().fold(0.0, |acc, v| acc + v) / hands.len() as f64);

        let mut condition_parts = Vec::new();
        if key.condition.is_some() {
            condition_parts.push(first.tags.condition_label());
        }
        if let Some(b) = key.background {
            condition_parts.push(b.to_string());
        }
        if let Some(v) = key.view {
            condition_parts.push(v.to_string());
        }
        out.push(ConditionReport {
            profile: key
                .profile
                .map_or(ALL.to_string(), |_| first.profile.clone()),
            id_ood: key.kind.map_or(ALL.to_string(), |k| k.to_string()),
            condition: if condition_parts.is_empty() {
                ALL.to_string()
            } else {
                condition_parts.join(" / ")
            },
            n_images: n,
            avg_miou,
            avg_e_bar,
            avg_e_hand,
            n_zero_hand_excluded: n - hands.len(),
        });
    }
    Ok(out)
}

pub fn build_report(set: &RecordSet, group_by: &[GroupKey]) -> Result<Report> {
    Ok(Report {
        iou_mode: set.config.iou_mode,
        log_base: set.config.log_base,
        rows: aggregate(&set.records, group_by)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Parameter(format!("report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    /// Guesses the format from an output file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ReportFormat::Csv),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

pub const COLUMNS: [&str; 8] = [
    "profile",
    "id_ood",
    "condition",
    "n_images",
    "avg_miou",
    "avg_e_bar",
    "avg_e_hand",
    "n_zero_hand_excluded",
];

fn miou_column(mode: IouMode) -> &'static str {
    match mode {
        IouMode::Hand => "avg_miou",
        IouMode::TwoClass => "avg_miou_two_class",
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn fixed_number(v: f64) -> serde_json::Value {
    let rounded: f64 = fixed(v).parse().expect("fixed-point text parses");
    serde_json::json!(rounded)
}

fn header(mode: IouMode) -> Vec<&'static str> {
    let mut cols = COLUMNS.to_vec();
    cols[4] = miou_column(mode);
    cols
}

fn row_cells(r: &ConditionReport, missing: &str) -> Vec<String> {
    vec![
        r.profile.clone(),
        r.id_ood.clone(),
        r.condition.clone(),
        r.n_images.to_string(),
        fixed(r.avg_miou),
        fixed(r.avg_e_bar),
        r.avg_e_hand.map_or(missing.to_string(), fixed),
        r.n_zero_hand_excluded.to_string(),
    ]
}

/// Renders report rows with a fixed column order and 6-decimal values.
pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header(report.iou_mode))
                .expect("in-memory write");
            for r in &report.rows {
                w.write_record(row_cells(r, "")).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            let cols = header(report.iou_mode);
            let _ = writeln!(
                s,
                "IoU: {}; entropy log base: {}",
                match report.iou_mode {
                    IouMode::Hand => "hand class, mean over images",
                    IouMode::TwoClass =>
                        "two-class (mean of hand and background IoU), mean over images",
                },
                report.log_base
            );
            s.push('\n');
            let _ = writeln!(s, "| {} |", cols.join(" | "));
            let align: Vec<&str> = cols
                .iter()
                .enumerate()
                .map(|(i, _)| if i < 3 { "---" } else { "---:" })
                .collect();
            let _ = writeln!(s, "| {} |", align.join(" | "));
            for r in &report.rows {
                let _ = writeln!(s, "| {} |", row_cells(r, "n/a").join(" | "));
            }
            s
        }
        ReportFormat::Json => {
            let miou_key = miou_column(report.iou_mode);
            let rows: Vec<serde_json::Value> = report
                .rows
                .iter()
                .map(|r| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("profile".into(), r.profile.clone().into());
                    obj.insert("id_ood".into(), r.id_ood.clone().into());
                    obj.insert("condition".into(), r.condition.clone().into());
                    obj.insert("n_images".into(), r.n_images.into());
                    obj.insert(miou_key.into(), fixed_number(r.avg_miou));
                    obj.insert("avg_e_bar".into(), fixed_number(r.avg_e_bar));
                    obj.insert(
                        "avg_e_hand".into(),
                        r.avg_e_hand.map_or(serde_json::Value::Null, fixed_number),
                    );
                    obj.insert("n_zero_hand_excluded".into(), r.n_zero_hand_excluded.into());
                    serde_json::Value::Object(obj)
                })
                .collect();
            let doc = serde_json::json!({
                "iou_mode": report.iou_mode,
                "log_base": report.log_base,
                "rows": rows,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::validate_manifest;
    use crate::raster::{write_mask, write_pmap, Dims, GroundTruthMask};
    use crate::taxonomy::{builtin_profile, builtin_profiles, UncertaintyKind};

    fn tags(label: &str) -> ConditionTagSet {
        ConditionTagSet::parse_label(label, Background::Cluttered, View::Side).unwrap()
    }

    fn record(label: &str, iou: f64, e_hand: Option<f64>) -> EvalRecord {
        EvalRecord {
            item_id: format!("{label}-{iou}"),
            profile: "HAGS".into(),
            label: classify(&tags(label), &builtin_profile("HAGS").unwrap()),
            tags: tags(label),
            metrics: ImageMetrics {
                iou,
                e_bar: 0.1,
                e_hand,
                n_h: u64::from(e_hand.is_some()),
            },
        }
    }

    #[test]
    fn single_group_average() {
        let recs = [record("O1", 0.2, Some(0.3)), record("O1", 0.4, Some(0.5))];
        let rows = aggregate(&recs, &ID_OOD_LAYOUT).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].avg_miou - 0.3).abs() < 1e-15);
        assert!((rows[0].avg_e_hand.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(rows[0].id_ood, "ID");
    }

    #[test]
    fn all_zero_hand_group() {
        let recs = [record("O2", 1.0, None), record("O2", 1.0, None)];
        let rows = aggregate(&recs, &ID_OOD_LAYOUT).unwrap();
        assert_eq!(rows[0].avg_e_hand, None);
        assert_eq!(rows[0].n_zero_hand_excluded, 2);
        assert_eq!(rows[0].n_images, 2);
    }

    #[test]
    fn partial_exclusion() {
        let recs = [record("O1", 0.5, None), record("O1", 0.5, Some(0.2))];
        let rows = aggregate(&recs, &ID_OOD_LAYOUT).unwrap();
        assert_eq!(rows[0].avg_e_hand, Some(0.2));
        assert_eq!(rows[0].n_zero_hand_excluded, 1);
    }

    #[test]
    fn empty_records() {
        assert!(matches!(
            aggregate(&[], &ID_OOD_LAYOUT),
            Err(Error::EmptyAggregate)
        ));
    }

    #[test]
    fn rows_follow_table_layout() {
        let mut recs = Vec::new();
        for label in ["O1+MBN", "O2+GH+RG", "O2+RG", "O2+GH", "O1+GH", "O2", "O1"] {
            recs.push(record(label, 0.5, Some(0.1)));
        }
        let rows = aggregate(&recs, &ID_OOD_LAYOUT).unwrap();
        let got: Vec<_> = rows
            .iter()
            .map(|r| (r.id_ood.as_str(), r.condition.as_str()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("ID", "O1"),
                ("ID", "O1+GH"),
                ("OOD", "O2"),
                ("OOD", "O2+GH"),
                ("OOD", "O2+RG"),
                ("OOD", "O2+GH+RG"),
                ("OOD", "O1+MBN"),
            ]
        );
        assert_eq!(rows.iter().map(|r| r.n_images).sum::<usize>(), recs.len());
    }

    #[test]
    fn background_layout_and_ungrouped_columns() {
        let mut a = record("O1", 0.2, Some(0.1));
        a.tags.background = Background::Simple;
        let b = record("O1", 0.4, Some(0.1));
        let rows = aggregate(&[b, a], &BACKGROUND_LAYOUT).unwrap();
        assert_eq!(rows[0].condition, "O1 / simple");
        assert_eq!(rows[1].condition, "O1 / cluttered");
        assert_eq!(rows[0].id_ood, "all");
        let rows = aggregate(&[record("O1", 0.2, None)], &[]).unwrap();
        assert_eq!(
            (rows[0].profile.as_str(), rows[0].condition.as_str()),
            ("all", "all")
        );
    }

    #[test]
    fn group_spec_parsing() {
        assert_eq!(
            parse_group_by("profile,id_ood,condition").unwrap(),
            ID_OOD_LAYOUT.to_vec()
        );
        assert!(parse_group_by("profile,profile").is_err());
        assert!(parse_group_by("colour").is_err());
    }

    fn sample_report() -> Report {
        let recs = [
            record("O1", 0.2, Some(0.3)),
            record("O1", 0.4, Some(0.5)),
            record("O2", 1.0 / 3.0, None),
        ];
        Report {
            iou_mode: IouMode::Hand,
            log_base: LogBase::Natural,
            rows: aggregate(&recs, &ID_OOD_LAYOUT).unwrap(),
        }
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let report = sample_report();
        let text = render_report(&report, ReportFormat::Csv);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(
            rd.headers().unwrap().iter().collect::<Vec<_>>(),
            COLUMNS.to_vec()
        );
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), report.rows.len());
        for (row, r) in rows.iter().zip(&report.rows) {
            let miou: f64 = row[4].parse().unwrap();
            assert_eq!(row[4].len() - row[4].find('.').unwrap() - 1, 6);
            assert!((miou - r.avg_miou).abs() <= 5e-7);
            assert_eq!(row[6].is_empty(), r.avg_e_hand.is_none());
        }
        assert_eq!(&rows[1][4], "0.333333");
    }

    #[test]
    fn one_report_one_row() {
        let mut report = sample_report();
        report.rows.truncate(1);
        let text = render_report(&report, ReportFormat::Csv);
        assert_eq!(text.lines().count(), 2);
        let md = render_report(&report, ReportFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with("| HAGS")).count(), 1);
    }

    #[test]
    fn markdown_matches_json_numbers() {
        let report = sample_report();
        let md = render_report(&report, ReportFormat::Markdown);
        let json: serde_json::Value =
            serde_json::from_str(&render_report(&report, ReportFormat::Json)).unwrap();
        let md_rows: Vec<Vec<&str>> = md
            .lines()
            .filter(|l| l.starts_with("| HAGS"))
            .map(|l| l.trim_matches('|').split('|').map(str::trim).collect())
            .collect();
        let json_rows = json["rows"].as_array().unwrap();
        assert_eq!(md_rows.len(), json_rows.len());
        for (m, j) in md_rows.iter().zip(json_rows) {
            for (col, idx) in [("avg_miou", 4), ("avg_e_bar", 5), ("avg_e_hand", 6)] {
                match j[col].as_f64() {
                    Some(v) => assert_eq!(m[idx].parse::<f64>().unwrap(), v),
                    None => assert_eq!(m[idx], "n/a"),
                }
            }
            assert_eq!(m[2], j["condition"].as_str().unwrap());
        }
    }

    #[test]
    fn two_class_mode_is_labeled() {
        let mut report = sample_report();
        report.iou_mode = IouMode::TwoClass;
        assert!(render_report(&report, ReportFormat::Csv)
            .starts_with("profile,id_ood,condition,n_images,avg_miou_two_class,"));
        assert!(render_report(&report, ReportFormat::Markdown).contains("two-class"));
        assert!(render_report(&report, ReportFormat::Json).contains("avg_miou_two_class"));
    }

    fn write_manifest(dir: &Path, n: usize) -> DatasetManifest {
        let d = Dims::new(6, 5).unwrap();
        let mut items = Vec::new();
        for i in 0..n {
            let mut bits = vec![false; d.len()];
            for (j, b) in bits.iter_mut().enumerate() {
                *b = (j + i) % 3 == 0;
            }
            if i == 0 {
                bits.fill(false);
            }
            let gt = GroundTruthMask::new(d, bits).unwrap();
            let id = format!("img{i}");
            write_mask(&gt, dir.join(format!("{id}.png"))).unwrap();
            let mut paths = Vec::new();
            for k in 0..2 {
                let p = format!("{id}.k{k}.pmap");
                write_pmap(&gt.to_probability_map(), dir.join(&p)).unwrap();
                paths.push(p.into());
            }
            let label = ["O1", "O2", "O1+GH", "O1+MBN"][i % 4];
            items.push(ManifestItem {
                id,
                image_path: None,
                gt_mask_path: format!("img{i}.png").into(),
                learner_map_paths: paths,
                tags: tags(label),
            });
        }
        let mut m = DatasetManifest::new(items);
        m.base_dir = dir.to_path_buf();
        m
    }

    #[test]
    fn perfect_learners_score_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), 8);
        assert!(validate_manifest(&m).is_empty());
        let set = run_evaluation_profiles(
            &m,
            &builtin_profiles(),
            &MetricConfig::default(),
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(set.records.len(), 8 * 4);
        let report = build_report(&set, &ID_OOD_LAYOUT).unwrap();
        for r in &report.rows {
            assert_eq!(r.avg_miou, 1.0);
            assert_eq!(r.avg_e_bar, 0.0);
            assert_eq!(r.avg_e_hand.unwrap_or(0.0), 0.0);
        }
        let per_profile: usize = report
            .rows
            .iter()
            .filter(|r| r.profile == "HAGS")
            .map(|r| r.n_images)
            .sum();
        assert_eq!(per_profile, 8);
        let mbn = set.records.iter().find(|r| r.tags.motion_blur).unwrap();
        assert_eq!(mbn.label.uncertainty, UncertaintyKind::Aleatoric);
    }

    #[test]
    fn deterministic_across_runs_and_workers() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), 6);
        let hags = builtin_profile("HAGS").unwrap();
        let run = |jobs| {
            par::with_jobs(jobs, || {
                run_evaluation(&m, &hags, &MetricConfig::default(), RunOptions::default())
                    .unwrap()
                    .to_json()
            })
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(4));
    }

    #[test]
    fn fail_fast_and_skip_mode() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), 3);
        fs::remove_file(dir.path().join("img1.k1.pmap")).unwrap();
        let hags = builtin_profile("HAGS").unwrap();
        let err =
            run_evaluation(&m, &hags, &MetricConfig::default(), RunOptions::default()).unwrap_err();
        assert!(matches!(&err, Error::Item { id, .. } if id == "img1"));
        let set = run_evaluation(
            &m,
            &hags,
            &MetricConfig::default(),
            RunOptions { skip_errors: true },
        )
        .unwrap();
        assert_eq!(set.records.len(), 2);
        assert_eq!(set.failures.len(), 1);
        assert_eq!(set.failures[0].item_id, "img1");
    }

    #[test]
    fn record_set_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), 2);
        let set = run_evaluation(
            &m,
            &builtin_profile("EgoHands").unwrap(),
            &MetricConfig::default(),
            RunOptions::default(),
        )
        .unwrap();
        let path = dir.path().join("records.json");
        fs::write(&path, set.to_json()).unwrap();
        assert_eq!(RecordSet::load(&path).unwrap(), set);
    }
}
