use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn handuq(args: &[&str]) -> Output {
    handuq_env(args, None)
}

fn handuq_env(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handuq"));
    cmd.args(args).env_remove("HANDUQ_CONFIG");
    if let Some(c) = config {
        cmd.env("HANDUQ_CONFIG", c);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("data");
    ok(&handuq(&[
        "synth",
        "--seed",
        seed,
        "--per-condition",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]));
    out
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

#[test]
fn synth_twice_gives_identical_trees() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = tree(&synth(a.path(), "7"));
    let tb = tree(&synth(b.path(), "7"));
    assert!(ta.len() > 24 * 4);
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    assert_ne!(ta, tree(&synth(c.path(), "8")));
}

#[test]
fn eval_hags_csv_has_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "7");
    let report = dir.path().join("report.csv");
    ok(&handuq(&[
        "eval",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--profile",
        "HAGS",
        "--out",
        report.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(report).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let labels: Vec<(&str, &str)> = rows.iter().map(|r| (r[1], r[2])).collect();
    assert_eq!(
        labels,
        [
            ("ID", "O1"),
            ("ID", "O1+GH"),
            ("OOD", "O2"),
            ("OOD", "O2+GH"),
            ("OOD", "O2+RG"),
            ("OOD", "O2+GH+RG"),
            ("OOD", "O1+MBN"),
        ]
    );
    assert!(rows.iter().all(|r| r[0] == "HAGS"));
    // O1 pools the simple and cluttered captures.
    assert_eq!(rows[0][3], "6");
}

#[test]
fn missing_file_exits_1_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3");
    let victim = fs::read_dir(data.join("maps"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    fs::remove_file(&victim).unwrap();
    let out = handuq(&[
        "eval",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing file"), "{err}");
    assert!(
        err.contains(victim.file_name().unwrap().to_str().unwrap()),
        "{err}"
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn usage_and_io_errors_exit_2() {
    assert_eq!(handuq(&["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(handuq(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        handuq(&["eval", "--manifest", "/nonexistent/manifest.json"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("m.json");
    fs::write(&bad, "{\"version\": 99, \"items\": []}").unwrap();
    assert_eq!(
        handuq(&["eval", "--manifest", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn version_lists_pinned_formats() {
    let text = ok(&handuq(&["--version"]));
    assert!(text.contains("handuq-synth/chacha8/v1"), "{text}");
    assert!(text.contains("pmap format: 1"));
    assert!(text.contains("manifest format: 1"));
}

#[test]
fn show_config_defaults_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "1");
    let m = data.join("manifest.json");
    let m = m.to_str().unwrap();
    let defaults = ok(&handuq(&["eval", "--manifest", m, "--show-config"]));
    assert!(defaults.contains("tau = 0.5"));
    assert!(defaults.contains("log_base = natural"));
    assert!(defaults.contains("k = 4"));

    let cfg = dir.path().join("handuq.conf");
    fs::write(&cfg, "# run settings\ntau = 0.6\nlog_base = 2\n").unwrap();
    let from_env = ok(&handuq_env(
        &["eval", "--manifest", m, "--show-config"],
        Some(&cfg),
    ));
    assert!(from_env.contains("tau = 0.6"));
    assert!(from_env.contains("log_base = base2"));

    let flag_wins = ok(&handuq_env(
        &["eval", "--manifest", m, "--show-config", "--tau", "0.7"],
        Some(&cfg),
    ));
    assert!(flag_wins.contains("tau = 0.7"));
    assert!(flag_wins.contains("log_base = base2"));

    let explicit = dir.path().join("other.conf");
    fs::write(&explicit, "tau = 0.4\n").unwrap();
    let config_flag = ok(&handuq_env(
        &[
            "eval",
            "--manifest",
            m,
            "--show-config",
            "--config",
            explicit.to_str().unwrap(),
        ],
        Some(&cfg),
    ));
    assert!(config_flag.contains("tau = 0.4"));
}

#[test]
fn report_reaggregates_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "5");
    let rec = dir.path().join("rec.json");
    let direct = ok(&handuq(&[
        "eval",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--records",
        rec.to_str().unwrap(),
        "--group-by",
        "profile,condition,background",
        "--format",
        "markdown",
    ]));
    let again = ok(&handuq(&[
        "report",
        "--records",
        rec.to_str().unwrap(),
        "--group-by",
        "profile,condition,background",
        "--format",
        "markdown",
    ]));
    assert_eq!(direct, again);
    assert!(direct.contains("| O1 / simple |") || direct.contains("O1 / simple"));
}

#[test]
fn fuse_and_heatmap_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "2");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let item = &manifest["items"][4];
    let id = item["id"].as_str().unwrap();
    let m = data.join("manifest.json");

    let fused = dir.path().join("fused.pmap");
    ok(&handuq(&[
        "fuse",
        "--manifest",
        m.to_str().unwrap(),
        "--item",
        id,
        "--out",
        fused.to_str().unwrap(),
    ]));
    let maps: Vec<String> = item["learner_map_paths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| data.join(p.as_str().unwrap()).to_str().unwrap().to_string())
        .collect();
    let fused2 = dir.path().join("fused2.pmap");
    let mut args = vec!["fuse", "--out", fused2.to_str().unwrap()];
    args.extend(maps.iter().map(String::as_str));
    ok(&handuq(&args));
    assert_eq!(fs::read(&fused).unwrap(), fs::read(&fused2).unwrap());
    assert_eq!(fs::read(&fused).unwrap().len(), 17 + 4 * 64 * 48);

    let out = dir.path().join("heat");
    ok(&handuq(&[
        "heatmap",
        "--manifest",
        m.to_str().unwrap(),
        "--item",
        id,
        "--out",
        out.to_str().unwrap(),
        "--legend",
        "--scale",
        "minmax",
    ]));
    assert!(out.join(format!("{id}-entropy.png")).is_file());
    assert!(out.join(format!("{id}-overlay.png")).is_file());
    assert!(fs::read_to_string(out.join("legend.txt"))
        .unwrap()
        .contains("false negative"));
}

#[test]
fn ingest_import_select_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("export.json");
    fs::write(
        &export,
        r#"[{"id": 1, "data": {"image": "/data/upload/f1.png"},
            "annotations": [{"result": [{"type": "polygonlabels",
              "original_width": 4, "original_height": 4,
              "value": {"points": [[25, 25], [75, 25], [75, 75], [25, 75]], "polygonlabels": ["hand"]}}]}]}]"#,
    )
    .unwrap();
    let masks = dir.path().join("masks");
    ok(&handuq(&[
        "ingest",
        "import",
        "--export",
        export.to_str().unwrap(),
        "--out",
        masks.to_str().unwrap(),
    ]));
    let img = image::open(masks.join("f1.png")).unwrap().into_luma8();
    assert_eq!(img.pixels().filter(|p| p.0[0] == 255).count(), 4);

    fs::write(
        &export,
        r#"[{"id": 1, "data": {"image": "a.png"}, "annotations": [{"result": [{"type": "polygonlabels",
              "original_width": 4, "original_height": 4,
              "value": {"points": [[0, 0], [50, 0], [50, 50]], "polygonlabels": ["arm"]}}]}]}]"#,
    )
    .unwrap();
    let bad = handuq(&[
        "ingest",
        "import",
        "--export",
        export.to_str().unwrap(),
        "--out",
        masks.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let frames: Vec<String> = [10u8, 10, 200, 201]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = dir.path().join(format!("frame{i}.png"));
            image::RgbImage::from_pixel(6, 4, image::Rgb([*v; 3]))
                .save(&p)
                .unwrap();
            p.to_str().unwrap().to_string()
        })
        .collect();
    let mut args = vec!["ingest", "select", "--min-difference", "0.1"];
    args.extend(frames.iter().map(String::as_str));
    let kept = ok(&handuq(&args));
    assert_eq!(
        kept.lines().collect::<Vec<_>>(),
        [frames[0].as_str(), frames[2].as_str()]
    );
    let mut args = vec!["ingest", "select", "--min-difference", "2"];
    args.extend(frames.iter().map(String::as_str));
    assert_eq!(handuq(&args).status.code(), Some(2));

    let data = synth(dir.path(), "4");
    let sampled = dir.path().join("sub/sampled.json");
    ok(&handuq(&[
        "ingest",
        "sample",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--per-condition",
        "2",
        "--seed",
        "11",
        "--out",
        sampled.to_str().unwrap(),
    ]));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&sampled).unwrap()).unwrap();
    assert_eq!(m["items"].as_array().unwrap().len(), 16);
    assert_eq!(m["sampling"]["seed"], 11);
    // Paths still resolve from the new location.
    ok(&handuq(&["eval", "--manifest", sampled.to_str().unwrap()]));
    let too_many = handuq(&[
        "ingest",
        "sample",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--per-condition",
        "4",
        "--out",
        sampled.to_str().unwrap(),
    ]);
    assert_eq!(too_many.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("has 3 items, 4 requested"));
}

#[test]
fn skip_errors_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "6");
    // Corrupt one map so validation passes (file exists, header readable) but decoding fails.
    let victim = fs::read_dir(data.join("maps"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let mut bytes = fs::read(&victim).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
    fs::write(&victim, bytes).unwrap();
    let m = data.join("manifest.json");
    let strict = handuq(&["eval", "--manifest", m.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("out of range"));
    let lenient = handuq(&["eval", "--manifest", m.to_str().unwrap(), "--skip-errors"]);
    assert!(lenient.status.success());
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("skipped"));
}
