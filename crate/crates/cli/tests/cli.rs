use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use imrk_core::cart_geometry::cylinder_shell_phantom;
use imrk_core::volume_io::{read_volume, write_volume, Volume};
use tempfile::TempDir;

fn imrk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imrk"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = imrk(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

/// Rows of a metrics csv class table as `(class, [dice, precision, hd, ahd, ap])`.
fn class_rows(path: &Path) -> Vec<(String, Vec<Option<f64>>)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let vals = f[1..6].iter().map(|s| s.parse().ok()).collect();
            (f[0].to_string(), vals)
        })
        .collect()
}

const SMALL: &[&str] = &[
    "--image-size",
    "64",
    "--crescent-inner",
    "10",
    "--crescent-outer",
    "13",
    "--center-jitter",
    "4",
];

fn small_synth(dir: &Path, out: &str, n: &str) {
    let mut args = vec!["synth", "--n", n, "--seed", "3", "--out", out];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn help_exits_zero_for_every_command() {
    let t = TempDir::new().unwrap();
    for cmd in ["synth", "train", "infer", "eval", "thickness", "label-otsu", "report-cov"] {
        let out = imrk(t.path(), &[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--out"), "{cmd} help lists --out");
    }
    assert!(imrk(t.path(), &["--help"]).status.success());
    assert!(imrk(t.path(), &["--version"]).status.success());
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for t in [&a, &b] {
        ok(t.path(), &["synth", "--n", "3", "--seed", "7", "--out", "data"]);
    }
    let ta = read_tree(&a.path().join("data"));
    assert_eq!(ta, read_tree(&b.path().join("data")));
    let names: Vec<_> = ta.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"manifest.json"));
    let scenes = fs::read_to_string(a.path().join("data/scenes.txt")).unwrap();
    assert_eq!(scenes.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn synth_with_zero_scenes_is_a_usage_error() {
    let t = TempDir::new().unwrap();
    let out = imrk(t.path(), &["synth", "--n", "0", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error kind=usage"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!t.path().join("d").exists());
}

#[test]
fn invalid_scene_geometry_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let out = imrk(
        t.path(),
        &["synth", "--n", "1", "--crescent-inner", "5", "--crescent-outer", "12", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=config"));
}

#[test]
fn train_without_data_fails() {
    let t = TempDir::new().unwrap();
    let out = imrk(t.path(), &["train", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--data"));
}

#[test]
fn missing_input_is_a_data_error() {
    let t = TempDir::new().unwrap();
    let out = imrk(t.path(), &["train", "--data", "nowhere", "--out", "m"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error kind=io"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("run.cfg"), "# synth\nn=2\nseed=11\nout=from_file\n").unwrap();
    ok(t.path(), &["synth", "--config", "run.cfg", "--seed", "12"]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("from_file/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 12);
    assert_eq!(m["settings"]["n"], "2");

    fs::write(t.path().join("bad.cfg"), "n=2\nout=x\ncolour=blue\n").unwrap();
    let out = imrk(t.path(), &["synth", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"));
}

#[test]
fn timing_is_opt_in() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--n", "1", "--out", "a"]);
    ok(t.path(), &["--timing", "synth", "--n", "1", "--out", "b"]);
    let a = fs::read_to_string(t.path().join("a/manifest.json")).unwrap();
    let b = fs::read_to_string(t.path().join("b/manifest.json")).unwrap();
    assert!(!a.contains("wall_clock_ms"));
    assert!(b.contains("wall_clock_ms"));
}

#[test]
fn eval_of_a_dataset_against_itself_is_perfect() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--n", "3", "--seed", "5", "--out", "d"]);
    ok(t.path(), &["eval", "--pred", "d", "--gt", "d", "--units", "mm", "--out", "e"]);
    let rows = class_rows(&t.path().join("e/metrics.csv"));
    assert!(rows.iter().any(|(c, _)| c == "femur-like"));
    for (class, v) in &rows {
        assert_eq!(v[0], Some(1.0), "{class} dice");
        assert_eq!(v[1], Some(1.0), "{class} precision");
        assert_eq!(v[2], Some(0.0), "{class} hausdorff");
        assert_eq!(v[3], Some(0.0), "{class} average hausdorff");
        assert_eq!(v[4], Some(1.0), "{class} ap");
    }
}

#[test]
fn eval_output_does_not_depend_on_job_count() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--n", "4", "--seed", "1", "--out", "a"]);
    ok(t.path(), &["synth", "--n", "4", "--seed", "2", "--out", "b"]);
    ok(t.path(), &["eval", "--pred", "a", "--gt", "b", "--jobs", "1", "--out", "e1"]);
    ok(t.path(), &["eval", "--pred", "a", "--gt", "b", "--jobs", "3", "--out", "e3"]);
    let e1 = fs::read(t.path().join("e1/metrics.csv")).unwrap();
    assert_eq!(e1, fs::read(t.path().join("e3/metrics.csv")).unwrap());
    let rows = class_rows(&t.path().join("e1/metrics.csv"));
    let femur = &rows.iter().find(|(c, _)| c == "femur-like").unwrap().1;
    assert!(femur[0].unwrap() > 0.0 && femur[0].unwrap() < 1.0);

    ok(t.path(), &["eval", "--pred", "a", "--gt", "b", "--format", "json-lines", "--out", "ej"]);
    let jl = fs::read_to_string(t.path().join("ej/metrics.jsonl")).unwrap();
    assert_eq!(jl.lines().count(), rows.len());
}

#[test]
fn report_cov_of_identical_lists_is_zero() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("reader1.csv"), "subject,volume_ml\ns1,1.5\ns2,2.25\ns3,7\n").unwrap();
    fs::write(t.path().join("reader2.txt"), "1.5\n2.25\n7\n").unwrap();
    fs::write(t.path().join("auto.txt"), "1.0\n2.5\n6\n").unwrap();
    ok(
        t.path(),
        &["report-cov", "--volumes-a", "reader1.csv", "--volumes-b", "reader2.txt", "--volumes", "auto.txt", "--out", "c"],
    );
    let text = fs::read_to_string(t.path().join("c/cov.csv")).unwrap();
    let block: Vec<Vec<String>> = text
        .split("\n\n")
        .find(|b| b.starts_with("cov,"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(block[0], ["cov", "reader1", "reader2", "auto"]);
    let m: Vec<Vec<f64>> = block[1..].iter().map(|r| r[1..].iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(m[0][1], 0.0);
    for i in 0..3 {
        assert_eq!(m[i][i], 0.0);
        for j in 0..3 {
            assert_eq!(m[i][j], m[j][i]);
        }
    }
    assert!(m[0][2] > 0.0);
}

#[test]
fn label_otsu_marks_the_bright_voxels_in_the_box() {
    let t = TempDir::new().unwrap();
    let (w, h) = (20, 10);
    let mut values = vec![0.2f32; w * h];
    // bright 3x4 block inside the box, another outside it
    for y in 2..5 {
        for x in 3..7 {
            values[y * w + x] = 0.9;
        }
    }
    values[8 * w + 18] = 0.95;
    let vol = Volume::intensity([w, h, 1], [0.91, 0.91, 3.0], values).unwrap();
    write_volume(&vol, &t.path().join("img.hdr")).unwrap();
    let stdout = ok(t.path(), &["label-otsu", "--intensity", "img.hdr", "--roi-box", "0,0,0.5,0.5", "--out", "o"]);
    let labels = read_volume(&t.path().join("o/effusion_labels.hdr")).unwrap();
    let mask = labels.mask_of(4);
    assert_eq!(mask.count(), 12);
    assert!(mask.get(3, 2, 0) && !mask.get(18, 8, 0));
    let ml = 12.0 * 0.91 * 0.91 * 3.0 / 1000.0;
    assert!(stdout.contains(&format!("volume_ml={ml:.6}")), "{stdout}");

    let bad = imrk(t.path(), &["label-otsu", "--intensity", "img.hdr", "--roi-box", "0.5,0,0.2,1", "--out", "o2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn thickness_of_a_shell_phantom() {
    let t = TempDir::new().unwrap();
    write_volume(&cylinder_shell_phantom(10.0, 12.0, 0.5, 3), &t.path().join("shell.hdr")).unwrap();
    let stdout = ok(t.path(), &["thickness", "--labels", "shell.hdr", "--tissue", "3", "--bone", "1", "--out", "th"]);
    let mean: f64 = stdout
        .split_whitespace()
        .find_map(|f| f.strip_prefix("mean_mm="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 2.0).abs() <= 0.25, "{mean}");
    let pgm = fs::read(t.path().join("th/thickness.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    let csv = fs::read_to_string(t.path().join("th/thickness.csv")).unwrap();
    let header = csv.lines().find(|l| l.starts_with("slice,")).unwrap();
    assert_eq!(header.split(',').count(), 361);
}

#[test]
fn train_infer_eval_pipeline_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for t in [&a, &b] {
        let p = t.path();
        small_synth(p, "data", "2");
        ok(p, &["train", "--data", "data", "--epochs", "2", "--seed", "4", "--out", "model"]);
        ok(p, &["infer", "--checkpoint", "model/model.ckpt", "--in", "data", "--score-threshold", "0.05", "--out", "pred"]);
        ok(p, &["eval", "--pred", "pred", "--gt", "data", "--out", "eval"]);
    }
    for dir in ["model", "pred", "eval"] {
        assert_eq!(read_tree(&a.path().join(dir)), read_tree(&b.path().join(dir)), "{dir}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("model/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["settings"]["lr"], "0.001");
    assert_eq!(m["settings"]["head"], "improved");
    let loss = fs::read_to_string(a.path().join("model/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,total,l_cls,l_bbox,l_mask"));
    assert_eq!(loss.lines().count(), 3);
}

#[test]
fn infer_rejects_an_image_of_the_wrong_size() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    small_synth(p, "data", "1");
    ok(p, &["train", "--data", "data", "--epochs", "1", "--out", "model"]);
    ok(p, &["synth", "--n", "1", "--out", "big"]);
    let out = imrk(p, &["infer", "--checkpoint", "model/model.ckpt", "--in", "big/scene_000.hdr", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=config"));
}
