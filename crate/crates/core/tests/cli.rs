use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn horizon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizon")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

const CENTERED: &str = r#"{"text_len":0,"noise_h":4,"noise_w":4,"seed":0,"refs":[{"grid_h":1,"grid_w":1,"category":"dog","box":[0.25,0.25,0.75,0.75]}]}"#;

#[test]
fn mask_build_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "scene.json", CENTERED);
    let (json, pgm, csv) = (dir.path().join("m.json"), dir.path().join("m.pgm"), dir.path().join("ids.csv"));
    let out = horizon(&["mask-build", s(&scene), "--out", s(&json), "--pgm", s(&pgm), "--ids-csv", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["per_ref_patch_counts"], serde_json::json!([4]));
    assert_eq!(stats["ones"], 17 * 17 - 2 * 12);

    let image = fs::read(&pgm).unwrap();
    let header = b"P5\n17 17\n255\n";
    assert_eq!(&image[..header.len()], header);
    let row16 = &image[header.len() + 16 * 17..header.len() + 17 * 17];
    let visible: Vec<usize> = row16.iter().enumerate().filter(|(_, &b)| b == 255).map(|(i, _)| i).collect();
    assert_eq!(visible, vec![5, 6, 9, 10, 16]);

    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(dump["total_len"], 17);
    assert!(fs::read_to_string(&csv).unwrap().ends_with("16,4,4\n"));
}

#[test]
fn mask_build_unconditioned_and_pixels() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "s.json", r#"{"text_len":3,"noise_h":2,"noise_w":2,"seed":0,"refs":[]}"#);
    let out = horizon(&["mask-build", s(&scene)]);
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["ones_fraction"], 1.0);

    let px = write(
        &dir,
        "px.json",
        r#"{"text_len":0,"noise_h":4,"noise_w":4,"seed":0,"refs":[{"grid_h":1,"grid_w":1,"category":"dog","box":[256,256,768,768]}]}"#,
    );
    let out = horizon(&["mask-build", s(&px), "--image-size", "1024x1024"]);
    assert_eq!(out.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["per_ref_patch_counts"], serde_json::json!([4]));
}

#[test]
fn mask_build_rejects_bad_scenes() {
    let dir = TempDir::new().unwrap();
    for (i, text) in [
        "not json",
        r#"{"text_len":0,"noise_h":0,"noise_w":4,"seed":0,"refs":[]}"#,
        r#"{"text_len":0,"noise_h":2,"noise_w":2,"seed":0,"refs":[{"grid_h":1,"grid_w":1,"category":"x","box":[0.5,0,0.5,1]}]}"#,
    ]
    .iter()
    .enumerate()
    {
        let scene = write(&dir, &format!("bad{i}.json"), text);
        assert_eq!(horizon(&["mask-build", s(&scene)]).status.code(), Some(2), "{text}");
    }
    assert_eq!(horizon(&["mask-build", "/nonexistent/scene.json"]).status.code(), Some(2));
}

#[test]
fn dense_limit_env_blocks_large_pgm() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "scene.json", CENTERED);
    let pgm = dir.path().join("m.pgm");
    let out = Command::new(env!("CARGO_BIN_EXE_horizon"))
        .args(["mask-build", s(&scene), "--pgm", s(&pgm)])
        .env("HORIZON_DENSE_LIMIT", "8")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attn_check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    let ok = horizon(&["attn-check", "--trials", "2", "--report", s(&report)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["max_leakage_dev"].as_f64().unwrap() <= 1e-12);
    assert_eq!(r["pass"], true);

    let broken = horizon(&["attn-check", "--trials", "1", "--break-mask"]);
    assert_eq!(broken.status.code(), Some(1));
    let r: serde_json::Value = serde_json::from_slice(&broken.stdout).unwrap();
    assert!(r["counterexample"]["scene"].is_object());
}

#[test]
fn perf_writes_two_lines_per_size() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("perf.jsonl");
    let out = horizon(&["perf", "--sizes", "256,512", "--repeats", "1", "--out", s(&report), "--cpu-pin", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["path"], "dense");
    assert_eq!(lines[1]["path"], "sparse");
    assert_eq!(lines[2]["L"], 512);
    assert!(String::from_utf8_lossy(&out.stdout).contains("speedup="));
}

#[test]
fn perf_skips_sizes_over_the_limit() {
    let out = Command::new(env!("CARGO_BIN_EXE_horizon"))
        .args(["perf", "--sizes", "128,100000", "--repeats", "1"])
        .env("HORIZON_DENSE_LIMIT", "1000")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping L=100000"));
}

#[test]
fn filter_fixture_and_errors() {
    let dir = TempDir::new().unwrap();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scores_400.jsonl");
    let ranked = dir.path().join("ranked.jsonl");
    let out = horizon(&["filter", fixture, "--top-fraction", "0.245", "--out", s(&ranked)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&ranked).unwrap();
    assert_eq!(text.lines().count(), 400);
    assert_eq!(text.lines().filter(|l| l.ends_with("\"kept\":true}")).count(), 98);

    let empty = write(&dir, "empty.jsonl", "");
    let out = horizon(&["filter", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    let bad =
        write(&dir, "bad.jsonl", "{\"pair_id\":\"a\",\"clip_i\":0.5,\"dino\":0.5,\"s_vlm\":1,\"s_ds\":1}\n{oops\n");
    let out = horizon(&["filter", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    assert_eq!(horizon(&["filter", fixture, "--top-k", "3", "--rank-threshold", "5"]).status.code(), Some(2));
    assert_eq!(horizon(&["filter", fixture, "--top-fraction", "1.5"]).status.code(), Some(2));
}

const GT: &str = concat!(
    r#"{"scene_id":"s1","subjects":[{"category":"dog","box":[0.1,0.1,0.5,0.6]}]}"#,
    "\n",
    r#"{"scene_id":"m1","subjects":[{"category":"cat","box":[0.0,0.2,0.4,0.7]},{"category":"vase","box":[0.5,0.1,0.9,0.8]}]}"#,
    "\n"
);

#[test]
fn bench_self_detection_and_errors() {
    let dir = TempDir::new().unwrap();
    let gt = write(&dir, "gt.jsonl", GT);
    let report = dir.path().join("report.json");
    let out = horizon(&["bench", s(&gt), s(&gt), "--out", s(&report), "--method", "self"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["iou_mean", "miou", "ap", "ap50", "ap70"] {
        assert_eq!(r[key], 1.0, "{key}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("| self "));

    let partial = write(&dir, "det.jsonl", GT.lines().nth(1).unwrap());
    let out = horizon(&["bench", s(&gt), s(&partial)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scenes without detections: 1"));

    let stranger = write(&dir, "x.jsonl", r#"{"scene_id":"zz","detections":[]}"#);
    assert_eq!(horizon(&["bench", s(&gt), s(&stranger)]).status.code(), Some(2));
}

#[test]
fn bench_gen_counts_and_bad_constraints() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("gt.jsonl");
    let out = horizon(&["bench-gen", "--seed", "3", "--out", s(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 548);
    assert_eq!(text.lines().filter(|l| l.contains("\"single_")).count(), 252);

    assert_eq!(horizon(&["bench-gen", "--min-area", "0.9"]).status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "scene.json", CENTERED);
    let gt = write(&dir, "gt.jsonl", GT);
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scores_400.jsonl");
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let p = |n: &str| dir.path().join(format!("{tag}_{n}"));
        let mut outs = vec![
            horizon(&[
                "mask-build",
                s(&scene),
                "--out",
                s(&p("m.json")),
                "--pgm",
                s(&p("m.pgm")),
                "--ids-csv",
                s(&p("ids.csv")),
            ])
            .stdout,
            horizon(&["attn-check", "--trials", "1", "--report", s(&p("r.json"))]).stdout,
            horizon(&["filter", fixture, "--out", s(&p("f.jsonl"))]).stdout,
            horizon(&["bench", s(&gt), s(&gt), "--out", s(&p("b.json"))]).stdout,
            horizon(&["bench-gen", "--single", "10", "--multi", "10", "--out", s(&p("g.jsonl"))]).stdout,
        ];
        for f in ["m.json", "m.pgm", "ids.csv", "r.json", "f.jsonl", "b.json", "g.jsonl"] {
            outs.push(fs::read(p(f)).unwrap());
        }
        outs
    };
    assert_eq!(run("a"), run("b"));
}
