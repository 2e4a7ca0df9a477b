use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sylva_core::data::fixture::ANNOTATED_COUNTS;
use sylva_core::imageio::save_rgb;
use sylva_core::Tensor64;

fn sylva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sylva"))
        .args(args)
        .env_remove("SYLVA_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
preset = "feature-recognition"
image_size = 16
widths = [4, 8]

[train]
epochs = 2
batch_size = 4
mu = 2
tau = 0.6

[split]
test = { count = 8 }
validation = { count = 8 }
labelled_fraction = 0.5
"#;

/// 40 annotated research images over four species (leaf boxes on even
/// indices, bark boxes on odd ones) and 20 unannotated need-ID images.
fn fixture(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    for i in 0..60 {
        let id = format!("img{i}");
        let mut data = Vec::with_capacity(20 * 20 * 3);
        for y in 0..20 {
            for x in 0..20 {
                let v = ((x * (i % 5 + 1) + y * (i % 3)) % 11) as f64 / 10.0;
                data.extend([v, 1.0 - v, (i % 2) as f64]);
            }
        }
        save_rgb(&Tensor64::new(vec![20, 20, 3], data).unwrap(), &dir.join(format!("{id}.png"))).unwrap();
        let species = ANNOTATED_COUNTS[i % 4].0;
        let line = if i < 40 {
            let class = if i % 2 == 0 { "simple leaf" } else { "bark" };
            format!(
                r#"{{"id":"{id}","path":"{id}.png","species":"{species}","grade":"research","annotations":[{{"class":"{class}","xmin":2,"ymin":2,"xmax":18,"ymax":18}}]}}"#
            )
        } else {
            format!(r#"{{"id":"{id}","path":"{id}.png","species":"{species}","grade":"needID"}}"#)
        };
        lines.push(line);
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    manifest
}

fn train_feature(dir: &Path, feature: &str, out: &Path, extra: &[&str]) -> Output {
    let manifest = dir.join("manifest.jsonl");
    let cfg = dir.join("tiny.toml");
    let mut args = vec![
        "train-feature",
        "--config",
        p(&cfg),
        "--manifest",
        p(&manifest),
        "--feature",
        feature,
        "--mode",
        "ssl-influence",
        "--seed",
        "3",
        "--data-root",
        p(dir),
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    sylva(&args)
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let grades = ["research", "casual", "needID", "research", "research", "casual", "needID", "research", "research", "needID"];
    let text: String = grades
        .iter()
        .enumerate()
        .map(|(i, g)| format!("{{\"id\":\"{i}\",\"path\":\"{i}.jpg\",\"species\":\"S{}\",\"grade\":\"{g}\"}}\n", i % 3))
        .collect();
    let m = dir.path().join("m.jsonl");
    std::fs::write(&m, text).unwrap();
    let out = dir.path().join("out");
    let o = sylva(&["ingest", p(&m), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("8 retained, 2 dropped"));
    assert!(out.join("manifest.jsonl").is_file());

    std::fs::write(&m, "{\"id\":\"a\",\"path\":\"a\",\"species\":\"S\",\"grade\":\"research\"}\nnot json\n").unwrap();
    let o = sylva(&["ingest", p(&m), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn schedule_dump_values() {
    let o = sylva(&["schedule-dump", "--steps", "4"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let eta: Vec<f64> = out.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let expected = [5.0, 4.267766952966369, 2.5, 0.7322330470336313, 0.0];
    for (a, b) in eta.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{out}");
    }
    assert!(out.lines().nth(1).unwrap().ends_with(",0.1"));
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 1.0\n").unwrap();
    let o = sylva(&["schedule-dump", "--steps", "4", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = sylva(&["eval", "--run", p(&dir.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = sylva(&["schedule-dump", "--mode", "ssl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn feature_workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = fixture(d);
    let leaves = d.join("leaves");
    let o = train_feature(d, "leaves", &leaves, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("train: 20") && out.contains("test: 8") && out.contains("unlabelled: 20"), "{out}");
    assert!(out.contains("test top-1"));
    let metrics = std::fs::read_to_string(leaves.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 10);

    // Identical re-run overwrites with identical bytes.
    let again = d.join("again");
    assert!(train_feature(d, "leaves", &again, &[]).status.success());
    for f in ["metrics.csv", "checkpoint/model.sylv", "checkpoint/momentum.sylv", "checkpoint/lambda.bin", "checkpoint/cta.json"] {
        assert_eq!(std::fs::read(leaves.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    // Stop and resume reproduces the uninterrupted run.
    let resumed = d.join("resumed");
    assert!(train_feature(d, "leaves", &resumed, &["--stop-after", "4"]).status.success());
    assert_eq!(std::fs::read_to_string(resumed.join("metrics.csv")).unwrap().lines().count(), 5);
    let o = train_feature(d, "leaves", &resumed, &["--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "checkpoint/model.sylv", "checkpoint/lambda.bin"] {
        assert_eq!(std::fs::read(leaves.join(f)).unwrap(), std::fs::read(resumed.join(f)).unwrap(), "{f}");
    }

    let o = sylva(&["eval", "--run", p(&leaves), "--split", "test"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("(8 examples)"));
    assert!(leaves.join("eval/test.json").is_file());

    let saliency = d.join("saliency");
    let o = sylva(&["explain", "--run", p(&leaves), "--image", p(&d.join("img0.png")), "--out", p(&saliency)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(saliency.join("img0_saliency.csv")).unwrap();
    assert!(saliency.join("img0_saliency.png").is_file());
    for v in csv.lines().flat_map(|l| l.split(',')) {
        let v: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let bark = d.join("bark");
    assert!(train_feature(d, "bark", &bark, &[]).status.success());
    let part = d.join("partition");
    let o = sylva(&[
        "predict-features",
        "--leaves",
        p(&leaves),
        "--bark",
        p(&bark),
        "--manifest",
        p(&manifest),
        "--data-root",
        p(d),
        "--out",
        p(&part),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let count = |prefix: &str, field: usize| -> usize {
        let line = out.lines().find(|l| l.starts_with(prefix)).unwrap();
        line.split([':', ',']).nth(field).unwrap().split_whitespace().next().unwrap().parse().unwrap()
    };
    let routed_leaves = count("leaves", 1) + count("leaves", 2);
    let routed_bark = count("bark", 1) + count("bark", 2);
    let excluded = count("excluded", 1);
    assert!(routed_leaves <= 60 && routed_bark <= 60);
    assert!(routed_leaves.max(routed_bark) + excluded <= 60);
    assert!(routed_leaves + routed_bark + excluded >= 60);

    // Swapped runs are rejected.
    let o = sylva(&["predict-features", "--leaves", p(&bark), "--bark", p(&leaves), "--manifest", p(&manifest), "--out", p(&part)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn species_datasets_and_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let part = d.join("partition");
    std::fs::create_dir_all(&part).unwrap();
    let mut labelled = Vec::new();
    for i in 0..40 {
        labelled.push(serde_json::json!([format!("img{i}"), format!("img{i}.png"), ANNOTATED_COUNTS[i % 4].0]));
    }
    let unlabelled: Vec<_> = (40..60).map(|i| serde_json::json!({"id": format!("img{i}"), "path": format!("img{i}.png")})).collect();
    let ds = serde_json::json!({"labelled": labelled, "unlabelled": unlabelled});
    std::fs::write(part.join("leaves.json"), ds.to_string()).unwrap();

    let species = d.join("species");
    let o = sylva(&[
        "build-species-datasets",
        "--partition",
        p(&part),
        "--feature",
        "leaves",
        "--labelled-fraction",
        "0.5",
        "--seed",
        "1",
        "--out",
        p(&species),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Balanced 20% test (2 per species), 10% validation, 50% train capped at the remainder.
    let out = stdout(&o);
    for line in ["train: 20", "validation: 4", "test: 8", "unlabelled: 20"] {
        assert!(out.contains(line), "{out}");
    }
    let test_ids = std::fs::read_to_string(species.join("test.txt")).unwrap();
    assert_eq!(test_ids.lines().count(), 8);

    let cfg = d.join("species.toml");
    std::fs::write(&cfg, TINY.replace("feature-recognition", "species-classification").replace("[split]\ntest = { count = 8 }\nvalidation = { count = 8 }\nlabelled_fraction = 0.5\n", "")).unwrap();
    let run = d.join("run");
    let o = sylva(&[
        "train-species",
        "--config",
        p(&cfg),
        "--dataset",
        p(&species),
        "--feature",
        "leaves",
        "--mode",
        "ssl-fixed",
        "--data-root",
        p(d),
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("species leaves: test top-1"));

    let edges = d.join("edges.csv");
    std::fs::write(&edges, format!("species_a,species_b\n{},{}\n", ANNOTATED_COUNTS[0].0, ANNOTATED_COUNTS[1].0)).unwrap();
    let o = sylva(&["eval", "--run", p(&run), "--split", "validation", "--groups", p(&edges)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("eval/validation.json")).unwrap()).unwrap();
    assert_eq!(report["group_names"].as_array().unwrap().len(), 3);
}
