use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segrank::micronet::{save_checkpoint, NetKind, Network, NetworkSpec};

fn segrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// Small dataset plus an untrained 2D checkpoint.
fn fixture(dir: &Path) {
    let data = dir.join("data");
    ok(&segrank(&["datagen", "--n-train", "4", "--n-val", "6", "--seed", "3", "--ppm", "--out", p(&data)]));
    let net = Network::init_weights(
        NetworkSpec {
            kind: NetKind::Net2D,
            num_classes: 4,
        },
        5,
    )
    .unwrap();
    save_checkpoint(&net, dir.join("model")).unwrap();
}

#[test]
fn unknown_flag_is_usage_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let res = segrank(&["datagen", "--bogus", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!res.stderr.is_empty());
    assert!(!out.exists());

    let res = segrank(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let res = segrank(&[
        "segment",
        "--in",
        p(&dir.path().join("missing.ppm")),
        "--out",
        p(&dir.path().join("seg.stf")),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!dir.path().join("seg.stf").exists());
}

#[test]
fn help_documents_defaults() {
    let res = segrank(&["segment", "--help"]);
    ok(&res);
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("[default: 0.3]"), "{text}");
    assert!(text.contains("--max-dist"));
}

#[test]
fn datagen_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&segrank(&["datagen", "--n-train", "8", "--n-val", "4", "--seed", "9", "--json", "--out", p(d)]));
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("kind = shapes-2d"));
    assert!(manifest.contains("train = 8"));
    assert_eq!(header(&a.join("train/labels.csv")), "index,input,mask,label,mask_b,label_b");
    assert!(a.join("val/labels.json").exists());
    assert_eq!(fs::read_to_string(a.join("val/labels.csv")).unwrap().lines().count(), 5);
    for f in ["train/000003.stf", "train/000003.mask.stf", "val/labels.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn segment_writes_map_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let img = dir.path().join("data/val/000000.ppm");
    let seg = dir.path().join("seg.stf");
    let res = segrank(&["segment", "--in", p(&img), "--algo", "quickshift", "--seed", "7", "--out", p(&seg)]);
    ok(&res);
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed = 7"));
    let map = segrank::segmentation::SegmentMap::load(&seg).unwrap();
    assert_eq!(map.shape(), &[64, 64]);
    assert!(map.n_segments() > 1);
    let preview = segrank::ppm::read_ppm(dir.path().join("seg.ppm")).unwrap();
    assert_eq!(preview.shape(), &[3, 64, 64]);

    let again = dir.path().join("again.stf");
    ok(&segrank(&["segment", "--in", p(&img), "--algo", "quickshift", "--seed", "7", "--out", p(&again)]));
    assert_eq!(fs::read(&seg).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let img = dir.path().join("data/val/000001.stf");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# slic settings\nalgo = slic\nk = 9\nseed = 4\n").unwrap();
    let seg = dir.path().join("seg.stf");
    let res = segrank(&["segment", "--config", p(&cfg), "--in", p(&img), "--k", "16", "--out", p(&seg)]);
    ok(&res);
    let banner = String::from_utf8_lossy(&res.stderr);
    assert!(banner.contains("algo = slic"), "{banner}");
    assert!(banner.contains("k = 16"), "{banner}");
    assert!(banner.contains("seed = 4"), "{banner}");

    fs::write(&cfg, "no-such-key = 1\n").unwrap();
    let res = segrank(&["segment", "--config", p(&cfg), "--in", p(&img), "--out", p(&seg)]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn explain_and_lime_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let img = dir.path().join("data/val/000002.ppm");
    let model = dir.path().join("model");
    let ex = dir.path().join("ex");
    ok(&segrank(&[
        "explain", "--model", p(&model), "--in", p(&img), "--method", "guided-grad-cam", "--json", "--out", p(&ex),
    ]));
    assert_eq!(header(&ex.join("ranking.csv")), "segment_id,weight,rank");
    for f in ["saliency.stf", "segments.stf", "heatmap.ppm", "overlay.ppm", "explanation.ppm", "ranking.json"] {
        assert!(ex.join(f).exists(), "{f}");
    }

    let lime = dir.path().join("lime");
    ok(&segrank(&[
        "lime", "--model", p(&model), "--in", p(&img), "--samples", "40", "--segments", p(&ex.join("segments.stf")),
        "--out", p(&lime),
    ]));
    assert_eq!(header(&lime.join("coefficients.csv")), "segment_id,coefficient,rank");
    assert!(lime.join("overlay.ppm").exists());
}

#[test]
fn pipeline_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let common = ["--model", p(&model), "--data", p(&data), "--limit", "4"];

    let del = dir.path().join("deletion.csv");
    let mut args = vec!["eval-deletion"];
    args.extend(common);
    args.extend(["--methods", "grad-cam,vanilla", "--random-repeats", "2", "--json", "--out", p(&del)]);
    ok(&segrank(&args));
    assert_eq!(header(&del), "method,order,mean_fraction,n");
    assert_eq!(fs::read_to_string(&del).unwrap().lines().count(), 7);
    assert!(dir.path().join("deletion.json").exists());

    let topk = dir.path().join("topk.csv");
    let mut args = vec!["eval-topk"];
    args.extend(common);
    args.extend(["--methods", "grad-cam", "--baseline-samples", "30", "--ks", "1,2", "--out", p(&topk)]);
    ok(&segrank(&args));
    assert_eq!(header(&topk), "method,k,agreement,n");

    let bench = dir.path().join("bench.csv");
    let mut args = vec!["bench"];
    args.extend(common);
    args.extend(["--methods", "vanilla", "--lime-samples", "10", "--warmup", "1", "--out", p(&bench)]);
    let res = segrank(&args);
    ok(&res);
    assert_eq!(header(&bench), "method,n_inputs,mean_seconds");
    assert_eq!(fs::read_to_string(&bench).unwrap().lines().count(), 3);
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&segrank(&["datagen", "--n-train", "16", "--n-val", "8", "--out", p(&data)]));
    let model = dir.path().join("model");
    ok(&segrank(&["train", "--data", p(&data), "--epochs", "1", "--out", p(&model)]));
    assert!(model.join("manifest.txt").exists());
    assert_eq!(header(&model.join("metrics.csv")), "epoch,train_loss,train_accuracy,val_accuracy");
    segrank::micronet::load_checkpoint(&model).unwrap();
}
