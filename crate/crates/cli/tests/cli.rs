use std::path::Path;
use std::process::{Command, Output};

use vargnet::weights::seeded_uniform;
use vargnet::{NetworkGraph, SchedulePlan, Tensor, TensorShape};

fn vargnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vargnet"))
        .args(args)
        .env_remove("VARGNET_THREADS")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_input(path: &Path, c: usize, h: usize, w: usize) {
    let shape = TensorShape::new(1, c, h, w).unwrap();
    Tensor::from_vec(shape, seeded_uniform(3, shape.numel(), 1.0))
        .unwrap()
        .write_vgt1(std::fs::File::create(path).unwrap())
        .unwrap();
}

#[test]
fn summarize_formats() {
    let text = stdout(&vargnet(&["summarize", "--version", "v2", "--scale", "0.25", "--group", "4"]));
    assert!(text.contains("vargnet_v2_x0.25_g4"));
    assert!(text.contains("36.15M"));

    let json = stdout(&vargnet(&["summarize", "--version", "v2", "--scale", "0.25", "--group", "4", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["max_stage_channels"], 64);
    assert_eq!(v["total_madds"], 36_147_200);

    let csv = stdout(&vargnet(&["summarize", "--version", "v1", "--scale", "1", "--group", "8", "--format", "csv"]));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "layer_id,block_id,kind,k,stride,c_in,c_out,groups,madds,params,intensity"
    );
    assert_eq!(lines.next().unwrap().split(',').nth(2), Some("conv"));
}

#[test]
fn config_errors_exit_2() {
    let out = vargnet(&["summarize", "--version", "v1", "--scale", "1", "--group", "7"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not divide"), "{err}");

    for args in [
        &["export", "--version", "v9"][..],
        &["summarize", "--scale", "0.3"],
        &["schedule", "--budget", "lots"],
        &["frobnicate"],
    ] {
        assert_eq!(vargnet(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn schedule_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let plan = |budget: &str| -> SchedulePlan {
        let path = dir.path().join(format!("plan-{budget}.json"));
        let p = path.to_str().unwrap();
        stdout(&vargnet(&["schedule", "--version", "v2", "--scale", "1", "--group", "8", "--budget", budget, "--format", "json", "--out", p]));
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
    };
    let zero = plan("0");
    let fused = plan("262144");
    let all = plan("inf");
    assert!(fused.total_offchip_traffic_bytes <= zero.total_offchip_traffic_bytes);
    assert!(zero.groups.iter().all(|g| g.first_layer == g.last_layer || g.weight_bytes == 0));
    assert_eq!(all.groups.len(), 1);

    let text = stdout(&vargnet(&["schedule", "--version", "v2", "--scale", "0.25", "--budget", "65536"]));
    assert!(text.lines().next().unwrap().contains("budget 64.0 KiB"));
    let csv = stdout(&vargnet(&["schedule", "--version", "v2", "--scale", "0.25", "--format", "csv"]));
    assert!(csv.starts_with("group,first_layer,last_layer,weight_bytes"));
}

#[test]
fn export_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v1.json");
    let p = path.to_str().unwrap();
    stdout(&vargnet(&["export", "--version", "v1", "--scale", "1", "--group", "8", "--out", p]));
    let net = NetworkGraph::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(net.conv_layers().count(), 46);

    let again = dir.path().join("again.json");
    let a = again.to_str().unwrap();
    stdout(&vargnet(&["export", "--graph", p, "--out", a]));
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let direct = stdout(&vargnet(&["summarize", "--version", "v1", "--scale", "1", "--group", "8", "--format", "json"]));
    let loaded = stdout(&vargnet(&["summarize", "--graph", p, "--format", "json"]));
    assert_eq!(direct, loaded);

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(vargnet(&["summarize", "--graph", p]).status.code(), Some(3));
    let missing = dir.path().join("missing.json");
    assert_eq!(vargnet(&["summarize", "--graph", missing.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn infer_small_network() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.vgt");
    write_input(&input, 3, 32, 32);
    let i = input.to_str().unwrap();
    let base = ["infer", "--version", "v2", "--scale", "0.25", "--group", "8", "--classes", "10", "--input-size", "32", "32", "--input", i];

    let out_path = dir.path().join("y.vgt");
    let mut args = base.to_vec();
    args.extend(["--out", out_path.to_str().unwrap()]);
    let first = stdout(&vargnet(&args));
    assert!(first.contains("output 1x10x1x1"));
    let y = Tensor::read_vgt1(std::fs::File::open(&out_path).unwrap()).unwrap().unwrap();
    assert_eq!(y.shape(), TensorShape::new(1, 10, 1, 1).unwrap());
    let sum_line = first.lines().find(|l| l.starts_with("checksum")).unwrap();
    assert!(sum_line.ends_with(&format!("{:016x}", vargnet::checksum(&y))));

    assert_eq!(stdout(&vargnet(&base)), first);

    let mut other_seed = base.to_vec();
    other_seed.extend(["--seed", "7"]);
    assert_ne!(stdout(&vargnet(&other_seed)), first);

    let naive_path = dir.path().join("naive.vgt");
    let mut naive = base.to_vec();
    naive.extend(["--oracle", "--out", naive_path.to_str().unwrap()]);
    stdout(&vargnet(&naive));
    let z = Tensor::read_vgt1(std::fs::File::open(&naive_path).unwrap()).unwrap().unwrap();
    for (a, b) in y.data().iter().zip(z.data()) {
        assert!((a - b).abs() <= 1e-3);
    }
}

#[test]
fn infer_with_exported_weights() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.vgt");
    write_input(&input, 3, 32, 32);
    let weights = dir.path().join("w.vgt");
    let net = ["--version", "v1", "--scale", "0.25", "--group", "4", "--classes", "5", "--input-size", "32", "32"];

    let mut export = vec!["export"];
    export.extend(net);
    export.extend(["--seed", "9", "--weights-out", weights.to_str().unwrap()]);
    stdout(&vargnet(&export));

    let mut from_file = vec!["infer"];
    from_file.extend(net);
    from_file.extend(["--input", input.to_str().unwrap(), "--weights", weights.to_str().unwrap()]);
    let mut seeded = vec!["infer"];
    seeded.extend(net);
    seeded.extend(["--input", input.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(stdout(&vargnet(&from_file)), stdout(&vargnet(&seeded)));

    // truncated weights file
    let bytes = std::fs::read(&weights).unwrap();
    std::fs::write(&weights, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(vargnet(&from_file).status.code(), Some(3));
}

#[test]
fn infer_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let wrong = dir.path().join("wrong.vgt");
    write_input(&wrong, 3, 40, 40);
    let net = ["infer", "--version", "v2", "--scale", "0.25", "--input-size", "32", "32", "--input"];

    let mut args = net.to_vec();
    args.push(wrong.to_str().unwrap());
    assert_eq!(vargnet(&args).status.code(), Some(2));

    let garbage = dir.path().join("garbage.vgt");
    std::fs::write(&garbage, b"VGT2 nonsense").unwrap();
    let mut args = net.to_vec();
    args.push(garbage.to_str().unwrap());
    assert_eq!(vargnet(&args).status.code(), Some(3));
}

#[test]
fn thread_env_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_vargnet"))
        .args(["summarize", "--scale", "0.25"])
        .env("VARGNET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_lists_every_scale() {
    let text = stdout(&vargnet(&["table", "--version", "v2", "--group", "8"]));
    assert_eq!(text.lines().count(), 1 + 8);
    let csv = stdout(&vargnet(&["table", "--version", "v1", "--group", "4", "--format", "csv"]));
    assert_eq!(csv.lines().count(), 1 + 7);
}
