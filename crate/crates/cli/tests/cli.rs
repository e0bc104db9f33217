use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nnveil_core::interpreter::nnt::{decode_tensor, encode_tensor};
use nnveil_core::TensorValue;

fn nnveil(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnveil"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = nnveil(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_on_lenet() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["fixture", "lenet", "-o", "lenet.nnm1"], d);
    let argv = ["obfuscate", "lenet.nnm1", "-o", "ob", "--seed", "5", "--n1", "20", "--n2", "20", "--shape", "random"];
    ok(&argv, d);
    for f in ["model.nnm1", "bundle.obfb", "plan.json"] {
        assert!(d.join("ob").join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(d.join("ob/plan.json")).unwrap().contains("warning"));

    let err = ok(&["compare", "lenet.nnm1", "ob/model.nnm1", "--bundle", "ob/bundle.obfb", "-n", "1000"], d);
    assert_eq!(err.trim(), "0");

    let dump = ok(&["dump", "ob/model.nnm1"], d);
    let json: serde_json::Value = serde_json::from_str(&dump).unwrap();
    let codes = json["operator_codes"].as_array().unwrap();
    assert!(codes.iter().all(|c| c["custom_code"].is_string()));
    for s in ["Conv2D", "MaxPool2D", "Dense", "Softmax", "builtin_options"] {
        assert!(!dump.contains(s), "{s}");
    }

    let zoo = d.join("zoo");
    fs::create_dir(&zoo).unwrap();
    for name in ["mlp", "lenet", "branchy"] {
        for seed in ["1", "2"] {
            ok(&["fixture", name, "--seed", seed, "-o", &format!("zoo/{name}@{seed}.nnm1")], d);
        }
    }
    let plain = ok(&["attack", "lenet.nnm1", "--zoo", "zoo", "--truth", "lenet@1"], d);
    assert!(plain.contains("| convert | SUCCESS |"));
    assert!(plain.contains("| surrogate | SUCCESS"));
    let hidden = ok(&["attack", "ob/model.nnm1", "--zoo", "zoo", "--truth", "lenet@1"], d);
    assert!(hidden.contains("| convert | UNKNOWN_OPERATOR |"));
    assert!(hidden.contains("| buffer-parse | FAILED (0 weight tensors, 0 bytes) |"));
    assert!(hidden.contains("| surrogate | FAILED"));

    // same argv, byte-identical artifacts
    let again = ["obfuscate", "lenet.nnm1", "-o", "ob2", "--seed", "5", "--n1", "20", "--n2", "20", "--shape", "random"];
    ok(&again, d);
    for f in ["model.nnm1", "bundle.obfb", "plan.json"] {
        assert_eq!(fs::read(d.join("ob").join(f)).unwrap(), fs::read(d.join("ob2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_matches_between_original_and_obfuscated() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["obfuscate", "fixture:branchy@2", "-o", "ob", "--n1", "5", "--n2", "5"], d);
    let model = nnveil_core::build_fixture(nnveil_core::FixtureId::Branchy, 2);
    let decl = &model.tensors[model.graph_inputs[0] as usize];
    let n: u32 = decl.shape.iter().product();
    let x = TensorValue::f32(decl.shape.clone(), (0..n).map(|i| (i as f32 * 0.37).sin()).collect());
    fs::write(d.join("x.nnt1"), encode_tensor(&x).unwrap()).unwrap();

    ok(&["run", "fixture:branchy@2", "--input", "x.nnt1", "-o", "a.nnt1"], d);
    ok(&["run", "ob/model.nnm1", "--bundle", "ob/bundle.obfb", "--input", "x.nnt1", "-o", "b.nnt1"], d);
    let a = fs::read(d.join("a.nnt1")).unwrap();
    assert_eq!(a, fs::read(d.join("b.nnt1")).unwrap());
    assert!(decode_tensor(&a).is_ok());

    let out = nnveil(&["run", "ob/model.nnm1", "--input", "x.nnt1", "-o", "c.nnt1"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bundle"));
}

#[test]
fn compare_signals_differences_by_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let same = nnveil(&["compare", "fixture:mlp@1", "fixture:mlp@1", "-n", "10"], d);
    assert_eq!(same.status.code(), Some(0));
    let diff = nnveil(&["compare", "fixture:mlp@1", "fixture:mlp@2", "-n", "10"], d);
    assert_eq!(diff.status.code(), Some(1));
    let shapes = nnveil(&["compare", "fixture:mlp", "fixture:lenet", "-n", "10"], d);
    assert_eq!(shapes.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = nnveil(&["frobnicate"], d);
    assert_eq!(out.status.code(), Some(2));
    let out = nnveil(&["obfuscate", "fixture:lenet", "-o", "x", "--shape", "weird"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--shape"));
    let out = nnveil(&["obfuscate", "fixture:lenet", "-o", "x", "--strategies", "shortcut"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = nnveil(&["dump", "missing.nnm1"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn similarity_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let csv = ok(&["similarity", "fixture:lenet", "fixture:mlp", "fixture:lenet@2"], d);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,lenet,mlp,lenet@2");
    assert!(lines[1].starts_with("lenet,1.00,"));
    assert_eq!(lines.len(), 4);

    let matrix = ok(&["attack", "--matrix", "--seeds", "1", "--n", "10", "--format", "csv"], d);
    assert!(matrix.starts_with("strategies,convert,buffer_parse,surrogate,mean_rank,trials\n"));
    assert!(matrix.contains("\nnone,5,5,5,"));
    assert!(matrix.contains("\nall,0,0,"));

    let bench = ok(
        &["bench", "fixture:mlp", "fixture:lenet", "--inferences", "2", "--repetitions", "1"],
        d,
    );
    assert_eq!(bench.lines().count(), 1 + 2 * 5);
    assert!(bench.starts_with("model,n1,n2,strategies,"));

    let names = ok(&["fixture", "--list"], d);
    assert_eq!(names.lines().count(), 5);
}
