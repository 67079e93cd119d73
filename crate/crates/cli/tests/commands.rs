use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_purityforge")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn without_timing(out: &Output) -> serde_json::Value {
    let mut v = json(out);
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn product_fixture_has_no_correlations() {
    let input = fixture("product");
    let out = run(&["entropies", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let r = &json(&out)["result"];
    for key in ["i_uv", "i_u_rbc", "i_v_rac", "i_c_w"] {
        assert!(r[key].as_f64().unwrap().abs() < 1e-9, "{key} = {}", r[key]);
    }
}

#[test]
fn region_b0_pair_mode_is_raw_informations() {
    let input = fixture("bell_example");
    let out = run(&["region", "--input", input.to_str().unwrap(), "--b", "0", "--w-mode", "pair"]);
    let v = json(&out);
    let rhs: Vec<f64> = v["result"]["rhs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let ent = json(&run(&["entropies", "--input", input.to_str().unwrap()]));
    let (iu, iv) = (ent["result"]["i_u_rbc"].as_f64().unwrap(), ent["result"]["i_v_rac"].as_f64().unwrap());
    assert!((rhs[0] - iu).abs() < 1e-12 && (rhs[1] - iv).abs() < 1e-12 && (rhs[2] - iu - iv).abs() < 1e-12);
}

#[test]
fn synthetic_constraints_corners() {
    let input = fixture("bell_example");
    let out = run(&["region", "--input", input.to_str().unwrap(), "--constraints", "1,1,3", "--corners"]);
    assert!(out.status.success());
    let corners = &json(&out)["result"]["corners"];
    assert_eq!(corners, &serde_json::json!([[1.0, 2.0], [2.0, 1.0]]));
}

#[test]
fn simulate_is_reproducible_and_echoes_config() {
    let input = fixture("bell_example");
    let args = ["simulate", "--binning", "--input", input.to_str().unwrap(), "--trials", "6", "--seed", "11"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(without_timing(&a), without_timing(&b));
    let v = json(&a);
    assert_eq!(v["config"]["params"]["seed"], 11);
    assert_eq!(v["config"]["params"]["trials"], 6);
    // R = R~ in the fixture: nothing is binned
    assert_eq!(v["result"]["collision_rate"], 0.0);
}

#[test]
fn budget_on_trivial_fixture_is_zero() {
    let input = fixture("trivial");
    let out = run(&["simulate", "--budget", "--input", input.to_str().unwrap()]);
    assert!(out.status.success());
    let r = &json(&out)["result"];
    for rec in r["records"].as_array().unwrap() {
        assert_eq!(rec["budget"]["total"], 0.0);
    }
}

#[test]
fn csv_and_out_files() {
    let dir = std::env::temp_dir().join(format!("purityforge-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (csv, report) = (dir.join("t.csv"), dir.join("t.json"));
    let input = fixture("bell_example");
    let out = run(&[
        "entropies",
        "--input",
        input.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.contains("I(U;V),0.484509511310\n"), "{text}");
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(saved["command"], "entropies");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn exit_codes() {
    let dir = std::env::temp_dir().join(format!("purityforge-exit-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let broken = dir.join("broken.json");
    std::fs::write(&broken, "{\"dims\": [2, 2").unwrap();
    assert_eq!(run(&["entropies", "--input", broken.to_str().unwrap()]).status.code(), Some(1));

    let mut big: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("bell_example")).unwrap()).unwrap();
    big["params"]["n"] = 12.into();
    let big_path = dir.join("big.json");
    std::fs::write(&big_path, big.to_string()).unwrap();
    assert_eq!(run(&["simulate", "--subpovm", "--input", big_path.to_str().unwrap()]).status.code(), Some(3));

    let input = fixture("bell_example");
    assert_eq!(run(&["region", "--input", input.to_str().unwrap(), "--b", "1.5"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--input", input.to_str().unwrap()]).status.code(), Some(1));
    std::fs::remove_dir_all(dir).ok();
}
