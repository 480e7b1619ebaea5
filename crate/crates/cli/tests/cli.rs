//! End-to-end runs of the `mtcp` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtcp_core::{HarrisBuilder, LatticeWindow};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_mtcp");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mtcp(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).env_remove("MTCP_THREADS").output().unwrap()
}

fn run_ok(dir: &Path, sub: &str, config: &str, out: &str) {
    let o = mtcp(dir, &[sub, "--config", config, "--out", out]);
    assert!(o.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.into()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

const MINIMAL: &str = r#"
seed = 3
[model]
d = 1
r = 1
m = 1
lambda1 = 2.0
lambda2 = 1.0
horizon = 2.0
[initial]
kind = "all_ones"
"#;

#[test]
fn minimal_simulate_writes_one_row_per_event() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "min.toml", MINIMAL);
    run_ok(tmp.path(), "simulate", &cfg, "out");
    let text = std::fs::read_to_string(tmp.path().join("out/trajectory.csv")).unwrap();
    let rows = text.lines().skip(2).count();
    let sys = json(&tmp.path().join("out/system.json"));
    let r = &sys["result"];
    let count = |key: &str| -> usize {
        r[key].as_array().unwrap().iter().map(|e| e["times"].as_array().unwrap().len()).sum()
    };
    let events = count("deaths") + count("arrows") + count("selective_arrows");
    assert!(events > 0);
    assert_eq!(rows, events);
    let summary = json(&tmp.path().join("out/summary.json"));
    assert_eq!(summary["result"]["events"].as_u64().unwrap() as usize, events);
}

#[test]
fn same_config_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "min.toml", MINIMAL);
    run_ok(tmp.path(), "simulate", &cfg, "a");
    run_ok(tmp.path(), "simulate", &cfg, "b");
    for f in ["trajectory.csv", "summary.json", "system.json"] {
        assert_eq!(read(&tmp.path().join("a").join(f)), read(&tmp.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn rates_out_of_order_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &MINIMAL.replace("lambda1 = 2.0", "lambda1 = 0.5"));
    let o = mtcp(tmp.path(), &["simulate", "--config", &cfg, "--out", "out"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("λ1 > λ2 > 0"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn seed_override_needs_a_seed_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "estimator = \"box_chain\"\nell = 2.0\nt = 100.0\n");
    let o = mtcp(tmp.path(), &["estimate", "--config", &cfg, "--seed", "4", "--out", "out"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn small_invariant_audit_finds_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("estimate_audit.toml");
    run_ok(tmp.path(), "estimate", cfg.to_str().unwrap(), "out");
    let v = json(&tmp.path().join("out/estimate.json"));
    let items = v["result"]["items"].as_array().unwrap();
    let exact: Vec<&Value> = items.iter().filter(|i| i["name"] != "block_survival_increasing").collect();
    assert!(exact.len() >= 8);
    for i in exact {
        assert_eq!(i["violations"], 0, "{}", i["name"]);
        assert!(i["checks"].as_u64().unwrap() > 0);
    }
}

#[test]
fn cone_experiment_rejects_slope_at_or_above_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("estimate_cone.toml")).unwrap().replace("beta = 0.55", "beta = 1.1");
    let cfg = write(tmp.path(), "cone.toml", &text);
    let o = mtcp(tmp.path(), &["estimate", "--config", &cfg, "--out", "out"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_estimator_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "e.toml", "estimator = \"nope\"\n");
    let o = mtcp(tmp.path(), &["estimate", "--config", &cfg, "--out", "out"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown estimator"));
}

#[test]
fn lambda_c_on_two_point_grid_gives_a_bracket() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "lc.toml",
        r#"
estimator = "lambda_c"
d = 1
r = 1
m = 20
horizon = 20.0
grid = [1.0, 3.0]
n_runs = 100
threshold = 0.3
rounds = 0
refine_points = 3
level = 0.99
seed = 1
"#,
    );
    run_ok(tmp.path(), "estimate", &cfg, "out");
    let v = json(&tmp.path().join("out/estimate.json"));
    let b: Vec<f64> = v["result"]["bracket"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(b, vec![1.0, 3.0]);
}

fn render_config(system_file: &str, layers: &str, extra: &str) -> String {
    format!(
        r#"
seed = 0
system_file = "{system_file}"
[diagram]
times = [0.0, 4.0]
sites = [-3, 3]
column_width = 30.0
time_scale = 60.0
layers = [{layers}]
{extra}
"#
    )
}

#[test]
fn empty_system_renders_axes_only() {
    let tmp = tempfile::tempdir().unwrap();
    let h = HarrisBuilder::new(LatticeWindow::line(3, 1, 4.0).unwrap(), 2.0, 1.0).build().unwrap();
    std::fs::write(tmp.path().join("empty.json"), h.to_json()).unwrap();
    let cfg = write(tmp.path(), "r.toml", &render_config("empty.json", r#""deaths", "arrows", "selective-arrows""#, ""));
    run_ok(tmp.path(), "render", &cfg, "out");
    let svg = std::fs::read_to_string(tmp.path().join("out/diagram.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let drawn = doc.descendants().filter(|n| {
        n.attribute("class").is_some_and(|c| ["death", "arrow", "selective", "occ1", "occ2"].contains(&c))
    });
    assert_eq!(drawn.count(), 0);
    assert!(doc.descendants().any(|n| n.attribute("id") == Some("axes")));
    let m = json(&tmp.path().join("out/manifest.json"));
    assert_eq!(m["inputs"][0]["path"], "empty.json");
}

fn bifurcation_instance() -> HarrisBuilder {
    let w = LatticeWindow::line(6, 1, 10.0).unwrap();
    HarrisBuilder::new(w, 2.0, 1.0)
        .arrow(&[0], &[-1], 0.3)
        .arrow(&[0], &[1], 0.6)
        .arrow(&[-1], &[-2], 2.2)
        .arrow(&[1], &[2], 2.3)
        .death(&[-1], 2.4)
        .death(&[1], 2.45)
        .death(&[0], 2.5)
}

#[test]
fn bifurcation_features_are_distinct_elements() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bif.json"), bifurcation_instance().build().unwrap().to_json()).unwrap();
    let cfg = write(tmp.path(), "r.toml", &render_config("bif.json", r#""deaths", "arrows", "ancestor""#, "ancestor = { x = [0], s = 0.0, bifurcation_l = 2 }"));
    run_ok(tmp.path(), "render", &cfg, "a");
    run_ok(tmp.path(), "render", &cfg, "b");
    let bytes = read(&tmp.path().join("a/diagram.svg"));
    assert_eq!(bytes, read(&tmp.path().join("b/diagram.svg")));
    let svg = String::from_utf8(bytes).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
    for k in 1..=7 {
        let id = format!("bif0-c{k}");
        assert_eq!(doc.descendants().filter(|n| n.attribute("id") == Some(id.as_str())).count(), 1, "{id}");
    }
    assert!(!svg.contains("bif1-"));
}

#[test]
fn shipped_configs_write_hashed_outputs_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    for (sub, file) in [("simulate", "simulate.toml"), ("paths", "paths.toml"), ("render", "render.toml"), ("walk", "walk.toml")] {
        let out = format!("{sub}-out");
        run_ok(tmp.path(), sub, configs().join(file).to_str().unwrap(), &out);
        let m = json(&tmp.path().join(&out).join("manifest.json"));
        let hash = m["config_hash"].as_str().unwrap();
        assert_eq!(hash.len(), 64);
        let outputs = m["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        for o in outputs {
            let text = std::fs::read_to_string(tmp.path().join(&out).join(o["file"].as_str().unwrap())).unwrap();
            let head: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
            assert!(head.contains("config_hash=") || head.contains("\"config_hash\""), "{}", o["file"]);
            assert!(text.contains(hash), "{}", o["file"]);
        }
        let manifest = format!("{out}/manifest.json");
        let r = mtcp(tmp.path(), &["replay", "--manifest", &manifest, "--out", &format!("{sub}-replay")]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(!String::from_utf8_lossy(&r.stdout).contains("DIFFERS"));
    }
}

#[test]
fn replay_detects_changed_input_file() {
    let tmp = tempfile::tempdir().unwrap();
    let h = bifurcation_instance().build().unwrap();
    std::fs::write(tmp.path().join("sys.json"), h.to_json()).unwrap();
    let cfg = write(tmp.path(), "r.toml", &render_config("sys.json", r#""deaths", "arrows""#, ""));
    run_ok(tmp.path(), "render", &cfg, "out");
    let h2 = bifurcation_instance().death(&[2], 1.0).build().unwrap();
    std::fs::write(tmp.path().join("sys.json"), h2.to_json()).unwrap();
    let r = mtcp(tmp.path(), &["replay", "--manifest", "out/manifest.json", "--out", "again"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("changed"));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("estimate_audit.toml");
    let cfg = cfg.to_str().unwrap();
    for (n, out) in [("1", "one"), ("4", "four")] {
        let o = Command::new(BIN).current_dir(tmp.path()).env("MTCP_THREADS", n).args(["estimate", "--config", cfg, "--out", out]).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["estimate.csv", "estimate.json"] {
        assert_eq!(read(&tmp.path().join("one").join(f)), read(&tmp.path().join("four").join(f)), "{f}");
    }
}
