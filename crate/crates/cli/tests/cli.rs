use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use sha2::{Digest, Sha256};

fn config_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nanocavity(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanocavity"))
        .args(args)
        .current_dir(dir)
        .env("NANOCAVITY_CONFIG_ROOT", config_root())
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn run_ok(dir: &Path, args: &[&str]) {
    let o = nanocavity(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// Smoke ladder runs shared by the tests below: perturbed on one and on
/// three threads, and unperturbed.
fn smoke() -> &'static (tempfile::TempDir, [PathBuf; 3]) {
    static S: OnceLock<(tempfile::TempDir, [PathBuf; 3])> = OnceLock::new();
    S.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dirs = ["p1", "p3", "u"].map(|d| tmp.path().join(d));
        run_ok(tmp.path(), &["--threads", "1", "run", "smoke/perturbed", "--out-dir", "p1"]);
        run_ok(tmp.path(), &["--threads", "3", "run", "smoke/perturbed", "--out-dir", "p3"]);
        run_ok(tmp.path(), &["run", "smoke/unperturbed", "--out-dir", "u"]);
        (tmp, dirs)
    })
}

#[test]
fn shipped_scenarios_validate() {
    let tmp = tempfile::tempdir().unwrap();
    for s in [
        "figures/fig1",
        "figures/fig4a",
        "perturbed",
        "unperturbed",
        "smoke/perturbed",
        "smoke/unperturbed",
    ] {
        let o = nanocavity(tmp.path(), &["validate-config", s]);
        assert_eq!(code(&o), 0, "{s}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn invalid_configs_exit_1_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("gap.toml", "name = \"x\"\nstages = [\"geometry\", \"farfield\"]\n"),
        ("late.toml", "name = \"x\"\nstages = [\"fdtd\", \"farfield\"]\n"),
        ("typo.toml", "name = \"x\"\nstages = [\"geometry\"]\n[study.lattice]\na_mm = 240.0\n"),
        ("range.toml", "name = \"x\"\nstages = [\"geometry\"]\n[study.lattice]\nradius_over_a = 0.7\n"),
        ("pulses.toml", "name = \"x\"\nstages = [\"photonstats\"]\n[photons.pulses]\nn_pulses = 10\n"),
        ("design.toml", "name = \"x\"\nstages = [\"geometry\"]\nselect_design = \"L7\"\n"),
        ("syntax.toml", "name = \n"),
    ];
    for (file, body) in cases {
        fs::write(tmp.path().join(file), body).unwrap();
        let path = format!("./{file}");
        let out = tmp.path().join(format!("out-{file}"));
        let o = nanocavity(tmp.path(), &["run", &path, "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{file}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{file} left outputs");
        assert_eq!(code(&nanocavity(tmp.path(), &["validate-config", &path])), 1);
    }
    assert_eq!(code(&nanocavity(tmp.path(), &["run", "no/such/scenario"])), 1);
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.ends_with(".toml"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn unreachable_q_target_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config_root().join("smoke/perturbed.toml")).unwrap();
    let body = base.replace("unperturbed = 1200.0", "unperturbed = 1.0e6");
    fs::write(tmp.path().join("high-q.toml"), body).unwrap();
    let o = nanocavity(tmp.path(), &["run", "./high-q.toml", "--out-dir", "o"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn occupied_output_directory_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("taken");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep").unwrap();
    let o = nanocavity(tmp.path(), &["run", "figures/fig4a", "--out-dir", "taken"]);
    assert_eq!(code(&o), 3);
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
    // A file where the output directory should go.
    fs::write(tmp.path().join("plain"), "x").unwrap();
    assert_eq!(code(&nanocavity(tmp.path(), &["run", "figures/fig4a", "--out-dir", "plain/sub"])), 3);
    let o = nanocavity(tmp.path(), &["compare", "missing-a", "missing-b"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn fig4a_reports_g2_and_hashes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(tmp.path(), &["run", "figures/fig4a", "--out-dir", "a"]);
    let dir = tmp.path().join("a");
    let m = manifest(&dir);
    let g2 = m["metrics"]["photonstats"]["g2_zero"].as_f64().unwrap();
    assert!((0.03..=0.06).contains(&g2), "{g2}");
    assert_eq!(m["seed"], 7);
    let outputs = m["outputs"].as_array().unwrap();
    let listed: Vec<&str> = outputs.iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"photonstats/g2_histogram.csv"));
    for o in outputs {
        let p = o["path"].as_str().unwrap();
        let body = fs::read(dir.join(p)).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&body)), "{p}");
        if p.ends_with(".csv") {
            assert!(body.starts_with(b"# scenario=fig4a seed=7\n"), "{p}");
        }
    }
    // Every file on disk except the manifest itself is listed.
    let mut on_disk = Vec::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                on_disk.push(p.strip_prefix(&dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    on_disk.retain(|p| p != "manifest.json");
    on_disk.sort();
    assert_eq!(on_disk, listed);
}

#[test]
fn seed_flag_controls_the_photon_stream() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(tmp.path(), &["run", "figures/fig4a", "--seed", "11", "--out-dir", "a"]);
    run_ok(tmp.path(), &["run", "figures/fig4a", "--seed", "11", "--out-dir", "b"]);
    run_ok(tmp.path(), &["run", "figures/fig4a", "--seed", "12", "--out-dir", "c"]);
    let hist = |d: &str| fs::read(tmp.path().join(d).join("photonstats/g2_histogram.csv")).unwrap();
    assert_eq!(hist("a"), hist("b"));
    assert_ne!(hist("a"), hist("c"));
    assert_eq!(manifest(&tmp.path().join("c"))["seed"], 12);
    // Rerunning into an existing run directory replaces it.
    run_ok(tmp.path(), &["run", "figures/fig4a", "--seed", "12", "--out-dir", "a"]);
    assert_eq!(hist("a"), hist("c"));
}

#[test]
fn outputs_identical_across_thread_counts() {
    let (_, [p1, p3, _]) = smoke();
    let (a, b) = (manifest(p1), manifest(p3));
    assert_eq!(a["threads"], 1);
    assert_eq!(a["outputs"], b["outputs"]);
    for stage in ["geometry", "fdtd", "farfield", "purcell", "photonstats"] {
        assert!(
            a["outputs"].as_array().unwrap().iter().any(|o| o["path"].as_str().unwrap().starts_with(stage)),
            "{stage}"
        );
    }
}

#[test]
fn compare_tabulates_ratios() {
    let (tmp, [p1, p3, u]) = smoke();
    let json = |a: &Path, b: &Path| -> Vec<Value> {
        let o = nanocavity(tmp.path(), &["compare", "--json", a.to_str().unwrap(), b.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    for row in json(p1, p3) {
        assert_eq!(row["ratio"].as_f64().unwrap(), 1.0, "{row}");
    }
    let rows = json(p1, u);
    let ratio = |q: &str| rows.iter().find(|r| r["quantity"] == q).unwrap()["ratio"].as_f64().unwrap();
    assert!(ratio("q_total") < 1.0);
    assert!(ratio("eta_lens") > 1.0);
    assert!(ratio("eta_smf") > 1.0);
    assert!(ratio("lambda_cav_nm") > 0.9);
    let text = nanocavity(tmp.path(), &["compare", p1.to_str().unwrap(), u.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("eta_smf"));
}

#[test]
fn compare_rejects_runs_without_far_field() {
    let (tmp, [p1, ..]) = smoke();
    run_ok(tmp.path(), &["run", "figures/fig4a", "--out-dir", "emission-only"]);
    let o = nanocavity(
        tmp.path(),
        &["compare", p1.to_str().unwrap(), tmp.path().join("emission-only").to_str().unwrap()],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage mismatch"));
    // A manifest with the field removed.
    let mut m = manifest(p1);
    m["metrics"]["farfield"]["selected"].as_object_mut().unwrap().remove("eta_smf");
    let edited = tmp.path().join("edited.json");
    fs::write(&edited, serde_json::to_vec(&m).unwrap()).unwrap();
    let o = nanocavity(tmp.path(), &["compare", edited.to_str().unwrap(), p1.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
