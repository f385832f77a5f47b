use std::path::Path;
use std::process::{Command, Output};

fn myeloma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_myeloma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_config_accepts_the_shipped_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["reference.toml", "untreated.toml"] {
        let out = myeloma(&["validate-config", root.join(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", text(&out.stderr));
    }
}

#[test]
fn validate_config_names_the_violated_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[parameters]\na_mm = 0.7\na_rm = 0.5\n",
    );
    let out = myeloma(&["validate-config", &cfg]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(
        err.contains("a_mm + a_rm <= 1") && err.contains("line 2"),
        "{err}"
    );
}

#[test]
fn defaults_output_is_a_valid_config() {
    let out = myeloma(&["defaults"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", &text(&out.stdout));
    assert!(myeloma(&["validate-config", &cfg]).status.success());
}

#[test]
fn simulate_untreated_and_with_a_regimen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "horizon = 180.0\n");
    let out_dir = dir.path().join("untreated");
    let out = myeloma(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,M,T_C,N,T_R,u1,u2,u3,running_integral\n"));

    let reg = write(
        dir.path(),
        "r.csv",
        "t_start,t_end,u1,u2,u3\n0,90,204.93,3.5325,95\n90,180,0,0,0\n",
    );
    let treated = dir.path().join("treated");
    let out = myeloma(&[
        "simulate",
        "--config",
        &cfg,
        "--regimen",
        &reg,
        "--out",
        treated.to_str().unwrap(),
        "--g",
        "1,5,0.5",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let rows = std::fs::read_to_string(treated.join("trajectory.csv")).unwrap();
    let first = rows.lines().nth(1).unwrap();
    assert!(
        first.contains("2.0493000000000001e2,3.5325000000000002e0,9.5000000000000000e1"),
        "{first}"
    );
}

#[test]
fn simulate_rejects_non_tiling_regimens() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "horizon = 180.0\n");
    for body in [
        "t_start,t_end,u1,u2,u3\n0,90,1,0,0\n100,180,0,0,0\n",
        "t_start,t_end,u1,u2,u3\n0,90,1,0,0\n90,120,0,0,0\n",
    ] {
        let reg = write(dir.path(), "r.csv", body);
        let out = myeloma(&[
            "simulate",
            "--config",
            &cfg,
            "--regimen",
            &reg,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(!out.status.success(), "{body}");
        assert!(
            text(&out.stderr).contains("regimen"),
            "{}",
            text(&out.stderr)
        );
    }
}

#[test]
fn optimize_then_rebuild_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "horizon = 180.0\ng_vectors = [[1.0, 1.0, 1.0], [5.0, 5.0, 1.0]]\n",
    );
    let runs = dir.path().join("runs");
    let out = myeloma(&[
        "optimize",
        "--config",
        &cfg,
        "--method",
        "approx",
        "--out",
        runs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let printed = text(&out.stdout);
    assert!(printed.contains("Approximation"));

    let table = myeloma(&["table", "--runs", runs.to_str().unwrap()]);
    assert!(table.status.success());
    assert_eq!(
        text(&table.stdout),
        std::fs::read_to_string(runs.join("table.txt")).unwrap()
    );
    let csv = myeloma(&["table", "--runs", runs.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(
        text(&csv.stdout),
        std::fs::read_to_string(runs.join("table.csv")).unwrap()
    );
    assert_eq!(text(&csv.stdout).lines().count(), 3);
}

#[test]
fn empty_exposure_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "g_vectors = []\n");
    let out = myeloma(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn failed_cells_give_a_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "horizon = 180.0\ng_vectors = [[1.0, 1.0, 1.0]]\nmethods = [\"constant\"]\n[integrator]\nmax_steps = 2\n",
    );
    let out = myeloma(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("FAILED"));
}

#[test]
fn missing_output_directory_is_an_error() {
    let out = myeloma(&["optimize", "--method", "constant"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("--out"));
}
