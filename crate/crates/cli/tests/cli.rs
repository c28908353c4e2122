use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CANONICAL: &str = r#"
seed = 11

[mesh]
dimension = 1
n = 32

[time]
final_time = 0.1
steps = 100

[initial]
profile = "cosine(1, 0.1)"

[control]
initial = "zero"
u_min = -1.0
u_max = 1.0
m0 = inf

[tracking]
z_q = "zero"
b_q = 1.0
b0 = 1e-2
"#;

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn exec(&self, cmd: &str, out: &str) -> Output {
        Command::new(env!("CARGO_BIN_EXE_chbc"))
            .arg(cmd)
            .arg(self.dir.path().join("run.toml"))
            .arg("--output-dir")
            .arg(self.out(out))
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary_value(dir: &Path, key: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    let line = text.lines().find(|l| l.starts_with(key)).unwrap();
    line.rsplit(' ').next().unwrap().parse().unwrap()
}

#[test]
fn canonical_state_conserves_mass() {
    let run = Run::new(CANONICAL);
    let o = run.exec("state", "out");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(summary_value(&run.out("out"), "mass drift:") <= 1e-10);
    let series = std::fs::read_to_string(run.out("out").join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 102);
    assert!(run.out("out").join("snapshot_00100.csv").exists());
}

#[test]
fn inverted_box_is_rejected() {
    let run = Run::new(&CANONICAL.replace("u_min = -1.0", "u_min = 2.0"));
    let o = run.exec("state", "out");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("u_min"), "{}", stderr(&o));
}

#[test]
fn missing_initial_datum_is_an_input_error() {
    let run = Run::new(&CANONICAL.replace("cosine(1, 0.1)", "missing_y0.csv"));
    let o = run.exec("state", "out");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing_y0.csv"));
}

#[test]
fn nodal_csv_initial_datum_is_read_relative_to_the_config() {
    let run = Run::new(&CANONICAL.replace("cosine(1, 0.1)", "y0.csv"));
    let rows: String = (0..=32).map(|i| format!("{i},{}\n", 0.05 * (i as f64 / 32.0 - 0.5))).collect();
    std::fs::write(run.dir.path().join("y0.csv"), format!("node,value\n{rows}")).unwrap();
    assert_eq!(code(&run.exec("state", "out")), 0);
}

#[test]
fn malformed_config_is_a_config_error() {
    let run = Run::new("[mesh]\ndimension = 3\nn = 4\n[time]\nT = 1\nsteps = 2\n");
    assert_eq!(code(&run.exec("state", "out")), 1);
    let run = Run::new("not toml [");
    assert_eq!(code(&run.exec("state", "out")), 1);
}

#[test]
fn canonical_optimization_lowers_the_cost() {
    let run = Run::new(CANONICAL);
    let o = run.exec("optimize", "out");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = run.out("out");
    assert!(summary_value(&dir, "final cost:") < summary_value(&dir, "initial cost:"));
    let log = std::fs::read_to_string(dir.join("iterations.csv")).unwrap();
    assert!(log.starts_with("iter,cost,grad_norm,step,vi_residual,active_box_fraction\n"));
    let control = std::fs::read_to_string(dir.join("control.csv")).unwrap();
    assert_eq!(control.lines().count(), 1 + 2 * 101);
}

#[test]
fn iteration_cap_has_its_own_exit_code() {
    let run = Run::new(&format!("{CANONICAL}\n[solver]\nopt_max_iter = 1\nopt_tol = 1e-14\n"));
    assert_eq!(code(&run.exec("optimize", "out")), 3);
}

#[test]
fn all_zero_weights_are_rejected() {
    let run = Run::new(&CANONICAL.replace("b_q = 1.0", "b_q = 0.0").replace("b0 = 1e-2", "b0 = 0.0"));
    let o = run.exec("optimize", "out");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("must not all be zero"));
}

#[test]
fn perfect_tracking_stops_at_the_first_iterate() {
    let run = Run::new(&CANONICAL.replace("z_q = \"zero\"", "z_q = \"uncontrolled\""));
    let o = run.exec("optimize", "out");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(summary_value(&run.out("out"), "iterations:"), 1.0);
}

#[test]
fn terminal_weights_are_rejected_for_optimization() {
    let run = Run::new(&CANONICAL.replace("b0 = 1e-2", "b0 = 1e-2\nb_omega = 1.0"));
    let o = run.exec("optimize", "out");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("b_omega and b_gamma must be zero"));
}

#[test]
fn canonical_verify_passes_every_suite() {
    let run = Run::new(CANONICAL);
    let o = run.exec("verify", "out");
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    for suite in ["potentials", "neumann", "mass", "energy", "tangent", "duality", "projection", "gradient"] {
        let line = table.lines().find(|l| l.starts_with(suite)).unwrap();
        assert!(line.contains("PASS"), "{line}");
    }
}

#[test]
fn potential_with_nonzero_slope_at_origin_fails_verification() {
    let run = Run::new(&format!("{CANONICAL}\n[potentials]\nbulk = [0.0, 1.0, -0.5, 0.0, 0.25]\n"));
    let o = run.exec("verify", "out");
    assert_eq!(code(&o), 4);
    let line = stdout(&o).lines().find(|l| l.starts_with("potentials")).unwrap().to_string();
    assert!(line.contains("FAIL") && line.contains("zero_slope_at_origin"), "{line}");
}

#[test]
fn loose_newton_tolerance_fails_the_duality_suite() {
    let run = Run::new(&format!("{CANONICAL}\n[solver]\nnewton_abs_tol = 1e-2\nnewton_rel_tol = 1e-2\n"));
    let o = run.exec("verify", "out");
    assert_eq!(code(&o), 4);
    let line = stdout(&o).lines().find(|l| l.starts_with("duality")).unwrap().to_string();
    assert!(line.contains("FAIL"), "{line}");
}

#[test]
fn grad_check_and_project_pass_on_the_canonical_problem() {
    let run = Run::new(CANONICAL);
    let o = run.exec("grad-check", "g");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.out("g").join("grad_check.csv").exists());
    let o = run.exec("project", "p");
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let rows = std::fs::read_to_string(run.out("p").join("projection.csv")).unwrap();
    assert_eq!(rows.lines().count(), 11);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let run = Run::new(&CANONICAL.replace("m0 = inf", "m0 = 0.05"));
    for out in ["a", "b"] {
        assert_eq!(code(&run.exec("optimize", out)), 0);
        assert_eq!(code(&run.exec("verify", &format!("{out}_verify"))), 0);
    }
    for file in ["iterations.csv", "control.csv", "gradient.csv", "series.csv", "snapshot_00100.csv"] {
        let a = std::fs::read(run.out("a").join(file)).unwrap();
        let b = std::fs::read(run.out("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    assert_eq!(
        std::fs::read(run.out("a_verify").join("verify.csv")).unwrap(),
        std::fs::read(run.out("b_verify").join("verify.csv")).unwrap()
    );
}

#[test]
fn exit_codes_for_usage_errors() {
    let o = Command::new(env!("CARGO_BIN_EXE_chbc")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_chbc")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
}
