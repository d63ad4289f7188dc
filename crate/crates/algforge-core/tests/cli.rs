//! End-to-end tests of the `algforge` binary: exit codes, golden output,
//! file round trips, determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

use algforge_core::higher::prolong2;
use algforge_core::model::parse_model;

fn algforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algforge"))
        .args(args)
        .env("ALGFORGE_SEED", "7")
        .output()
        .expect("the binary runs")
}

fn model_path(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name);
    p.canonicalize()
        .expect("fixture exists")
        .display()
        .to_string()
}

fn stdout_of(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf8 stdout")
}

fn stderr_of(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).expect("utf8 stderr")
}

fn code_of(o: &Output) -> i32 {
    o.status.code().expect("no signal")
}

/// Drop the timing line/key so two runs can be compared byte-for-byte.
fn strip_timing(s: &str) -> String {
    s.lines()
        .filter(|l| !l.starts_with("timing_ms:"))
        .map(|l| match l.find("\"timing_ms\"") {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn check_lie_passes_on_the_cyclic_algebra() {
    let o = algforge(&["check", "--which", "lie", &model_path("so3.toml")]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    let out = stdout_of(&o);
    assert!(out.contains("check: lie"));
    assert!(out.contains("verdict: pass"));
}

#[test]
fn check_skew_fails_with_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nonskew.toml");
    std::fs::write(
        &path,
        r#"
[chart]
base = ["x"]
fiber = [{ name = "u", weight = 1 }, { name = "v", weight = 1 }]

[algebroid.bracket]
Q.1.1.2 = "1"
"#,
    )
    .unwrap();
    let o = algforge(&["check", "--which", "skew", path.to_str().unwrap()]);
    assert_eq!(code_of(&o), 1);
    let out = stdout_of(&o);
    assert!(out.contains("verdict: fail"));
    assert!(
        out.contains("witness:") && out.contains("antisymmetric"),
        "got: {out}"
    );
}

#[test]
fn malformed_toml_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "not = [toml\n").unwrap();
    let o = algforge(&["check", "--which", "lie", path.to_str().unwrap()]);
    assert_eq!(code_of(&o), 2);
    assert!(stderr_of(&o).contains("toml"));
}

#[test]
fn unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.toml");
    std::fs::write(&path, "[liealgebra]\ndim = 1\nsurprise = 1\n").unwrap();
    let o = algforge(&["check", "--which", "lie", path.to_str().unwrap()]);
    assert_eq!(code_of(&o), 2);
    assert!(stderr_of(&o).contains("unknown key"));
}

#[test]
fn missing_sections_are_usage_errors() {
    let o = algforge(&["el", "--form", "ep", &model_path("tangent_r2.toml")]);
    assert_eq!(code_of(&o), 2);
    assert!(stderr_of(&o).contains("lagrangian"));
    let o = algforge(&[
        "integrate",
        &model_path("reduced_plane.toml"),
        "--out",
        "/dev/null",
    ]);
    assert_eq!(code_of(&o), 2);
    assert!(stderr_of(&o).contains("curves"));
}

#[test]
fn prolongation_files_reload_and_pass_the_higher_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("t2.toml");
    let o = algforge(&[
        "prolong",
        &model_path("tangent_r2.toml"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    assert!(stdout_of(&o).starts_with("wrote "));

    // The written file is a loadable model whose [ha2] equals the library's
    // prolongation of the source structure.
    let source =
        parse_model(&std::fs::read_to_string(model_path("tangent_r2.toml")).unwrap()).unwrap();
    let expected = prolong2(source.algebroid.as_ref().unwrap()).unwrap();
    let written = parse_model(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(written.ha2.as_ref().unwrap(), &expected);

    for which in ["skew", "al", "lie", "strong"] {
        let o = algforge(&["check", "--which", which, out_path.to_str().unwrap()]);
        assert_eq!(
            code_of(&o),
            0,
            "{which} on the prolongation: {}",
            stderr_of(&o)
        );
    }
}

#[test]
fn non_almost_lie_inputs_fail_prolongation_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nonal.toml");
    std::fs::write(
        &path,
        r#"
[chart]
base = ["x"]
fiber = [{ name = "u", weight = 1 }, { name = "v", weight = 1 }]

[algebroid.anchor_left]
Q.1.1 = "1"
Q.1.2 = "x"

[algebroid.anchor_right]
Q.1.1 = "1"
Q.1.2 = "x"
"#,
    )
    .unwrap();
    let out_path = dir.path().join("never.toml");
    let o = algforge(&[
        "prolong",
        path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&o), 1);
    assert!(stderr_of(&o).contains("not almost-Lie"));
    assert!(!out_path.exists());
}

#[test]
fn the_lift_output_matches_the_prolonged_point_realization() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("so3_lift.toml");
    let o = algforge(&[
        "lift",
        &model_path("so3.toml"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    let written = parse_model(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let ha = written.ha2.as_ref().unwrap();
    assert_eq!(ha.rank1(), 3);
    assert_eq!(ha.rank2(), 3);
    for which in ["lie", "strong"] {
        let o = algforge(&["check", "--which", which, out_path.to_str().unwrap()]);
        assert_eq!(code_of(&o), 0, "{which} on the lift: {}", stderr_of(&o));
    }
}

#[test]
fn the_standard_form_prints_the_classical_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("accel.toml");
    std::fs::write(
        &path,
        "[chart]\nbase = [\"x\"]\n\n[lagrangian]\nl = \"1/2*x.d2^2\"\nform = \"standard\"\n",
    )
    .unwrap();
    let o = algforge(&["el", path.to_str().unwrap()]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    assert_eq!(stdout_of(&o), "x.d4 = 0\n");
}

#[test]
fn the_reduced_form_prints_equations_and_constraint() {
    let o = algforge(&["el", &model_path("reduced_plane.toml")]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    let expected = "\
x2.d2 + y1.d2 = 0
-x2.d1 - 2*y1*y1.d1 + y2.d2 = 0
constraint: y1.d1 - y2 = 0
";
    assert_eq!(stdout_of(&o), expected);
}

#[test]
fn ep_is_an_alias_for_el_with_the_reduced_form() {
    let a = algforge(&["ep", &model_path("rigid_body.toml")]);
    let b = algforge(&["el", "--form", "ep", &model_path("rigid_body.toml")]);
    assert_eq!(code_of(&a), 0);
    assert_eq!(stdout_of(&a), stdout_of(&b));
    assert!(stdout_of(&a).contains("a1.d3"));
}

#[test]
fn latex_output_is_a_compilable_block() {
    let o = algforge(&["el", "--latex", &model_path("reduced_plane.toml")]);
    assert_eq!(code_of(&o), 0);
    let out = stdout_of(&o);
    assert!(out.starts_with("\\begin{align*}\n"));
    assert!(out.ends_with("\\end{align*}\n"));
    assert!(out.contains("&= 0 \\\\"));
}

#[test]
fn commands_are_deterministic_modulo_timing() {
    let a = algforge(&["ep", &model_path("rigid_body.toml")]);
    let b = algforge(&["ep", &model_path("rigid_body.toml")]);
    assert_eq!(stdout_of(&a), stdout_of(&b));
    let a = algforge(&[
        "check",
        "--json",
        "--which",
        "leibniz",
        &model_path("so3.toml"),
    ]);
    let b = algforge(&[
        "check",
        "--json",
        "--which",
        "leibniz",
        &model_path("so3.toml"),
    ]);
    assert_eq!(strip_timing(&stdout_of(&a)), strip_timing(&stdout_of(&b)));
}

#[test]
fn integrate_reproduces_the_cubic_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cubic.csv");
    let o = algforge(&[
        "integrate",
        &model_path("abelian_cubic.toml"),
        "--h",
        "1e-3",
        "--T",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,a,a.d1,a.d2,a.d3,residual1,jerk");
    let last = text.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cols[0] - 1.0).abs() < 1e-12);
    assert!(
        (cols[1] - 1.0).abs() <= 1e-8,
        "the cubic reaches 1 at t=1, got {}",
        cols[1]
    );
}

#[test]
fn integrate_reports_residual_and_conservation_for_the_rigid_body() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rb.csv");
    let o = algforge(&[
        "integrate",
        &model_path("rigid_body.toml"),
        "--h",
        "1e-3",
        "--T",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    let out = stdout_of(&o);
    let field = |key: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}: ")))
            .unwrap_or_else(|| panic!("report lists {key}: {out}"))
            .parse()
            .unwrap()
    };
    assert!(field("max_residual") <= 1e-6);
    assert!(field("deviation_pairing") <= 1e-6);
    let header = std::fs::read_to_string(&csv).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("t,a1,a1.d1,a1.d2,a2,"));
    assert!(header.ends_with(",residual1,residual2,residual3,pairing"));
}

#[test]
fn missing_initial_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nodata.toml");
    let text = std::fs::read_to_string(model_path("rigid_body.toml"))
        .unwrap()
        .replace(
            "initial = [0.3, 0.1, 0.2, -0.2, 0.4, -0.1, 0.5, -0.3, 0.25]",
            "",
        );
    std::fs::write(&path, text).unwrap();
    let o = algforge(&["integrate", path.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(code_of(&o), 2);
    assert!(stderr_of(&o).contains("initial"));
}

#[test]
fn kappa_eval_prints_the_levels() {
    let o = algforge(&[
        "kappa-eval",
        &model_path("so3.toml"),
        "--ybar",
        "1,0,0;0,1,0",
        "--x",
        "0,0,1;1,0,0;0,0,0",
    ]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    assert_eq!(stdout_of(&o), "ydot1 = (1, -1, 0)\nydot2 = (1, 0, 0)\n");
    let bad = algforge(&[
        "kappa-eval",
        &model_path("so3.toml"),
        "--ybar",
        "1,0",
        "--x",
        "1",
    ]);
    assert_eq!(code_of(&bad), 2);
}

#[test]
fn subalg_reports_closure_and_failure() {
    let o = algforge(&["subalg", &model_path("so3.toml")]);
    assert_eq!(code_of(&o), 0, "stderr: {}", stderr_of(&o));
    assert!(stdout_of(&o).contains("restriction: restricted"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("open.toml");
    let text = std::fs::read_to_string(model_path("so3.toml"))
        .unwrap()
        .replace(
            "v = [[[\"0\"], [\"0\"], [\"1\"]], [[\"0\"], [\"0\"], [\"1\"]]]",
            "v = [[[\"0\"], [\"0\"], [\"1\"]], [[\"1\"], [\"0\"], [\"0\"]]]",
        );
    std::fs::write(&path, text).unwrap();
    let o = algforge(&["subalg", path.to_str().unwrap()]);
    assert_eq!(code_of(&o), 1);
    assert!(stdout_of(&o).contains("witness:"));
}

#[test]
fn json_reports_agree_with_the_human_rendering() {
    let j = algforge(&["check", "--json", "--which", "lie", &model_path("so3.toml")]);
    let h = algforge(&["check", "--which", "lie", &model_path("so3.toml")]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&j)).unwrap();
    assert_eq!(parsed["check"], "lie");
    assert_eq!(parsed["verdict"], "pass");
    assert!(parsed["witness"].is_null());
    assert!(stdout_of(&h).contains("verdict: pass"));
}
