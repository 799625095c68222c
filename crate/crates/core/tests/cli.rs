use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn stefan(args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_stefan"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
        .status;
    status.code().expect("exit code")
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["stefan"];
    argv.extend_from_slice(args);
    stefan::cli::run_cli(argv)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines
        .map(|l| l.split(',').nth(j).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn forward_constant_case() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let prob = problems().join("const.prob");
    assert_eq!(
        run(&[
            "forward",
            "--problem",
            path_str(&prob),
            "--n",
            "16",
            "--out",
            path_str(&out)
        ]),
        0
    );
    let state = fs::read_to_string(out.join("state.csv")).unwrap();
    assert!(state.starts_with("k,i,x_i,u_i(k)\n"));
    for u in column(&state, "u_i(k)") {
        assert!((u - 1.0).abs() <= 1e-13, "{u}");
    }
    let manifest = fs::read_to_string(out.join("run.json")).unwrap();
    for key in ["\"config_sha256\"", "\"tau0\"", "\"tau\"", "\"grid_nodes\""] {
        assert!(manifest.contains(key), "{key} missing from {manifest}");
    }
    for f in ["cost.json", "energy.json", "control.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn outputs_are_byte_identical_on_rerun() {
    let dir = TempDir::new().unwrap();
    let prob = problems().join("variable.prob");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            run(&[
                "forward",
                "--problem",
                path_str(&prob),
                "--n",
                "12",
                "--out",
                path_str(out)
            ]),
            0
        );
    }
    for f in ["state.csv", "cost.json", "energy.json", "control.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    // the manifest names the problem path, which is the same for both runs
    assert_eq!(
        fs::read(a.join("run.json")).unwrap(),
        fs::read(b.join("run.json")).unwrap()
    );

    let prob = problems().join("moving_front.prob");
    for out in [&a, &b] {
        let args = [
            "make-synthetic",
            "--problem",
            path_str(&prob),
            "--n",
            "16",
            "--noise",
            "0.05",
            "--seed",
            "9",
        ];
        let mut argv = args.to_vec();
        argv.extend(["--out", path_str(out)]);
        assert_eq!(run(&argv), 0);
    }
    assert_eq!(
        fs::read(a.join("nu.csv")).unwrap(),
        fs::read(b.join("nu.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("mu.csv")).unwrap(),
        fs::read(b.join("mu.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.prob");
    assert_eq!(
        stefan(&[
            "invert",
            "--problem",
            path_str(&missing),
            "--n",
            "8",
            "--out",
            path_str(&out)
        ]),
        2
    );
    assert_eq!(stefan(&["no-such-command"]), 2);
    assert_eq!(stefan(&["--help"]), 0);

    let bad = dir.path().join("bad.prob");
    fs::write(&bad, "T = 1.0\nl = 2.0\n").unwrap();
    assert_eq!(
        stefan(&[
            "forward",
            "--problem",
            path_str(&bad),
            "--n",
            "8",
            "--out",
            path_str(&out)
        ]),
        2
    );

    // c = 1/tau makes the constant vector a null vector of the first step system
    let singular = dir.path().join("singular.prob");
    fs::write(
        &singular,
        "T = 1.0\nl = 2.0\ns0 = 1.0\ndelta = 0.5\nR = 10.0\n[coefficients]\nc = \"4\"\nphi = \"1\"\n[control]\ns = \"1\"\ng = \"0\"\n",
    )
    .unwrap();
    assert_eq!(
        stefan(&[
            "forward",
            "--problem",
            path_str(&singular),
            "--n",
            "4",
            "--out",
            path_str(&out)
        ]),
        3
    );
    assert_eq!(
        stefan(&[
            "forward",
            "--problem",
            path_str(&singular),
            "--n",
            "5",
            "--out",
            path_str(&out)
        ]),
        0
    );
}

#[test]
fn converge_sweep() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let prob = problems().join("manufactured.prob");
    assert_eq!(
        run(&[
            "converge",
            "--problem",
            path_str(&prob),
            "--n",
            "8,16,32,64",
            "--out",
            path_str(&out)
        ]),
        0
    );
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert!(sweep.starts_with("n,tau,h,total,boundary_term,front_term,s_norm_sq,g_norm_sq,first_lhs,first_rhs,second_lhs,second_rhs,first_ratio,second_ratio,max_error,front_error\n"));
    let err = column(&sweep, "front_error");
    assert!(err.windows(2).all(|w| w[1] < w[0]), "{err:?}");
}

#[test]
fn diagnose_reports_small_identity_residual() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let prob = problems().join("moving_front.prob");
    assert_eq!(
        run(&[
            "diagnose",
            "--problem",
            path_str(&prob),
            "--n",
            "16",
            "--out",
            path_str(&out)
        ]),
        0
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnose.json")).unwrap()).unwrap();
    assert!(report["identity_max_relative"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["identity_per_layer"].as_array().unwrap().len(), 16);
    assert!(report["weak_residual"].as_f64().unwrap().abs() < 0.2);
}

#[test]
fn synthetic_data_then_invert() {
    let dir = TempDir::new().unwrap();
    let synth = dir.path().join("synth");
    let prob = problems().join("moving_front.prob");
    assert_eq!(
        run(&[
            "make-synthetic",
            "--problem",
            path_str(&prob),
            "--n",
            "8",
            "--out",
            path_str(&synth)
        ]),
        0
    );

    let inverse = dir.path().join("inverse.prob");
    fs::write(
        &inverse,
        format!(
            "T = 1.0\nl = 2.0\ns0 = 1.0\ndelta = 0.5\nR = 10.0\n\
             [coefficients]\nf = \"-x\"\nphi = \"x^2 + x\"\nchi = \"3 + t + 0.5*t^2\"\n\
             [measurements]\nnu = {{ csv = \"{}\", interpolation = \"step\" }}\nmu = {{ csv = \"{}\", interpolation = \"step\" }}\n\
             [control]\ns = \"1 + 0.25*t^2\"\ng = \"1 + t\"\n",
            synth.join("nu.csv").display(),
            synth.join("mu.csv").display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let args = [
        "invert",
        "--problem",
        path_str(&inverse),
        "--n",
        "8",
        "--mask",
        "flux",
        "--init",
        "reference-s",
        "--max-iters",
        "50",
        "--out",
        path_str(&out),
    ];
    assert_eq!(run(&args), 0);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,total,boundary_term,front_term,step,evals\n"));
    let total = column(&trace, "total");
    assert!(total.windows(2).all(|w| w[1] <= w[0]));
    assert!(total.last().unwrap() < &(1e-4 * total[0]), "{total:?}");
    let control = fs::read_to_string(out.join("control.csv")).unwrap();
    assert_eq!(column(&control, "g_k").len(), 9);
    // s was held at the reference
    let s = column(&control, "s_k");
    assert!((s[8] - 1.25).abs() < 1e-12);
}
