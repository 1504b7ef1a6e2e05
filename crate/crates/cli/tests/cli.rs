use std::process::Command;

fn geotomo(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_geotomo")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn forward_then_adjoint_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let field = dir.path().join("field.csv");
    let grid = ["-R", "4", "-P", "12", "-Q", "12"];
    let data_s = data.to_str().unwrap();
    geotomo(&[&["forward", "--phantom", "f2", "--alpha", "0.1", "--out", data_s][..], &grid].concat());
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("p,q,mu,phi,value\n"));
    assert_eq!(text.lines().count(), 1 + 12 * 12);

    for method in ["integral", "pde"] {
        let args = [&["adjoint", "--data", data_s, "--alpha", "0.1", "--method", method, "--out", field.to_str().unwrap()][..], &grid].concat();
        geotomo(&args);
        let text = std::fs::read_to_string(&field).unwrap();
        assert!(text.starts_with("r,p,x1,x2,c0,c1\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 12);
    }
}

#[test]
fn reconstruct_writes_error_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotomo(&["reconstruct", "-R", "6", "-P", "20", "-Q", "20", "--max-iters", "50", "--out", dir.path().to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("relative error "));
    let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(errors.starts_with("iteration,error,residual\n0,"));
}

#[test]
fn unknown_experiment_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_geotomo")).args(["run", "table9"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("table1"));
}
