use std::path::Path;
use std::process::{Command, Output};

fn nandsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nandsim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn layout_prints_reference_table() {
    let o = nandsim(&["liraid-layout", "--chips", "4", "--wordlines", "4"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.starts_with("Wordline  Layer  Page  Chip 0   Chip 1   Chip 2   Chip 3\n0         0      MSB   Group 0  Blank    Group 4  Group 3\n"));
    assert!(s.contains("3         3      LSB   Blank    Group 4  Group 3  Group 0\n"));
    assert!(s.contains("blank overhead 25.00%"));
}

#[test]
fn layout_rejects_bad_geometry() {
    let o = nandsim(&["liraid-layout", "--chips", "3", "--wordlines", "4"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8(o.stderr).unwrap().contains("do not divide"));
}

#[test]
fn config_or_seed_required() {
    let o = nandsim(&["sweep"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = 1\nretention_days = 3\n").unwrap();
    let o = nandsim(&["sweep", "-c", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("retention_days"));
}

#[test]
fn out_of_domain_grid_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("far.toml");
    std::fs::write(&p, "seed = 1\npolicies = [\"sota\"]\npec_grid = [0, 25000]\n").unwrap();
    let out = dir.path().join("out");
    let o = nandsim(&["sweep", "-c", p.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stderr).unwrap().contains("extrapolation"));
}

fn sweep_into(dir: &Path) -> String {
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "seed = 5\npec_grid = [0, 5000, 10000]\n").unwrap();
    let o = nandsim(&["sweep", "-c", cfg.to_str().unwrap(), "-o", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(dir.join("sweep.csv")).unwrap()
}

#[test]
fn sweep_writes_csv_with_provenance_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let csv = sweep_into(dir.path());
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "pec,policy,avg_rber,worst_rber,seed");
    // 3 PECs x 5 default policies
    assert_eq!(lines.count(), 15);

    let again = tempfile::tempdir().unwrap();
    assert_eq!(sweep_into(again.path()), csv);

    let o = nandsim(&["plot", dir.path().join("sweep.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["sweep_avg.svg", "sweep_worst.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn plot_rejects_unknown_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    let o = nandsim(&["plot", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
