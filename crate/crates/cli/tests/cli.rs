use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use pcqc::harness::io::{
    read_cloud, read_field, write_boundary, write_cloud, write_field, BoundaryData, Field,
};
use pcqc::harness::{grid, AnalyticMap, Chart};
use pcqc::pointcloud::PointCloud;
use pcqc::Complex64;
use tempfile::TempDir;

fn pcqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcqc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn save_cloud(p: &str, pc: &PointCloud) {
    write_cloud(File::create(p).unwrap(), pc).unwrap();
}

fn save_field(p: &str, f: &Field) {
    write_field(File::create(p).unwrap(), f).unwrap();
}

fn load_field(p: &str) -> Field {
    read_field(std::io::BufReader::new(File::open(p).unwrap())).unwrap()
}

/// Grid cloud with the exact map and its boundary data written to `dir`.
fn planar_setup(dir: &TempDir, n: usize) -> (PointCloud, Vec<usize>) {
    let s = grid(n).unwrap();
    save_cloud(&path(dir, "cloud.pc"), &s.cloud);
    let map = AnalyticMap::F1;
    let targets: Vec<[f64; 2]> = (0..s.cloud.len())
        .map(|i| map.eval(s.cloud.point2(i)))
        .collect();
    save_field(&path(dir, "map.field"), &Field::from_vec2(&targets));
    let mu: Vec<Complex64> = (0..s.cloud.len())
        .map(|i| map.bc(s.cloud.point2(i)).unwrap())
        .collect();
    save_field(&path(dir, "mu.field"), &Field::from_complex(&mu));
    let data = BoundaryData {
        indices: s.boundary.clone(),
        values: s.boundary.iter().map(|&i| targets[i]).collect(),
    };
    write_boundary(File::create(path(dir, "bnd.txt")).unwrap(), &data).unwrap();
    (s.cloud, s.boundary)
}

#[test]
fn bc_matches_the_exact_coefficient() {
    let dir = TempDir::new().unwrap();
    let (pc, _) = planar_setup(&dir, 16);
    let out = path(&dir, "bc.field");
    let o = pcqc(&[
        "bc",
        &path(&dir, "cloud.pc"),
        &path(&dir, "map.field"),
        "--flavor",
        "standard",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mu = load_field(&out).complex().unwrap();
    assert_eq!(mu.len(), pc.len());
    let worst = (0..pc.len())
        .map(|i| (mu[i] - AnalyticMap::F1.bc(pc.point2(i)).unwrap()).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "{worst}");
}

#[test]
fn solve_recovers_the_map() {
    let dir = TempDir::new().unwrap();
    let (pc, _) = planar_setup(&dir, 16);
    for method in ["collocation", "efg"] {
        let out = path(&dir, "solved.field");
        let o = pcqc(&[
            "solve",
            &path(&dir, "cloud.pc"),
            &path(&dir, "mu.field"),
            "--formulation",
            "glaplace",
            "--method",
            method,
            "--boundary",
            &path(&dir, "bnd.txt"),
            "--out",
            &out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let got = load_field(&out).vec2().unwrap();
        let worst = (0..pc.len())
            .map(|i| {
                let e = AnalyticMap::F1.eval(pc.point2(i));
                (got[i][0] - e[0]).hypot(got[i][1] - e[1])
            })
            .fold(0.0, f64::max);
        assert!(worst < 5e-2, "{method}: {worst}");
    }
}

#[test]
fn bc_surface_and_parameterize_run() {
    let dir = TempDir::new().unwrap();
    let s = grid(14).unwrap();
    save_cloud(&path(&dir, "plane.pc"), &s.cloud);
    let pts: Vec<[f64; 3]> = (0..s.cloud.len())
        .map(|i| Chart::Phi2.eval(s.cloud.point2(i)))
        .collect();
    save_field(&path(&dir, "lift.field"), &Field::from_vec3(&pts));
    let o = pcqc(&[
        "bc-surface",
        &path(&dir, "plane.pc"),
        &path(&dir, "lift.field"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with(&format!("FIELD complex {}", s.cloud.len())));

    save_cloud(
        &path(&dir, "surface.pc"),
        &PointCloud::from_points3(&pts).unwrap(),
    );
    for domain in ["rect", "disk"] {
        let out = path(&dir, "param.pc");
        let o = pcqc(&[
            "parameterize",
            &path(&dir, "surface.pc"),
            "--boundary",
            domain,
            "--out",
            &out,
        ]);
        assert!(
            o.status.success(),
            "{domain}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let plane = read_cloud(std::io::BufReader::new(File::open(&out).unwrap())).unwrap();
        assert_eq!((plane.dim(), plane.len()), (2, s.cloud.len()));
        assert!(String::from_utf8_lossy(&o.stderr).contains("e_grade"));
    }
}

#[test]
fn convergence_emits_a_report() {
    let dir = TempDir::new().unwrap();
    let spec = path(&dir, "spec.json");
    std::fs::write(
        &spec,
        r#"{"name": "pcbc", "instance": "fig2_map", "resolutions": [12, 16, 24], "quantities": ["pcbc"]}"#,
    )
    .unwrap();
    let o = pcqc(&["convergence", &spec, "--seed", "3", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["spec"]["seed"], 3);
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert!(report["slopes"]["pcbc/diffuse"].as_f64().unwrap() > 1.5);
}

#[test]
fn weights_bench_writes_csv() {
    let o = pcqc(&["weights-bench", "--sizes", "12,16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3 * 2, "{text}");
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = TempDir::new().unwrap();
    let missing = pcqc(&["bc", "/nonexistent/cloud", "/nonexistent/map"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = path(&dir, "bad.pc");
    std::fs::write(&bad, "PC2 2\n0 0\n1 oops\n").unwrap();
    let o = pcqc(&["bc", &bad, &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let (pc, _) = planar_setup(&dir, 10);
    let big = vec![Complex64::new(1.5, 0.0); pc.len()];
    save_field(&path(&dir, "big.field"), &Field::from_complex(&big));
    let o = pcqc(&[
        "solve",
        &path(&dir, "cloud.pc"),
        &path(&dir, "big.field"),
        "--boundary",
        &path(&dir, "bnd.txt"),
    ]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let line = path(&dir, "line.pc");
    let pts: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 / 29.0, 0.0]).collect();
    save_cloud(&line, &PointCloud::from_points2(&pts).unwrap());
    save_field(&path(&dir, "line.field"), &Field::from_vec2(&pts));
    let o = pcqc(&["bc", &line, &path(&dir, "line.field")]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unknown_flavor_is_rejected() {
    let o = pcqc(&["bc", "a", "b", "--flavor", "fuzzy"]);
    assert!(!o.status.success());
    assert!(Path::new(env!("CARGO_BIN_EXE_pcqc")).exists());
}
