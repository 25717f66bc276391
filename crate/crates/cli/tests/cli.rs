use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hida(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hida"))
        .args(args)
        .output()
        .expect("spawn hida")
}

fn example(name: &str) -> String {
    let p: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "core",
        "examples",
        &format!("{name}.hk"),
    ]
    .iter()
    .collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(report: &str, key: &str) -> u64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{report}"))
        .parse()
        .unwrap()
}

fn dir_arg(d: &Path) -> String {
    d.to_string_lossy().into_owned()
}

#[test]
fn compile_listing1_reports_plan() {
    let d = tempfile::tempdir().unwrap();
    let o = hida(&[
        "compile",
        &example("listing1"),
        "--max-parallel-factor",
        "32",
        "-o",
        &dir_arg(d.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout(&o);
    assert!(r.contains("Node0 = { parallel_factor = 4,"), "{r}");
    assert!(r.contains("Node1 = { parallel_factor = 2,"), "{r}");
    assert!(r.contains("Node2 = { parallel_factor = 32,"), "{r}");
    for f in ["listing1_top.cpp", "listing1.h", "listing1.report.toml"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let src = std::fs::read_to_string(d.path().join("listing1_top.cpp")).unwrap();
    assert!(src.contains("#pragma HLS dataflow"));
}

#[test]
fn dump_after_all_verifies() {
    let d = tempfile::tempdir().unwrap();
    let o = hida(&[
        "compile",
        &example("2mm-small"),
        "--dump-after=all",
        "-o",
        &dir_arg(d.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut dumps: Vec<PathBuf> = std::fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "hir"))
        .collect();
    dumps.sort();
    assert_eq!(dumps.len(), 9);
    for p in dumps {
        let v = hida(&["verify", &p.to_string_lossy()]);
        assert!(
            v.status.success(),
            "{}: {}",
            p.display(),
            String::from_utf8_lossy(&v.stderr)
        );
    }
}

#[test]
fn naive_plan_uses_at_least_as_many_banks() {
    let d = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec![
            "compile".to_string(),
            example("listing1"),
            "-o".into(),
            dir_arg(d.path()),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = hida(&args);
        assert!(o.status.success());
        field(&stdout(&o), "bram_banks")
    };
    assert!(run(&["--no-ia", "--no-ca"]) >= run(&[]));
}

#[test]
fn plain_mode_has_no_pragmas() {
    let d = tempfile::tempdir().unwrap();
    let o = hida(&[
        "compile",
        &example("jacobi2d-small"),
        "--plain",
        "-o",
        &dir_arg(d.path()),
    ]);
    assert!(o.status.success());
    let src = std::fs::read_to_string(d.path().join("jacobi2d_small_top.cpp")).unwrap();
    assert!(!src.contains("#pragma"));
}

#[test]
fn self_check_and_softfifo() {
    let d = tempfile::tempdir().unwrap();
    let o = hida(&[
        "compile",
        &example("diamond"),
        "--balance",
        "softfifo",
        "--self-check",
        "--seed",
        "7",
        "-o",
        &dir_arg(d.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("self_check = \"ok\""));
}

#[test]
fn exit_codes() {
    assert_eq!(hida(&["compile", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        hida(&["compile", &example("listing1"), "--balance", "sideways"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(hida(&[]).status.code(), Some(2));

    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.hk");
    std::fs::write(&bad, "array X[4] : f32 @ onchip;\nfor i in 0..4 { X[j] = 1.0; }\n").unwrap();
    let o = hida(&["compile", &bad.to_string_lossy(), "-o", &dir_arg(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.hk"));

    let ir = d.path().join("bad.hir");
    std::fs::write(
        &ir,
        "program p\narray X[4] f32 external interface\nfor i = 0 to 4\n  compute Y[i] = 1.0\n",
    )
    .unwrap();
    assert_eq!(hida(&["verify", &ir.to_string_lossy()]).status.code(), Some(1));
}

#[test]
fn cost_model_override() {
    let d = tempfile::tempdir().unwrap();
    let cm = d.path().join("cost.toml");
    std::fs::write(&cm, "frequency_mhz = 100.0\n").unwrap();
    let o = hida(&[
        "compile",
        &example("listing1"),
        "--cost-model",
        &cm.to_string_lossy(),
        "-o",
        &dir_arg(d.path()),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("frequency_mhz = 100\n"));
    std::fs::write(&cm, "no_such_constant = 1\n").unwrap();
    let o = hida(&[
        "compile",
        &example("listing1"),
        "--cost-model",
        &cm.to_string_lossy(),
        "-o",
        &dir_arg(d.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_single_cell() {
    let o = hida(&["ablate", &example("listing1"), "--factors", "8", "--variants", "ia+ca"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("max_parallel_factor,tile_size,variant,"));
}

#[test]
fn interp_is_seeded() {
    let a = hida(&["interp", &example("single-loop"), "--seed", "5"]);
    let b = hida(&["interp", &example("single-loop"), "--seed", "5"]);
    let c = hida(&["interp", &example("single-loop"), "--seed", "6"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn dump_stage() {
    let o = hida(&["dump", &example("listing1"), "--stage", "lower"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("node Node2"), "{s}");
}
