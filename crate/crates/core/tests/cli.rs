use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_ajofdm");

const SMALL: &str = "name = \"small\"\nsnr_db = [20.0]\nsjr_db = [-5.0, 0.0, 5.0]\nn_blocks = 300\nruns = 2\nseed = 5\ncsi = [\"exact\"]\n";

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&std::ffi::OsStr]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["run".as_ref(), sc.as_os_str(), "-o".as_ref(), out.as_os_str()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["results.csv", "runs.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn one_record_per_sjr_point() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", &SMALL.replace("csi = [\"exact\"]", "csi = [\"exact\"]\ndetectors = [\"sic\"]"));
    let out = dir.path().join("out");
    let o = run(&["run".as_ref(), sc.as_os_str(), "-o".as_ref(), out.as_os_str()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3, "{text}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "bad.toml", "name = \"x\"\nsnr_dB = [10.0]\n");
    let o = run(&["validate".as_ref(), sc.as_os_str()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn shipped_scenarios_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in ["reference.toml", "quick.toml"] {
        let o = run(&["validate".as_ref(), root.join(name).as_os_str()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn scan_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", "name = \"scan\"\nsnr_db = [25.0]\nn_blocks = 4096\n");
    let out = dir.path().join("scan");
    let o = run(&["scan".as_ref(), sc.as_os_str(), "-o".as_ref(), out.as_os_str()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("objective.csv").exists());
    assert!(out.join("peaks.csv").exists());
}
