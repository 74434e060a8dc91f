use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn linma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linma"))
        .args(args)
        .env_remove("LINMA_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const DISC: &str = "[domain]\nkind = \"ball\"\ndimension = 2\nextents = [1.0]\n";

fn run(config: &Path, out: &Path) -> Output {
    linma(&["run", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
}

#[test]
fn list_is_sorted_and_stable() {
    let a = linma(&["list"]);
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for group in ["potential ", "domain ", "experiment "] {
        let names: Vec<&str> = lines.iter().filter(|l| l.starts_with(group)).copied().collect();
        assert!(!names.is_empty(), "{group}");
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }
    for p in ["quadratic", "anisotropic", "perturbed", "radial-power"] {
        assert!(lines.contains(&format!("potential {p}").as_str()), "{p}");
    }
    assert_eq!(text, String::from_utf8(linma(&["list"]).stdout).unwrap());
}

#[test]
fn identity_suite_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/identity-suite.toml");
    let out = run(&cfg, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("identity-suite.csv").exists());
}

#[test]
fn missing_potential_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("kind = \"harnack\"\nresolution = 65\n{DISC}"));
    let out = run(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("potential"));
}

#[test]
fn unknown_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("kind = \"nope\"\nresolution = 65\n{DISC}"));
    let out = run(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind"));
}

#[test]
fn greens_decay_report_has_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.toml",
        &format!("kind = \"greens-decay\"\nresolution = 65\n[potential]\nname = \"quadratic\"\n{DISC}"),
    );
    let out_dir = dir.path().join("out");
    let out = run(&cfg, &out_dir);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let rec = &report["records"][0];
    assert!(rec["g_fit"]["slope"].is_f64());
    assert!(rec["ma_gradient_fit"]["slope"].is_f64());
    let csv = std::fs::read_to_string(out_dir.join("greens-decay.csv")).unwrap();
    assert!(csv.starts_with("case,potential,resolution,n,g_slope,"));
}

#[test]
fn unwritable_output_dir_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(
        dir.path(),
        "g.toml",
        &format!("kind = \"greens-decay\"\nresolution = 33\n[potential]\nname = \"quadratic\"\n{DISC}"),
    );
    let out = run(&cfg, &blocker.join("out"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn same_seed_reproduces_sampled_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "kind = \"holder\"\nresolution = 65\nseed = 11\n[potential]\nname = \"quadratic\"\n{DISC}\
         [params]\nbudget = 1500\ndensity = {{ kind = \"constant\", value = 1.0 }}\n"
    );
    let cfg = write_config(dir.path(), "h.toml", &text);
    let read = |sub: &str| {
        let out = run(&cfg, &dir.path().join(sub));
        assert!(out.status.code().is_some_and(|c| c == 0 || c == 3));
        std::fs::read_to_string(dir.path().join(sub).join("holder.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}
