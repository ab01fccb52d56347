//! End-to-end checks of the experiment binary: schema stability per kind,
//! byte-identical reruns and the summary command.

use std::path::{Path, PathBuf};
use std::process::Command;

use dmimo_secrecy::cli::config::ExperimentKind;
use dmimo_secrecy::cli::table::{parse_csv, COLUMNS};

const BIN: &str = env!("CARGO_BIN_EXE_dmimo-secrecy");

/// Small campaigns so each kind runs in well under a second.
fn small_config(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::ApproxError => "replications = 3\nmc_trials = 500\n[sweep]\nparameter = \"m_eve\"\nvalues = [2, 4]\n",
        ExperimentKind::Convergence => "replications = 1\ngrid = 30\n",
        ExperimentKind::IterationCount => "replications = 3\n[sweep]\nparameter = \"k_tx\"\nvalues = [2, 3]\nalso = [\"n_rx\"]\n",
        ExperimentKind::RateVsK => "replications = 2\n[sweep]\nparameter = \"k_tx\"\nvalues = [1, 2]\nalso = [\"n_rx\"]\n",
        ExperimentKind::RateVsRadius => "replications = 2\n[sweep]\nparameter = \"r_t\"\nvalues = [1, 9]\n",
    }
}

fn run(kind: ExperimentKind, dir: &Path, out: &str, seed: u64) -> PathBuf {
    let config = dir.join(format!("{kind}.toml"));
    std::fs::write(&config, small_config(kind)).unwrap();
    let out = dir.join(out);
    let status = Command::new(BIN)
        .arg(kind.name())
        .args(["--config", config.to_str().unwrap(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{kind}: {}", String::from_utf8_lossy(&status.stderr));
    out
}

/// Column header plus the `metric[@iteration-flag]` sequence of one replication.
fn schema(text: &str) -> String {
    let table = parse_csv(text).unwrap();
    let first = (table.rows[0].sweep_value, table.rows[0].replication);
    let mut lines = vec![COLUMNS.join(",")];
    for r in table.rows.iter().filter(|r| (r.sweep_value, r.replication) == first) {
        let line = match r.iteration {
            Some(_) => format!("{} per-iteration", r.metric),
            None => r.metric.clone(),
        };
        if !lines.contains(&line) {
            lines.push(line);
        }
    }
    lines.join("\n") + "\n"
}

#[test]
fn schema_matches_golden_file_per_kind() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ExperimentKind::ALL {
        let text = std::fs::read_to_string(run(kind, dir.path(), "a.csv", 5)).unwrap();
        let header_row = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header_row, COLUMNS.join(","));
        let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{kind}.schema"));
        let expected = std::fs::read_to_string(&golden).unwrap_or_else(|_| panic!("missing {}", golden.display()));
        assert_eq!(schema(&text), expected, "{kind}");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ExperimentKind::ApproxError, ExperimentKind::IterationCount, ExperimentKind::Convergence] {
        let a = std::fs::read(run(kind, dir.path(), "a.csv", 11)).unwrap();
        let b = std::fs::read(run(kind, dir.path(), "b.csv", 11)).unwrap();
        let c = std::fs::read(run(kind, dir.path(), "c.csv", 12)).unwrap();
        assert_eq!(a, b, "{kind} is not reproducible");
        assert_ne!(a, c, "{kind} ignores the seed");
        assert!(!a.contains(&b'\r'));
    }
}

#[test]
fn header_records_resolved_config_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(run(ExperimentKind::RateVsK, dir.path(), "a.csv", 3)).unwrap();
    assert!(text.starts_with(&format!("# dmimo-secrecy {}\n", env!("CARGO_PKG_VERSION"))));
    for needle in ["# seed = 3", "# replications = 2", "# d_e = 40.0", "# parameter = \"k_tx\""] {
        assert!(text.contains(needle), "header lacks {needle}");
    }
}

#[test]
fn summarize_reads_written_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(ExperimentKind::IterationCount, dir.path(), "a.csv", 1);
    let summary = Command::new(BIN).arg("summarize").arg(&out).output().unwrap();
    assert!(summary.status.success());
    let text = String::from_utf8(summary.stdout).unwrap();
    assert!(text.contains("iterations"));
    assert!(text.lines().any(|l| l.starts_with("PASS") || l.starts_with("FAIL") || l.starts_with("INFO")));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing/dir/a.csv");
    let status = Command::new(BIN)
        .args(["rate-vs-radius", "--replications", "1", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(!out.exists());
}
