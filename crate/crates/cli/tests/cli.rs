use std::process::Command;

use ips_cli::config::ExperimentConfig;
use ips_cli::error::CliError;
use ips_cli::run::run;
use ips_cli::table::{embedded_config, sha256_hex};

fn ips(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ips")).args(args).output().expect("binary runs")
}

fn data_lines(stdout: &[u8]) -> String {
    String::from_utf8_lossy(stdout).lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn output_is_identical_across_thread_counts() {
    for cmd in [
        &["evolve", "-p", "lattice=8x8", "-p", "reps=40", "-p", "model=lv(alpha=0.9,kernel=nn)"][..],
        &["evolve", "-p", "lattice=8x8", "-p", "reps=40", "-p", "engine=graphical"][..],
        &["dual", "-p", "lattice=8x8", "-p", "reps=200"][..],
    ] {
        let one = ips(&[&["--threads", "1", "--seed", "5"][..], cmd].concat());
        let four = ips(&[&["--threads", "4", "--seed", "5"][..], cmd].concat());
        assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
        assert_eq!(data_lines(&one.stdout), data_lines(&four.stdout));
        assert!(data_lines(&one.stdout).lines().count() > 1);
    }
}

#[test]
fn same_config_reproduces_rows() {
    let cfg = ExperimentConfig::parse("command = evolve\nlattice = 6x6\nreps = 30\nseed = 9\n").unwrap();
    let a = run(&cfg).unwrap().table;
    let b = run(&cfg).unwrap().table;
    assert_eq!(a.rows, b.rows);
    let other = ExperimentConfig { seed: 10, ..cfg };
    assert_ne!(run(&other).unwrap().table.rows, a.rows);
}

#[test]
fn unknown_key_is_a_config_error() {
    match ExperimentConfig::parse("reps = 3\nwidht = 4\n") {
        Err(CliError::Config { line, col, .. }) => assert_eq!((line, col), (2, 1)),
        other => panic!("expected a config error, got {other:?}"),
    }
    let out = ips(&["evolve", "-p", "widht=4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("widht"));
}

#[test]
fn asymmetric_kernel_fails_the_lattice_gate() {
    let out = ips(&["acceptance", "--inject-kernel", "1,0:0.7;-1,0:0.1;0,1:0.1;0,-1:0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("FAIL criterion  0 lattice"), "{text}");
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn embedded_config_reproduces_hash_and_rows() {
    let dir = std::env::temp_dir().join(format!("ips-cli-test-{}", std::process::id()));
    let path = dir.join("out.csv");
    let out = ips(&["perc", "--seed", "3", "--out", path.to_str().unwrap(), "-p", "n_max=20", "-p", "reps=50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg_text = embedded_config(&text);
    let hash = text.lines().find_map(|l| l.strip_prefix("# config_sha256: ")).unwrap();
    assert_eq!(sha256_hex(&cfg_text), hash);
    let cfg = ExperimentConfig::parse(&cfg_text).unwrap();
    let again = run(&cfg).unwrap().table;
    assert_eq!(again.data_csv().unwrap(), data_lines(text.as_bytes()) + "\n");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn verify_reports_pass_through_exit_code() {
    let out = ips(&["verify", "--suite", "duality", "-p", "lattice=3x3"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS"));
}
