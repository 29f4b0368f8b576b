//! Compiles a C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_whole_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/twinsim.h")).unwrap();
    for name in [
        "twinsim_config_default",
        "twinsim_config_from_str",
        "twinsim_config_from_file",
        "twinsim_config_set",
        "twinsim_config_validate",
        "twinsim_config_free",
        "twinsim_run(",
        "twinsim_run_metrics",
        "twinsim_run_decisions_jsonl",
        "twinsim_run_write_outputs",
        "twinsim_run_free",
        "twinsim_string_free",
        "twinsim_last_error",
        "twinsim_version",
        "typedef struct TwinsimConfig TwinsimConfig;",
        "typedef struct TwinsimRun TwinsimRun;",
        "TWINSIM_STATUS_PANIC = 5",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libtwinsim_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(format!("{manifest}/include"))
        .arg(format!("{manifest}/tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.starts_with(&format!("twinsim {}: blocks=", env!("CARGO_PKG_VERSION"))),
        "{stdout}"
    );
}
