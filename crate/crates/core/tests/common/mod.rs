#![allow(dead_code)]

use hida::emit::{emit, harness, harness_input, parse_harness_output, Plain};
use hida::interp::{self, Buffers};
use hida::ir::Program;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

pub fn cxx() -> Option<String> {
    ["g++", "c++", "clang++"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
}

/// Builds the plain emission of `program` plus the stdin harness.
pub fn build_host(program: &Program, dir: &Path, compiler: &str) -> Result<PathBuf, String> {
    let e = emit(program, &Plain).map_err(|e| e.to_string())?;
    for (name, text) in e.files() {
        std::fs::write(dir.join(name), text).map_err(|e| e.to_string())?;
    }
    let main = dir.join(format!("{}_main.cpp", program.name));
    std::fs::write(&main, harness(program)).map_err(|e| e.to_string())?;
    let exe = dir.join(&program.name);
    let out = Command::new(compiler)
        .args(["-std=c++17", "-O1", "-ffp-contract=off", "-fwrapv", "-o"])
        .arg(&exe)
        .arg(dir.join(format!("{}_top.cpp", program.name)))
        .arg(&main)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(exe)
}

pub fn run_host(program: &Program, exe: &Path, inputs: &Buffers) -> Result<Buffers, String> {
    let mut child = Command::new(exe)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child
        .stdin
        .take()
        .expect("piped")
        .write_all(harness_input(program, inputs).as_bytes())
        .map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("harness exited with {}", out.status));
    }
    parse_harness_output(program, &String::from_utf8_lossy(&out.stdout))
}

/// Compiles `program` on the host and compares it with the interpreter on
/// `seeds` random inputs.
pub fn host_matches_interp(program: &Program, seeds: u64, compiler: &str) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let exe = build_host(program, dir.path(), compiler)?;
    for seed in 0..seeds {
        let inputs = interp::random_inputs(program, seed);
        let want = interp::run(program, &inputs).map_err(|e| e.to_string())?;
        let got = run_host(program, &exe, &inputs)?;
        interp::compare(&want, &got, 0).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(())
}
