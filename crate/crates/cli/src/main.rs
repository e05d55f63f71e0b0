mod args;
mod commands;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use commands::{execute, CliError, Run};
use manifest::{strip_threads, FileDigest, Manifest};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads(cli.threads);
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: Option<usize>) {}

fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    if let Command::Replay = cli.command {
        let path = cli
            .manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("replay needs --manifest".into()))?;
        return replay(path);
    }
    let result = execute(&cli.command, cli.format, cli.out.as_deref())?;
    let manifest = build_manifest(cli, argv, &result);
    write_outputs(&result)?;
    let target = cli
        .manifest
        .clone()
        .or_else(|| cli.out.as_ref().map(|o| sibling(o, ".manifest.json")));
    if let Some(p) = target {
        let mut body = serde_json::to_vec_pretty(&manifest).expect("json");
        body.push(b'\n');
        write_file(&p, &body)?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_manifest(cli: &Cli, argv: &[String], run: &Run) -> Manifest {
    Manifest {
        tool: "chaintrace".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv: strip_threads(argv),
        config: json!({
            "format": cli.format,
            "command": cli.command,
        }),
        seed: run.seed,
        inputs: run.inputs.clone(),
        outputs: output_digests(run),
        summary: run.summary.clone(),
    }
}

fn output_digests(run: &Run) -> Vec<FileDigest> {
    run.outputs
        .iter()
        .map(|(role, path, data)| FileDigest::of(role, path.as_deref(), data))
        .collect()
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, data).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_outputs(run: &Run) -> Result<(), CliError> {
    for (_, path, data) in &run.outputs {
        match path {
            Some(p) => write_file(p, data)?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(data)
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::Config(format!("stdout: {e}")))?;
            }
        }
    }
    Ok(())
}

fn mismatch(message: String, expected: &FileDigest, actual: &str) -> CliError {
    CliError::Data {
        message,
        detail: json!({ "path": expected.path, "expected": expected.sha256, "actual": actual }),
    }
}

fn replay(path: &Path) -> Result<(), CliError> {
    let data =
        std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&data)
        .map_err(|e| CliError::Config(format!("{}: not a manifest: {e}", path.display())))?;
    for d in &manifest.inputs {
        let bytes = std::fs::read(&d.path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", d.path)))?;
        let now = FileDigest::of(&d.role, Some(Path::new(&d.path)), &bytes);
        if now.sha256 != d.sha256 {
            return Err(mismatch(format!("input {} changed since the run", d.path), d, &now.sha256));
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("chaintrace".to_owned()).chain(manifest.argv.iter().cloned()))
        .map_err(|e| CliError::Config(format!("recorded arguments no longer parse: {e}")))?;
    if let Command::Replay = cli.command {
        return Err(CliError::Config("a replay manifest cannot replay itself".into()));
    }
    let result = execute(&cli.command, cli.format, cli.out.as_deref())?;
    let got = output_digests(&result);
    if got.len() != manifest.outputs.len() {
        return Err(CliError::data(format!(
            "replay produced {} outputs, manifest lists {}",
            got.len(),
            manifest.outputs.len()
        )));
    }
    for (want, have) in manifest.outputs.iter().zip(&got) {
        if want.sha256 != have.sha256 {
            return Err(mismatch(format!("output {} differs", want.path), want, &have.sha256));
        }
    }
    write_outputs(&result)?;
    eprintln!("replay ok: {} output(s) match {}", got.len(), path.display());
    Ok(())
}
