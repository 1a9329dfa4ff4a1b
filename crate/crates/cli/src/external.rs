//! External commands as model stand-ins: bytes on stdin, bytes on stdout.

use std::io::Write;
use std::process::{Command, Stdio};

use anyhow::{bail, Context, Result};
use b2n_core::synthcompositor::reskin::Generator;
use b2n_core::{Error, ImageBuffer};

/// The command after an `exec:` prefix.
pub fn exec_command(spec: &str) -> Option<&str> {
    spec.strip_prefix("exec:").map(str::trim).filter(|c| !c.is_empty())
}

/// Runs `command` through `sh -c`, feeding `input` and returning stdout.
pub fn run_exec(command: &str, input: &[u8]) -> Result<Vec<u8>> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .with_context(|| format!("spawning {command:?}"))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload = input.to_vec();
    // write from a thread so a command that streams output early cannot
    // deadlock on a full pipe
    let writer = std::thread::spawn(move || stdin.write_all(&payload));
    let output = child.wait_with_output().with_context(|| format!("waiting for {command:?}"))?;
    // a command may exit without reading all of its input
    let _ = writer.join();
    if !output.status.success() {
        bail!("{command:?} exited with {}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim());
    }
    Ok(output.stdout)
}

pub struct ExecGenerator {
    pub command: String,
}

impl Generator for ExecGenerator {
    fn generate(&self, representation: &ImageBuffer, _source: &ImageBuffer) -> b2n_core::Result<ImageBuffer> {
        let mut png = Vec::new();
        representation.write_png(&mut png)?;
        let out = run_exec(&self.command, &png).map_err(|e| Error::GeneratorFailure(format!("{e:#}")))?;
        ImageBuffer::decode_png(&out).map_err(|e| Error::GeneratorFailure(format!("output is not a PNG: {e}")))
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}
