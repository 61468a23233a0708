//! Subprocess execution with a wall-clock timeout and captured output.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: Option<ExitStatus>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub elapsed: Duration,
    pub timed_out: bool,
}

impl RunOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.status.map(|s| s.success()).unwrap_or(false)
    }

    /// Exit code, or -1 when killed by a signal or by the timeout.
    pub fn exit_code(&self) -> i32 {
        self.status.and_then(|s| s.code()).unwrap_or(-1)
    }
}

/// Environment handling for spawned processes. `None` passes the parent
/// environment through unchanged.
#[derive(Debug, Clone, Default)]
pub struct EnvPolicy {
    pub allowlist: Option<Vec<String>>,
}

impl EnvPolicy {
    fn apply(&self, cmd: &mut Command) {
        if let Some(allow) = &self.allowlist {
            cmd.env_clear();
            for key in allow {
                if let Ok(v) = std::env::var(key) {
                    cmd.env(key, v);
                }
            }
        }
    }
}

pub fn run(
    program: &str,
    args: &[String],
    stdin: Option<&[u8]>,
    cwd: Option<&Path>,
    timeout: Duration,
    env: &EnvPolicy,
) -> std::io::Result<RunOutput> {
    let mut cmd = Command::new(program);
    cmd.args(args)
        .stdin(if stdin.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    env.apply(&mut cmd);

    let start = Instant::now();
    let mut child = cmd.spawn()?;

    let writer = match (stdin, child.stdin.take()) {
        (Some(bytes), Some(mut pipe)) => {
            let bytes = bytes.to_vec();
            // A child that exits early closes the pipe; the write error is expected.
            Some(thread::spawn(move || {
                let _ = pipe.write_all(&bytes);
            }))
        }
        _ => None,
    };
    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let (status, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => (Some(status), false),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            (None, true)
        }
    };
    let elapsed = start.elapsed();
    if let Some(w) = writer {
        let _ = w.join();
    }
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(RunOutput {
        status,
        stdout,
        stderr,
        elapsed,
        timed_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_stdout_and_stdin() {
        let out = run(
            "cat",
            &[],
            Some(b"hello"),
            None,
            Duration::from_secs(5),
            &EnvPolicy::default(),
        )
        .unwrap();
        assert!(out.success());
        assert_eq!(out.stdout, b"hello");
    }

    #[test]
    fn timeout_kills_child() {
        let out = run(
            "sleep",
            &["5".into()],
            None,
            None,
            Duration::from_millis(100),
            &EnvPolicy::default(),
        )
        .unwrap();
        assert!(out.timed_out);
        assert!(!out.success());
        assert_eq!(out.exit_code(), -1);
    }

    #[test]
    fn allowlist_clears_environment() {
        let policy = EnvPolicy {
            allowlist: Some(vec!["PATH".into()]),
        };
        let out = run("env", &[], None, None, Duration::from_secs(5), &policy).unwrap();
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.lines().all(|l| l.starts_with("PATH=")));
    }
}
