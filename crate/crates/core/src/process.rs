//! Child processes with a hard timeout.
//!
//! Every child is placed in its own process group so a timeout can take down
//! the whole tree, not just the shell that started it.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug)]
pub enum ProcessOutcome {
    Exited {
        status: ExitStatus,
        stdout: Vec<u8>,
        stderr: Vec<u8>,
    },
    TimedOut {
        stdout: Vec<u8>,
        stderr: Vec<u8>,
    },
    SpawnFailed(String),
}

impl ProcessOutcome {
    pub fn success(&self) -> bool {
        matches!(self, ProcessOutcome::Exited { status, .. } if status.success())
    }
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; a stale id only yields ESRCH.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

fn wait_deadline(child: &mut Child, timeout: Duration) -> Option<ExitStatus> {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() >= deadline => return None,
            Ok(None) => thread::sleep(POLL),
            Err(_) => return None,
        }
    }
}

/// Run `cmd`, feeding `stdin` and capturing stdout/stderr, killing the
/// process group if it outlives `timeout`.
pub fn run_captured(mut cmd: Command, stdin: Option<Vec<u8>>, timeout: Duration) -> ProcessOutcome {
    cmd.process_group(0)
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return ProcessOutcome::SpawnFailed(e.to_string()),
    };
    let writer = stdin.and_then(|bytes| {
        child.stdin.take().map(|mut pipe| {
            thread::spawn(move || {
                let _ = pipe.write_all(&bytes);
            })
        })
    });
    let out_reader = child.stdout.take().map(|mut pipe| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            buf
        })
    });
    let err_reader = child.stderr.take().map(|mut pipe| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            buf
        })
    });

    let status = wait_deadline(&mut child, timeout);
    if status.is_none() {
        kill_group(&mut child);
        let _ = child.wait();
    }
    if let Some(w) = writer {
        let _ = w.join();
    }
    let stdout = out_reader.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    let stderr = err_reader.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    match status {
        Some(status) => ProcessOutcome::Exited { status, stdout, stderr },
        None => ProcessOutcome::TimedOut { stdout, stderr },
    }
}

/// Outcome of a child whose output was redirected elsewhere by the caller.
#[derive(Debug)]
pub enum DetachedOutcome {
    Exited(ExitStatus),
    TimedOut,
    SpawnFailed(String),
}

/// Run `cmd` (stdout/stderr already configured by the caller) with `stdin`
/// piped in, enforcing `timeout`.
pub fn run_detached(mut cmd: Command, stdin: Vec<u8>, timeout: Duration) -> DetachedOutcome {
    cmd.process_group(0).stdin(Stdio::piped());
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return DetachedOutcome::SpawnFailed(e.to_string()),
    };
    let writer = child.stdin.take().map(|mut pipe| {
        thread::spawn(move || {
            let _ = pipe.write_all(&stdin);
        })
    });
    let status = wait_deadline(&mut child, timeout);
    if status.is_none() {
        kill_group(&mut child);
        let _ = child.wait();
    }
    if let Some(w) = writer {
        let _ = w.join();
    }
    match status {
        Some(s) => DetachedOutcome::Exited(s),
        None => DetachedOutcome::TimedOut,
    }
}

pub fn shell(command: &str) -> Command {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(command);
    cmd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_stdout_and_exit_status() {
        let out = run_captured(shell("echo hi; exit 3"), None, Duration::from_secs(5));
        match out {
            ProcessOutcome::Exited { status, stdout, .. } => {
                assert_eq!(status.code(), Some(3));
                assert_eq!(stdout, b"hi\n");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feeds_stdin() {
        let out = run_captured(shell("cat"), Some(b"abc".to_vec()), Duration::from_secs(5));
        assert!(out.success());
        match out {
            ProcessOutcome::Exited { stdout, .. } => assert_eq!(stdout, b"abc"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn timeout_kills_the_process_tree() {
        let start = Instant::now();
        let out = run_captured(shell("sleep 30 & sleep 30; wait"), None, Duration::from_millis(200));
        assert!(matches!(out, ProcessOutcome::TimedOut { .. }));
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn spawn_failure_is_reported() {
        let out = run_captured(Command::new("/nonexistent/binary"), None, Duration::from_secs(1));
        assert!(matches!(out, ProcessOutcome::SpawnFailed(_)));
    }
}
