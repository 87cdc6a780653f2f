//! Shell execution with wall-clock supervision.
//!
//! Commands run under `sh -c` in their own process group so that a timeout
//! kill takes the whole tree down (otherwise grandchildren keep the output
//! pipes open and readers never see EOF).

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

const POLL_INTERVAL: Duration = Duration::from_millis(15);

#[derive(Debug, Clone)]
pub struct ProcessOutcome {
    /// `None` when the process was killed by the supervisor.
    pub exit_code: Option<i32>,
    pub killed: bool,
    pub stdout: String,
    pub stderr: String,
    pub duration_s: f64,
}

impl ProcessOutcome {
    /// stdout followed by stderr.
    pub fn combined_output(&self) -> String {
        let mut out = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&self.stderr);
        }
        out
    }
}

fn drain(reader: Option<impl Read + Send + 'static>) -> Arc<Mutex<Vec<u8>>> {
    let buffer = Arc::new(Mutex::new(Vec::new()));
    if let Some(mut reader) = reader {
        let sink = Arc::clone(&buffer);
        thread::spawn(move || {
            let mut chunk = [0u8; 8192];
            while let Ok(n) = reader.read(&mut chunk) {
                if n == 0 {
                    break;
                }
                sink.lock()
                    .expect("drain lock")
                    .extend_from_slice(&chunk[..n]);
            }
        });
    }
    buffer
}

fn kill_process_group(pid: u32) {
    // The child was spawned with process_group(0), so its pgid equals its pid.
    let _ = Command::new("kill")
        .arg("-9")
        .arg("--")
        .arg(format!("-{pid}"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status();
}

/// Run `sh -c cmd` in `cwd`, bounded by `budget_s` seconds of wall clock.
/// On timeout the whole process group is killed and `killed` is set.
pub fn run_shell_with_timeout(
    cmd: &str,
    cwd: &Path,
    budget_s: f64,
) -> std::io::Result<ProcessOutcome> {
    let start = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;

    let stdout_buf = drain(child.stdout.take());
    let stderr_buf = drain(child.stderr.take());
    let budget = Duration::from_secs_f64(budget_s.max(0.0));

    let (exit_code, killed) = loop {
        if let Some(status) = child.try_wait()? {
            break (status.code(), false);
        }
        if start.elapsed() >= budget {
            kill_process_group(child.id());
            let _ = child.wait();
            break (None, true);
        }
        thread::sleep(POLL_INTERVAL);
    };

    // Give the drain threads a moment to observe EOF; the group is dead so
    // the pipes are closed.
    thread::sleep(Duration::from_millis(5));
    let stdout = String::from_utf8_lossy(&stdout_buf.lock().expect("drain lock")).into_owned();
    let stderr = String::from_utf8_lossy(&stderr_buf.lock().expect("drain lock")).into_owned();

    Ok(ProcessOutcome {
        exit_code,
        killed,
        stdout,
        stderr,
        duration_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_output_and_exit_code() {
        let tmp = tempfile::tempdir().unwrap();
        let outcome =
            run_shell_with_timeout("echo hi; echo oops >&2; exit 3", tmp.path(), 10.0).unwrap();
        assert_eq!(outcome.exit_code, Some(3));
        assert!(!outcome.killed);
        assert_eq!(outcome.stdout.trim(), "hi");
        assert_eq!(outcome.stderr.trim(), "oops");
        assert!(outcome.combined_output().contains("hi"));
        assert!(outcome.combined_output().contains("oops"));
    }

    #[test]
    fn timeout_kills_the_whole_group() {
        let tmp = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let outcome = run_shell_with_timeout("sleep 30", tmp.path(), 0.2).unwrap();
        assert!(outcome.killed);
        assert!(outcome.exit_code.is_none());
        assert!(
            start.elapsed() < Duration::from_secs(5),
            "kill was not prompt"
        );
    }

    #[test]
    fn runs_in_the_given_directory() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("marker.txt"), "here").unwrap();
        let outcome = run_shell_with_timeout("cat marker.txt", tmp.path(), 10.0).unwrap();
        assert_eq!(outcome.stdout, "here");
    }

    #[test]
    fn timeout_kill_reaches_grandchildren() {
        let tmp = tempfile::tempdir().unwrap();
        // The backgrounded grandchild would write a marker after 1s; the
        // group kill at 0.3s must take it down first.
        let outcome = run_shell_with_timeout(
            "(sleep 1; echo alive > grandchild.txt) & sleep 30",
            tmp.path(),
            0.3,
        )
        .unwrap();
        assert!(outcome.killed);
        thread::sleep(Duration::from_millis(1500));
        assert!(
            !tmp.path().join("grandchild.txt").exists(),
            "grandchild survived the group kill"
        );
    }
}
