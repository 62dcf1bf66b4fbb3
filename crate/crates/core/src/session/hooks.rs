//! External commands that render candidates and score them.
//!
//! A hook is a shell command. It receives the candidate's decoded
//! parameters as a JSON object on stdin and must print its result on stdout
//! before the timeout: a media file path for render hooks, a number for
//! heuristic hooks (higher means preferred).

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type ParamTable = Map<String, Value>;

pub trait Renderer: Send + Sync {
    /// Produces a media file for the given parameters.
    fn render(&self, params: &ParamTable) -> Result<PathBuf>;

    /// MIME type served for rendered media.
    fn media_type(&self) -> &str;
}

pub trait Scorer: Send + Sync {
    /// Heuristic reward for the given parameters; higher is preferred.
    fn score(&self, params: &ParamTable) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct CommandHook {
    pub template: String,
    pub timeout: Duration,
    pub media_type: String,
}

impl CommandHook {
    pub fn new(template: impl Into<String>) -> Self {
        Self { template: template.into(), timeout: Duration::from_secs(30), media_type: "image/png".into() }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_media_type(mut self, media_type: impl Into<String>) -> Self {
        self.media_type = media_type.into();
        self
    }

    /// Runs the command and returns its trimmed stdout.
    pub fn run(&self, params: &ParamTable) -> Result<String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.template)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Hook(format!("spawn `{}`: {e}", self.template)))?;

        let input = serde_json::to_vec(params)?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        // a hook that ignores stdin may exit before we finish writing
        let _ = stdin.write_all(&input);
        drop(stdin);

        let mut stdout = child.stdout.take().expect("stdout piped");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Hook(format!("`{}` timed out after {:?}", self.template, self.timeout)));
            }
            thread::sleep(Duration::from_millis(5));
        };
        let out = reader
            .join()
            .map_err(|_| Error::Hook("stdout reader panicked".into()))?
            .map_err(|e| Error::Hook(format!("reading stdout: {e}")))?;
        if !status.success() {
            return Err(Error::Hook(format!("`{}` exited with {status}", self.template)));
        }
        Ok(out.trim().to_string())
    }
}

impl Renderer for CommandHook {
    fn render(&self, params: &ParamTable) -> Result<PathBuf> {
        let out = self.run(params)?;
        let path = PathBuf::from(out.lines().last().unwrap_or_default());
        if !path.is_file() {
            return Err(Error::Hook(format!("render hook printed `{}`, which is not a file", path.display())));
        }
        Ok(path)
    }

    fn media_type(&self) -> &str {
        &self.media_type
    }
}

impl Scorer for CommandHook {
    fn score(&self, params: &ParamTable) -> Result<f64> {
        let out = self.run(params)?;
        let v: f64 = out
            .lines()
            .last()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Hook(format!("heuristic hook printed `{out}`, not a number")))?;
        if !v.is_finite() {
            return Err(Error::Hook(format!("heuristic hook returned {v}")));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ParamTable {
        let mut m = Map::new();
        m.insert("gain".into(), 2.5.into());
        m
    }

    #[test]
    fn scorer_reads_stdin_json() {
        let hook = CommandHook::new(r#"python3 -c 'import json,sys; print(json.load(sys.stdin)["gain"] * 2)'"#);
        assert_eq!(hook.score(&params()).unwrap(), 5.0);
    }

    #[test]
    fn non_numeric_score_fails() {
        assert!(matches!(CommandHook::new("echo nope").score(&params()), Err(Error::Hook(_))));
    }

    #[test]
    fn failing_command_fails() {
        assert!(CommandHook::new("exit 3").run(&params()).is_err());
    }

    #[test]
    fn timeout_kills_hook() {
        let hook = CommandHook::new("sleep 5").with_timeout(Duration::from_millis(100));
        let t = Instant::now();
        assert!(matches!(hook.run(&params()), Err(Error::Hook(_))));
        assert!(t.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn render_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("out.png");
        std::fs::write(&file, b"png").unwrap();
        let ok = CommandHook::new(format!("cat > /dev/null; echo {}", file.display()));
        assert_eq!(ok.render(&params()).unwrap(), file);
        let bad = CommandHook::new("echo /definitely/not/here.png");
        assert!(bad.render(&params()).is_err());
    }
}
