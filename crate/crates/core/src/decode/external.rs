//! Scorer running in a child process, spoken to over line-delimited JSON.
//!
//! The child announces `{"protocol": "vastree-scorer/1"}` on its first output
//! line. Each request then carries the path of a channel stack written in
//! the multi-channel `.f32` format:
//!
//! ```text
//! -> {"id": 0, "stack": {"path": "..."}, "keypoints": [[x, y], ...], "query": [x, y] | null, "k_classes": 3}
//! <- {"id": 0, "selection": [...], "topology_logits": [[...], ...]}
//! ```
//!
//! A response of the form `{"id": n, "error": "..."}` fails the step.
//! Requests are strictly sequential.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::{json, Value};
use tempfile::TempDir;

use super::{DecodeError, StepInput, StepScore, StepScorer};
use crate::io::write_f32_stack;

pub const PROTOCOL_VERSION: &str = "vastree-scorer/1";

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl Session {
    fn read_line(&mut self) -> Result<Value, DecodeError> {
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| DecodeError::Protocol(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(DecodeError::Protocol("scorer closed its output".into()));
        }
        serde_json::from_str(line.trim_end())
            .map_err(|e| DecodeError::Protocol(format!("invalid JSON line: {e}")))
    }
}

pub struct ExternalScorer {
    session: Mutex<Session>,
    dir: TempDir,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("dir", &self.dir.path())
            .finish()
    }
}

impl ExternalScorer {
    /// Starts `command` through `sh -c` and checks the handshake.
    pub fn spawn(command: &str) -> Result<Self, DecodeError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DecodeError::Protocol(format!("cannot start scorer: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut session = Session {
            child,
            stdin,
            stdout,
            next_id: 0,
        };
        let hello = session.read_line()?;
        match hello.get("protocol").and_then(Value::as_str) {
            Some(PROTOCOL_VERSION) => {}
            other => {
                return Err(DecodeError::Protocol(format!(
                    "expected protocol {PROTOCOL_VERSION}, scorer announced {}",
                    other.unwrap_or("nothing")
                )))
            }
        }
        let dir = tempfile::tempdir()
            .map_err(|e| DecodeError::Protocol(format!("cannot create stack directory: {e}")))?;
        Ok(Self {
            session: Mutex::new(session),
            dir,
        })
    }
}

fn floats(v: &Value, what: &str) -> Result<Vec<f64>, DecodeError> {
    v.as_array()
        .ok_or_else(|| DecodeError::Protocol(format!("{what}: expected array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| DecodeError::Protocol(format!("{what}: expected numbers")))
        })
        .collect()
}

impl StepScorer for ExternalScorer {
    fn score(&self, input: &StepInput<'_>) -> Result<StepScore, DecodeError> {
        let mut s = self.session.lock().expect("scorer session poisoned");
        let id = s.next_id;
        s.next_id += 1;
        let path = self.dir.path().join(format!("stack_{id}.f32"));
        write_f32_stack(&input.stack().to_grids(), &path)
            .map_err(|e| DecodeError::Protocol(e.to_string()))?;
        let keypoints: Vec<[f64; 2]> = input
            .keypoints
            .points()
            .iter()
            .map(|p| [p.x, p.y])
            .collect();
        let request = json!({
            "id": id,
            "stack": {"path": path.display().to_string()},
            "keypoints": keypoints,
            "query": input.query.map(|q| [q.x, q.y]),
            "k_classes": input.k_classes(),
        });
        let stdin = s
            .stdin
            .as_mut()
            .ok_or_else(|| DecodeError::Protocol("scorer input closed".into()))?;
        writeln!(stdin, "{request}")
            .and_then(|_| stdin.flush())
            .map_err(|e| DecodeError::Protocol(format!("write failed: {e}")))?;
        let response = s.read_line();
        let _ = std::fs::remove_file(&path);
        let response = response?;
        if response.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(DecodeError::Protocol(format!(
                "response id does not match request {id}"
            )));
        }
        if let Some(msg) = response.get("error") {
            return Err(DecodeError::Scorer(
                msg.as_str().map_or_else(|| msg.to_string(), str::to_owned),
            ));
        }
        let selection = floats(&response["selection"], "selection")?;
        let topology_logits = response["topology_logits"]
            .as_array()
            .ok_or_else(|| DecodeError::Protocol("topology_logits: expected array".into()))?
            .iter()
            .map(|row| floats(row, "topology_logits"))
            .collect::<Result<_, _>>()?;
        Ok(StepScore {
            selection,
            topology_logits,
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
