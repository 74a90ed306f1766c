//! Out-of-process detector speaking a JSON line protocol over stdio.
//!
//! Request (one line): `{"id": 3, "image": "/tmp/x.png", "conf": 0.25}`
//! Response (one line): `{"id": 3, "detections": [{"class_id": 0, "cx": .., "cy": .., "w": .., "h": .., "confidence": ..}]}`
//!
//! Any other response shape, or a mismatched id, is a protocol error.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use super::{DetectError, Detection, DetectorBackend, Frame};
use crate::dataset::NormalizedBox;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Serialize)]
struct Request<'a> {
    id: u64,
    image: &'a str,
    conf: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Response {
    id: u64,
    detections: Vec<WireDetection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDetection {
    class_id: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    confidence: f64,
}

/// One child process; requests are strictly sequential.
pub struct ExternalBackend {
    command: Vec<String>,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    input_size: Option<(u32, u32)>,
    scratch: TempDir,
}

impl std::fmt::Debug for ExternalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalBackend")
            .field("command", &self.command)
            .field("next_id", &self.next_id)
            .finish_non_exhaustive()
    }
}

impl ExternalBackend {
    pub fn spawn(command: &[String]) -> Result<Self, DetectError> {
        let spawn_err = |source| DetectError::Spawn {
            command: command.to_vec(),
            source,
        };
        let (program, args) = command
            .split_first()
            .ok_or_else(|| spawn_err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let scratch = tempfile::tempdir().map_err(spawn_err)?;
        Ok(Self {
            command: command.to_vec(),
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout: DEFAULT_TIMEOUT,
            input_size: Some((416, 416)),
            scratch,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_input_size(mut self, size: Option<(u32, u32)>) -> Self {
        self.input_size = size;
        self
    }

    fn shutdown(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn roundtrip(&mut self, image: &str, conf: f64) -> Result<Response, DetectError> {
        let id = self.next_id;
        self.next_id += 1;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| DetectError::Protocol("backend is no longer running".into()))?;
        let mut line = serde_json::to_string(&Request { id, image, conf }).expect("request serializes");
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| DetectError::Protocol(format!("write failed: {e}")))?;

        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(DetectError::Protocol(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.shutdown();
                return Err(DetectError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(DetectError::Protocol("backend closed its output".into()))
            }
        };
        let resp: Response =
            serde_json::from_str(&reply).map_err(|e| DetectError::Protocol(format!("bad response {reply:?}: {e}")))?;
        if resp.id != id {
            return Err(DetectError::Protocol(format!(
                "response id {} does not match request {id}",
                resp.id
            )));
        }
        Ok(resp)
    }
}

impl DetectorBackend for ExternalBackend {
    fn input_size(&self) -> Option<(u32, u32)> {
        self.input_size
    }

    fn detect(&mut self, frame: &Frame<'_>, conf_threshold: f64) -> Result<Vec<Detection>, DetectError> {
        let written;
        let path = match frame.path {
            Some(p) => p,
            None => {
                written = self.scratch.path().join(format!("request_{}.png", self.next_id));
                frame.image.save_png(&written)?;
                written.as_path()
            }
        };
        let resp = self.roundtrip(&path.to_string_lossy(), conf_threshold)?;
        let mut out = Vec::with_capacity(resp.detections.len());
        for w in resp.detections {
            let d = Detection {
                bbox: NormalizedBox::new(w.class_id, w.cx, w.cy, w.w, w.h),
                confidence: w.confidence,
            };
            if !d.is_valid() {
                return Err(DetectError::Protocol(format!("invalid detection {d:?}")));
            }
            if d.confidence >= conf_threshold {
                out.push(d);
            }
        }
        if frame.path.is_none() {
            let _ = std::fs::remove_file(path);
        }
        Ok(out)
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}
