use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{Backend, BackendSpec, ItemResult, Request, Response};
use crate::error::{Error, Result};

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn shutdown(mut self) {
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(1);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Line-delimited JSON over the stdio of long-lived worker processes.
/// Up to `max_parallel` workers are started on demand; a worker that times
/// out is killed and replaced on the next request.
pub struct SubprocessBackend {
    spec: BackendSpec,
    program: String,
    args: Vec<String>,
    idle: Mutex<Vec<Worker>>,
}

impl SubprocessBackend {
    pub fn new(spec: BackendSpec) -> Result<Self> {
        let mut parts = spec.endpoint_or_cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config(format!("{} backend: empty command", spec.kind)))?;
        Ok(SubprocessBackend {
            args: parts.collect(),
            program,
            spec,
            idle: Mutex::new(Vec::new()),
        })
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start {}: {e}", self.program)))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn checkout(&self) -> Result<Worker> {
        let idle = self.idle.lock().expect("worker pool lock").pop();
        match idle {
            Some(w) => Ok(w),
            None => self.spawn(),
        }
    }
}

impl Backend for SubprocessBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn call(&self, request: &Request) -> Result<ItemResult> {
        let mut worker = self.checkout()?;
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let sent = worker
            .stdin
            .as_mut()
            .map(|s| s.write_all(line.as_bytes()).and_then(|_| s.flush()));
        if !matches!(sent, Some(Ok(()))) {
            worker.kill();
            return Err(Error::Backend(format!("{}: worker closed its input", self.program)));
        }
        let timeout = Duration::from_secs_f64(self.spec.timeout_s);
        match worker.lines.recv_timeout(timeout) {
            Ok(Ok(reply)) => {
                let response: Response = match serde_json::from_str(&reply) {
                    Ok(r) => r,
                    Err(e) => {
                        worker.kill();
                        return Err(Error::Backend(format!(
                            "{}: malformed response {reply:?}: {e}",
                            self.program
                        )));
                    }
                };
                let item = response.into_item(&request.id);
                if item.is_ok() {
                    self.idle.lock().expect("worker pool lock").push(worker);
                } else {
                    worker.kill();
                }
                item
            }
            Ok(Err(e)) => {
                worker.kill();
                Err(Error::Backend(format!("{}: {e}", self.program)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                worker.kill();
                Err(Error::Backend(format!("{}: worker exited", self.program)))
            }
            Err(RecvTimeoutError::Timeout) => {
                worker.kill();
                Ok(Err(format!("timeout after {}s", self.spec.timeout_s)))
            }
        }
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        let workers = std::mem::take(&mut *self.idle.lock().unwrap_or_else(|e| e.into_inner()));
        for w in workers {
            w.shutdown();
        }
    }
}
