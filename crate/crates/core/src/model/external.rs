//! Client side of the adapter protocol, over a child process's stdio or a
//! local TCP socket.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::{validate_predictions, Request, Response};
use super::{check_fit_input, AdapterError, AdapterKind, ModelHandle, ModelHyperparams, Prediction, SummaryModel};
use crate::corpus::{LabelRecord, Sample};

const STDERR_KEEP: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, Default)]
pub struct Timeouts {
    /// `None` waits forever.
    pub fit: Option<Duration>,
    pub predict: Option<Duration>,
}

pub struct ExternalAdapter {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    stderr: Arc<Mutex<String>>,
    last_line: Option<String>,
    timeouts: Timeouts,
    broken: Option<String>,
    fitted: Option<String>,
    generation: u64,
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut r = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match r.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    let trimmed = line.trim_end_matches(['\n', '\r']).to_string();
                    if tx.send(Ok(trimmed)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl ExternalAdapter {
    /// Start `command` (program followed by its arguments).
    pub fn spawn(command: &[String], timeouts: Timeouts) -> Result<Self, AdapterError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| AdapterError::Unreachable("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| AdapterError::Unreachable(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().unwrap();
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > STDERR_KEEP {
                    let mut cut = s.len() - STDERR_KEEP;
                    while !s.is_char_boundary(cut) {
                        cut += 1;
                    }
                    s.drain(..cut);
                }
            }
        });
        Ok(Self::from_parts(
            Box::new(stdin),
            spawn_line_reader(stdout),
            Some(child),
            stderr,
            timeouts,
        ))
    }

    pub fn connect(address: &str, timeouts: Timeouts) -> Result<Self, AdapterError> {
        let stream = TcpStream::connect(address)
            .map_err(|e| AdapterError::Unreachable(format!("cannot connect to {address}: {e}")))?;
        let reader = stream.try_clone()?;
        Ok(Self::from_parts(
            Box::new(stream),
            spawn_line_reader(reader),
            None,
            Arc::new(Mutex::new(String::new())),
            timeouts,
        ))
    }

    /// Speak the protocol over arbitrary streams.
    pub fn from_streams<R, W>(reader: R, writer: W, timeouts: Timeouts) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::from_parts(
            Box::new(writer),
            spawn_line_reader(reader),
            None,
            Arc::new(Mutex::new(String::new())),
            timeouts,
        )
    }

    fn from_parts(
        writer: Box<dyn Write + Send>,
        lines: Receiver<std::io::Result<String>>,
        child: Option<Child>,
        stderr: Arc<Mutex<String>>,
        timeouts: Timeouts,
    ) -> Self {
        Self {
            writer,
            lines,
            child,
            stderr,
            last_line: None,
            timeouts,
            broken: None,
            fitted: None,
            generation: 0,
        }
    }

    fn diagnostics(&mut self) -> String {
        let mut parts = Vec::new();
        if let Some(child) = self.child.as_mut() {
            // give a dying process a moment to be reaped
            for _ in 0..20 {
                match child.try_wait() {
                    Ok(Some(status)) => {
                        parts.push(format!("adapter exited with {status}"));
                        break;
                    }
                    Ok(None) => thread::sleep(Duration::from_millis(10)),
                    Err(_) => break,
                }
            }
        }
        let stderr = self.stderr.lock().unwrap();
        let tail = stderr.trim();
        if !tail.is_empty() {
            parts.push(format!("stderr: {tail}"));
        }
        parts.join("; ")
    }

    fn protocol(&mut self, message: String) -> AdapterError {
        let diag = self.diagnostics();
        let message = if diag.is_empty() {
            message
        } else {
            format!("{message} [{diag}]")
        };
        self.broken = Some(message.clone());
        AdapterError::Protocol {
            message,
            last_line: self.last_line.clone(),
        }
    }

    fn exchange(&mut self, request: &Request, op: &'static str, timeout: Option<Duration>) -> Result<Response, AdapterError> {
        if let Some(reason) = &self.broken {
            return Err(AdapterError::Protocol {
                message: format!("connection unusable after earlier failure: {reason}"),
                last_line: self.last_line.clone(),
            });
        }
        match self.lines.try_recv() {
            Ok(Ok(line)) => {
                self.last_line = Some(line.clone());
                return Err(self.protocol(format!("unsolicited adapter output before {op}: {line}")));
            }
            Ok(Err(e)) => return Err(self.protocol(format!("read error: {e}"))),
            Err(_) => {}
        }
        let mut line = request.to_line();
        line.push('\n');
        if let Err(e) = self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()) {
            return Err(self.protocol(format!("cannot send {op} request: {e}")));
        }
        let received = match timeout {
            Some(t) => self.lines.recv_timeout(t),
            None => self.lines.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        let line = match received {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.protocol(format!("read error during {op}: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.broken = Some(format!("timed out during {op}"));
                if let Some(c) = self.child.as_mut() {
                    let _ = c.kill();
                }
                return Err(AdapterError::Timeout {
                    op,
                    secs: timeout.map(|t| t.as_secs()).unwrap_or_default(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.protocol(format!("adapter closed its output during {op}")))
            }
        };
        self.last_line = Some(line.clone());
        match serde_json::from_str::<Response>(&line) {
            Ok(Response::Error { message }) => Err(AdapterError::Remote(message)),
            Ok(r) => Ok(r),
            Err(e) => Err(self.protocol(format!("unparseable {op} response ({e})"))),
        }
    }
}

impl SummaryModel for ExternalAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::ExternalProcess
    }

    fn fit(
        &mut self,
        run_id: &str,
        seed: u64,
        labeled: &[(&Sample, &LabelRecord)],
        hp: &ModelHyperparams,
    ) -> Result<ModelHandle, AdapterError> {
        check_fit_input(labeled)?;
        self.fitted = None;
        let request = Request::fit(run_id, seed, labeled, hp);
        match self.exchange(&request, "fit", self.timeouts.fit)? {
            Response::FitDone { run_id: got } if got == run_id => {
                self.generation += 1;
                self.fitted = Some(run_id.to_string());
                Ok(ModelHandle {
                    run_id: run_id.to_string(),
                    adapter_kind: AdapterKind::ExternalProcess,
                    fitted_on_count: labeled.len(),
                    generation: self.generation,
                })
            }
            Response::FitDone { run_id: got } => {
                Err(self.protocol(format!("fit_done for run {got:?}, expected {run_id:?}")))
            }
            other => Err(self.protocol(format!("expected fit_done, got {}", op_name(&other)))),
        }
    }

    fn predict(&mut self, handle: &ModelHandle, samples: &[&Sample]) -> Result<Vec<Prediction>, AdapterError> {
        if self.fitted.as_deref() != Some(handle.run_id.as_str()) || handle.generation != self.generation {
            return Err(AdapterError::InvalidHandle(handle.run_id.clone()));
        }
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let request = Request::predict(&handle.run_id, samples);
        match self.exchange(&request, "predict", self.timeouts.predict)? {
            Response::Predictions { run_id, items } => {
                if let Err(AdapterError::Protocol { message, .. }) =
                    validate_predictions(&handle.run_id, samples, &run_id, &items)
                {
                    return Err(self.protocol(message));
                }
                Ok(items.into_iter().map(Prediction::from).collect())
            }
            other => Err(self.protocol(format!("expected predictions, got {}", op_name(&other)))),
        }
    }
}

fn op_name(r: &Response) -> &'static str {
    match r {
        Response::FitDone { .. } => "fit_done",
        Response::Predictions { .. } => "predictions",
        Response::Error { .. } => "error",
    }
}

impl Drop for ExternalAdapter {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
