//! Reference logit server: exposes any [`LanguageModel`] over the wire protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};

use super::wire::{codes, Request, Response, WireMode};
use super::{BackendError, LanguageModel};
use crate::vocab::Fingerprint;

pub struct LogitServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl LogitServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in background threads.
    pub fn spawn(addr: impl ToSocketAddrs, model: Arc<dyn LanguageModel>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let model = model.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(stream, model.as_ref()) {
                                debug!("connection closed: {e}");
                            }
                        });
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for LogitServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(stream: TcpStream, model: &dyn LanguageModel) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(&line, model);
        let mut out = serde_json::to_string(&response).map_err(std::io::Error::other)?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Computes the response to one request line.
pub fn handle_line(line: &str, model: &dyn LanguageModel) -> Response {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return Response::error(codes::BAD_REQUEST, e.to_string()),
    };
    let ours = model.descriptor().fingerprint();
    match Fingerprint::from_hex(&request.fingerprint) {
        Some(fp) if fp == ours => {}
        _ => {
            return Response::error(
                codes::FINGERPRINT_MISMATCH,
                format!("server vocabulary {ours}, request {}", request.fingerprint),
            )
        }
    }
    if request.mode == WireMode::Topk && request.k == 0 {
        return Response::error(codes::BAD_REQUEST, "topk mode requires k >= 1");
    }
    match model.next_token_distribution(&request.context) {
        Ok(dist) => match request.mode {
            WireMode::Full => Response::Full {
                values: dist.into_values(),
            },
            WireMode::Topk => Response::top_k(&dist, request.k),
        },
        Err(e) => {
            let code = match e {
                BackendError::ContextOverflow { .. } => codes::CONTEXT_OVERFLOW,
                BackendError::UnknownToken { .. } => codes::UNKNOWN_TOKEN,
                _ => codes::INTERNAL,
            };
            Response::error(code, e.to_string())
        }
    }
}
