//! Client side of the logit-serving protocol.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use super::wire::{codes, Request, Response, WireMode};
use super::{check_context, BackendDescriptor, BackendError, LanguageModel};
use crate::logprobs::TokenLogProbs;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoteMode {
    Full,
    TopK(usize),
}

/// Queries a logit server. One TCP connection per request, so the client is
/// freely shareable across threads.
#[derive(Debug, Clone)]
pub struct RemoteLM {
    descriptor: BackendDescriptor,
    endpoint: String,
    mode: RemoteMode,
    timeout: Duration,
}

impl RemoteLM {
    pub fn new(endpoint: impl Into<String>, vocabulary: Arc<Vocabulary>, max_context: usize) -> Self {
        let endpoint = endpoint.into();
        Self {
            descriptor: BackendDescriptor::new(format!("remote:{endpoint}"), vocabulary, max_context),
            endpoint,
            mode: RemoteMode::Full,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_mode(mut self, mode: RemoteMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn round_trip(&self, request: &Request) -> Result<Response, BackendError> {
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| transport(format!("resolve {}: {e}", self.endpoint), false))?
            .next()
            .ok_or_else(|| transport(format!("{} resolved to no address", self.endpoint), false))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(io_error)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(io_error)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(io_error)?;

        let mut line = serde_json::to_string(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        (&stream).write_all(line.as_bytes()).map_err(io_error)?;

        let mut reply = String::new();
        let n = BufReader::new(&stream).read_line(&mut reply).map_err(io_error)?;
        if n == 0 {
            return Err(transport("server closed the connection without replying".into(), true));
        }
        serde_json::from_str(&reply).map_err(|e| BackendError::Protocol(format!("bad response: {e}")))
    }
}

fn transport(message: String, retryable: bool) -> BackendError {
    BackendError::Transport { message, retryable }
}

fn io_error(e: std::io::Error) -> BackendError {
    let retryable = matches!(
        e.kind(),
        ErrorKind::ConnectionRefused
            | ErrorKind::ConnectionReset
            | ErrorKind::ConnectionAborted
            | ErrorKind::TimedOut
            | ErrorKind::WouldBlock
            | ErrorKind::Interrupted
    );
    transport(e.to_string(), retryable)
}

impl LanguageModel for RemoteLM {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenLogProbs, BackendError> {
        check_context(&self.descriptor, context)?;
        let (mode, k) = match self.mode {
            RemoteMode::Full => (WireMode::Full, 0),
            RemoteMode::TopK(k) => (WireMode::Topk, k),
        };
        let request = Request {
            fingerprint: self.descriptor.fingerprint().to_hex(),
            context: context.to_vec(),
            mode,
            k,
        };
        let response = self.round_trip(&request)?;
        match response.into_distribution(self.descriptor.vocabulary.len()) {
            Err(BackendError::Remote { code, message }) if code == codes::FINGERPRINT_MISMATCH => {
                // The reference server names its own fingerprint as the third word.
                let server = message
                    .split_whitespace()
                    .nth(2)
                    .map(|s| s.trim_end_matches(','))
                    .and_then(crate::vocab::Fingerprint::from_hex);
                Err(BackendError::FingerprintMismatch {
                    client: self.descriptor.fingerprint(),
                    server,
                })
            }
            other => other,
        }
    }
}
