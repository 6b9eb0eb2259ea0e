//! Shared vocabulary model.
//!
//! Two backends can only be ensembled when they agree on the token list and
//! the end-of-sequence id. Agreement is checked through a 64-bit fingerprint:
//!
//! ```text
//! fingerprint = FNV-1a-64( decimal(eos_id) 0x1F tok_0 0x1F tok_1 ... 0x1F tok_{n-1} )
//! ```
//!
//! The on-disk format is a header line `#eos <id>` followed by one token per
//! line, in index order.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub type TokenId = u32;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEPARATOR: u8 = 0x1f;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("eos id {eos} out of range for vocabulary of size {size}")]
    EosOutOfRange { eos: TokenId, size: usize },
    #[error("token {index} is empty or contains a newline or 0x1F byte")]
    InvalidToken { index: usize },
    #[error("duplicate token {token:?} at index {index}")]
    DuplicateToken { token: String, index: usize },
    #[error("unknown eos token {0:?}")]
    UnknownEos(String),
    #[error("malformed vocabulary header: {0:?}")]
    BadHeader(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(Fingerprint)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.to_hex())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Ordered token list with dense ids in `[0, len)`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos_id: TokenId,
    fingerprint: Fingerprint,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.eos_id == other.eos_id && self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_id: TokenId) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        if eos_id as usize >= tokens.len() {
            return Err(VocabError::EosOutOfRange {
                eos: eos_id,
                size: tokens.len(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.bytes().any(|b| b == b'\n' || b == b'\r' || b == SEPARATOR) {
                return Err(VocabError::InvalidToken { index: i });
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(VocabError::DuplicateToken {
                    token: tok.clone(),
                    index: i,
                });
            }
        }
        let fingerprint = Self::compute_fingerprint(&tokens, eos_id);
        Ok(Self {
            tokens,
            index,
            eos_id,
            fingerprint,
        })
    }

    /// Builds a vocabulary naming the eos token by its string.
    pub fn with_eos_token<S: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        eos: &str,
    ) -> Result<Self, VocabError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let eos_id = tokens
            .iter()
            .position(|t| t == eos)
            .ok_or_else(|| VocabError::UnknownEos(eos.to_string()))?;
        Self::new(tokens, eos_id as TokenId)
    }

    fn compute_fingerprint(tokens: &[String], eos_id: TokenId) -> Fingerprint {
        let mut bytes = eos_id.to_string().into_bytes();
        for tok in tokens {
            bytes.push(SEPARATOR);
            bytes.extend_from_slice(tok.as_bytes());
        }
        Fingerprint(fnv1a64(&bytes))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#eos {}\n", self.eos_id);
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(VocabError::Empty)?;
        let eos_id = header
            .strip_prefix("#eos ")
            .and_then(|s| s.trim().parse::<TokenId>().ok())
            .ok_or_else(|| VocabError::BadHeader(header.to_string()))?;
        let mut tokens: Vec<String> = lines.map(str::to_string).collect();
        // A trailing newline is part of the format; a final blank line is not a token.
        while tokens.last().is_some_and(|t| t.is_empty()) {
            tokens.pop();
        }
        Self::new(tokens, eos_id)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VocabError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
