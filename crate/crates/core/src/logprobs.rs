//! Normalized next-token log-probability vectors.

use thiserror::Error;

use crate::vocab::TokenId;

/// Tolerance on `logsumexp(values) = 0` accepted when constructing from
/// already-normalized values.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogProbError {
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("distribution has no finite entry")]
    NoFiniteEntry,
    #[error("entry {index} is {value}; only finite values or -inf are allowed")]
    InvalidEntry { index: usize, value: f64 },
    #[error("logsumexp is {0}, not 0")]
    NotNormalized(f64),
}

/// `ln Σ exp(x_i)`, stable for large magnitudes; `-inf` entries contribute nothing.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i as TokenId)
}

fn validate_entries(values: &[f64]) -> Result<(), LogProbError> {
    let mut any_finite = false;
    for (index, &value) in values.iter().enumerate() {
        if value.is_finite() {
            any_finite = true;
        } else if value != f64::NEG_INFINITY {
            return Err(LogProbError::InvalidEntry { index, value });
        }
    }
    if any_finite {
        Ok(())
    } else {
        Err(LogProbError::NoFiniteEntry)
    }
}

/// Natural-log probabilities over the whole vocabulary for one decode position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs {
    values: Vec<f64>,
}

impl TokenLogProbs {
    /// Accepts values that already form a distribution (within [`NORMALIZATION_TOLERANCE`]).
    pub fn from_log_probs(values: Vec<f64>) -> Result<Self, LogProbError> {
        validate_entries(&values)?;
        let lse = logsumexp(&values);
        if lse.abs() > NORMALIZATION_TOLERANCE {
            return Err(LogProbError::NotNormalized(lse));
        }
        Ok(Self { values })
    }

    /// Builds from plain probabilities; zero probabilities become `-inf`.
    pub fn from_probs(probs: &[f64]) -> Result<Self, LogProbError> {
        Self::from_log_probs(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "uniform distribution over an empty vocabulary");
        let v = -(size as f64).ln();
        Self {
            values: vec![v; size],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.values[id as usize]
    }

    pub fn argmax(&self) -> TokenId {
        argmax(&self.values).expect("non-empty distribution")
    }
}

/// Softmax in log space: turns raw scores into a [`TokenLogProbs`].
pub fn normalize_logits(raw: &[f64], vocab_size: usize) -> Result<TokenLogProbs, LogProbError> {
    if raw.len() != vocab_size {
        return Err(LogProbError::LengthMismatch {
            expected: vocab_size,
            actual: raw.len(),
        });
    }
    validate_entries(raw)?;
    let lse = logsumexp(raw);
    Ok(TokenLogProbs {
        values: raw.iter().map(|&v| v - lse).collect(),
    })
}

/// Serde adapters that write non-finite reals as the strings `"-inf"`, `"inf"`
/// and `"nan"`, since JSON has no literal for them.
pub mod real {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn encode(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("invalid real {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| encode(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(decode::<D::Error>)
                .collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(encode).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?
                .map(decode::<D::Error>)
                .transpose()
                .map_err(D::Error::custom)
        }
    }
}
