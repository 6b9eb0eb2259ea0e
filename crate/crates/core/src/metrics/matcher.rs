//! Answer-matching rules selectable by name (`--metric-mode`).

use std::collections::BTreeMap;

use super::{accuracy, exact_match};

pub trait AnswerMatcher: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, prediction: &str, golds: &[String]) -> u8;
}

/// Normalized gold is a substring of the normalized prediction.
pub struct Containment;

impl AnswerMatcher for Containment {
    fn name(&self) -> &'static str {
        "containment"
    }

    fn score(&self, prediction: &str, golds: &[String]) -> u8 {
        accuracy(prediction, golds)
    }
}

/// Normalized prediction equals a normalized gold.
pub struct Exact;

impl AnswerMatcher for Exact {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn score(&self, prediction: &str, golds: &[String]) -> u8 {
        exact_match(prediction, golds)
    }
}

pub struct MatcherRegistry {
    matchers: BTreeMap<&'static str, Box<dyn AnswerMatcher>>,
}

impl Default for MatcherRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl MatcherRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            matchers: BTreeMap::new(),
        };
        r.register(Box::new(Containment));
        r.register(Box::new(Exact));
        r
    }

    pub fn register(&mut self, matcher: Box<dyn AnswerMatcher>) {
        self.matchers.insert(matcher.name(), matcher);
    }

    pub fn get(&self, name: &str) -> Option<&dyn AnswerMatcher> {
        self.matchers.get(name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.matchers.keys().copied().collect()
    }
}
