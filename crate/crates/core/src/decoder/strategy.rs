//! Named compression strategies.
//!
//! All strategies run the same lockstep decoder; they differ in the weight the
//! target model receives. `compression-only` is zero-shot summarization by the
//! compression model, `generation-only` is context generated by the target
//! model alone.

use std::collections::BTreeMap;

pub trait CompressionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    /// Target-model weight actually used, given the configured coefficient.
    fn effective_alpha(&self, configured: f64) -> f64;
}

pub struct Ensemble;

impl CompressionStrategy for Ensemble {
    fn name(&self) -> &'static str {
        "ensemble"
    }

    fn summary(&self) -> &'static str {
        "weighted sum of both models' log-probabilities"
    }

    fn effective_alpha(&self, configured: f64) -> f64 {
        configured
    }
}

pub struct CompressionOnly;

impl CompressionStrategy for CompressionOnly {
    fn name(&self) -> &'static str {
        "compression-only"
    }

    fn summary(&self) -> &'static str {
        "zero-shot summarization by the compression model (alpha = 0)"
    }

    fn effective_alpha(&self, _configured: f64) -> f64 {
        0.0
    }
}

pub struct GenerationOnly;

impl CompressionStrategy for GenerationOnly {
    fn name(&self) -> &'static str {
        "generation-only"
    }

    fn summary(&self) -> &'static str {
        "context generated by the target model without evidence (alpha = 1)"
    }

    fn effective_alpha(&self, _configured: f64) -> f64 {
        1.0
    }
}

pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Box<dyn CompressionStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl StrategyRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            strategies: BTreeMap::new(),
        };
        r.register(Box::new(Ensemble));
        r.register(Box::new(CompressionOnly));
        r.register(Box::new(GenerationOnly));
        r
    }

    pub fn register(&mut self, strategy: Box<dyn CompressionStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<&dyn CompressionStrategy> {
        self.strategies.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}
