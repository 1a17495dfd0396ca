//! Selection policies decide how many unlabeled samples of a batch enter the
//! consistency loss. They are looked up by name so runs can switch between
//! the ramp-up filter, a fixed quota, or no filtering from configuration.

use std::collections::BTreeMap;
use std::fmt;

use super::{rampup_q, Result, TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterContext {
    pub iteration: usize,
    pub total_iterations: usize,
    pub batch_size: usize,
}

pub trait SelectionPolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Number of samples to keep; implementations return a value in
    /// `[1, batch_size]`.
    fn quota(&self, ctx: &FilterContext) -> usize;
}

/// Grows the quota from `round(b/e)` to `b` over training.
#[derive(Debug, Clone, Copy, Default)]
pub struct RampUp;

impl SelectionPolicy for RampUp {
    fn name(&self) -> &'static str {
        "rampup"
    }

    fn quota(&self, ctx: &FilterContext) -> usize {
        rampup_q(ctx.iteration, ctx.total_iterations, ctx.batch_size)
    }
}

/// Constant quota, clamped to the batch.
#[derive(Debug, Clone, Copy)]
pub struct FixedQuota(pub usize);

impl SelectionPolicy for FixedQuota {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn quota(&self, ctx: &FilterContext) -> usize {
        self.0.clamp(1, ctx.batch_size.max(1))
    }
}

/// Keeps every sample, i.e. plain self-ensembling.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepAll;

impl SelectionPolicy for KeepAll {
    fn name(&self) -> &'static str {
        "none"
    }

    fn quota(&self, ctx: &FilterContext) -> usize {
        ctx.batch_size
    }
}

type Factory = Box<dyn Fn(&TrainConfig) -> Result<Box<dyn SelectionPolicy>> + Send + Sync>;

/// Name → policy constructor.
pub struct PolicyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `rampup`, `fixed` (needs `fixed_q`) and `none`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("rampup", |_| Ok(Box::new(RampUp)));
        reg.register("none", |_| Ok(Box::new(KeepAll)));
        reg.register("fixed", |cfg| match cfg.fixed_q {
            Some(q) if q >= 1 => Ok(Box::new(FixedQuota(q))),
            _ => Err(TrainError::Config("filter `fixed` requires fixed_q >= 1".into())),
        });
        reg
    }

    /// Adds or replaces a policy.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&TrainConfig) -> Result<Box<dyn SelectionPolicy>> + Send + Sync + 'static,
    {
        if self.factories.insert(name.to_string(), Box::new(factory)).is_some() {
            log::debug!("selection policy `{name}` replaced");
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, cfg: &TrainConfig) -> Result<Box<dyn SelectionPolicy>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            TrainError::Config(format!(
                "unknown filter `{name}` (available: {})",
                self.names().join(", ")
            ))
        })?;
        factory(cfg)
    }

    /// Policy for a config: `fixed_q` wins over the `filter` name.
    pub fn for_config(&self, cfg: &TrainConfig) -> Result<Box<dyn SelectionPolicy>> {
        if cfg.fixed_q.is_some() && cfg.filter == "rampup" {
            return self.build("fixed", cfg);
        }
        self.build(&cfg.filter, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(iteration: usize) -> FilterContext {
        FilterContext {
            iteration,
            total_iterations: 100,
            batch_size: 128,
        }
    }

    #[test]
    fn builtins_resolve() {
        let reg = PolicyRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["fixed", "none", "rampup"]);
        let cfg = TrainConfig::default();
        assert_eq!(reg.for_config(&cfg).unwrap().name(), "rampup");
        assert_eq!(reg.build("none", &cfg).unwrap().quota(&ctx(0)), 128);
        assert!(reg.build("fixed", &cfg).is_err());
        assert!(reg.build("bogus", &cfg).is_err());

        let fixed = TrainConfig {
            fixed_q: Some(64),
            ..Default::default()
        };
        let p = reg.for_config(&fixed).unwrap();
        assert_eq!(p.name(), "fixed");
        assert_eq!(p.quota(&ctx(0)), 64);
        assert_eq!(p.quota(&FilterContext { batch_size: 10, ..ctx(0) }), 10);
    }

    #[test]
    fn rampup_policy_follows_schedule() {
        assert_eq!(RampUp.quota(&ctx(0)), 47);
        assert_eq!(RampUp.quota(&ctx(100)), 128);
    }

    #[test]
    fn custom_policy_can_be_registered() {
        #[derive(Debug)]
        struct Half;
        impl SelectionPolicy for Half {
            fn name(&self) -> &'static str {
                "half"
            }
            fn quota(&self, ctx: &FilterContext) -> usize {
                (ctx.batch_size / 2).max(1)
            }
        }
        let mut reg = PolicyRegistry::with_builtins();
        reg.register("half", |_| Ok(Box::new(Half)));
        let p = reg.build("half", &TrainConfig::default()).unwrap();
        assert_eq!(p.quota(&ctx(3)), 64);
    }
}
