//! Name-keyed registries of pluggable strategies.
//!
//! Curve suites and replay-window strategies are chosen at runtime from the
//! session config (`suite = p256`, `replay_strategy = rfc6479`). New variants
//! are added by calling [`Registry::register`] on the default registries.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{CurveSuite, P256Suite, P384Suite};
use crate::replay::{BitmapWindow, ReplayWindow, ShiftWindow, WindowSizeError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} {name:?}; known: {known}")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

/// Factory table keyed by lowercase name.
pub struct Registry<F> {
    kind: &'static str,
    entries: BTreeMap<String, F>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, factory: F) -> &mut Self {
        self.entries.insert(name.to_ascii_lowercase(), factory);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F, UnknownStrategy> {
        self.entries.get(&name.to_ascii_lowercase()).ok_or_else(|| UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub type SuiteFactory = fn() -> Arc<dyn CurveSuite>;
pub type ReplayFactory = fn(usize) -> Result<Box<dyn ReplayWindow>, WindowSizeError>;

pub fn curve_suites() -> Registry<SuiteFactory> {
    let mut r = Registry::<SuiteFactory>::new("curve suite");
    r.register("p256", || Arc::new(P256Suite));
    r.register("p384", || Arc::new(P384Suite));
    r
}

pub fn replay_strategies() -> Registry<ReplayFactory> {
    let mut r = Registry::<ReplayFactory>::new("replay strategy");
    r.register("rfc6479", |w| Ok(Box::new(BitmapWindow::new(w)?)));
    r.register("rfc2401", |w| Ok(Box::new(ShiftWindow::new(w)?)));
    r
}

/// Looks up a curve suite in the default registry.
pub fn suite_by_name(name: &str) -> Result<Arc<dyn CurveSuite>, UnknownStrategy> {
    curve_suites().get(name).map(|f| f())
}

/// Curve suite matching an X.509 named-curve OID.
pub fn suite_by_curve_oid(oid: &str) -> Option<Arc<dyn CurveSuite>> {
    let reg = curve_suites();
    let found = reg.names().map(|n| reg.get(n).expect("listed")()).find(|s| s.curve_oid() == oid);
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_case_insensitive_and_reports_known_names() {
        assert_eq!(suite_by_name("P256").unwrap().name(), "p256");
        let err = suite_by_name("ed25519").unwrap_err();
        assert_eq!(err.known, "p256, p384");
        assert!(replay_strategies().get("rfc6479").is_ok());
        assert!(replay_strategies().get("RFC2401").is_ok());
    }

    #[test]
    fn suites_resolve_by_oid() {
        assert_eq!(suite_by_curve_oid("1.3.132.0.34").unwrap().name(), "p384");
        assert!(suite_by_curve_oid("1.2.3").is_none());
    }

    #[test]
    fn replay_factories_validate_size() {
        let reg = replay_strategies();
        for name in ["rfc6479", "rfc2401"] {
            assert!(reg.get(name).unwrap()(1024).is_ok());
            assert!(reg.get(name).unwrap()(33).is_err());
            assert!(reg.get(name).unwrap()(0).is_err());
        }
    }

    #[test]
    fn registering_overrides() {
        let mut reg = curve_suites();
        reg.register("p256", || Arc::new(P384Suite));
        assert_eq!(reg.get("p256").unwrap()().name(), "p384");
    }
}
