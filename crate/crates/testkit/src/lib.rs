//! Shared test support: independent reference implementations, random case
//! generators, small fixtures and the acceptance checks.

pub mod checks;
pub mod fixtures;
pub mod oracle;
pub mod random;
