//! Scenario files shipped with the crate, one per reference case.

use crate::config::{ConfigError, Scenario};

pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1a", include_str!("../scenarios/fig1a.ini")),
    ("fig1b", include_str!("../scenarios/fig1b.ini")),
    ("fig2a", include_str!("../scenarios/fig2a.ini")),
    ("fig3a", include_str!("../scenarios/fig3a.ini")),
    ("fig3b", include_str!("../scenarios/fig3b.ini")),
    ("fig4a", include_str!("../scenarios/fig4a.ini")),
    ("fig5a", include_str!("../scenarios/fig5a.ini")),
    ("fig5b", include_str!("../scenarios/fig5b.ini")),
];

/// Panels integrated with the four-field PDE over t ∈ [0, 200].
pub const PDE_FIGURES: &[&str] = &["fig1a", "fig1b", "fig2a", "fig3a", "fig3b", "fig4a"];

/// Panels produced by the moment hierarchy.
pub const MOMENT_FIGURES: &[&str] = &["fig5a", "fig5b"];

pub fn bundled(name: &str) -> Result<Scenario, ConfigError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::Io(format!("no bundled scenario `{name}`")))?;
    Scenario::parse(text, name)
}
