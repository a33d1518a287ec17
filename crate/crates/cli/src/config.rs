//! Scenario files: flat `key = value` text grouped into `[section]`s.
//!
//! Numbers may be written as products and quotients of literals and `pi`
//! (`pi/6`, `2*pi/3`, `-1e-2`), lists are comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use oqbm_core::moments::HierarchyForm;
use oqbm_core::oqbm::{
    DtChoice, ExponentRule, InitialCondition, InitialKind, Integrator, InternalState,
    LambdaOneCoupling, RhsOptions, ScenarioConfig,
};
use oqbm_core::params::CoefficientSet;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("line {line}: key `{key}`: {reason}")]
    Value {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("unknown key `{key}` on line {line}")]
    Unknown { line: usize, key: String },
    #[error("{0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Optional moment-hierarchy run attached to a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSection {
    pub nmax: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    pub form: HierarchyForm,
}

/// Optional phase-space elimination check attached to a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSection {
    pub alpha: f64,
    pub gamma_schedule: Vec<f64>,
    pub x_half_width: f64,
    pub x_nodes: usize,
    pub p_nodes: usize,
    pub t_final: f64,
    pub times: Vec<f64>,
    pub dt_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig<f64>,
    pub moments: Option<MomentSection>,
    pub phase: Option<PhaseSection>,
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    reason: format!("unterminated section header `{s}`"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("expected `key = value`, got `{s}`"),
            })?;
            if section.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    reason: "key outside of any section".into(),
                });
            }
            let key = format!("{section}.{}", k.trim());
            let entry = Entry {
                line,
                value: v.trim().to_string(),
                used: false,
            };
            if entries.insert(key.clone(), entry).is_some() {
                return Err(ConfigError::Value {
                    line,
                    key,
                    reason: "duplicate key".into(),
                });
            }
        }
        Ok(Self { entries })
    }

    fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}.");
        self.entries.keys().any(|k| k.starts_with(&prefix))
    }

    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn get<T>(
        &mut self,
        key: &str,
        f: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        self.opt(key, f)?
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn opt<T>(
        &mut self,
        key: &str,
        f: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => f(&v).map(Some).map_err(|reason| ConfigError::Value {
                line,
                key: key.to_string(),
                reason,
            }),
        }
    }

    /// Attributes a core validation error to the line of the offending key.
    fn core_error(&self, section: &str, e: oqbm_core::Error) -> ConfigError {
        let key = match &e {
            oqbm_core::Error::InvalidParameter { name, .. } => format!("{section}.{name}"),
            _ => section.to_string(),
        };
        let line = self.entries.get(&key).map_or(0, |en| en.line);
        ConfigError::Value {
            line,
            key,
            reason: e.to_string(),
        }
    }

    fn check_unused(&self) -> Result<()> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            Some((k, e)) => Err(ConfigError::Unknown {
                line: e.line,
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// Evaluates `a*b/c`-style products of literals and `pi`.
pub fn eval_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty value".into());
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) if r.contains(['*', '/']) || r.trim_start().starts_with("pi") => (true, r),
        _ => (false, s),
    };
    let mut acc = 1.0;
    let mut op = '*';
    let mut rest = body;
    loop {
        let end = rest.find(['*', '/']).unwrap_or(rest.len());
        let tok = rest[..end].trim();
        let v = match tok {
            "pi" => std::f64::consts::PI,
            "" => return Err(format!("malformed expression `{s}`")),
            t => t
                .parse::<f64>()
                .map_err(|_| format!("not a number: `{t}`"))?,
        };
        acc = if op == '*' { acc * v } else { acc / v };
        if end == rest.len() {
            break;
        }
        op = rest.as_bytes()[end] as char;
        rest = &rest[end + 1..];
    }
    if !acc.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(if neg { -acc } else { acc })
}

fn eval_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(eval_number).collect()
}

fn eval_usize(s: &str) -> std::result::Result<usize, String> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| format!("expected a non-negative integer, got `{s}`"))
}

fn eval_choice<T: Copy>(
    options: &'static [(&'static str, T)],
) -> impl Fn(&str) -> std::result::Result<T, String> {
    move |s| {
        options
            .iter()
            .find(|(n, _)| *n == s.trim())
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                format!("expected one of {}, got `{s}`", names.join(", "))
            })
    }
}

const KINDS: &[(&str, InitialKind)] = &[
    ("single", InitialKind::Single),
    ("double", InitialKind::Double),
];
const RULES: &[(&str, ExponentRule)] = &[
    ("abs", ExponentRule::AbsoluteValue),
    ("strict", ExponentRule::Strict),
];
const LAMBDA1: &[(&str, LambdaOneCoupling)] = &[
    ("diagonal", LambdaOneCoupling::Diagonal),
    ("rotation", LambdaOneCoupling::Rotation),
];
const FORMS: &[(&str, HierarchyForm)] = &[
    ("printed", HierarchyForm::Printed),
    ("pde", HierarchyForm::PdeConsistent),
];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options
        .iter()
        .find(|(_, o)| o == v)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::parse(&text, &stem)
    }

    /// Parses scenario text; `default_name` is used when `[scenario] name` is absent.
    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;
        let name = t
            .opt("scenario.name", |s| Ok(s.to_string()))?
            .unwrap_or_else(|| default_name.to_string());

        let mut values = [0.0; 9];
        for (v, key) in values.iter_mut().zip(CoefficientSet::<f64>::KEYS) {
            *v = t.get(&format!("coefficients.{key}"), eval_number)?;
        }
        let mut it = values.iter().copied();
        let coefficients = CoefficientSet::from_lookup(|_| it.next())
            .and_then(|c| c.validate().map(|_| c))
            .map_err(|e| t.core_error("coefficients", e))?;

        let kind = t.get("initial.kind", eval_choice(KINDS))?;
        let k = t.get("initial.k", eval_number)?;
        let theta = t.get("initial.theta", eval_number)?;
        let phi = t.get("initial.phi", eval_number)?;
        let rule = t
            .opt("initial.exponent_rule", eval_choice(RULES))?
            .unwrap_or_default();
        let state = InternalState::new(theta, phi).map_err(|e| t.core_error("initial", e))?;
        let initial = InitialCondition {
            kind,
            k,
            state,
            rule,
        };

        let half_width = t.get("grid.half_width", eval_number)?;
        let nodes = t.get("grid.nodes", eval_usize)?;

        let t_final = t.get("integrator.t_final", eval_number)?;
        let dt = t.get("integrator.dt", |s| {
            if s.trim() == "auto" {
                Ok(DtChoice::Auto)
            } else {
                eval_number(s).map(DtChoice::Fixed)
            }
        })?;
        let snapshots = t
            .opt("integrator.snapshots", eval_list)?
            .unwrap_or_else(Integrator::default_snapshots);
        let series_stride = t.opt("integrator.series_stride", eval_usize)?.unwrap_or(1);
        let lambda1 = t
            .opt("integrator.lambda1", eval_choice(LAMBDA1))?
            .unwrap_or_default();

        let moments = if t.has_section("moments") {
            Some(MomentSection {
                nmax: t.get("moments.nmax", eval_usize)?,
                dt: t.get("moments.dt", eval_number)?,
                t_final: t.get("moments.t_final", eval_number)?,
                sample_every: t.opt("moments.sample_every", eval_usize)?.unwrap_or(1),
                form: t
                    .opt("moments.form", eval_choice(FORMS))?
                    .unwrap_or_default(),
            })
        } else {
            None
        };
        let phase = if t.has_section("phase") {
            Some(PhaseSection {
                alpha: t.get("phase.alpha", eval_number)?,
                gamma_schedule: t.get("phase.gamma_schedule", eval_list)?,
                x_half_width: t.get("phase.x_half_width", eval_number)?,
                x_nodes: t.get("phase.x_nodes", eval_usize)?,
                p_nodes: t.get("phase.p_nodes", eval_usize)?,
                t_final: t.get("phase.t_final", eval_number)?,
                times: t.opt("phase.times", eval_list)?.unwrap_or_default(),
                dt_fraction: t.opt("phase.dt_fraction", eval_number)?.unwrap_or(1.0),
            })
        } else {
            None
        };
        t.check_unused()?;

        Ok(Self {
            name,
            config: ScenarioConfig {
                coefficients,
                initial,
                half_width,
                nodes,
                integrator: Integrator {
                    dt,
                    t_final,
                    snapshots,
                    series_stride,
                    options: RhsOptions { lambda1 },
                },
            },
            moments,
            phase,
        })
    }

    /// Canonical text form; parsing it yields an equal scenario.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "[scenario]\nname = {}\n", self.name);
        s.push_str("[coefficients]\n");
        for (k, v) in c.coefficients.to_pairs() {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let ic = &c.initial;
        let _ = writeln!(
            s,
            "\n[initial]\nkind = {}\nk = {:?}\ntheta = {:?}\nphi = {:?}\nexponent_rule = {}",
            name_of(KINDS, &ic.kind),
            ic.k,
            ic.state.theta(),
            ic.state.phi(),
            name_of(RULES, &ic.rule)
        );
        let _ = writeln!(
            s,
            "\n[grid]\nhalf_width = {:?}\nnodes = {}",
            c.half_width, c.nodes
        );
        let ig = &c.integrator;
        let dt = match ig.dt {
            DtChoice::Auto => "auto".to_string(),
            DtChoice::Fixed(v) => format!("{v:?}"),
        };
        let _ = writeln!(
            s,
            "\n[integrator]\nt_final = {:?}\ndt = {dt}\nsnapshots = {}\nseries_stride = {}\nlambda1 = {}",
            ig.t_final,
            list(&ig.snapshots),
            ig.series_stride,
            name_of(LAMBDA1, &ig.options.lambda1)
        );
        if let Some(m) = &self.moments {
            let _ = writeln!(
                s,
                "\n[moments]\nnmax = {}\ndt = {:?}\nt_final = {:?}\nsample_every = {}\nform = {}",
                m.nmax,
                m.dt,
                m.t_final,
                m.sample_every,
                name_of(FORMS, &m.form)
            );
        }
        if let Some(p) = &self.phase {
            let _ = writeln!(
                s,
                "\n[phase]\nalpha = {:?}\ngamma_schedule = {}\nx_half_width = {:?}\nx_nodes = {}\np_nodes = {}\nt_final = {:?}\ntimes = {}\ndt_fraction = {:?}",
                p.alpha,
                list(&p.gamma_schedule),
                p.x_half_width,
                p.x_nodes,
                p.p_nodes,
                p.t_final,
                list(&p.times),
                p.dt_fraction
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_expressions() {
        let pi = std::f64::consts::PI;
        assert_eq!(eval_number("pi/6").unwrap(), pi / 6.0);
        assert_eq!(eval_number("2*pi/3").unwrap(), 2.0 * pi / 3.0);
        assert_eq!(eval_number("-pi").unwrap(), -pi);
        assert_eq!(eval_number("-1e-2").unwrap(), -1e-2);
        assert_eq!(eval_number(" 5e-3 ").unwrap(), 5e-3);
        assert!(eval_number("pi//2").is_err());
        assert!(eval_number("1/0").is_err());
        assert!(eval_number("abc").is_err());
    }
}
