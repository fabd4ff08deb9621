//! Tunable parameter definitions, range derivation, and parameter manifests.
//!
//! A parameter with default `d` gets the domain `[d / prf, d * prf]`, where
//! `prf` is the parameter range factor of the enclosing [`ParameterSpace`].
//! Configurations are positional vectors against the space's parameter order.
//!
//! Every optimizer and the feature selector work in the *symmetric unit
//! coordinate*: `[lo, default]` maps linearly onto `[0, 0.5]` and
//! `[default, hi]` onto `[0.5, 1]`, so `0.5` is always the default.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Continuous,
    Integer,
}

/// Closed interval `[lo, hi]` in a parameter's native unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }
}

/// Derives the tuning domain of a parameter from its default value.
///
/// Positive defaults give `[d / prf, d * prf]`, negative defaults the same
/// interval with the bounds swapped. Integer parameters are rounded outward
/// (lo down, hi up) and, when `d >= 1`, `lo` is clamped to at least 1. A zero
/// default yields the degenerate interval `[0, 0]`; callers treat such a
/// parameter as non-tunable.
pub fn derive_range(default: f64, prf: f64, kind: ParamKind) -> Result<Interval> {
    if !default.is_finite() {
        return Err(Error::Range(format!("default {default} is not finite")));
    }
    if !prf.is_finite() || prf <= 1.0 {
        return Err(Error::Range(format!(
            "parameter range factor must be finite and > 1, got {prf}"
        )));
    }
    if default == 0.0 {
        return Ok(Interval { lo: 0.0, hi: 0.0 });
    }
    let (mut lo, mut hi) = if default > 0.0 {
        (default / prf, default * prf)
    } else {
        (default * prf, default / prf)
    };
    if kind == ParamKind::Integer {
        lo = lo.floor();
        hi = hi.ceil();
        if default >= 1.0 {
            lo = lo.max(1.0);
        }
    }
    Ok(Interval { lo, hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub default: f64,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
    pub tunable: bool,
}

impl ParameterSpec {
    /// Builds a tunable spec whose range is derived from `default` and `prf`.
    ///
    /// Zero defaults come back non-tunable.
    pub fn derived(name: impl Into<String>, default: f64, kind: ParamKind, prf: f64) -> Result<Self> {
        let range = derive_range(default, prf, kind)?;
        let spec = ParameterSpec {
            name: name.into(),
            default,
            kind,
            lo: range.lo,
            hi: range.hi,
            tunable: !range.is_degenerate(),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn fixed(name: impl Into<String>, default: f64, kind: ParamKind) -> Result<Self> {
        let spec = ParameterSpec {
            name: name.into(),
            default,
            kind,
            lo: default,
            hi: default,
            tunable: false,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_range(
        name: impl Into<String>,
        default: f64,
        kind: ParamKind,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let spec = ParameterSpec {
            name: name.into(),
            default,
            kind,
            lo,
            hi,
            tunable: true,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Range(format!("parameter '{}': {msg}", self.name)));
        if !(self.default.is_finite() && self.lo.is_finite() && self.hi.is_finite()) {
            return bad("non-finite default or bound".into());
        }
        if self.kind == ParamKind::Integer
            && [self.default, self.lo, self.hi].iter().any(|v| v.fract() != 0.0)
        {
            return bad("integer parameter with non-integer default or bound".into());
        }
        if self.tunable {
            if self.lo >= self.hi {
                return bad(format!("lo {} must be < hi {}", self.lo, self.hi));
            }
            if self.default < self.lo || self.default > self.hi {
                return bad(format!(
                    "default {} outside [{}, {}]",
                    self.default, self.lo, self.hi
                ));
            }
        } else if self.lo != self.default || self.hi != self.default {
            return bad("non-tunable parameter must have lo = hi = default".into());
        }
        Ok(())
    }

    pub fn range(&self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// `true` when `[lo, default)` is non-empty.
    pub fn has_lower_half(&self) -> bool {
        self.tunable && self.lo < self.default
    }

    /// `true` when `(default, hi]` is non-empty.
    pub fn has_upper_half(&self) -> bool {
        self.tunable && self.default < self.hi
    }

    pub fn contains(&self, value: f64) -> bool {
        value.is_finite()
            && value >= self.lo
            && value <= self.hi
            && (self.kind == ParamKind::Continuous || value.fract() == 0.0)
    }

    /// Native value to symmetric unit coordinate.
    pub fn to_unit(&self, value: f64) -> f64 {
        if !self.tunable || value == self.default {
            return 0.5;
        }
        if value < self.default {
            0.5 * (value - self.lo) / (self.default - self.lo)
        } else {
            0.5 + 0.5 * (value - self.default) / (self.hi - self.default)
        }
    }

    /// Symmetric unit coordinate to native value, snapped to the integer grid
    /// for integer parameters. Inputs outside `[0, 1]` are clamped.
    pub fn from_unit(&self, x: f64) -> f64 {
        if !self.tunable {
            return self.default;
        }
        let x = x.clamp(0.0, 1.0);
        let v = if x < 0.5 {
            self.lo + (x / 0.5) * (self.default - self.lo)
        } else {
            self.default + ((x - 0.5) / 0.5) * (self.hi - self.default)
        };
        self.snap(v)
    }

    /// Rounds integer parameters to the nearest integer and clamps into range.
    pub fn snap(&self, v: f64) -> f64 {
        let v = match self.kind {
            ParamKind::Continuous => v,
            ParamKind::Integer => v.round(),
        };
        v.clamp(self.lo, self.hi)
    }
}

/// A complete assignment of values, positional against a [`ParameterSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    params: Vec<ParameterSpec>,
    prf: f64,
}

impl ParameterSpace {
    pub fn new(params: Vec<ParameterSpec>, prf: f64) -> Result<Self> {
        if !prf.is_finite() || prf <= 1.0 {
            return Err(Error::Range(format!(
                "parameter range factor must be finite and > 1, got {prf}"
            )));
        }
        if params.is_empty() {
            return Err(Error::Manifest("no parameters".into()));
        }
        let mut seen = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            p.check()?;
            if let Some(j) = seen.insert(p.name.as_str(), i) {
                return Err(Error::Manifest(format!(
                    "duplicate parameter name '{}' (entries {j} and {i})",
                    p.name
                )));
            }
        }
        Ok(ParameterSpace { params, prf })
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn prf(&self) -> f64 {
        self.prf
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn tunable_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.tunable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn tunable_count(&self) -> usize {
        self.params.iter().filter(|p| p.tunable).count()
    }

    pub fn default_config(&self) -> Configuration {
        Configuration(self.params.iter().map(|p| p.default).collect())
    }

    pub fn validate(&self, config: &Configuration) -> Result<()> {
        if config.len() != self.len() {
            return Err(Error::Configuration(format!(
                "expected {} values, got {}",
                self.len(),
                config.len()
            )));
        }
        for (p, &v) in self.params.iter().zip(config.values()) {
            if !p.contains(v) {
                return Err(Error::Configuration(format!(
                    "parameter '{}' = {v} violates [{}, {}] ({:?})",
                    p.name, p.lo, p.hi, p.kind
                )));
            }
        }
        Ok(())
    }

    /// Symmetric unit coordinates of the tunable parameters, in order.
    pub fn normalize(&self, config: &Configuration) -> Vec<f64> {
        self.params
            .iter()
            .zip(config.values())
            .filter(|(p, _)| p.tunable)
            .map(|(p, &v)| p.to_unit(v))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize); non-tunable parameters take
    /// their defaults.
    pub fn denormalize(&self, unit: &[f64]) -> Configuration {
        let mut it = unit.iter();
        Configuration(
            self.params
                .iter()
                .map(|p| {
                    if p.tunable {
                        p.from_unit(*it.next().expect("unit vector shorter than tunable count"))
                    } else {
                        p.default
                    }
                })
                .collect(),
        )
    }

    /// Keeps only the named parameters, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<ParameterSpace> {
        let params = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.params[i].clone())
                    .ok_or_else(|| Error::Manifest(format!("unknown parameter '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        ParameterSpace::new(params, self.prf)
    }

    pub fn config_to_map(&self, config: &Configuration) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .zip(config.values())
            .map(|(p, &v)| (p.name.clone(), v))
            .collect()
    }

    /// Builds a configuration from a name-keyed map. Missing names take the
    /// default; unknown names are rejected.
    pub fn config_from_map(&self, map: &BTreeMap<String, f64>) -> Result<Configuration> {
        for name in map.keys() {
            if self.index_of(name).is_none() {
                return Err(Error::Configuration(format!("unknown parameter '{name}'")));
            }
        }
        let config = Configuration(
            self.params
                .iter()
                .map(|p| map.get(&p.name).copied().unwrap_or(p.default))
                .collect(),
        );
        self.validate(&config)?;
        Ok(config)
    }
}

// ---------------------------------------------------------------------------
// Manifest file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    /// Provenance of generated manifests; ignored when parsing.
    #[serde(rename = "_provenance", default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    prf: f64,
    parameters: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<f64>,
    kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tunable: Option<bool>,
}

fn entry_to_spec(entry: &ManifestEntry, idx: usize, prf: f64) -> Result<ParameterSpec> {
    let err = |msg: String| Error::Manifest(format!("entry {idx} ('{}'): {msg}", entry.name));
    let default = entry.default.ok_or_else(|| err("missing default".into()))?;
    if entry.tunable == Some(false) {
        return ParameterSpec::fixed(&entry.name, default, entry.kind).map_err(|e| err(e.to_string()));
    }
    let derived = derive_range(default, prf, entry.kind).map_err(|e| err(e.to_string()))?;
    let lo = entry.lo.unwrap_or(derived.lo);
    let hi = entry.hi.unwrap_or(derived.hi);
    if entry.lo.is_some() || entry.hi.is_some() {
        if lo >= hi {
            return Err(err(format!("override lo {lo} must be < hi {hi}")));
        }
    } else if derived.is_degenerate() {
        if entry.tunable == Some(true) {
            log::warn!(
                "parameter '{}' has a zero default and no explicit range; marking it non-tunable",
                entry.name
            );
        }
        return ParameterSpec::fixed(&entry.name, default, entry.kind).map_err(|e| err(e.to_string()));
    }
    ParameterSpec::with_range(&entry.name, default, entry.kind, lo, hi).map_err(|e| err(e.to_string()))
}

fn spec_to_entry(spec: &ParameterSpec, prf: f64) -> ManifestEntry {
    let mut entry = ManifestEntry {
        name: spec.name.clone(),
        default: Some(spec.default),
        kind: spec.kind,
        lo: None,
        hi: None,
        tunable: None,
    };
    if !spec.tunable {
        entry.tunable = Some(false);
        return entry;
    }
    match derive_range(spec.default, prf, spec.kind) {
        Ok(r) if !r.is_degenerate() => {
            if r.lo != spec.lo {
                entry.lo = Some(spec.lo);
            }
            if r.hi != spec.hi {
                entry.hi = Some(spec.hi);
            }
        }
        _ => {
            entry.lo = Some(spec.lo);
            entry.hi = Some(spec.hi);
        }
    }
    entry
}

/// Parses a manifest document.
pub fn parse_manifest(text: &str) -> Result<ParameterSpace> {
    let file: ManifestFile =
        serde_json::from_str(text).map_err(|e| Error::json("parameter manifest", e))?;
    if file.parameters.is_empty() {
        return Err(Error::Manifest("no parameters".into()));
    }
    if !file.prf.is_finite() || file.prf <= 1.0 {
        return Err(Error::Manifest(format!("prf must be > 1, got {}", file.prf)));
    }
    let mut seen = HashMap::new();
    let mut params = Vec::with_capacity(file.parameters.len());
    for (i, entry) in file.parameters.iter().enumerate() {
        if let Some(j) = seen.insert(entry.name.clone(), i) {
            return Err(Error::Manifest(format!(
                "entry {i} ('{}'): duplicate name (first seen at entry {j})",
                entry.name
            )));
        }
        params.push(entry_to_spec(entry, i, file.prf)?);
    }
    ParameterSpace::new(params, file.prf)
}

/// Parses a manifest but derives ranges with `prf` instead of the file's own.
pub fn parse_manifest_with_prf(text: &str, prf: f64) -> Result<ParameterSpace> {
    let mut file: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::json("parameter manifest", e))?;
    if let Some(obj) = file.as_object_mut() {
        obj.insert("prf".into(), serde_json::json!(prf));
    }
    parse_manifest(&file.to_string())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ParameterSpace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(space: &ParameterSpace) -> String {
    manifest_with_provenance(space, None)
}

/// Manifest text with an embedded `_provenance` record.
pub fn manifest_with_provenance(space: &ParameterSpace, provenance: Option<serde_json::Value>) -> String {
    let file = ManifestFile {
        provenance,
        prf: space.prf,
        parameters: space
            .params
            .iter()
            .map(|p| spec_to_entry(p, space.prf))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn save_manifest(space: &ParameterSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest_to_string(space)).map_err(|e| Error::io(path, e))
}
