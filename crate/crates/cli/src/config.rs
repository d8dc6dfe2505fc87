//! Declarative experiment configs in a flat INI dialect.
//!
//! ```text
//! # comment
//! [experiment]
//! name = yb_d1
//! kind = cumulant
//!
//! [atoms]
//! species = Yb174
//! initial_state = D1_m0
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use superburst::atoms::{InitialState, Species};
use superburst::dicke_point::PointModel;
use superburst::exact::Unravelling;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}, field '{}': {}", self.field, self.message),
            None => write!(f, "field '{}': {}", self.field, self.message),
        }
    }
}

fn err<T>(line: Option<usize>, field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        field: field.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    CriteriaSweep,
    PointModel,
    Cumulant,
    ExactBenchmark,
    Scaling,
    Preset,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::CriteriaSweep => "criteria-sweep",
            Kind::PointModel => "point-model",
            Kind::Cumulant => "cumulant",
            Kind::ExactBenchmark => "exact-benchmark",
            Kind::Scaling => "scaling",
            Kind::Preset => "preset",
        }
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "criteria-sweep" => Kind::CriteriaSweep,
            "point-model" => Kind::PointModel,
            "cumulant" => Kind::Cumulant,
            "exact-benchmark" => Kind::ExactBenchmark,
            "scaling" => Kind::Scaling,
            "preset" => Kind::Preset,
            other => return Err(format!("unknown kind '{other}'")),
        })
    }
}

/// Exact solver used by `exact-benchmark`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMethod {
    /// Master equation when the array is small enough, trajectories otherwise.
    Auto,
    Master,
    Mcwf,
}

impl ExactMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ExactMethod::Auto => "auto",
            ExactMethod::Master => "master",
            ExactMethod::Mcwf => "mcwf",
        }
    }
}

pub fn point_model_name(m: PointModel) -> &'static str {
    match m {
        PointModel::TwoLevel => "two-level",
        PointModel::Lambda => "lambda",
        PointModel::Ladder => "ladder",
    }
}

pub fn unravelling_name(u: Unravelling) -> &'static str {
    match u {
        Unravelling::Modes => "modes",
        Unravelling::Sites => "sites",
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Atoms {
    pub species: Option<Species>,
    pub initial_state: Option<InitialState>,
    /// Two-level atoms with this transition wavelength, dipole along ẑ.
    pub wavelength_nm: Option<f64>,
    pub include_weak_p2_loss: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    Nm(f64),
    /// Fraction of the dominant transition wavelength.
    Lambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Array {
    pub n_x: usize,
    pub n_y: usize,
    pub spacing: Option<Spacing>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorAngles {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integration {
    pub t_max_gamma0: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub samples: usize,
}

impl Default for Integration {
    fn default() -> Self {
        Integration {
            t_max_gamma0: 10.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            samples: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub min_nm: f64,
    pub max_nm: f64,
    pub step_nm: f64,
    /// Channel index; every channel with nonzero rate when absent.
    pub channel: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectories {
    pub count: usize,
    pub seed: u64,
    pub method: ExactMethod,
    pub unravelling: Unravelling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub model: PointModel,
    pub n_atoms: usize,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    /// Atom numbers for point models, side lengths for square arrays.
    pub sizes: Vec<usize>,
    pub fit_min_n: f64,
    /// End each run once the total rate has dropped to half its maximum.
    pub stop_after_peak: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: Kind,
    pub preset: Option<String>,
    pub atoms: Atoms,
    pub array: Option<Array>,
    pub detector: Option<DetectorAngles>,
    pub integration: Integration,
    pub sweep: Option<Sweep>,
    pub trajectories: Option<Trajectories>,
    pub point: Option<Point>,
    pub scaling: Option<Scaling>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(name: &str, kind: Kind) -> Self {
        ExperimentConfig {
            name: name.to_string(),
            kind,
            preset: None,
            atoms: Atoms::default(),
            array: None,
            detector: None,
            integration: Integration::default(),
            sweep: None,
            trajectories: None,
            point: None,
            scaling: None,
            output: None,
        }
    }

    /// Check the sections each kind needs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let need = |present: bool, section: &str| {
            if present {
                Ok(())
            } else {
                err(None, section, format!("section [{section}] is required for kind {}", self.kind.as_str()))
            }
        };
        let has_atoms = self.atoms.species.is_some() || self.atoms.wavelength_nm.is_some();
        if self.atoms.species.is_some() && self.atoms.wavelength_nm.is_some() {
            return err(None, "atoms.wavelength_nm", "give either species or wavelength_nm, not both");
        }
        if self.atoms.species.is_some() && self.atoms.initial_state.is_none() {
            return err(None, "atoms.initial_state", "required together with species");
        }
        match self.kind {
            Kind::PointModel => need(self.point.is_some(), "point"),
            Kind::Cumulant => {
                need(has_atoms, "atoms")?;
                need(self.array.is_some_and(|a| a.spacing.is_some()), "array")
            }
            Kind::CriteriaSweep => {
                need(has_atoms, "atoms")?;
                need(self.array.is_some(), "array")?;
                need(self.sweep.is_some(), "sweep")
            }
            Kind::ExactBenchmark => {
                need(has_atoms, "atoms")?;
                need(self.array.is_some_and(|a| a.spacing.is_some()), "array")
            }
            Kind::Scaling => {
                need(self.scaling.is_some(), "scaling")?;
                if self.point.is_none() {
                    need(has_atoms, "atoms")?;
                    need(self.array.is_some_and(|a| a.spacing.is_some()), "array")?;
                }
                Ok(())
            }
            Kind::Preset => {
                if self.preset.is_none() {
                    return err(None, "experiment.preset", "required for kind preset");
                }
                Ok(())
            }
        }
    }

    /// Canonical text form; `parse(to_ini())` reproduces the config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        fn kv(s: &mut String, k: &str, v: String) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("[experiment]\n");
        kv(&mut s, "name", self.name.clone());
        kv(&mut s, "kind", self.kind.as_str().into());
        if let Some(p) = &self.preset {
            kv(&mut s, "preset", p.clone());
        }
        let a = &self.atoms;
        if a.species.is_some() || a.wavelength_nm.is_some() || a.initial_state.is_some() || a.include_weak_p2_loss {
            s.push_str("\n[atoms]\n");
            if let Some(sp) = a.species {
                kv(&mut s, "species", sp.to_string());
            }
            if let Some(st) = a.initial_state {
                kv(&mut s, "initial_state", st.to_string());
            }
            if let Some(w) = a.wavelength_nm {
                kv(&mut s, "wavelength_nm", num(w));
            }
            if a.include_weak_p2_loss {
                kv(&mut s, "include_weak_p2_loss", "true".into());
            }
        }
        if let Some(p) = &self.point {
            s.push_str("\n[point]\n");
            kv(&mut s, "model", point_model_name(p.model).into());
            kv(&mut s, "n_atoms", p.n_atoms.to_string());
            kv(&mut s, "rates", p.rates.iter().map(|&r| num(r)).collect::<Vec<_>>().join(", "));
        }
        if let Some(ar) = &self.array {
            s.push_str("\n[array]\n");
            kv(&mut s, "n_x", ar.n_x.to_string());
            kv(&mut s, "n_y", ar.n_y.to_string());
            match ar.spacing {
                Some(Spacing::Nm(d)) => kv(&mut s, "spacing_nm", num(d)),
                Some(Spacing::Lambda(f)) => kv(&mut s, "spacing_lambda", num(f)),
                None => {}
            }
        }
        if let Some(d) = &self.detector {
            s.push_str("\n[detector]\n");
            kv(&mut s, "theta_deg", num(d.theta_deg));
            kv(&mut s, "phi_deg", num(d.phi_deg));
        }
        let i = &self.integration;
        s.push_str("\n[integration]\n");
        kv(&mut s, "t_max_gamma0", num(i.t_max_gamma0));
        kv(&mut s, "rel_tol", num(i.rel_tol));
        kv(&mut s, "abs_tol", num(i.abs_tol));
        kv(&mut s, "samples", i.samples.to_string());
        if let Some(w) = &self.sweep {
            s.push_str("\n[sweep]\n");
            kv(&mut s, "min_nm", num(w.min_nm));
            kv(&mut s, "max_nm", num(w.max_nm));
            kv(&mut s, "step_nm", num(w.step_nm));
            if let Some(c) = w.channel {
                kv(&mut s, "channel", c.to_string());
            }
        }
        if let Some(t) = &self.trajectories {
            s.push_str("\n[trajectories]\n");
            kv(&mut s, "count", t.count.to_string());
            kv(&mut s, "seed", t.seed.to_string());
            kv(&mut s, "method", t.method.as_str().into());
            kv(&mut s, "unravelling", unravelling_name(t.unravelling).into());
        }
        if let Some(sc) = &self.scaling {
            s.push_str("\n[scaling]\n");
            kv(&mut s, "sizes", join(&sc.sizes));
            kv(&mut s, "fit_min_n", sc.fit_min_n.to_string());
            kv(&mut s, "stop_after_peak", sc.stop_after_peak.to_string());
        }
        if let Some(o) = &self.output {
            s.push_str("\n[output]\n");
            kv(&mut s, "directory", o.display().to_string());
        }
        s
    }
}

/// Shortest text that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "kind", "preset"]),
    ("atoms", &["species", "initial_state", "wavelength_nm", "include_weak_p2_loss"]),
    ("point", &["model", "n_atoms", "rates"]),
    ("array", &["n_x", "n_y", "spacing_nm", "spacing_lambda"]),
    ("detector", &["theta_deg", "phi_deg"]),
    ("integration", &["t_max_gamma0", "rel_tol", "abs_tol", "samples"]),
    ("sweep", &["min_nm", "max_nm", "step_nm", "channel"]),
    ("trajectories", &["count", "seed", "method", "unravelling"]),
    ("scaling", &["sizes", "fit_min_n", "stop_after_peak"]),
    ("output", &["directory"]),
];

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, sec: &str, key: &str) -> Option<(String, usize, String)> {
        self.entries
            .remove(key)
            .map(|e| (e.value, e.line, format!("{sec}.{key}")))
    }

    fn parsed<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line, field)) => match v.parse::<T>() {
                Ok(x) => Ok(Some(x)),
                Err(e) => err(Some(line), &field, format!("cannot parse '{v}': {e}")),
            },
        }
    }

    fn required<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let line = self.line;
        self.parsed(sec, key)?
            .map_or_else(|| err(Some(line), &format!("{sec}.{key}"), "missing required field"), Ok)
    }

    fn positive(&mut self, sec: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        match self.parsed::<f64>(sec, key)? {
            Some(x) if !(x > 0.0 && x.is_finite()) => err(line, &format!("{sec}.{key}"), "must be positive"),
            other => Ok(other),
        }
    }

    fn count(&mut self, sec: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        match self.parsed::<usize>(sec, key)? {
            Some(0) => err(line, &format!("{sec}.{key}"), "must be at least 1"),
            other => Ok(other),
        }
    }

    fn list<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some((v, line, field)) = self.take(sec, key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(|x| x.trim().parse::<T>().map_err(|e| format!("cannot parse '{}': {e}", x.trim())))
            .collect::<Result<Vec<_>, _>>();
        match items {
            Ok(xs) if xs.is_empty() => err(Some(line), &field, "empty list"),
            Ok(xs) => Ok(Some(xs)),
            Err(m) => err(Some(line), &field, m),
        }
    }
}

fn tokenize(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(Some(line), body, "unterminated section header");
            };
            let name = name.trim().to_string();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return err(Some(line), &name, "unknown section");
            }
            if sections.contains_key(&name) {
                return err(Some(line), &name, "duplicate section");
            }
            sections.insert(name.clone(), Section { line, entries: BTreeMap::new() });
            current = Some(name);
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return err(Some(line), body, "expected 'key = value'");
        };
        let key = key.trim();
        let Some(sec) = &current else {
            return err(Some(line), key, "field outside of any section");
        };
        let known = SECTIONS.iter().find(|(s, _)| s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return err(Some(line), &format!("{sec}.{key}"), "unknown field");
        }
        let entries = &mut sections.get_mut(sec).expect("section inserted").entries;
        if entries.contains_key(key) {
            return err(Some(line), &format!("{sec}.{key}"), "duplicate field");
        }
        entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
    }
    Ok(sections)
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got '{other}'")),
    }
}

struct Flag(bool);

impl FromStr for Flag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_bool(s).map(Flag)
    }
}

struct Method(ExactMethod);

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(Method(match s {
            "auto" => ExactMethod::Auto,
            "master" => ExactMethod::Master,
            "mcwf" => ExactMethod::Mcwf,
            other => return Err(format!("unknown method '{other}'")),
        }))
    }
}

struct Unrav(Unravelling);

impl FromStr for Unrav {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(Unrav(match s {
            "modes" => Unravelling::Modes,
            "sites" => Unravelling::Sites,
            other => return Err(format!("unknown unravelling '{other}'")),
        }))
    }
}

/// Parse and validate a config.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut secs = tokenize(text)?;
    let Some(mut exp) = secs.remove("experiment") else {
        return err(None, "experiment", "missing section [experiment]");
    };
    let kind: Kind = exp.required("experiment", "kind")?;
    let name: String = exp.required("experiment", "name")?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
        return err(Some(exp.line), "experiment.name", "use letters, digits, '_', '-' or '.'");
    }
    let mut cfg = ExperimentConfig::new(&name, kind);
    cfg.preset = exp.parsed("experiment", "preset")?;

    if let Some(mut s) = secs.remove("atoms") {
        cfg.atoms = Atoms {
            species: s.parsed("atoms", "species")?,
            initial_state: s.parsed("atoms", "initial_state")?,
            wavelength_nm: s.positive("atoms", "wavelength_nm")?,
            include_weak_p2_loss: s.parsed::<Flag>("atoms", "include_weak_p2_loss")?.is_some_and(|f| f.0),
        };
    }
    if let Some(mut s) = secs.remove("point") {
        let model: PointModel = s.required("point", "model")?;
        let n_atoms = s.count("point", "n_atoms")?.unwrap_or(1);
        let line = s.entries.get("rates").map(|e| e.line).unwrap_or(s.line);
        let rates: Vec<f64> = s.list("point", "rates")?.unwrap_or_default();
        if rates.len() != model.transitions().len() || rates.iter().any(|r| !(*r > 0.0)) {
            return err(
                Some(line),
                "point.rates",
                format!("need {} positive rates for model {}", model.transitions().len(), point_model_name(model)),
            );
        }
        cfg.point = Some(Point { model, n_atoms, rates });
    }
    if let Some(mut s) = secs.remove("array") {
        let n_x = s.count("array", "n_x")?.unwrap_or(1);
        let n_y = s.count("array", "n_y")?.unwrap_or(1);
        let nm = s.positive("array", "spacing_nm")?;
        let lam = s.positive("array", "spacing_lambda")?;
        let spacing = match (nm, lam) {
            (Some(_), Some(_)) => return err(Some(s.line), "array.spacing_nm", "give spacing_nm or spacing_lambda, not both"),
            (Some(d), None) => Some(Spacing::Nm(d)),
            (None, Some(f)) => Some(Spacing::Lambda(f)),
            (None, None) => None,
        };
        cfg.array = Some(Array { n_x, n_y, spacing });
    }
    if let Some(mut s) = secs.remove("detector") {
        let theta_deg: f64 = s.required("detector", "theta_deg")?;
        let phi_deg: f64 = s.required("detector", "phi_deg")?;
        if !theta_deg.is_finite() || !phi_deg.is_finite() {
            return err(Some(s.line), "detector", "angles must be finite");
        }
        cfg.detector = Some(DetectorAngles { theta_deg, phi_deg });
    }
    if let Some(mut s) = secs.remove("integration") {
        let d = Integration::default();
        cfg.integration = Integration {
            t_max_gamma0: s.positive("integration", "t_max_gamma0")?.unwrap_or(d.t_max_gamma0),
            rel_tol: s.positive("integration", "rel_tol")?.unwrap_or(d.rel_tol),
            abs_tol: s.positive("integration", "abs_tol")?.unwrap_or(d.abs_tol),
            samples: s.count("integration", "samples")?.unwrap_or(d.samples),
        };
    }
    if let Some(mut s) = secs.remove("sweep") {
        let min_nm = s.positive("sweep", "min_nm")?;
        let max_nm = s.positive("sweep", "max_nm")?;
        let step_nm = s.positive("sweep", "step_nm")?.unwrap_or(10.0);
        let (Some(min_nm), Some(max_nm)) = (min_nm, max_nm) else {
            return err(Some(s.line), "sweep", "min_nm and max_nm are required");
        };
        if max_nm < min_nm {
            return err(Some(s.line), "sweep.max_nm", "must not be below min_nm");
        }
        cfg.sweep = Some(Sweep {
            min_nm,
            max_nm,
            step_nm,
            channel: s.parsed("sweep", "channel")?,
        });
    }
    if let Some(mut s) = secs.remove("trajectories") {
        cfg.trajectories = Some(Trajectories {
            count: s.count("trajectories", "count")?.unwrap_or(1000),
            seed: s.parsed("trajectories", "seed")?.unwrap_or(0),
            method: s.parsed::<Method>("trajectories", "method")?.map_or(ExactMethod::Auto, |m| m.0),
            unravelling: s.parsed::<Unrav>("trajectories", "unravelling")?.map_or(Unravelling::Modes, |u| u.0),
        });
    }
    if let Some(mut s) = secs.remove("scaling") {
        let line = s.line;
        let sizes: Vec<usize> = s.list("scaling", "sizes")?.map_or_else(
            || err(Some(line), "scaling.sizes", "missing required field"),
            Ok,
        )?;
        if sizes.contains(&0) {
            return err(Some(line), "scaling.sizes", "sizes must be at least 1");
        }
        cfg.scaling = Some(Scaling {
            sizes,
            fit_min_n: s.parsed("scaling", "fit_min_n")?.unwrap_or(1.0),
            stop_after_peak: s.parsed::<Flag>("scaling", "stop_after_peak")?.is_some_and(|f| f.0),
        });
    }
    if let Some(mut s) = secs.remove("output") {
        cfg.output = s.parsed::<String>("output", "directory")?.map(PathBuf::from);
    }
    cfg.validate()?;
    Ok(cfg)
}
