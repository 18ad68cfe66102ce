//! Experiment description files.
//!
//! A config is a sequence of `[section]` or `[section name]` headers followed
//! by `key = value` lines; `#` starts a comment. Dimensioned values carry a
//! mandatory unit suffix and are converted to SI on load:
//!
//! ```text
//! [magnet]
//! mass = 23 ug
//! radius = 100 um
//! thickness = 100 um
//! magnetization = 4.4e5 A/m
//!
//! [mode z]
//! frequency = 42.4 Hz
//! quality_factor = 1e4
//! bath_temperature = 4.4 K
//!
//! [noise]
//! thermal = on
//! seed = 1
//! ```
//!
//! Sections: `magnet`, `mode <label>` (repeatable), `noise`, `feedback`,
//! `coil`, `simulation`, `analysis`, `pressure`, `outputs`. Unknown sections
//! and keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::units::{format_quantity, parse_quantity, Dimension};
use crate::coil_coupling::{CoilGeometry, FluxForm, GeometryBounds, Orientation};
use crate::error::{Error, Result};
use crate::langevin::{FeedbackConfig, FeedbackMode, ModeKind, ModeLabel, ModeSpec, NoiseConfig};
use crate::trap_model::{moment_of_inertia, MagnetSpec};

use super::pressure::PressureReading;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Section {
    name: String,
    arg: Option<String>,
    line: usize,
    entries: Vec<Entry>,
}

/// Untyped config: sections of key/value strings with line numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(header) = content.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(Some(line), "unterminated section header"))?
                    .trim();
                let mut parts = header.split_whitespace();
                let name =
                    parts.next().ok_or_else(|| Error::config(Some(line), "empty section header"))?.to_ascii_lowercase();
                let arg = parts.next().map(str::to_string);
                if parts.next().is_some() {
                    return Err(Error::config(Some(line), format!("malformed section header '[{header}]'")));
                }
                sections.push(Section { name, arg, line, entries: Vec::new() });
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line), format!("expected 'key = value', got '{content}'")))?;
            let section = sections.last_mut().ok_or_else(|| Error::config(Some(line), "key outside of any section"))?;
            let key = key.trim().to_ascii_lowercase();
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::config(Some(line), format!("duplicate key '{key}'")));
            }
            section.entries.push(Entry { key, value: value.trim().to_string(), line });
        }
        Ok(Document { sections })
    }

    /// Apply `section[:arg].key=value` overrides, adding sections and keys as needed.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (path, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(None, format!("override '{o}' is not of the form section.key=value")))?;
            let (section, key) = path
                .trim()
                .rsplit_once('.')
                .ok_or_else(|| Error::config(None, format!("override '{o}' lacks a section")))?;
            let (name, arg) = match section.split_once(':') {
                Some((n, a)) => (n.to_ascii_lowercase(), Some(a.to_string())),
                None => (section.to_ascii_lowercase(), None),
            };
            let idx = match self.sections.iter().position(|s| s.name == name && (arg.is_none() || s.arg == arg)) {
                Some(i) => i,
                None => {
                    self.sections.push(Section { name, arg, line: 0, entries: Vec::new() });
                    self.sections.len() - 1
                }
            };
            let key = key.trim().to_ascii_lowercase();
            let entries = &mut self.sections[idx].entries;
            match entries.iter_mut().find(|e| e.key == key) {
                Some(e) => e.value = value.trim().to_string(),
                None => entries.push(Entry { key, value: value.trim().to_string(), line: 0 }),
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            match &s.arg {
                Some(a) => {
                    let _ = writeln!(out, "[{} {}]", s.name, a);
                }
                None => {
                    let _ = writeln!(out, "[{}]", s.name);
                }
            }
            for e in &s.entries {
                let _ = writeln!(out, "{} = {}", e.key, e.value);
            }
        }
        out
    }
}

/// Consumes the entries of one section, converting units and rejecting leftovers.
struct Reader<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> Reader<'a> {
    fn new(section: &'a Section) -> Self {
        Reader { section, used: vec![false; section.entries.len()] }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Entry> {
        let i = self.section.entries.iter().position(|e| e.key == key)?;
        self.used[i] = true;
        Some(&self.section.entries[i])
    }

    fn err(&self, entry: Option<&Entry>, e: impl std::fmt::Display) -> Error {
        let line = entry.map(|e| e.line).filter(|l| *l > 0).or(Some(self.section.line).filter(|l| *l > 0));
        Error::config(line, format!("[{}] {e}", self.title()))
    }

    fn title(&self) -> String {
        match &self.section.arg {
            Some(a) => format!("{} {}", self.section.name, a),
            None => self.section.name.clone(),
        }
    }

    fn quantity(&mut self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => {
                parse_quantity(&e.value, dim).map(Some).map_err(|err| self.err(Some(e), format!("{key}: {err}")))
            }
        }
    }

    fn required(&mut self, key: &str, dim: Dimension) -> Result<f64> {
        self.quantity(key, dim)?.ok_or_else(|| self.err(None, format!("missing required key '{key}'")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| self.err(Some(e), format!("{key}: {err}"))),
        }
    }

    fn flag(&mut self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => match e.value.to_ascii_lowercase().as_str() {
                "on" | "true" | "yes" => Ok(Some(true)),
                "off" | "false" | "no" => Ok(Some(false)),
                other => Err(self.err(Some(e), format!("{key}: expected on/off, got '{other}'"))),
            },
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|e| e.value.trim_matches('"').to_string())
    }

    fn list(&mut self, key: &str, dim: Dimension) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|v| parse_quantity(v, dim))
                .collect::<Result<Vec<_>>>()
                .map(Some)
                .map_err(|err| self.err(Some(e), format!("{key}: {err}"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(i) = self.used.iter().position(|u| !u) {
            let e = &self.section.entries[i];
            return Err(self.err(Some(e), format!("unknown key '{}'", e.key)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Json,
    #[default]
    Text,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::invalid(format!("unknown output format '{other}'"))),
        }
    }
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Text => "text",
            OutputFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoilSettings {
    pub geometry: CoilGeometry,
    pub flux_form: FluxForm,
    /// A·m²; taken from the magnet when absent.
    pub moment: Option<f64>,
    pub flux_transfer_ratio: Option<f64>,
    /// Φ₀/√Hz.
    pub squid_flux_noise: Option<f64>,
    pub search: Option<GeometryBounds>,
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationSettings {
    pub timestep: Option<f64>,
    pub duration: Option<f64>,
    pub record_stride: Option<usize>,
    pub ensemble: Option<usize>,
    pub gains: Option<Vec<f64>>,
    pub burn_in: Option<f64>,
    /// Step budget per run; Q is lowered when a run would exceed it.
    pub max_steps: Option<u64>,
    /// Initial displacement for ring-downs (m or rad).
    pub initial_displacement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisSettings {
    pub input: Option<PathBuf>,
    pub mode: Option<ModeLabel>,
    pub channel: Option<String>,
    pub segment_length: Option<usize>,
    pub overlap: Option<f64>,
    pub rms_linewidths: Option<f64>,
    pub reference_temperature: Option<f64>,
    pub reference_rms: Option<f64>,
    pub ringdown_periods: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSettings {
    pub directory: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub plots: Option<bool>,
}

/// Typed experiment description, all values SI.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub magnet: Option<MagnetSpec>,
    pub modes: Vec<ModeSpec>,
    pub noise: Option<NoiseConfig>,
    pub feedback: Option<FeedbackConfig>,
    pub coil: Option<CoilSettings>,
    pub simulation: SimulationSettings,
    pub analysis: AnalysisSettings,
    pub pressure: Option<PressureReading>,
    pub outputs: OutputSettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_document(&Document::parse(text)?)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::MissingInput { path: path.to_path_buf(), source })?;
        let mut doc = Document::parse(&text)?;
        doc.apply_overrides(overrides)?;
        Self::from_document(&doc)
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<(String, Option<String>)> = Vec::new();
        // the magnet is read first so modes can derive their inertia from it
        let ordered = doc
            .sections
            .iter()
            .filter(|s| s.name == "magnet")
            .chain(doc.sections.iter().filter(|s| s.name != "magnet"));
        for section in ordered {
            let id = (section.name.clone(), section.arg.clone());
            if seen.contains(&id) {
                return Err(Error::config(Some(section.line), format!("duplicate section [{}]", section.name)));
            }
            seen.push(id);
            if section.name != "mode" && section.arg.is_some() {
                return Err(Error::config(Some(section.line), format!("section [{}] takes no name", section.name)));
            }
            let mut r = Reader::new(section);
            match section.name.as_str() {
                "magnet" => cfg.magnet = Some(read_magnet(&mut r)?),
                "mode" => {
                    let mode = read_mode(&mut r, cfg.magnet.as_ref())?;
                    cfg.modes.push(mode);
                }
                "noise" => cfg.noise = Some(read_noise(&mut r)?),
                "feedback" => cfg.feedback = Some(read_feedback(&mut r)?),
                "coil" => cfg.coil = Some(read_coil(&mut r)?),
                "simulation" => cfg.simulation = read_simulation(&mut r)?,
                "analysis" => cfg.analysis = read_analysis(&mut r)?,
                "pressure" => cfg.pressure = Some(read_pressure(&mut r)?),
                "outputs" => cfg.outputs = read_outputs(&mut r)?,
                other => return Err(Error::config(Some(section.line), format!("unknown section [{other}]"))),
            }
            r.finish()?;
        }
        Ok(cfg)
    }

    /// The selected mode: `analysis.mode` if set, else the first one.
    pub fn mode(&self) -> Result<&ModeSpec> {
        let wanted = self.analysis.mode;
        self.modes.iter().find(|m| wanted.is_none_or(|w| m.label == w)).ok_or_else(|| match wanted {
            Some(w) => Error::config(None, format!("no [mode {w}] section")),
            None => Error::config(None, "config needs at least one [mode <label>] section"),
        })
    }

    /// Serialise to the config format with canonical SI suffixes.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::default();
        let angular = self.modes.first().is_some_and(|m| m.kind == ModeKind::Librational);
        let mut push = |name: &str, arg: Option<String>, entries: Vec<(&str, String)>| {
            doc.sections.push(Section {
                name: name.to_string(),
                arg,
                line: 0,
                entries: entries.into_iter().map(|(k, v)| Entry { key: k.to_string(), value: v, line: 0 }).collect(),
            });
        };
        let q = |v: f64, d: Dimension| format_quantity(v, d, false);
        if let Some(m) = &self.magnet {
            let mut e = vec![
                ("mass", q(m.mass, Dimension::Mass)),
                ("radius", q(m.radius, Dimension::Length)),
                ("thickness", q(m.thickness, Dimension::Length)),
            ];
            if let Some(v) = m.density {
                e.push(("density", q(v, Dimension::Density)));
            }
            if let Some(v) = m.magnetization {
                e.push(("magnetization", q(v, Dimension::Magnetization)));
            }
            if let Some(v) = m.residual_flux_density {
                e.push(("residual_flux_density", q(v, Dimension::FluxDensity)));
            }
            push("magnet", None, e);
        }
        for m in &self.modes {
            let inertia = match m.kind {
                ModeKind::Translational => ("mass", q(m.inertia, Dimension::Mass)),
                ModeKind::Librational => ("moment_of_inertia", q(m.inertia, Dimension::MomentOfInertia)),
            };
            push(
                "mode",
                Some(m.label.to_string()),
                vec![
                    ("kind", m.kind.to_string()),
                    ("frequency", q(m.omega0, Dimension::AngularFrequency)),
                    inertia,
                    ("quality_factor", q(m.quality_factor, Dimension::Dimensionless)),
                    ("bath_temperature", q(m.bath_temperature, Dimension::Temperature)),
                ],
            );
        }
        if let Some(n) = &self.noise {
            push(
                "noise",
                None,
                vec![
                    ("thermal", if n.thermal { "on".into() } else { "off".into() }),
                    (
                        "vibration_accel_psd",
                        format_quantity(n.vibration_accel_psd, Dimension::AccelerationPsd, angular),
                    ),
                    ("detector_noise_psd", format_quantity(n.detector_noise_psd, Dimension::CoordinatePsd, angular)),
                    ("seed", n.seed.to_string()),
                ],
            );
        }
        if let Some(f) = &self.feedback {
            let mut e = vec![
                ("mode", f.mode.to_string()),
                ("gain", q(f.gain, Dimension::Dimensionless)),
                ("phase_offset", q(f.phase_offset, Dimension::Angle)),
                ("bandpass_width", q(f.bandpass_width, Dimension::AngularFrequency)),
                ("loop_delay", q(f.loop_delay, Dimension::Time)),
            ];
            if let Some(c) = f.bandpass_center {
                e.push(("bandpass_center", q(c, Dimension::AngularFrequency)));
            }
            push("feedback", None, e);
        }
        if let Some(c) = &self.coil {
            let g = &c.geometry;
            let mut e = vec![
                ("turns", g.turns.to_string()),
                ("loop_radius", q(g.loop_radius, Dimension::Length)),
                ("lateral_offset", q(g.lateral_offset, Dimension::Length)),
                ("separation", q(g.separation, Dimension::Length)),
                ("orientation", g.orientation.to_string()),
                (
                    "flux_form",
                    match c.flux_form {
                        FluxForm::Printed => "printed".into(),
                        FluxForm::DerivativeConsistent => "derivative_consistent".into(),
                    },
                ),
                ("grid", c.grid.to_string()),
            ];
            if let Some(v) = c.moment {
                e.push(("moment", q(v, Dimension::DipoleMoment)));
            }
            if let Some(v) = c.flux_transfer_ratio {
                e.push(("flux_transfer_ratio", q(v, Dimension::Dimensionless)));
            }
            if let Some(v) = c.squid_flux_noise {
                e.push(("squid_flux_noise", q(v, Dimension::FluxNoise)));
            }
            if let Some(b) = &c.search {
                e.push(("x_min", q(b.lateral_offset.0, Dimension::Length)));
                e.push(("x_max", q(b.lateral_offset.1, Dimension::Length)));
                e.push(("z_min", q(b.separation.0, Dimension::Length)));
                e.push(("z_max", q(b.separation.1, Dimension::Length)));
                let o: Vec<&str> = b.orientations.iter().map(|o| o.as_str()).collect();
                e.push(("search_orientations", o.join(", ")));
            }
            push("coil", None, e);
        }
        let s = &self.simulation;
        let mut e = Vec::new();
        if let Some(v) = s.timestep {
            e.push(("timestep", q(v, Dimension::Time)));
        }
        if let Some(v) = s.duration {
            e.push(("duration", q(v, Dimension::Time)));
        }
        if let Some(v) = s.record_stride {
            e.push(("record_stride", v.to_string()));
        }
        if let Some(v) = s.ensemble {
            e.push(("ensemble", v.to_string()));
        }
        if let Some(g) = &s.gains {
            e.push(("gains", g.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")));
        }
        if let Some(v) = s.burn_in {
            e.push(("burn_in", q(v, Dimension::Time)));
        }
        if let Some(v) = s.max_steps {
            e.push(("max_steps", v.to_string()));
        }
        if let Some(v) = s.initial_displacement {
            e.push(("initial_displacement", format!("{v:?} {}", if angular { "rad" } else { "m" })));
        }
        if !e.is_empty() {
            push("simulation", None, e);
        }
        let a = &self.analysis;
        let mut e = Vec::new();
        if let Some(p) = &a.input {
            e.push(("input", p.display().to_string()));
        }
        if let Some(m) = a.mode {
            e.push(("mode", m.to_string()));
        }
        if let Some(c) = &a.channel {
            e.push(("channel", c.clone()));
        }
        if let Some(v) = a.segment_length {
            e.push(("segment_length", v.to_string()));
        }
        if let Some(v) = a.overlap {
            e.push(("overlap", q(v, Dimension::Dimensionless)));
        }
        if let Some(v) = a.rms_linewidths {
            e.push(("rms_linewidths", q(v, Dimension::Dimensionless)));
        }
        if let Some(v) = a.reference_temperature {
            e.push(("reference_temperature", q(v, Dimension::Temperature)));
        }
        if let Some(v) = a.reference_rms {
            e.push(("reference_rms", q(v, Dimension::Dimensionless)));
        }
        if let Some(v) = a.ringdown_periods {
            e.push(("ringdown_periods", v.to_string()));
        }
        if !e.is_empty() {
            push("analysis", None, e);
        }
        if let Some(p) = &self.pressure {
            push(
                "pressure",
                None,
                vec![
                    ("gauge_value", q(p.gauge_value, Dimension::Pressure)),
                    ("warm_temperature", q(p.warm_temperature, Dimension::Temperature)),
                    ("cold_temperature", q(p.cold_temperature, Dimension::Temperature)),
                ],
            );
        }
        let o = &self.outputs;
        let mut e = Vec::new();
        if let Some(d) = &o.directory {
            e.push(("directory", d.display().to_string()));
        }
        if let Some(f) = o.format {
            e.push(("format", f.as_str().to_string()));
        }
        if let Some(p) = o.plots {
            e.push(("plots", if p { "on".into() } else { "off".into() }));
        }
        if !e.is_empty() {
            push("outputs", None, e);
        }
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_document().to_text()
    }
}

fn read_magnet(r: &mut Reader) -> Result<MagnetSpec> {
    let spec = MagnetSpec {
        mass: r.required("mass", Dimension::Mass)?,
        radius: r.required("radius", Dimension::Length)?,
        thickness: r.required("thickness", Dimension::Length)?,
        density: r.quantity("density", Dimension::Density)?,
        magnetization: r.quantity("magnetization", Dimension::Magnetization)?,
        residual_flux_density: r.quantity("residual_flux_density", Dimension::FluxDensity)?,
    };
    spec.validate().map_err(|e| r.err(None, e))?;
    Ok(spec)
}

fn read_mode(r: &mut Reader, magnet: Option<&MagnetSpec>) -> Result<ModeSpec> {
    let label: ModeLabel = r
        .section
        .arg
        .as_deref()
        .ok_or_else(|| r.err(None, "mode section needs a label, e.g. [mode z]"))?
        .parse()
        .map_err(|e| r.err(None, e))?;
    let kind = r.parsed::<ModeKind>("kind")?.unwrap_or(label.default_kind());
    let omega0 = r.required("frequency", Dimension::AngularFrequency)?;
    let inertia = match kind {
        ModeKind::Translational => r.quantity("mass", Dimension::Mass)?.or(magnet.map(|m| m.mass)),
        ModeKind::Librational => match r.quantity("moment_of_inertia", Dimension::MomentOfInertia)? {
            Some(i) => Some(i),
            None => magnet.map(moment_of_inertia).transpose().map_err(|e| r.err(None, e))?,
        },
    }
    .ok_or_else(|| {
        let key = if kind == ModeKind::Translational { "mass" } else { "moment_of_inertia" };
        r.err(None, format!("missing '{key}' and no [magnet] section to derive it from"))
    })?;
    let q = r.required("quality_factor", Dimension::Dimensionless)?;
    let t = r.required("bath_temperature", Dimension::Temperature)?;
    ModeSpec::new(label, kind, omega0, inertia, q, t).map_err(|e| r.err(None, e))
}

fn read_noise(r: &mut Reader) -> Result<NoiseConfig> {
    let n = NoiseConfig {
        thermal: r.flag("thermal")?.unwrap_or(true),
        vibration_accel_psd: r.quantity("vibration_accel_psd", Dimension::AccelerationPsd)?.unwrap_or(0.0),
        detector_noise_psd: r.quantity("detector_noise_psd", Dimension::CoordinatePsd)?.unwrap_or(0.0),
        seed: r.parsed::<u64>("seed")?.unwrap_or(0),
    };
    n.validate().map_err(|e| r.err(None, e))?;
    Ok(n)
}

fn read_feedback(r: &mut Reader) -> Result<FeedbackConfig> {
    let mode = r.parsed::<FeedbackMode>("mode")?.unwrap_or_default();
    let base = FeedbackConfig::off();
    let f = FeedbackConfig {
        mode,
        gain: r.quantity("gain", Dimension::Dimensionless)?.unwrap_or(0.0),
        phase_offset: r.quantity("phase_offset", Dimension::Angle)?.unwrap_or(0.0),
        bandpass_center: r.quantity("bandpass_center", Dimension::AngularFrequency)?,
        bandpass_width: r.quantity("bandpass_width", Dimension::AngularFrequency)?.unwrap_or(base.bandpass_width),
        loop_delay: r.quantity("loop_delay", Dimension::Time)?.unwrap_or(0.0),
    };
    f.validate().map_err(|e| r.err(None, e))?;
    Ok(f)
}

fn read_coil(r: &mut Reader) -> Result<CoilSettings> {
    let turns = r.parsed::<u32>("turns")?.ok_or_else(|| r.err(None, "missing required key 'turns'"))?;
    let geometry = CoilGeometry {
        turns,
        loop_radius: r.required("loop_radius", Dimension::Length)?,
        lateral_offset: r.required("lateral_offset", Dimension::Length)?,
        separation: r.required("separation", Dimension::Length)?,
        orientation: r.parsed::<Orientation>("orientation")?.unwrap_or(Orientation::Perpendicular),
    };
    geometry.validate().map_err(|e| r.err(None, e))?;
    let flux_form = r.parsed::<FluxForm>("flux_form")?.unwrap_or_default();
    let moment = r.quantity("moment", Dimension::DipoleMoment)?;
    let flux_transfer_ratio = r.quantity("flux_transfer_ratio", Dimension::Dimensionless)?;
    let squid_flux_noise = r.quantity("squid_flux_noise", Dimension::FluxNoise)?;
    let grid = r.parsed::<usize>("grid")?.unwrap_or(21);
    let x_min = r.quantity("x_min", Dimension::Length)?;
    let x_max = r.quantity("x_max", Dimension::Length)?;
    let z_min = r.quantity("z_min", Dimension::Length)?;
    let z_max = r.quantity("z_max", Dimension::Length)?;
    let orientations = match r.string("search_orientations") {
        Some(s) => {
            s.split(',').map(|o| o.parse::<Orientation>()).collect::<Result<Vec<_>>>().map_err(|e| r.err(None, e))?
        }
        None => Orientation::BOTH.to_vec(),
    };
    let search = match (x_min, x_max, z_min, z_max) {
        (None, None, None, None) => None,
        _ => {
            let b = GeometryBounds {
                lateral_offset: (x_min.unwrap_or(geometry.lateral_offset), x_max.unwrap_or(geometry.lateral_offset)),
                separation: (z_min.unwrap_or(geometry.separation), z_max.unwrap_or(geometry.separation)),
                orientations,
            };
            b.validate().map_err(|e| r.err(None, e))?;
            Some(b)
        }
    };
    Ok(CoilSettings { geometry, flux_form, moment, flux_transfer_ratio, squid_flux_noise, search, grid })
}

fn read_simulation(r: &mut Reader) -> Result<SimulationSettings> {
    let initial = match r.raw("initial_displacement") {
        None => None,
        Some(e) => Some(
            parse_quantity(&e.value, Dimension::Length)
                .or_else(|_| parse_quantity(&e.value, Dimension::Angle))
                .map_err(|err| r.err(Some(e), format!("initial_displacement: {err}")))?,
        ),
    };
    Ok(SimulationSettings {
        timestep: r.quantity("timestep", Dimension::Time)?,
        duration: r.quantity("duration", Dimension::Time)?,
        record_stride: r.parsed("record_stride")?,
        ensemble: r.parsed("ensemble")?,
        gains: r.list("gains", Dimension::Dimensionless)?,
        burn_in: r.quantity("burn_in", Dimension::Time)?,
        max_steps: r.parsed("max_steps")?,
        initial_displacement: initial,
    })
}

fn read_analysis(r: &mut Reader) -> Result<AnalysisSettings> {
    Ok(AnalysisSettings {
        input: r.string("input").map(PathBuf::from),
        mode: r.parsed("mode")?,
        channel: r.string("channel"),
        segment_length: r.parsed("segment_length")?,
        overlap: r.quantity("overlap", Dimension::Dimensionless)?,
        rms_linewidths: r.quantity("rms_linewidths", Dimension::Dimensionless)?,
        reference_temperature: r.quantity("reference_temperature", Dimension::Temperature)?,
        // same unit as the analysed series, so no suffix
        reference_rms: r.quantity("reference_rms", Dimension::Dimensionless)?,
        ringdown_periods: r.parsed("ringdown_periods")?,
    })
}

fn read_pressure(r: &mut Reader) -> Result<PressureReading> {
    let p = PressureReading {
        gauge_value: r.required("gauge_value", Dimension::Pressure)?,
        warm_temperature: r.required("warm_temperature", Dimension::Temperature)?,
        cold_temperature: r.required("cold_temperature", Dimension::Temperature)?,
    };
    p.validate().map_err(|e| r.err(None, e))?;
    Ok(p)
}

fn read_outputs(r: &mut Reader) -> Result<OutputSettings> {
    Ok(OutputSettings {
        directory: r.string("directory").map(PathBuf::from),
        format: r.parsed("format")?,
        plots: r.flag("plots")?,
    })
}

/// Parse every value of a document once, keyed by `section[:arg].key`; used
/// to compare configs semantically.
pub fn flatten(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for s in cfg.to_document().sections {
        for e in s.entries {
            let sec = match &s.arg {
                Some(a) => format!("{}:{}", s.name, a),
                None => s.name.clone(),
            };
            out.insert(format!("{sec}.{}", e.key), e.value);
        }
    }
    out
}
