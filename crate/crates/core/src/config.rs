//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Every physical key carries its unit as a suffix (`l1_uH`, `fs_kHz`,
//! `air_gap_mm`); values are converted to SI on load and back on save.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use thiserror::Error;

use crate::circuit::{CircuitParams, DEFAULT_R1, DEFAULT_R2, DEFAULT_VD};
use crate::design::DesignSpec;
use crate::fha::DEFAULT_SOLVER;
use crate::magnetics::CouplerGeometry;
use crate::transient::{SimOptions, DEFAULT_MAX_CYCLES, DEFAULT_STEPS_PER_CYCLE};

#[derive(Debug, Error, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: None,
            message: message.into(),
        }
    }

    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            key: None,
            message: message.into(),
        }
    }

    fn key(mut self, key: &str) -> Self {
        self.key = Some(key.to_string());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "`{key}`: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unit {
    One,
    Kilo,
    Milli,
    Micro,
    Nano,
}

impl Unit {
    fn to_si(self, v: f64) -> f64 {
        match self {
            Unit::One => v,
            Unit::Kilo => v * 1e3,
            Unit::Milli => v / 1e3,
            Unit::Micro => v / 1e6,
            Unit::Nano => v / 1e9,
        }
    }

    fn in_unit(self, x: f64) -> f64 {
        match self {
            Unit::One => x,
            Unit::Kilo => x / 1e3,
            Unit::Milli => x * 1e3,
            Unit::Micro => x * 1e6,
            Unit::Nano => x * 1e9,
        }
    }

    /// Shortest decimal that converts back to exactly `x`.
    fn format(self, x: f64) -> String {
        let guess = self.in_unit(x);
        let mut up = guess;
        let mut down = guess;
        for _ in 0..64 {
            for candidate in [up, down] {
                if self.to_si(candidate) == x {
                    return format!("{candidate}");
                }
            }
            up = up.next_up();
            down = down.next_down();
        }
        format!("{guess}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Real(Unit),
    Count,
    Flag,
    Text,
}

const SECTIONS: &[(&str, &[(&str, Kind)])] = &[
    (
        "circuit",
        &[
            ("vdc_V", Kind::Real(Unit::One)),
            ("vb_V", Kind::Real(Unit::One)),
            ("fs_kHz", Kind::Real(Unit::Kilo)),
            ("l1_uH", Kind::Real(Unit::Micro)),
            ("l2_uH", Kind::Real(Unit::Micro)),
            ("c1_nF", Kind::Real(Unit::Nano)),
            ("c2_nF", Kind::Real(Unit::Nano)),
            ("k", Kind::Real(Unit::One)),
            ("r1_ohm", Kind::Real(Unit::One)),
            ("r2_ohm", Kind::Real(Unit::One)),
            ("vd_V", Kind::Real(Unit::One)),
            ("dead_time_ns", Kind::Real(Unit::Nano)),
        ],
    ),
    (
        "geometry",
        &[
            ("tx_rod_diameter_mm", Kind::Real(Unit::Milli)),
            ("tx_rod_length_mm", Kind::Real(Unit::Milli)),
            ("tx_turns_per_rod", Kind::Count),
            ("tx_rod_spacing_mm", Kind::Real(Unit::Milli)),
            ("rx_ferrite_diameter_mm", Kind::Real(Unit::Milli)),
            ("rx_ferrite_length_mm", Kind::Real(Unit::Milli)),
            ("rx_turns_per_leg", Kind::Count),
            ("rx_winding_length_mm", Kind::Real(Unit::Milli)),
            ("rx_leg_spacing_mm", Kind::Real(Unit::Milli)),
            ("air_gap_mm", Kind::Real(Unit::Milli)),
            ("dx_mm", Kind::Real(Unit::Milli)),
            ("dy_mm", Kind::Real(Unit::Milli)),
            ("wire_radius_mm", Kind::Real(Unit::Milli)),
            ("mu_eff_tx", Kind::Real(Unit::One)),
            ("mu_eff_rx", Kind::Real(Unit::One)),
        ],
    ),
    (
        "design",
        &[
            ("i1_max_zero_k_A", Kind::Real(Unit::One)),
            ("target_pout_W", Kind::Real(Unit::One)),
            ("k_nominal", Kind::Real(Unit::One)),
            ("k_min", Kind::Real(Unit::One)),
            ("k_max", Kind::Real(Unit::One)),
            ("zvs_required", Kind::Flag),
            ("power_band_min", Kind::Real(Unit::One)),
            ("power_band_max", Kind::Real(Unit::One)),
            ("k_points", Kind::Count),
        ],
    ),
    (
        "sim",
        &[
            ("max_cycles", Kind::Count),
            ("steps_per_cycle", Kind::Count),
            ("retain_cycles", Kind::Count),
            ("export_cycles", Kind::Count),
            ("steady_tolerance", Kind::Real(Unit::One)),
        ],
    ),
    (
        "sweep",
        &[
            ("solver", Kind::Text),
            ("k_start", Kind::Real(Unit::One)),
            ("k_stop", Kind::Real(Unit::One)),
            ("k_step", Kind::Real(Unit::One)),
            ("dx_start_mm", Kind::Real(Unit::Milli)),
            ("dx_stop_mm", Kind::Real(Unit::Milli)),
            ("dx_step_mm", Kind::Real(Unit::Milli)),
            ("dy_start_mm", Kind::Real(Unit::Milli)),
            ("dy_stop_mm", Kind::Real(Unit::Milli)),
            ("dy_step_mm", Kind::Real(Unit::Milli)),
        ],
    ),
    (
        "calibration",
        &[
            ("k_aligned", Kind::Real(Unit::One)),
            ("k_misaligned", Kind::Real(Unit::One)),
            ("misaligned_dx_mm", Kind::Real(Unit::Milli)),
            ("misaligned_dy_mm", Kind::Real(Unit::Milli)),
        ],
    ),
    (
        "output",
        &[
            ("directory", Kind::Text),
            ("csv", Kind::Flag),
            ("svg", Kind::Flag),
        ],
    ),
];

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Real(f64),
    Count(u64),
    Flag(bool),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub max_cycles: usize,
    pub steps_per_cycle: usize,
    pub retain_cycles: usize,
    /// Trailing cycles written to the waveform CSV.
    pub export_cycles: usize,
    pub steady_tolerance: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let o = SimOptions::default();
        Self {
            max_cycles: DEFAULT_MAX_CYCLES,
            steps_per_cycle: DEFAULT_STEPS_PER_CYCLE,
            retain_cycles: o.retain_cycles,
            export_cycles: 2,
            steady_tolerance: o.steady_tolerance,
        }
    }
}

impl SimSettings {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            max_cycles: self.max_cycles,
            steps_per_cycle: self.steps_per_cycle,
            retain_cycles: self.retain_cycles,
            stop_when_steady: true,
            steady_tolerance: self.steady_tolerance,
        }
    }
}

/// Inclusive start/stop grid with a fixed step, in SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn grid(&self) -> Vec<f64> {
        crate::fha::linear_grid(self.start, self.stop, self.step)
    }

    fn validate(&self, name: &str) -> Result<(), ConfigError> {
        if !(self.step > 0.0 && self.stop >= self.start) {
            return Err(
                ConfigError::new(format!("{name} range needs step > 0 and stop >= start"))
                    .key(name),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub solver: String,
    pub k: Range,
    pub dx: Range,
    pub dy: Range,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            solver: DEFAULT_SOLVER.to_string(),
            k: Range {
                start: 0.0,
                stop: 0.6,
                step: 0.02,
            },
            dx: Range {
                start: 0.0,
                stop: 0.05,
                step: 0.005,
            },
            dy: Range {
                start: 0.0,
                stop: 0.05,
                step: 0.005,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub k_aligned: f64,
    /// Optional second anchor at the misaligned offset.
    pub k_misaligned: Option<f64>,
    pub misaligned_dx: f64,
    pub misaligned_dy: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            k_aligned: 0.38,
            k_misaligned: None,
            misaligned_dx: 0.010,
            misaligned_dy: 0.050,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub directory: PathBuf,
    pub csv: bool,
    pub svg: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            csv: true,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkbenchConfig {
    pub circuit: CircuitParams,
    pub geometry: Option<CouplerGeometry>,
    pub design: Option<DesignSpec>,
    pub sim: SimSettings,
    pub sweep: SweepSettings,
    pub calibration: CalibrationSettings,
    pub output: OutputSettings,
}

impl WorkbenchConfig {
    pub fn new(circuit: CircuitParams) -> Self {
        Self {
            circuit,
            geometry: None,
            design: None,
            sim: SimSettings::default(),
            sweep: SweepSettings::default(),
            calibration: CalibrationSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

struct Entry {
    value: Value,
    line: usize,
}

type Sections = BTreeMap<&'static str, BTreeMap<&'static str, Entry>>;

fn lookup_section(name: &str) -> Option<(&'static str, &'static [(&'static str, Kind)])> {
    SECTIONS.iter().find(|(s, _)| *s == name).copied()
}

fn parse_value(kind: Kind, raw: &str, line: usize, key: &str) -> Result<Value, ConfigError> {
    let fail =
        |what: &str| ConfigError::at(line, format!("expected {what}, found `{raw}`")).key(key);
    match kind {
        Kind::Real(unit) => {
            let v: f64 = raw.parse().map_err(|_| fail("a number"))?;
            if !v.is_finite() {
                return Err(fail("a finite number"));
            }
            Ok(Value::Real(unit.to_si(v)))
        }
        Kind::Count => raw
            .parse()
            .map(Value::Count)
            .map_err(|_| fail("a non-negative integer")),
        Kind::Flag => match raw {
            "true" => Ok(Value::Flag(true)),
            "false" => Ok(Value::Flag(false)),
            _ => Err(fail("true or false")),
        },
        Kind::Text => {
            if raw.is_empty() {
                Err(fail("a non-empty value"))
            } else {
                Ok(Value::Text(raw.to_string()))
            }
        }
    }
}

fn unit_hint(section: &[(&str, Kind)], key: &str) -> String {
    section
        .iter()
        .find(|(k, _)| k.split('_').next() == Some(key) || k.starts_with(&format!("{key}_")))
        .map(|(k, _)| format!(" (keys carry their unit, e.g. `{k}`)"))
        .unwrap_or_default()
}

fn tokenize(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<(&'static str, &'static [(&'static str, Kind)])> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                .trim();
            let found = lookup_section(name)
                .ok_or_else(|| ConfigError::at(line, format!("unknown section [{name}]")))?;
            if sections.contains_key(found.0) {
                return Err(ConfigError::at(line, format!("duplicate section [{name}]")));
            }
            sections.insert(found.0, BTreeMap::new());
            current = Some(found);
            continue;
        }
        let (key, raw) = content.split_once('=').ok_or_else(|| {
            ConfigError::at(line, format!("expected `key = value`, found `{content}`"))
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        let (section, keys) =
            current.ok_or_else(|| ConfigError::at(line, "key outside of any section").key(key))?;
        let &(canonical, kind) = keys.iter().find(|(k, _)| *k == key).ok_or_else(|| {
            ConfigError::at(
                line,
                format!("unknown key in [{section}]{}", unit_hint(keys, key)),
            )
            .key(key)
        })?;
        let value = parse_value(kind, raw, line, key)?;
        let entries = sections
            .get_mut(section)
            .expect("section registered on header");
        if entries.insert(canonical, Entry { value, line }).is_some() {
            return Err(ConfigError::at(line, "duplicate key").key(key));
        }
    }
    Ok(sections)
}

struct SectionReader<'a> {
    name: &'static str,
    entries: Option<&'a BTreeMap<&'static str, Entry>>,
}

impl SectionReader<'_> {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.and_then(|e| e.get(key))
    }

    fn real(&self, key: &str, default: f64) -> f64 {
        match self.entry(key).map(|e| &e.value) {
            Some(Value::Real(v)) => *v,
            _ => default,
        }
    }

    fn required_real(&self, key: &str) -> Result<f64, ConfigError> {
        match self.entry(key).map(|e| &e.value) {
            Some(Value::Real(v)) => Ok(*v),
            _ => Err(ConfigError::new(format!("missing required key in [{}]", self.name)).key(key)),
        }
    }

    fn optional_real(&self, key: &str) -> Option<f64> {
        match self.entry(key).map(|e| &e.value) {
            Some(Value::Real(v)) => Some(*v),
            _ => None,
        }
    }

    fn count(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.entry(key) {
            Some(Entry {
                value: Value::Count(v),
                ..
            }) => Ok(*v),
            _ => Ok(default),
        }
    }

    fn count_as<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: TryFrom<u64> + Copy + Into<u64>,
    {
        let v = self.count(key, default.into())?;
        T::try_from(v).map_err(|_| {
            let line = self.entry(key).map(|e| e.line);
            ConfigError {
                line,
                key: Some(key.to_string()),
                message: format!("value {v} is too large"),
            }
        })
    }

    fn flag(&self, key: &str, default: bool) -> bool {
        match self.entry(key).map(|e| &e.value) {
            Some(Value::Flag(v)) => *v,
            _ => default,
        }
    }

    fn text(&self, key: &str, default: &str) -> String {
        match self.entry(key).map(|e| &e.value) {
            Some(Value::Text(v)) => v.clone(),
            _ => default.to_string(),
        }
    }

    /// Attach the line of the first present key among `keys` to an error.
    fn locate(&self, keys: &[&str], err: ConfigError) -> ConfigError {
        let line = keys.iter().find_map(|k| self.entry(k).map(|e| e.line));
        ConfigError { line, ..err }
    }
}

fn usize_count(r: &SectionReader, key: &str, default: usize) -> Result<usize, ConfigError> {
    let v = r.count(key, default as u64)?;
    usize::try_from(v).map_err(|_| ConfigError::new(format!("value {v} is too large")).key(key))
}

pub fn parse_config(text: &str) -> Result<WorkbenchConfig, ConfigError> {
    let sections = tokenize(text)?;
    let reader = |name: &'static str| SectionReader {
        name,
        entries: sections.get(name),
    };

    let c = reader("circuit");
    if c.entries.is_none() {
        return Err(ConfigError::new(
            "missing circuit block ([circuit] section)",
        ));
    }
    let circuit = CircuitParams {
        vdc: c.required_real("vdc_V")?,
        vb: c.required_real("vb_V")?,
        fs: c.required_real("fs_kHz")?,
        l1: c.required_real("l1_uH")?,
        l2: c.required_real("l2_uH")?,
        c1: c.required_real("c1_nF")?,
        c2: c.required_real("c2_nF")?,
        k: c.required_real("k")?,
        r1: c.real("r1_ohm", DEFAULT_R1),
        r2: c.real("r2_ohm", DEFAULT_R2),
        vd: c.real("vd_V", DEFAULT_VD),
        dead_time: c.real("dead_time_ns", 0.0),
    };
    circuit.validate().map_err(|e| {
        let key = circuit_key_for(&e);
        c.locate(&[key], ConfigError::new(e.to_string()).key(key))
    })?;

    let g = reader("geometry");
    let geometry = if g.entries.is_some() {
        let d = CouplerGeometry::default();
        let geometry = CouplerGeometry {
            tx_rod_diameter: g.real("tx_rod_diameter_mm", d.tx_rod_diameter),
            tx_rod_length: g.real("tx_rod_length_mm", d.tx_rod_length),
            tx_turns_per_rod: g.count_as("tx_turns_per_rod", d.tx_turns_per_rod)?,
            tx_rod_spacing: g.real("tx_rod_spacing_mm", d.tx_rod_spacing),
            rx_ferrite_diameter: g.real("rx_ferrite_diameter_mm", d.rx_ferrite_diameter),
            rx_ferrite_length: g.real("rx_ferrite_length_mm", d.rx_ferrite_length),
            rx_turns_per_leg: g.count_as("rx_turns_per_leg", d.rx_turns_per_leg)?,
            rx_winding_length: g.real("rx_winding_length_mm", d.rx_winding_length),
            rx_leg_spacing: g.real("rx_leg_spacing_mm", d.rx_leg_spacing),
            air_gap: g.real("air_gap_mm", d.air_gap),
            dx: g.real("dx_mm", d.dx),
            dy: g.real("dy_mm", d.dy),
            wire_radius: g.real("wire_radius_mm", d.wire_radius),
            mu_eff_tx: g.real("mu_eff_tx", d.mu_eff_tx),
            mu_eff_rx: g.real("mu_eff_rx", d.mu_eff_rx),
        };
        geometry.validate().map_err(|e| {
            let first = g.entries.and_then(|m| m.values().map(|e| e.line).min());
            ConfigError {
                line: first,
                key: None,
                message: format!("[geometry] {e}"),
            }
        })?;
        Some(geometry)
    } else {
        None
    };

    let d = reader("design");
    let design = if d.entries.is_some() {
        let base = DesignSpec::default();
        let spec = DesignSpec {
            i1_max_zero_k: d.real("i1_max_zero_k_A", base.i1_max_zero_k),
            target_pout: d.real("target_pout_W", base.target_pout),
            k_nominal: d.real("k_nominal", base.k_nominal),
            k_min: d.real("k_min", base.k_min),
            k_max: d.real("k_max", base.k_max),
            zvs_required: d.flag("zvs_required", base.zvs_required),
            power_band: (
                d.real("power_band_min", base.power_band.0),
                d.real("power_band_max", base.power_band.1),
            ),
            k_points: usize_count(&d, "k_points", base.k_points)?,
        };
        spec.validate().map_err(|e| {
            let first = d.entries.and_then(|m| m.values().map(|e| e.line).min());
            ConfigError {
                line: first,
                key: None,
                message: format!("[design] {e}"),
            }
        })?;
        Some(spec)
    } else {
        None
    };

    let s = reader("sim");
    let sd = SimSettings::default();
    let sim = SimSettings {
        max_cycles: usize_count(&s, "max_cycles", sd.max_cycles)?,
        steps_per_cycle: usize_count(&s, "steps_per_cycle", sd.steps_per_cycle)?,
        retain_cycles: usize_count(&s, "retain_cycles", sd.retain_cycles)?,
        export_cycles: usize_count(&s, "export_cycles", sd.export_cycles)?,
        steady_tolerance: s.real("steady_tolerance", sd.steady_tolerance),
    };
    if sim.steps_per_cycle < crate::transient::MIN_STEPS_PER_CYCLE {
        return Err(s.locate(
            &["steps_per_cycle"],
            ConfigError::new(format!(
                "must be at least {}",
                crate::transient::MIN_STEPS_PER_CYCLE
            ))
            .key("steps_per_cycle"),
        ));
    }
    if sim.max_cycles == 0 || sim.retain_cycles == 0 {
        return Err(s.locate(
            &["max_cycles", "retain_cycles"],
            ConfigError::new("max_cycles and retain_cycles must be at least 1"),
        ));
    }
    if sim.export_cycles == 0 || sim.export_cycles > sim.retain_cycles {
        return Err(s.locate(
            &["export_cycles"],
            ConfigError::new("export_cycles must lie in 1..=retain_cycles").key("export_cycles"),
        ));
    }
    if !(sim.steady_tolerance > 0.0) {
        return Err(s.locate(
            &["steady_tolerance"],
            ConfigError::new("must be positive").key("steady_tolerance"),
        ));
    }

    let w = reader("sweep");
    let wd = SweepSettings::default();
    let range = |prefix: &str, suffix: &str, def: Range| Range {
        start: w.real(&format!("{prefix}_start{suffix}"), def.start),
        stop: w.real(&format!("{prefix}_stop{suffix}"), def.stop),
        step: w.real(&format!("{prefix}_step{suffix}"), def.step),
    };
    let sweep = SweepSettings {
        solver: w.text("solver", &wd.solver),
        k: range("k", "", wd.k),
        dx: range("dx", "_mm", wd.dx),
        dy: range("dy", "_mm", wd.dy),
    };
    for (name, r, keys) in [
        ("k", &sweep.k, ["k_start", "k_stop", "k_step"]),
        ("dx", &sweep.dx, ["dx_start_mm", "dx_stop_mm", "dx_step_mm"]),
        ("dy", &sweep.dy, ["dy_start_mm", "dy_stop_mm", "dy_step_mm"]),
    ] {
        r.validate(name).map_err(|e| w.locate(&keys, e))?;
    }
    if !(0.0 <= sweep.k.start && sweep.k.stop < 1.0) {
        return Err(w.locate(
            &["k_start", "k_stop"],
            ConfigError::new("coupling sweep must stay within [0, 1)"),
        ));
    }

    let a = reader("calibration");
    let ad = CalibrationSettings::default();
    let calibration = CalibrationSettings {
        k_aligned: a.real("k_aligned", ad.k_aligned),
        k_misaligned: a.optional_real("k_misaligned"),
        misaligned_dx: a.real("misaligned_dx_mm", ad.misaligned_dx),
        misaligned_dy: a.real("misaligned_dy_mm", ad.misaligned_dy),
    };
    for (key, k) in [
        ("k_aligned", Some(calibration.k_aligned)),
        ("k_misaligned", calibration.k_misaligned),
    ] {
        if let Some(k) = k {
            if !(0.0..1.0).contains(&k) {
                return Err(a.locate(&[key], ConfigError::new("must lie in [0, 1)").key(key)));
            }
        }
    }

    let o = reader("output");
    let od = OutputSettings::default();
    let output = OutputSettings {
        directory: PathBuf::from(o.text("directory", &od.directory.to_string_lossy())),
        csv: o.flag("csv", od.csv),
        svg: o.flag("svg", od.svg),
    };

    Ok(WorkbenchConfig {
        circuit,
        geometry,
        design,
        sim,
        sweep,
        calibration,
        output,
    })
}

fn circuit_key_for(e: &crate::circuit::CircuitError) -> &'static str {
    use crate::circuit::CircuitError::*;
    let name = match e {
        NotPositive { name, .. } | Negative { name, .. } | NotFinite { name } => *name,
        CouplingOutOfRange(_) => "k",
    };
    match name {
        "vdc" => "vdc_V",
        "vb" => "vb_V",
        "fs" => "fs_kHz",
        "l1" => "l1_uH",
        "l2" => "l2_uH",
        "c1" => "c1_nF",
        "c2" => "c2_nF",
        "r1" => "r1_ohm",
        "r2" => "r2_ohm",
        "vd" => "vd_V",
        "dead_time" => "dead_time_ns",
        _ => "k",
    }
}

fn unit_of(section: &str, key: &str) -> Unit {
    let (_, keys) = lookup_section(section).expect("known section");
    match keys.iter().find(|(k, _)| *k == key) {
        Some((_, Kind::Real(u))) => *u,
        _ => Unit::One,
    }
}

struct Writer {
    out: String,
    section: &'static str,
}

impl Writer {
    fn section(&mut self, name: &'static str) {
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        let _ = writeln!(self.out, "[{name}]");
        self.section = name;
    }

    fn real(&mut self, key: &str, si: f64) {
        let text = unit_of(self.section, key).format(si);
        let _ = writeln!(self.out, "{key} = {text}");
    }

    fn raw(&mut self, key: &str, v: impl fmt::Display) {
        let _ = writeln!(self.out, "{key} = {v}");
    }
}

/// Render a config in canonical form; parsing the result yields an equal
/// config.
pub fn serialize_config(cfg: &WorkbenchConfig) -> String {
    let mut w = Writer {
        out: String::new(),
        section: "circuit",
    };
    let c = &cfg.circuit;
    w.section("circuit");
    w.real("vdc_V", c.vdc);
    w.real("vb_V", c.vb);
    w.real("fs_kHz", c.fs);
    w.real("l1_uH", c.l1);
    w.real("l2_uH", c.l2);
    w.real("c1_nF", c.c1);
    w.real("c2_nF", c.c2);
    w.real("k", c.k);
    w.real("r1_ohm", c.r1);
    w.real("r2_ohm", c.r2);
    w.real("vd_V", c.vd);
    w.real("dead_time_ns", c.dead_time);

    if let Some(g) = &cfg.geometry {
        w.section("geometry");
        w.real("tx_rod_diameter_mm", g.tx_rod_diameter);
        w.real("tx_rod_length_mm", g.tx_rod_length);
        w.raw("tx_turns_per_rod", g.tx_turns_per_rod);
        w.real("tx_rod_spacing_mm", g.tx_rod_spacing);
        w.real("rx_ferrite_diameter_mm", g.rx_ferrite_diameter);
        w.real("rx_ferrite_length_mm", g.rx_ferrite_length);
        w.raw("rx_turns_per_leg", g.rx_turns_per_leg);
        w.real("rx_winding_length_mm", g.rx_winding_length);
        w.real("rx_leg_spacing_mm", g.rx_leg_spacing);
        w.real("air_gap_mm", g.air_gap);
        w.real("dx_mm", g.dx);
        w.real("dy_mm", g.dy);
        w.real("wire_radius_mm", g.wire_radius);
        w.real("mu_eff_tx", g.mu_eff_tx);
        w.real("mu_eff_rx", g.mu_eff_rx);
    }

    if let Some(d) = &cfg.design {
        w.section("design");
        w.real("i1_max_zero_k_A", d.i1_max_zero_k);
        w.real("target_pout_W", d.target_pout);
        w.real("k_nominal", d.k_nominal);
        w.real("k_min", d.k_min);
        w.real("k_max", d.k_max);
        w.raw("zvs_required", d.zvs_required);
        w.real("power_band_min", d.power_band.0);
        w.real("power_band_max", d.power_band.1);
        w.raw("k_points", d.k_points);
    }

    let s = &cfg.sim;
    w.section("sim");
    w.raw("max_cycles", s.max_cycles);
    w.raw("steps_per_cycle", s.steps_per_cycle);
    w.raw("retain_cycles", s.retain_cycles);
    w.raw("export_cycles", s.export_cycles);
    w.real("steady_tolerance", s.steady_tolerance);

    let sw = &cfg.sweep;
    w.section("sweep");
    w.raw("solver", &sw.solver);
    for (prefix, suffix, r) in [
        ("k", "", &sw.k),
        ("dx", "_mm", &sw.dx),
        ("dy", "_mm", &sw.dy),
    ] {
        w.real(&format!("{prefix}_start{suffix}"), r.start);
        w.real(&format!("{prefix}_stop{suffix}"), r.stop);
        w.real(&format!("{prefix}_step{suffix}"), r.step);
    }

    let a = &cfg.calibration;
    w.section("calibration");
    w.real("k_aligned", a.k_aligned);
    if let Some(k) = a.k_misaligned {
        w.real("k_misaligned", k);
    }
    w.real("misaligned_dx_mm", a.misaligned_dx);
    w.real("misaligned_dy_mm", a.misaligned_dy);

    let o = &cfg.output;
    w.section("output");
    w.raw("directory", o.directory.display());
    w.raw("csv", o.csv);
    w.raw("svg", o.svg);
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const REFERENCE_BLOCK: &str = "\
[circuit]
vdc_V = 29
vb_V = 11.1
fs_kHz = 245
l1_uH = 19.5
l2_uH = 5.5
c1_nF = 26
c2_nF = 80
k = 0.38
";

    #[test]
    fn reference_block_parses_to_si() {
        let cfg = parse_config(REFERENCE_BLOCK).unwrap();
        let c = cfg.circuit;
        assert_relative_eq!(c.l1, 19.5e-6, max_relative = 1e-15);
        assert_relative_eq!(c.c1, 26e-9, max_relative = 1e-15);
        assert_eq!(c.fs, 245e3);
        assert_eq!(c.k, 0.38);
        assert_eq!(c.r1, DEFAULT_R1);
        assert!(cfg.geometry.is_none() && cfg.design.is_none());
    }

    #[test]
    fn empty_text_is_missing_circuit() {
        let err = parse_config("").unwrap_err();
        assert!(err.to_string().contains("missing circuit block"));
        let err = parse_config("# only a comment\n[sim]\nmax_cycles = 3\n").unwrap_err();
        assert!(err.to_string().contains("missing circuit block"));
    }

    #[test]
    fn coupling_out_of_range_names_invariant() {
        let text = REFERENCE_BLOCK.replace("k = 0.38", "k = 1.2");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.line, Some(9));
        assert_eq!(err.key.as_deref(), Some("k"));
        assert!(err.message.contains("0 <= k < 1"), "{err}");
    }

    #[test]
    fn unitless_keys_rejected_with_hint() {
        let text = REFERENCE_BLOCK.replace("l1_uH = 19.5", "l1 = 19.5");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.line, Some(5));
        assert!(err.to_string().contains("l1_uH"), "{err}");
        let err = parse_config(&format!("{REFERENCE_BLOCK}bogus = 1\n")).unwrap_err();
        assert_eq!(err.line, Some(10));
    }

    #[test]
    fn structural_errors_carry_lines() {
        for (text, line) in [
            (format!("{REFERENCE_BLOCK}[nope]\n"), 10),
            (format!("{REFERENCE_BLOCK}k = 0.2\n"), 10),
            (format!("{REFERENCE_BLOCK}no equals sign\n"), 10),
            ("vdc_V = 3\n".to_string(), 1),
            (REFERENCE_BLOCK.replace("29", "twenty-nine"), 2),
            (REFERENCE_BLOCK.replace("c1_nF = 26", "c1_nF = -26"), 7),
        ] {
            let err = parse_config(&text).unwrap_err();
            assert_eq!(err.line, Some(line), "{text}: {err}");
        }
        let err = parse_config(&REFERENCE_BLOCK.replace("k = 0.38\n", "")).unwrap_err();
        assert!(err.to_string().contains("missing required key"));
    }

    #[test]
    fn comments_and_whitespace() {
        let text = format!(
            "  # header\n{}\n\n[output]\ncsv = false ; inline\n",
            REFERENCE_BLOCK.replace("k = 0.38", "k=0.38   # aligned")
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.circuit.k, 0.38);
        assert!(!cfg.output.csv);
    }

    #[test]
    fn full_config_round_trips() {
        let mut cfg = parse_config(REFERENCE_BLOCK).unwrap();
        cfg.geometry = Some(CouplerGeometry::default().with_permeability(29.25345356117603, 16.0));
        cfg.design = Some(DesignSpec::default());
        cfg.calibration.k_misaligned = Some(0.26);
        let text = serialize_config(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn unit_formatting_is_exact() {
        for x in [19.5e-6, 26e-9, 2.3352e-8, 0.0085, 245e3, 1.0 / 3.0] {
            for unit in [Unit::Micro, Unit::Nano, Unit::Milli, Unit::Kilo] {
                let text = unit.format(x);
                assert_eq!(unit.to_si(text.parse().unwrap()), x, "{x} {unit:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            vdc in 0.0f64..100.0,
            l1 in 1.0f64..100.0,
            c1 in 1.0f64..200.0,
            k in 0.0f64..0.99,
            fs in 10.0f64..1000.0,
            r1 in 0.0f64..1.0,
            dead in 0.0f64..20.0,
            gap in 1.0f64..50.0,
            turns in 1u32..20,
            band in 0.5f64..1.0,
            steps in 200usize..2000,
        ) {
            let text = format!(
                "[circuit]\nvdc_V = {vdc}\nvb_V = 11.1\nfs_kHz = {fs}\nl1_uH = {l1}\nl2_uH = 5.5\n\
                 c1_nF = {c1}\nc2_nF = 80\nk = {k}\nr1_ohm = {r1}\ndead_time_ns = {dead}\n\
                 [geometry]\nair_gap_mm = {gap}\nrx_turns_per_leg = {turns}\n\
                 [design]\npower_band_min = {band}\n[sim]\nsteps_per_cycle = {steps}\n"
            );
            let cfg = parse_config(&text).unwrap();
            let again = parse_config(&serialize_config(&cfg)).unwrap();
            prop_assert_eq!(again, cfg);
        }
    }
}
