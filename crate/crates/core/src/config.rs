//! Scenario configuration: strict TOML with defaults, path-qualified
//! validation, and dotted key=value overrides that behave exactly like
//! editing the file.

use crate::detect::monitor_gain;
use crate::error::{Error, Result};
use crate::model::enforce_cycle_budget;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMode {
    /// Fluid arrivals of exactly intensity * dt vehicles per step.
    Deterministic,
    /// Integer per-step draws with mean intensity * dt.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    None,
    ModelBased,
    Threshold,
    Both,
}

impl DetectorKind {
    pub fn uses_monitor(self) -> bool {
        matches!(self, DetectorKind::ModelBased | DetectorKind::Both)
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, DetectorKind::Threshold | DetectorKind::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Total simulated time, seconds; a whole number of cycles.
    pub horizon_s: f64,
    /// Step length, seconds; divides the cycle time.
    pub dt_s: f64,
    /// Cycle time, seconds.
    pub cycle_time_s: f64,
    /// Green-update scaling factor.
    pub f: f64,
    /// Green-time floor, seconds.
    pub min_green_s: f64,
    /// Left-turn ratio carried through the observation matrices.
    pub alpha: f64,
    /// Base RNG seed; every stream derives from it.
    pub seed: u64,
    pub arrival_mode: ArrivalMode,
    /// Green allocation for the first cycle, seconds.
    pub initial_green_s: [f64; 2],
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            horizon_s: 1800.0,
            dt_s: 1.0,
            cycle_time_s: 60.0,
            f: 0.7,
            min_green_s: 0.0,
            alpha: 0.0,
            seed: 1,
            arrival_mode: ArrivalMode::Deterministic,
            initial_green_s: [20.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    /// Mean arrival rate, veh/h.
    pub intensity_vph: f64,
    /// Stop-line discharge capacity, veh/h.
    pub saturation_vph: f64,
    /// Occupancy gain per queued vehicle.
    pub k: f64,
    /// Occupancy decay per step.
    pub beta: f64,
    /// Occupancy offset per step.
    pub lambda: f64,
    /// Vehicles queued at t = 0.
    pub initial_queue: f64,
    /// Occupancy at t = 0; defaults to the empty-queue fixed point
    /// lambda / (1 - beta).
    pub initial_occupancy: Option<f64>,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            intensity_vph: 700.0,
            saturation_vph: 1800.0,
            k: 0.0035,
            beta: 0.9,
            lambda: 0.01,
            initial_queue: 0.0,
            initial_occupancy: None,
        }
    }
}

impl PairConfig {
    pub fn effective_initial_occupancy(&self) -> f64 {
        self.initial_occupancy
            .unwrap_or(self.lambda / (1.0 - self.beta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Process-noise power as a fraction of benign state signal power.
    pub process_power_frac: f64,
    /// Measurement-noise power as a fraction of benign occupancy power.
    pub meas_power_frac: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            process_power_frac: 0.0,
            meas_power_frac: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub enabled: bool,
    /// Injection begins at this time, seconds.
    pub start_time_s: f64,
    /// Occupancy channel the attacker replays (0 or 1).
    pub target_pair: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            enabled: false,
            start_time_s: 420.0,
            target_pair: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    /// Observer gain scale.
    pub g: f64,
    /// Consecutive residual exceedances required for an alarm.
    pub window: usize,
    /// Backoff, in training standard deviations, for the threshold rule.
    pub kappa: f64,
    /// Cycles of the run used to calibrate the residual tolerance.
    pub calibration_cycles: u64,
    /// Residual tolerance as a multiple of the calibration peak.
    pub tol_multiplier: f64,
    /// Benign cycles the threshold trains on (after warmup).
    pub training_cycles: u64,
    /// Cycles discarded before threshold training samples are taken.
    pub warmup_cycles: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            kind: DetectorKind::None,
            g: 1.0,
            window: 3,
            kappa: 3.0,
            calibration_cycles: 7,
            tol_multiplier: 1.5,
            training_cycles: 20,
            warmup_cycles: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MitigationSection {
    /// When set, a latched detector alarm switches green allocation to the
    /// intensity-proportional rule for the rest of the run.
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(rename = "pair")]
    pub pairs: Vec<PairConfig>,
    pub noise: NoiseSection,
    pub attack: AttackSection,
    pub detector: DetectorSection,
    pub mitigation: MitigationSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: ScenarioSection::default(),
            pairs: vec![
                PairConfig::default(),
                PairConfig {
                    intensity_vph: 300.0,
                    ..PairConfig::default()
                },
            ],
            noise: NoiseSection::default(),
            attack: AttackSection::default(),
            detector: DetectorSection::default(),
            mitigation: MitigationSection::default(),
        }
    }
}

fn err(path: &str, msg: String) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn check_finite(path: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(err(path, format!("must be finite, got {v}")));
    }
    Ok(())
}

fn check_range(path: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    check_finite(path, v)?;
    if v < lo || v > hi {
        return Err(err(path, format!("must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

/// Checks that `outer` is a positive whole multiple of `inner`.
fn check_divisible(outer_path: &str, outer: f64, inner_path: &str, inner: f64) -> Result<u64> {
    let ratio = outer / inner;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{outer_path} ({outer}) must be a positive whole multiple of {inner_path} ({inner})"
        )));
    }
    Ok(n as u64)
}

impl ScenarioConfig {
    pub fn steps_per_cycle(&self) -> u64 {
        (self.scenario.cycle_time_s / self.scenario.dt_s).round() as u64
    }

    pub fn total_cycles(&self) -> u64 {
        (self.scenario.horizon_s / self.scenario.cycle_time_s).round() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_cycle() * self.total_cycles()
    }

    /// End of the residual-tolerance calibration window, seconds.
    pub fn calibration_end_s(&self) -> f64 {
        self.detector.calibration_cycles as f64 * self.scenario.cycle_time_s
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if !(s.dt_s.is_finite() && s.dt_s > 0.0) {
            return Err(err("scenario.dt_s", format!("must be positive, got {}", s.dt_s)));
        }
        check_divisible("scenario.cycle_time_s", s.cycle_time_s, "scenario.dt_s", s.dt_s)?;
        check_divisible(
            "scenario.horizon_s",
            s.horizon_s,
            "scenario.cycle_time_s",
            s.cycle_time_s,
        )?;
        check_finite("scenario.f", s.f)?;
        if s.f < 0.0 {
            return Err(err("scenario.f", format!("must be nonnegative, got {}", s.f)));
        }
        check_range("scenario.alpha", s.alpha, 0.0, 1.0)?;
        if !(s.min_green_s.is_finite() && s.min_green_s >= 0.0) {
            return Err(err(
                "scenario.min_green_s",
                format!("must be nonnegative, got {}", s.min_green_s),
            ));
        }
        // Surfaces the same infeasibility the budget rule would raise.
        enforce_cycle_budget(s.min_green_s, s.min_green_s, s.cycle_time_s, s.min_green_s)?;
        for (i, z) in s.initial_green_s.iter().enumerate() {
            check_finite(&format!("scenario.initial_green_s[{i}]"), *z)?;
            if *z < s.min_green_s {
                return Err(err(
                    &format!("scenario.initial_green_s[{i}]"),
                    format!("must be at least min_green_s ({}), got {z}", s.min_green_s),
                ));
            }
        }
        if s.initial_green_s[0] + s.initial_green_s[1] > s.cycle_time_s {
            return Err(err(
                "scenario.initial_green_s",
                format!(
                    "sum {} exceeds cycle_time_s {}",
                    s.initial_green_s[0] + s.initial_green_s[1],
                    s.cycle_time_s
                ),
            ));
        }

        if self.pairs.len() != 2 {
            return Err(Error::Config(format!(
                "pair: expected exactly 2 [[pair]] tables, got {}",
                self.pairs.len()
            )));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            let at = |f: &str| format!("pair[{i}].{f}");
            check_finite(&at("intensity_vph"), p.intensity_vph)?;
            if p.intensity_vph < 0.0 {
                return Err(err(&at("intensity_vph"), "must be nonnegative".into()));
            }
            check_finite(&at("saturation_vph"), p.saturation_vph)?;
            if p.saturation_vph <= 0.0 {
                return Err(err(&at("saturation_vph"), "must be positive".into()));
            }
            check_finite(&at("k"), p.k)?;
            if p.k < 0.0 {
                return Err(err(&at("k"), "must be nonnegative".into()));
            }
            check_range(&at("beta"), p.beta, 0.0, 1.0)?;
            check_finite(&at("lambda"), p.lambda)?;
            if p.lambda < 0.0 {
                return Err(err(&at("lambda"), "must be nonnegative".into()));
            }
            if !(p.initial_queue.is_finite() && p.initial_queue >= 0.0) {
                return Err(err(&at("initial_queue"), "must be nonnegative".into()));
            }
            match p.initial_occupancy {
                Some(o) => check_range(&at("initial_occupancy"), o, 0.0, 1.0)?,
                None => {
                    if p.beta >= 1.0 {
                        return Err(err(
                            &at("initial_occupancy"),
                            "required explicitly when beta = 1 (no empty-queue fixed point)"
                                .into(),
                        ));
                    }
                }
            }
        }

        for (path, v) in [
            ("noise.process_power_frac", self.noise.process_power_frac),
            ("noise.meas_power_frac", self.noise.meas_power_frac),
        ] {
            check_finite(path, v)?;
            if v < 0.0 {
                return Err(err(path, "must be nonnegative".into()));
            }
        }

        if self.attack.target_pair > 1 {
            return Err(err(
                "attack.target_pair",
                format!("must be 0 or 1, got {}", self.attack.target_pair),
            ));
        }
        if !(self.attack.start_time_s.is_finite() && self.attack.start_time_s >= 0.0) {
            return Err(err(
                "attack.start_time_s",
                format!("must be nonnegative, got {}", self.attack.start_time_s),
            ));
        }

        let d = &self.detector;
        if d.kind.uses_monitor() {
            monitor_gain(d.g).map_err(|e| err("detector.g", e.to_string()))?;
            let rate = (1.0 - 2.5 * d.g).abs();
            if s.dt_s * rate >= 2.0 {
                return Err(err(
                    "detector.g",
                    format!(
                        "forward-Euler monitor unstable at dt_s = {}: dt * |1 - 2.5 g| = {}",
                        s.dt_s,
                        s.dt_s * rate
                    ),
                ));
            }
            if d.window == 0 {
                return Err(err("detector.window", "must be at least 1".into()));
            }
            if !(d.tol_multiplier.is_finite() && d.tol_multiplier > 0.0) {
                return Err(err("detector.tol_multiplier", "must be positive".into()));
            }
            if d.calibration_cycles == 0 {
                return Err(err("detector.calibration_cycles", "must be at least 1".into()));
            }
            if self.calibration_end_s() >= s.horizon_s {
                return Err(err(
                    "detector.calibration_cycles",
                    format!(
                        "calibration window ({} s) leaves no decision samples before \
                         the horizon ({} s)",
                        self.calibration_end_s(),
                        s.horizon_s
                    ),
                ));
            }
            if self.attack.enabled && self.attack.start_time_s < self.calibration_end_s() {
                return Err(err(
                    "detector.calibration_cycles",
                    format!(
                        "calibration window ends at {} s but the attack starts at {} s; \
                         the tolerance must be calibrated on benign data",
                        self.calibration_end_s(),
                        self.attack.start_time_s
                    ),
                ));
            }
        }
        if d.kind.uses_threshold() {
            if !(d.kappa.is_finite() && d.kappa >= 0.0) {
                return Err(err("detector.kappa", "must be nonnegative".into()));
            }
            if d.training_cycles < 2 {
                return Err(err("detector.training_cycles", "must be at least 2".into()));
            }
        }
        Ok(())
    }
}

fn classify_toml_error(e: toml::de::Error) -> Error {
    let msg = e.to_string();
    if msg.contains("unknown field") {
        Error::Config(format!("unknown key: {}", msg.replace('\n', " ")))
    } else {
        Error::Parse(msg.replace('\n', " "))
    }
}

/// Parses a scenario from TOML text (no overrides).
pub fn from_toml_str(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(classify_toml_error)
}

/// Parses TOML text, applies dotted `key=value` overrides, and deserializes.
/// Overrides address table keys with dots and array elements with numeric
/// segments, e.g. `pair.0.intensity_vph=900`.
pub fn from_toml_str_with_overrides(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut value: toml::Value = text.parse().map_err(classify_toml_error)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    value.try_into().map_err(classify_toml_error)
}

fn parse_override_value(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for the right-hand side; bare words fall back
    // to strings so enum values need no quoting on the command line.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t.into_iter().next().map(|(_, v)| v).unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one dotted override to a parsed TOML document.
pub fn apply_override(value: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override '{spec}' must have the form key.path=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override '{spec}' has an empty key path")));
    }
    let segments: Vec<&str> = path.split('.').collect();
    let mut cursor = value;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = seg.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                Error::Config(format!(
                    "override '{path}': segment '{seg}' indexes a non-array"
                ))
            })?;
            let len = arr.len();
            let slot = arr.get_mut(index).ok_or_else(|| {
                Error::Config(format!(
                    "override '{path}': index {index} out of bounds (len {len})"
                ))
            })?;
            if last {
                *slot = parse_override_value(raw.trim());
                return Ok(());
            }
            cursor = slot;
        } else {
            let table = cursor.as_table_mut().ok_or_else(|| {
                Error::Config(format!(
                    "override '{path}': segment '{seg}' addresses a non-table"
                ))
            })?;
            if last {
                table.insert(seg.to_string(), parse_override_value(raw.trim()));
                return Ok(());
            }
            // Missing sections are created here; a misspelled name still fails
            // later when the merged document is deserialized.
            cursor = table
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
        }
    }
    Ok(())
}
