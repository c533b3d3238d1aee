//! Run artifacts: per-step and per-cycle records, CSV round-tripping, and
//! the summary metrics report.
//!
//! Floats are written with the shortest decimal form that parses back to
//! the identical bits, so emit -> parse is lossless.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io;
use std::str::FromStr;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

fn parse_field<T: FromStr>(raw: &str, name: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| {
        Error::Parse(format!("line {line}: column '{name}': cannot parse '{raw}': {e}"))
    })
}

macro_rules! csv_record {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name {
            $( $(#[$fmeta])* pub $field: $ty, )+
        }

        impl $name {
            pub const HEADERS: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn to_fields(&self) -> Vec<String> {
                vec![$(self.$field.to_string()),+]
            }

            pub fn from_fields(fields: &[&str], line: usize) -> Result<Self> {
                if fields.len() != Self::HEADERS.len() {
                    return Err(Error::Parse(format!(
                        "line {line}: expected {} fields, got {}",
                        Self::HEADERS.len(),
                        fields.len()
                    )));
                }
                let mut it = fields.iter();
                Ok(Self {
                    $($field: parse_field::<$ty>(
                        it.next().unwrap(),
                        stringify!($field),
                        line,
                    )?,)+
                })
            }
        }
    };
}

csv_record! {
    /// One simulation step. Cumulative columns restate the running flow
    /// totals so a reader can recheck vehicle conservation from the file
    /// alone.
    StepRecord {
        step: u64,
        time_s: f64,
        cycle: u64,
        z0: f64,
        z1: f64,
        green_eff0: f64,
        green_eff1: f64,
        arrivals0: f64,
        arrivals1: f64,
        queue0: f64,
        queue1: f64,
        dispatched0: f64,
        dispatched1: f64,
        spill0: f64,
        spill1: f64,
        occ_true0: f64,
        occ_true1: f64,
        occ_meas0: f64,
        occ_meas1: f64,
        occ_rep0: f64,
        occ_rep1: f64,
        occ_clamped0: u8,
        occ_clamped1: u8,
        queue_emptied0: u8,
        queue_emptied1: u8,
        u0: f64,
        u1: f64,
        p_q0: f64,
        p_q1: f64,
        p_o0: f64,
        p_o1: f64,
        nu0: f64,
        nu1: f64,
        delta0: u8,
        delta1: u8,
        omega0: f64,
        omega1: f64,
        r0: f64,
        r1: f64,
        r_norm: f64,
        residual_exceed: u8,
        residual_alarm: u8,
        threshold_alarm: u8,
        mitigation_active: u8,
        attack_active: u8,
        cum_arrivals0: f64,
        cum_arrivals1: f64,
        cum_dispatched0: f64,
        cum_dispatched1: f64,
        cum_spill0: f64,
        cum_spill1: f64,
    }
}

csv_record! {
    /// One control cycle, recorded at its end boundary together with the
    /// decision taken there for the next cycle.
    CycleRecord {
        cycle: u64,
        t_end_s: f64,
        z0: f64,
        z1: f64,
        mean_queue0: f64,
        mean_queue1: f64,
        mean_occ0: f64,
        mean_occ1: f64,
        arrivals0: f64,
        arrivals1: f64,
        dispatched0: f64,
        dispatched1: f64,
        cycle_mean_intensity0: f64,
        cycle_mean_intensity1: f64,
        delta_next0: u8,
        delta_next1: u8,
        d_occ0: f64,
        d_occ1: f64,
        z_next0: f64,
        z_next1: f64,
        threshold_alarm: u8,
        residual_alarm: u8,
        mitigation_active: u8,
    }
}

fn write_csv<W: io::Write>(
    w: &mut W,
    headers: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> io::Result<()> {
    w.write_all(headers.join(",").as_bytes())?;
    w.write_all(b"\n")?;
    for row in rows {
        w.write_all(row.join(",").as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn csv_lines<'a>(text: &'a str, headers: &[&str]) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV input".into()))?;
    let expected = headers.join(",");
    if header_line.trim_end_matches('\r') != expected {
        return Err(Error::Parse(format!(
            "header mismatch: expected '{expected}', got '{header_line}'"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        rows.push((i + 1, line.split(',').collect()));
    }
    Ok(rows)
}

pub fn write_step_records<W: io::Write>(w: &mut W, rows: &[StepRecord]) -> io::Result<()> {
    write_csv(w, StepRecord::HEADERS, rows.iter().map(StepRecord::to_fields))
}

pub fn parse_step_records(text: &str) -> Result<Vec<StepRecord>> {
    csv_lines(text, StepRecord::HEADERS)?
        .into_iter()
        .map(|(line, fields)| StepRecord::from_fields(&fields, line))
        .collect()
}

pub fn write_cycle_records<W: io::Write>(w: &mut W, rows: &[CycleRecord]) -> io::Result<()> {
    write_csv(w, CycleRecord::HEADERS, rows.iter().map(CycleRecord::to_fields))
}

pub fn parse_cycle_records(text: &str) -> Result<Vec<CycleRecord>> {
    csv_lines(text, CycleRecord::HEADERS)?
        .into_iter()
        .map(|(line, fields)| CycleRecord::from_fields(&fields, line))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMetrics {
    pub mean_queue: f64,
    pub max_queue: f64,
    pub final_queue: f64,
    pub mean_occupancy: f64,
    pub total_arrivals: f64,
    pub total_dispatched: f64,
    pub total_spill: f64,
    /// Mean queue over steps before the attack starts (whole run when no
    /// attack is configured).
    pub pre_attack_mean_queue: f64,
    pub post_attack_max_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon_s: f64,
    pub cycles: u64,
    pub attack_enabled: bool,
    pub attack_start_s: Option<f64>,
    pub pairs: Vec<PairMetrics>,
    pub final_green: [f64; 2],
    /// First cycle whose decided allocation pins the attacked pair at the
    /// green floor (within half a second), if any.
    pub min_green_reached_cycle: Option<u64>,
    pub residual_alarm_time_s: Option<f64>,
    pub threshold_alarm_time_s: Option<f64>,
    /// Earliest alarm among the enabled detectors.
    pub detection_time_s: Option<f64>,
    pub detection_latency_s: Option<f64>,
    pub detection_cycles_after_attack: Option<u64>,
    /// An alarm fired while no attack was active.
    pub false_alarm: bool,
    /// Cycles that completed before the attack started (all of them when no
    /// attack is configured).
    pub benign_cycles: u64,
    /// Alarm events raised during benign cycles, per benign cycle. Alarms
    /// latch, so each detector contributes at most one event per run.
    pub false_positive_rate: f64,
    pub mitigation_time_s: Option<f64>,
    pub total_queue_at_detection: Option<f64>,
    pub post_detection_peak_queue: Option<f64>,
    /// Worst per-step violation of queue + dispatched + spill == supply,
    /// rechecked from the trace. Exactly zero in a correct run.
    pub conservation_max_abs_error: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        // Infallible for this struct; keep the signature ergonomic.
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("metrics JSON: {e}")))
    }
}

/// Derives the summary report from a finished run's records.
pub fn compute_metrics(
    config: &ScenarioConfig,
    steps: &[StepRecord],
    cycles: &[CycleRecord],
) -> MetricsReport {
    let attack_start = if config.attack.enabled {
        Some(config.attack.start_time_s)
    } else {
        None
    };
    let n = steps.len().max(1) as f64;

    let mut pairs = Vec::with_capacity(2);
    for i in 0..2 {
        let queue = |r: &StepRecord| if i == 0 { r.queue0 } else { r.queue1 };
        let occ = |r: &StepRecord| if i == 0 { r.occ_true0 } else { r.occ_true1 };
        let pre: Vec<f64> = steps
            .iter()
            .filter(|r| attack_start.is_none_or(|t| r.time_s < t))
            .map(&queue)
            .collect();
        let post_max = steps
            .iter()
            .filter(|r| attack_start.is_some_and(|t| r.time_s >= t))
            .map(&queue)
            .fold(0.0_f64, f64::max);
        let last = steps.last();
        pairs.push(PairMetrics {
            mean_queue: steps.iter().map(&queue).sum::<f64>() / n,
            max_queue: steps.iter().map(&queue).fold(0.0, f64::max),
            final_queue: last.map_or(0.0, &queue),
            mean_occupancy: steps.iter().map(&occ).sum::<f64>() / n,
            total_arrivals: last.map_or(0.0, |r| if i == 0 { r.cum_arrivals0 } else { r.cum_arrivals1 }),
            total_dispatched: last
                .map_or(0.0, |r| if i == 0 { r.cum_dispatched0 } else { r.cum_dispatched1 }),
            total_spill: last.map_or(0.0, |r| if i == 0 { r.cum_spill0 } else { r.cum_spill1 }),
            pre_attack_mean_queue: pre.iter().sum::<f64>() / pre.len().max(1) as f64,
            post_attack_max_queue: post_max,
        });
    }

    let first_time = |flag: fn(&StepRecord) -> u8| {
        steps.iter().find(|r| flag(r) != 0).map(|r| r.time_s)
    };
    let residual_alarm_time_s = first_time(|r| r.residual_alarm);
    let threshold_alarm_time_s = first_time(|r| r.threshold_alarm);
    let detection_time_s = match (residual_alarm_time_s, threshold_alarm_time_s) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let mitigation_time_s = first_time(|r| r.mitigation_active);

    let detection_latency_s = match (detection_time_s, attack_start) {
        (Some(td), Some(ta)) if td >= ta => Some(td - ta),
        _ => None,
    };
    let detection_cycles_after_attack = match (detection_time_s, attack_start) {
        (Some(td), Some(ta)) if td >= ta => {
            Some(((td - ta) / config.scenario.cycle_time_s).ceil() as u64)
        }
        _ => None,
    };
    let false_alarm = match (detection_time_s, attack_start) {
        (Some(td), Some(ta)) => td < ta,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let benign_cycles = cycles
        .iter()
        .filter(|c| attack_start.is_none_or(|ta| c.t_end_s <= ta))
        .count() as u64;
    let benign_events = [residual_alarm_time_s, threshold_alarm_time_s]
        .iter()
        .flatten()
        .filter(|t| attack_start.is_none_or(|ta| **t < ta))
        .count();
    let false_positive_rate = if benign_cycles == 0 {
        0.0
    } else {
        benign_events as f64 / benign_cycles as f64
    };

    let target = config.attack.target_pair;
    let floor = config.scenario.min_green_s + 0.5;
    let min_green_reached_cycle = if config.attack.enabled {
        cycles
            .iter()
            .filter(|c| c.t_end_s > config.attack.start_time_s)
            .find(|c| (if target == 0 { c.z_next0 } else { c.z_next1 }) <= floor)
            .map(|c| c.cycle)
    } else {
        None
    };

    let total_queue_at_detection = detection_time_s.and_then(|td| {
        steps
            .iter()
            .find(|r| r.time_s >= td)
            .map(|r| r.queue0 + r.queue1)
    });
    let post_detection_peak_queue = detection_time_s.map(|td| {
        steps
            .iter()
            .filter(|r| r.time_s >= td)
            .map(|r| r.queue0 + r.queue1)
            .fold(0.0, f64::max)
    });

    let mut conservation_max_abs_error = 0.0_f64;
    let mut prev_queue = [
        config.pairs.first().map_or(0.0, |p| p.initial_queue),
        config.pairs.get(1).map_or(0.0, |p| p.initial_queue),
    ];
    for r in steps {
        let row = [
            (r.queue0, r.arrivals0, r.p_q0, r.dispatched0, r.spill0),
            (r.queue1, r.arrivals1, r.p_q1, r.dispatched1, r.spill1),
        ];
        for (i, (q, a, p, d, s)) in row.into_iter().enumerate() {
            let supply = (prev_queue[i] + a) + p;
            conservation_max_abs_error =
                conservation_max_abs_error.max((q + d + s - supply).abs());
            prev_queue[i] = q;
        }
    }

    let final_green = cycles
        .last()
        .map_or(config.scenario.initial_green_s, |c| [c.z_next0, c.z_next1]);

    MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        seed: config.scenario.seed,
        horizon_s: config.scenario.horizon_s,
        cycles: cycles.len() as u64,
        attack_enabled: config.attack.enabled,
        attack_start_s: attack_start,
        pairs,
        final_green,
        min_green_reached_cycle,
        residual_alarm_time_s,
        threshold_alarm_time_s,
        detection_time_s,
        detection_latency_s,
        detection_cycles_after_attack,
        false_alarm,
        benign_cycles,
        false_positive_rate,
        mitigation_time_s,
        total_queue_at_detection,
        post_detection_peak_queue,
        conservation_max_abs_error,
    }
}
