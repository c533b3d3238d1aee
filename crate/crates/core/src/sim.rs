//! Scenario harness: arrival processes, noise calibrated to benign signal
//! power, the per-step and per-cycle loops, threshold training, and
//! order-preserving parallel sweeps.
//!
//! Every run is a pure function of `(config, seed)`. All randomness flows
//! through named ChaCha streams derived from the scenario seed, so enabling
//! one noise source never changes the draws of another, and repeated runs
//! are bit-identical.

use crate::attack::ReplayAttack;
use crate::config::{ArrivalMode, ScenarioConfig};
use crate::detect::{approx_observe, input_approx, mitigate, ResidualDetector, ThresholdDetector};
use crate::error::{Error, Result};
use crate::estimate::RegressionSample;
use crate::model::{
    control_update, green_in_step, observe, step_plant, update_delta, ArmParams, ArmState,
    ControlState, IntersectionState, ProcessNoise,
};
use crate::scalar::per_second;
use crate::trace::{compute_metrics, CycleRecord, MetricsReport, StepRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Named RNG stream tags. The threshold-training shadow run adds
/// [`streams::TRAINING_OFFSET`] to each tag so its draws are disjoint from
/// the main run's.
pub mod streams {
    /// Arrival draws, one stream per pair.
    pub const ARRIVALS: [u64; 2] = [1, 2];
    /// Process-noise draws, ordered (p_q0, p_q1, p_o0, p_o1) within a step.
    pub const PROCESS: u64 = 3;
    /// Measurement-noise draws, ordered (nu0, nu1) within a step.
    pub const MEASUREMENT: u64 = 4;
    pub const TRAINING_OFFSET: u64 = 10;
}

/// RNG for one named stream of a scenario seed.
pub fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Vehicles arriving in one step: a Poisson draw with mean I * dt / 3600.
pub fn poisson_arrivals<R: rand::Rng>(rng: &mut R, intensity_vph: f64, dt: f64) -> f64 {
    let mean = per_second(intensity_vph) * dt;
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive Poisson mean").sample(rng)
}

/// Noise standard deviation from a power fraction of a reference signal:
/// sd = sqrt(frac * mean_square(reference)).
pub fn calibrate_noise(reference: &[f64], power_frac: f64) -> Result<f64> {
    if !(power_frac.is_finite() && power_frac >= 0.0) {
        return Err(Error::Calibration(format!(
            "power fraction must be finite and nonnegative, got {power_frac}"
        )));
    }
    if reference.is_empty() {
        return Err(Error::Calibration("empty noise reference series".into()));
    }
    if power_frac == 0.0 {
        return Ok(0.0);
    }
    let ms = reference.iter().map(|x| x * x).sum::<f64>() / reference.len() as f64;
    if ms == 0.0 {
        return Err(Error::Calibration(
            "all-zero reference series cannot anchor a nonzero noise power fraction".into(),
        ));
    }
    Ok((power_frac * ms).sqrt())
}

/// Calibrated noise standard deviations for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSds {
    pub process_queue: f64,
    pub process_occupancy: f64,
    pub measurement: f64,
}

impl NoiseSds {
    pub fn zero() -> Self {
        NoiseSds {
            process_queue: 0.0,
            process_occupancy: 0.0,
            measurement: 0.0,
        }
    }
}

/// Threshold-detector training result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedThresholds {
    pub kappa: f64,
    pub thrsh: [f64; 2],
    /// Per-pair occupancy-difference samples the training consumed.
    pub training_samples: usize,
}

/// Complete artifacts of one scenario run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub steps: Vec<StepRecord>,
    pub cycles: Vec<CycleRecord>,
    pub metrics: MetricsReport,
    pub noise_sds: NoiseSds,
    pub thresholds: Option<TrainedThresholds>,
    /// Residual tolerance fixed at the end of the calibration window.
    pub residual_tol: Option<f64>,
}

struct SimOptions {
    total_cycles: u64,
    stream_offset: u64,
    noise: NoiseSds,
    attack_enabled: bool,
    detectors_enabled: bool,
    thresholds: Option<[f64; 2]>,
    mitigation_enabled: bool,
}

struct SimOutcome {
    steps: Vec<StepRecord>,
    cycles: Vec<CycleRecord>,
    residual_tol: Option<f64>,
    /// Controller occupancy differences observed at each cycle boundary.
    d_occ_series: [Vec<f64>; 2],
}

fn arm_params(cfg: &ScenarioConfig, i: usize) -> ArmParams<f64> {
    let p = &cfg.pairs[i];
    ArmParams {
        intensity_vph: p.intensity_vph,
        saturation_vph: p.saturation_vph,
        k: p.k,
        beta: p.beta,
        lambda: p.lambda,
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Calibration(format!("noise sd {sd}: {e}")))
}

/// The shared simulation loop. One iteration advances the plant by dt; at the
/// end of each T_c window the controller and the per-cycle detector act.
/// Step record times are end-of-step times, so the attack-start comparison,
/// detector timestamps, and the trace all use the same clock.
fn simulate(cfg: &ScenarioConfig, opts: &SimOptions) -> Result<SimOutcome> {
    let s = &cfg.scenario;
    let dt = s.dt_s;
    let spc = cfg.steps_per_cycle();
    let total_steps = opts.total_cycles * spc;
    let params = [arm_params(cfg, 0), arm_params(cfg, 1)];
    let o_init = [
        cfg.pairs[0].effective_initial_occupancy(),
        cfg.pairs[1].effective_initial_occupancy(),
    ];

    let mut state = IntersectionState {
        pairs: [
            ArmState {
                queue: cfg.pairs[0].initial_queue,
                occupancy: o_init[0],
                delta: update_delta(&params[0], params[0].intensity_vph),
            },
            ArmState {
                queue: cfg.pairs[1].initial_queue,
                occupancy: o_init[1],
                delta: update_delta(&params[1], params[1].intensity_vph),
            },
        ],
        sim_time: 0.0,
        dt,
        alpha: s.alpha,
    };
    let mut controls = ControlState {
        green: s.initial_green_s,
        cycle_time: s.cycle_time_s,
        f: s.f,
        min_green: s.min_green_s,
    };

    let mut arrival_rngs = match s.arrival_mode {
        ArrivalMode::Poisson => Some([
            stream_rng(s.seed, streams::ARRIVALS[0] + opts.stream_offset),
            stream_rng(s.seed, streams::ARRIVALS[1] + opts.stream_offset),
        ]),
        ArrivalMode::Deterministic => None,
    };
    let mut process_rng = (opts.noise.process_queue > 0.0 || opts.noise.process_occupancy > 0.0)
        .then(|| stream_rng(s.seed, streams::PROCESS + opts.stream_offset));
    let mut meas_rng = (opts.noise.measurement > 0.0)
        .then(|| stream_rng(s.seed, streams::MEASUREMENT + opts.stream_offset));
    let process_q = normal(opts.noise.process_queue)?;
    let process_o = normal(opts.noise.process_occupancy)?;
    let meas_n = normal(opts.noise.measurement)?;

    let mut attack = if opts.attack_enabled {
        ReplayAttack::new(cfg.attack.start_time_s, cfg.attack.target_pair)
    } else {
        ReplayAttack::disabled(cfg.attack.target_pair)
    };
    let mut residual = if opts.detectors_enabled && cfg.detector.kind.uses_monitor() {
        Some(ResidualDetector::new(
            cfg.detector.g,
            dt,
            o_init,
            cfg.calibration_end_s(),
            cfg.detector.tol_multiplier,
            cfg.detector.window,
        )?)
    } else {
        None
    };
    let threshold = opts.thresholds.map(|thrsh| ThresholdDetector {
        thrsh,
        kappa: cfg.detector.kappa,
    });

    let mut steps = Vec::with_capacity(total_steps as usize);
    let mut cycles = Vec::with_capacity(opts.total_cycles as usize);
    let mut d_occ_series = [Vec::new(), Vec::new()];

    // Controller reference samples: the measured (pre-injection) boundary
    // occupancies from the previous cycle.
    let mut prev_meas = o_init;
    let mut mitigated = false;
    let mut threshold_alarm_time: Option<f64> = None;
    let mut cum_arrivals = [0.0_f64; 2];
    let mut cum_dispatched = [0.0_f64; 2];
    let mut cum_spill = [0.0_f64; 2];
    let mut acc_arrivals = [0.0_f64; 2];
    let mut acc_dispatched = [0.0_f64; 2];
    let mut acc_queue = [0.0_f64; 2];
    let mut acc_occ = [0.0_f64; 2];

    for step in 0..total_steps {
        let tau = (step % spc) as f64 * dt;
        let z_active = controls.green;
        let z_eff = green_in_step(tau, dt, z_active);
        let arrivals = match &mut arrival_rngs {
            Some(rngs) => [
                poisson_arrivals(&mut rngs[0], params[0].intensity_vph, dt),
                poisson_arrivals(&mut rngs[1], params[1].intensity_vph, dt),
            ],
            None => [
                per_second(params[0].intensity_vph) * dt,
                per_second(params[1].intensity_vph) * dt,
            ],
        };
        let noise = match &mut process_rng {
            Some(rng) => ProcessNoise {
                queue: [process_q.sample(rng), process_q.sample(rng)],
                occupancy: [process_o.sample(rng), process_o.sample(rng)],
            },
            None => ProcessNoise::zero(),
        };
        let nu = match &mut meas_rng {
            Some(rng) => [meas_n.sample(rng), meas_n.sample(rng)],
            None => [0.0; 2],
        };

        let prev_state = state;
        let plant = step_plant(&prev_state, &params, z_eff, arrivals, &noise)?;
        state = plant.state;
        // Clock by multiplication, not accumulation, so boundary and attack
        // comparisons cannot drift at fractional dt.
        state.sim_time = (step + 1) as f64 * dt;
        let t_meas = state.sim_time;

        let obs = observe(&prev_state, &state, arrivals, nu);
        let o_meas = obs.occupancy_meas;
        attack.record(o_meas[attack.target_pair()]);
        let o_rep = attack.inject_pair(o_meas, t_meas);

        let u = [
            input_approx(params[0].intensity_vph, dt, params[0].saturation_vph, z_eff[0]),
            input_approx(params[1].intensity_vph, dt, params[1].saturation_vph, z_eff[1]),
        ];
        let y = approx_observe(o_rep, u, [0.0; 2]);
        let (omega, r, r_norm, r_exceed) = match &mut residual {
            Some(det) => {
                let sample = det.step(t_meas, y);
                let exceed = det.tol().is_some_and(|tol| sample.norm > tol);
                (det.omega(), sample.residual, sample.norm, exceed)
            }
            None => ([0.0; 2], [0.0; 2], 0.0, false),
        };
        let residual_alarmed = residual.as_ref().is_some_and(|d| d.alarmed());

        for i in 0..2 {
            cum_arrivals[i] += arrivals[i];
            cum_dispatched[i] += plant.dispatched[i];
            cum_spill[i] += plant.spill[i];
            acc_arrivals[i] += arrivals[i];
            acc_dispatched[i] += plant.dispatched[i];
            acc_queue[i] += state.pairs[i].queue;
            acc_occ[i] += state.pairs[i].occupancy;
        }

        let mitigation_in_force = mitigated;
        let deltas_in_force = [prev_state.pairs[0].delta, prev_state.pairs[1].delta];

        if (step + 1) % spc == 0 {
            let cycle_idx = step / spc;
            let mut cmi = [0.0; 2];
            let mut delta_next = [0u8; 2];
            for i in 0..2 {
                // Demand the next cycle must absorb: the standing queue plus
                // this cycle's arrival rate, expressed in veh/h.
                cmi[i] = 3600.0 * (state.pairs[i].queue + acc_arrivals[i]) / s.cycle_time_s;
                let d = update_delta(&params[i], cmi[i]);
                delta_next[i] = d.as_u8();
                state.pairs[i].delta = d;
            }
            let d_occ = [o_rep[0] - prev_meas[0], o_rep[1] - prev_meas[1]];
            d_occ_series[0].push(d_occ[0]);
            d_occ_series[1].push(d_occ[1]);
            // The threshold is trained on post-warmup cycles, so decisions
            // start there too; the startup transient is out of distribution.
            if cycle_idx >= cfg.detector.warmup_cycles {
                if let Some(th) = &threshold {
                    let hits = th.detect(d_occ);
                    if (hits[0] || hits[1]) && threshold_alarm_time.is_none() {
                        threshold_alarm_time = Some(t_meas);
                    }
                }
            }
            if opts.mitigation_enabled && (residual_alarmed || threshold_alarm_time.is_some()) {
                mitigated = true;
            }
            let z_next = if mitigated {
                mitigate(
                    s.cycle_time_s,
                    [params[0].intensity_vph, params[1].intensity_vph],
                )
                .green
            } else {
                control_update(&controls, d_occ)?.green
            };
            cycles.push(CycleRecord {
                cycle: cycle_idx,
                t_end_s: t_meas,
                z0: z_active[0],
                z1: z_active[1],
                mean_queue0: acc_queue[0] / spc as f64,
                mean_queue1: acc_queue[1] / spc as f64,
                mean_occ0: acc_occ[0] / spc as f64,
                mean_occ1: acc_occ[1] / spc as f64,
                arrivals0: acc_arrivals[0],
                arrivals1: acc_arrivals[1],
                dispatched0: acc_dispatched[0],
                dispatched1: acc_dispatched[1],
                cycle_mean_intensity0: cmi[0],
                cycle_mean_intensity1: cmi[1],
                delta_next0: delta_next[0],
                delta_next1: delta_next[1],
                d_occ0: d_occ[0],
                d_occ1: d_occ[1],
                z_next0: z_next[0],
                z_next1: z_next[1],
                threshold_alarm: u8::from(threshold_alarm_time.is_some()),
                residual_alarm: u8::from(residual_alarmed),
                mitigation_active: u8::from(mitigated),
            });
            controls.green = z_next;
            prev_meas = o_meas;
            acc_arrivals = [0.0; 2];
            acc_dispatched = [0.0; 2];
            acc_queue = [0.0; 2];
            acc_occ = [0.0; 2];
        }

        steps.push(StepRecord {
            step,
            time_s: t_meas,
            cycle: step / spc,
            z0: z_active[0],
            z1: z_active[1],
            green_eff0: z_eff[0],
            green_eff1: z_eff[1],
            arrivals0: arrivals[0],
            arrivals1: arrivals[1],
            queue0: state.pairs[0].queue,
            queue1: state.pairs[1].queue,
            dispatched0: plant.dispatched[0],
            dispatched1: plant.dispatched[1],
            spill0: plant.spill[0],
            spill1: plant.spill[1],
            occ_true0: state.pairs[0].occupancy,
            occ_true1: state.pairs[1].occupancy,
            occ_meas0: o_meas[0],
            occ_meas1: o_meas[1],
            occ_rep0: o_rep[0],
            occ_rep1: o_rep[1],
            occ_clamped0: u8::from(plant.occupancy[0].clamped),
            occ_clamped1: u8::from(plant.occupancy[1].clamped),
            queue_emptied0: u8::from(plant.queue_emptied[0]),
            queue_emptied1: u8::from(plant.queue_emptied[1]),
            u0: u[0],
            u1: u[1],
            p_q0: noise.queue[0],
            p_q1: noise.queue[1],
            p_o0: noise.occupancy[0],
            p_o1: noise.occupancy[1],
            nu0: nu[0],
            nu1: nu[1],
            delta0: deltas_in_force[0].as_u8(),
            delta1: deltas_in_force[1].as_u8(),
            omega0: omega[0],
            omega1: omega[1],
            r0: r[0],
            r1: r[1],
            r_norm,
            residual_exceed: u8::from(r_exceed),
            residual_alarm: u8::from(residual_alarmed),
            threshold_alarm: u8::from(threshold_alarm_time.is_some()),
            mitigation_active: u8::from(mitigation_in_force),
            attack_active: u8::from(attack.is_active(t_meas)),
            cum_arrivals0: cum_arrivals[0],
            cum_arrivals1: cum_arrivals[1],
            cum_dispatched0: cum_dispatched[0],
            cum_dispatched1: cum_dispatched[1],
            cum_spill0: cum_spill[0],
            cum_spill1: cum_spill[1],
        });
    }

    let residual_tol = residual.as_ref().and_then(|d| d.tol());
    Ok(SimOutcome {
        steps,
        cycles,
        residual_tol,
        d_occ_series,
    })
}

/// Noise standard deviations for a scenario, anchored to signal power from a
/// noise-free benign shadow run over the calibration window. The shadow
/// reuses the main run's arrival streams so the reference series matches the
/// arrivals the run will actually see.
pub fn derive_noise_sds(cfg: &ScenarioConfig) -> Result<NoiseSds> {
    if cfg.noise.process_power_frac == 0.0 && cfg.noise.meas_power_frac == 0.0 {
        return Ok(NoiseSds::zero());
    }
    let shadow = simulate(
        cfg,
        &SimOptions {
            total_cycles: cfg.detector.calibration_cycles.max(1),
            stream_offset: 0,
            noise: NoiseSds::zero(),
            attack_enabled: false,
            detectors_enabled: false,
            thresholds: None,
            mitigation_enabled: false,
        },
    )?;
    let queues: Vec<f64> = shadow
        .steps
        .iter()
        .flat_map(|r| [r.queue0, r.queue1])
        .collect();
    let occs: Vec<f64> = shadow
        .steps
        .iter()
        .flat_map(|r| [r.occ_true0, r.occ_true1])
        .collect();
    Ok(NoiseSds {
        process_queue: calibrate_noise(&queues, cfg.noise.process_power_frac)?,
        process_occupancy: calibrate_noise(&occs, cfg.noise.process_power_frac)?,
        measurement: calibrate_noise(&occs, cfg.noise.meas_power_frac)?,
    })
}

/// Trains the per-pair occupancy-difference thresholds on a benign shadow
/// run (attack off, noise on, disjoint RNG streams): `warmup_cycles` are
/// discarded, the next `training_cycles` boundary differences feed
/// [`ThresholdDetector::train`].
pub fn train_thresholds(cfg: &ScenarioConfig) -> Result<TrainedThresholds> {
    cfg.validate()?;
    let sds = derive_noise_sds(cfg)?;
    train_thresholds_with_sds(cfg, sds)
}

fn train_thresholds_with_sds(cfg: &ScenarioConfig, sds: NoiseSds) -> Result<TrainedThresholds> {
    let d = &cfg.detector;
    let shadow = simulate(
        cfg,
        &SimOptions {
            total_cycles: d.warmup_cycles + d.training_cycles,
            stream_offset: streams::TRAINING_OFFSET,
            noise: sds,
            attack_enabled: false,
            detectors_enabled: false,
            thresholds: None,
            mitigation_enabled: false,
        },
    )?;
    let w = d.warmup_cycles as usize;
    let detector = ThresholdDetector::train(
        [&shadow.d_occ_series[0][w..], &shadow.d_occ_series[1][w..]],
        d.kappa,
    )?;
    Ok(TrainedThresholds {
        kappa: d.kappa,
        thrsh: detector.thrsh,
        training_samples: shadow.d_occ_series[0].len() - w,
    })
}

/// Runs one scenario end to end: validation, noise calibration, threshold
/// training when configured, the main loop, and metric computation.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let noise_sds = derive_noise_sds(cfg)?;
    let thresholds = if cfg.detector.kind.uses_threshold() {
        Some(train_thresholds_with_sds(cfg, noise_sds)?)
    } else {
        None
    };
    let outcome = simulate(
        cfg,
        &SimOptions {
            total_cycles: cfg.total_cycles(),
            stream_offset: 0,
            noise: noise_sds,
            attack_enabled: cfg.attack.enabled,
            detectors_enabled: true,
            thresholds: thresholds.map(|t| t.thrsh),
            mitigation_enabled: cfg.mitigation.enabled,
        },
    )?;
    let metrics = compute_metrics(cfg, &outcome.steps, &outcome.cycles);
    Ok(RunOutput {
        steps: outcome.steps,
        cycles: outcome.cycles,
        metrics,
        noise_sds,
        thresholds,
        residual_tol: outcome.residual_tol,
    })
}

/// Runs independent scenarios on a worker pool. Output order always matches
/// input order; per-item failures are reported in place without aborting the
/// rest. `workers = 0` uses the default parallelism.
pub fn sweep<T, F>(configs: &[ScenarioConfig], workers: usize, runner: F) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(&ScenarioConfig) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        use rayon::prelude::*;
        configs.par_iter().map(&runner).collect()
    }))
}

/// Occupancy-transition regression samples for one pair from consecutive
/// trace records: (q_t, o_t) -> o_{t+1}, flagged when the transition clamped.
pub fn regression_samples(steps: &[StepRecord], pair: usize) -> Vec<RegressionSample<f64>> {
    steps
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if pair == 0 {
                RegressionSample {
                    q: a.queue0,
                    o: a.occ_true0,
                    o_next: b.occ_true0,
                    clamped: b.occ_clamped0 != 0,
                }
            } else {
                RegressionSample {
                    q: a.queue1,
                    o: a.occ_true1,
                    o_next: b.occ_true1,
                    clamped: b.occ_clamped1 != 0,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DetectorKind;
    use crate::estimate::fit_occupancy_params;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn poisson_zero_intensity_is_zero() {
        let mut rng = stream_rng(7, 1);
        for _ in 0..100 {
            assert_eq!(poisson_arrivals(&mut rng, 0.0, 1.0), 0.0);
        }
    }

    #[test]
    fn poisson_mean_tracks_rate() {
        let mut rng = stream_rng(42, 1);
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|_| poisson_arrivals(&mut rng, 700.0, 1.0))
            .sum();
        assert_close(total / n as f64, 700.0 / 3600.0, 0.003);
    }

    #[test]
    fn noise_calibration_examples() {
        assert_eq!(calibrate_noise(&[1.0, 2.0], 0.0).unwrap(), 0.0);
        let sd = calibrate_noise(&[0.5; 100], 0.00394).unwrap();
        assert_close(sd, 0.03138, 1e-5);
        let sd4 = calibrate_noise(&[0.5; 100], 4.0 * 0.00394).unwrap();
        assert_close(sd4, 2.0 * sd, 1e-12);
        assert!(calibrate_noise(&[], 0.1).is_err());
        assert!(calibrate_noise(&[0.0; 10], 0.1).is_err());
    }

    #[test]
    fn default_run_completes_with_exact_conservation() {
        let cfg = ScenarioConfig::default();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.steps.len(), 1800);
        assert_eq!(out.cycles.len(), 30);
        assert_eq!(out.metrics.conservation_max_abs_error, 0.0);
        assert!(out.metrics.pairs[0].max_queue < 50.0);
    }

    #[test]
    fn identical_configs_give_bit_identical_traces() {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.arrival_mode = ArrivalMode::Poisson;
        cfg.noise.meas_power_frac = 0.00394;
        cfg.detector.kind = DetectorKind::Both;
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.cycles, b.cycles);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn deterministic_benign_greens_reach_a_fixed_point() {
        let cfg = ScenarioConfig::default();
        let out = run_scenario(&cfg).unwrap();
        for c in out.cycles.iter().filter(|c| c.cycle >= 10) {
            assert!(
                (c.z_next0 - c.z0).abs() < 0.5 && (c.z_next1 - c.z1).abs() < 0.5,
                "cycle {}: z ({}, {}) -> ({}, {})",
                c.cycle,
                c.z0,
                c.z1,
                c.z_next0,
                c.z_next1
            );
        }
    }

    #[test]
    fn replay_attack_collapses_green_and_saturates_occupancy() {
        let mut cfg = ScenarioConfig::default();
        cfg.attack.enabled = true;
        let out = run_scenario(&cfg).unwrap();
        let reached = out.metrics.min_green_reached_cycle.expect("green floor never reached");
        let onset_cycle = (cfg.attack.start_time_s / cfg.scenario.cycle_time_s) as u64;
        assert!(
            reached <= onset_cycle + 10,
            "floor reached at cycle {reached}, onset {onset_cycle}"
        );
        let last = out.steps.last().unwrap();
        assert_eq!(last.occ_true0, 1.0, "attacked occupancy saturates");
        assert!(
            out.metrics.pairs[0].post_attack_max_queue
                > 3.0 * out.metrics.pairs[0].pre_attack_mean_queue
        );
    }

    #[test]
    fn toggling_measurement_noise_leaves_arrivals_untouched() {
        let mut base = ScenarioConfig::default();
        base.scenario.arrival_mode = ArrivalMode::Poisson;
        let mut noisy = base.clone();
        noisy.noise.meas_power_frac = 0.00394;
        let a = run_scenario(&base).unwrap();
        let b = run_scenario(&noisy).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.arrivals0, y.arrivals0);
            assert_eq!(x.arrivals1, y.arrivals1);
        }
    }

    #[test]
    fn singleton_sweep_equals_run_scenario() {
        let cfg = ScenarioConfig::default();
        let direct = run_scenario(&cfg).unwrap();
        let swept = sweep(std::slice::from_ref(&cfg), 1, run_scenario).unwrap();
        assert_eq!(swept.len(), 1);
        assert_eq!(swept[0].as_ref().unwrap().metrics, direct.metrics);
    }

    #[test]
    fn sweep_results_independent_of_worker_count() {
        let mut configs = Vec::new();
        for seed in 1..=4 {
            let mut c = ScenarioConfig::default();
            c.scenario.arrival_mode = ArrivalMode::Poisson;
            c.scenario.seed = seed;
            configs.push(c);
        }
        let one = sweep(&configs, 1, run_scenario).unwrap();
        let many = sweep(&configs, 4, run_scenario).unwrap();
        for (a, b) in one.iter().zip(&many) {
            assert_eq!(a.as_ref().unwrap().steps, b.as_ref().unwrap().steps);
        }
    }

    #[test]
    fn threshold_training_is_quiet_on_its_own_data() {
        let mut cfg = ScenarioConfig::default();
        cfg.detector.kind = DetectorKind::Threshold;
        cfg.noise.meas_power_frac = 0.00394;
        let trained = train_thresholds(&cfg).unwrap();
        assert_eq!(trained.training_samples, cfg.detector.training_cycles as usize);
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.metrics.threshold_alarm_time_s, None, "benign run must stay quiet");
        assert!(!out.metrics.false_alarm);
    }

    #[test]
    fn threshold_with_mitigation_detects_and_reallocates() {
        let mut cfg = ScenarioConfig::default();
        cfg.attack.enabled = true;
        cfg.detector.kind = DetectorKind::Threshold;
        cfg.mitigation.enabled = true;
        let out = run_scenario(&cfg).unwrap();
        let detected = out.metrics.threshold_alarm_time_s.expect("attack must be detected");
        assert!(detected >= cfg.attack.start_time_s);
        assert!(out.metrics.detection_cycles_after_attack.unwrap() <= 3);
        let expected = 60.0 * 700.0 / 1000.0;
        let post: Vec<_> = out
            .cycles
            .iter()
            .filter(|c| c.mitigation_active != 0)
            .collect();
        assert!(!post.is_empty());
        for c in &post {
            assert_close(c.z_next0, expected, 1e-12);
            assert!((c.z_next0 + c.z_next1 - 60.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn trace_regression_recovers_occupancy_coefficients() {
        let cfg = ScenarioConfig::default();
        let out = run_scenario(&cfg).unwrap();
        let samples = regression_samples(&out.steps, 0);
        let fit = fit_occupancy_params(&samples).unwrap();
        assert_close(fit.k, cfg.pairs[0].k, 1e-9);
        assert_close(fit.beta, cfg.pairs[0].beta, 1e-9);
        assert_close(fit.lambda, cfg.pairs[0].lambda, 1e-9);
        assert!(fit.rmse < 1e-9);
    }

    #[test]
    fn trace_row_count_matches_horizon() {
        let mut cfg = ScenarioConfig::default();
        cfg.scenario.horizon_s = 300.0;
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.steps.len(), 300);
        assert!(out
            .steps
            .windows(2)
            .all(|w| w[1].time_s > w[0].time_s));
    }
}
