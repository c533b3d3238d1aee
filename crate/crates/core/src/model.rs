//! Intersection plant and controller.
//!
//! Two non-conflicting arm pairs share one cycle. Queue lengths follow a
//! saturated/unsaturated switched recursion, occupancy follows a linear
//! recursion on the queue, and green times are rescaled multiplicatively from
//! per-cycle occupancy differences subject to the cycle budget.
//!
//! Two step functions exist on purpose:
//!
//! * [`step_dynamics`] is the literal switched matrix step. With the
//!   unsaturated switch the queue memory term drops out entirely, so this form
//!   only reproduces observed queue behavior when applied per cycle.
//! * [`step_plant`] is the per-dt refinement used by the simulation harness:
//!   it always carries the standing queue and serves at most the green-time
//!   service capacity. Aggregated over a full cycle under fluid arrivals it
//!   reproduces the switched recursion in both regimes (the queue either
//!   clears during green or it does not), while staying meaningful at any dt.
//!
//! All vehicle rates are configured in veh/h and converted to veh/s
//! internally; service integrates over green seconds, arrivals over dt.

use crate::error::{Error, Result};
use crate::linalg::{mat4_mul_vec4, mat4x2_mul_vec2, vec4_add, Mat4, Mat4x2, Vec4};
use crate::scalar::{per_second, Scalar};

/// Queue regime switch, fixed for a whole cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Demand below saturation flow: the switched recursion drops the queue
    /// memory term.
    Unsaturated,
    /// Demand at or above saturation flow: the queue carries over.
    Saturated,
}

impl Regime {
    pub fn coeff<S: Scalar>(self) -> S {
        match self {
            Regime::Unsaturated => S::zero(),
            Regime::Saturated => S::one(),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Regime::Unsaturated => 0,
            Regime::Saturated => 1,
        }
    }
}

/// Static per-arm flow parameters.
#[derive(Debug, Clone, Copy)]
pub struct ArmParams<S: Scalar> {
    /// Mean arrival rate, veh/h.
    pub intensity_vph: S,
    /// Maximum discharge rate through the stop line, veh/h.
    pub saturation_vph: S,
    /// Occupancy contribution per queued vehicle.
    pub k: S,
    /// Occupancy decay coefficient.
    pub beta: S,
    /// Occupancy offset per step.
    pub lambda: S,
}

/// Per-arm dynamic state.
#[derive(Debug, Clone, Copy)]
pub struct ArmState<S: Scalar> {
    /// Queue length, vehicles. Never negative.
    pub queue: S,
    /// Occupancy fraction in [0, 1].
    pub occupancy: S,
    /// Regime switch for the current cycle.
    pub delta: Regime,
}

/// Full plant state: two representative arms (one per non-conflicting pair).
#[derive(Debug, Clone, Copy)]
pub struct IntersectionState<S: Scalar> {
    pub pairs: [ArmState<S>; 2],
    /// Simulation clock, seconds; always an exact multiple of dt.
    pub sim_time: S,
    /// Step length, seconds.
    pub dt: S,
    /// Left-turn ratio. Carried only so the observation matrix can be built
    /// in full generality; shipped scenarios fix it at zero.
    pub alpha: S,
}

/// Green-time allocation and control-law constants.
#[derive(Debug, Clone, Copy)]
pub struct ControlState<S: Scalar> {
    /// Per-pair green durations within one cycle, seconds.
    pub green: [S; 2],
    /// Cycle time, seconds.
    pub cycle_time: S,
    /// Occupancy-difference scaling factor.
    pub f: S,
    /// Lower bound on each green duration, seconds.
    pub min_green: S,
}

/// Process-noise realization for one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProcessNoise<S: Scalar> {
    /// Additive queue disturbance, vehicles.
    pub queue: [S; 2],
    /// Additive occupancy disturbance, fraction.
    pub occupancy: [S; 2],
}

impl<S: Scalar> ProcessNoise<S> {
    pub fn zero() -> Self {
        ProcessNoise {
            queue: [S::zero(); 2],
            occupancy: [S::zero(); 2],
        }
    }
}

/// A value that may have been clamped to its domain, with the correction
/// that the clamp applied (post-clamp minus pre-clamp).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped<S: Scalar> {
    pub value: S,
    pub clamped: bool,
    pub correction: S,
}

impl<S: Scalar> Clamped<S> {
    fn exact(value: S) -> Self {
        Clamped {
            value,
            clamped: false,
            correction: S::zero(),
        }
    }
}

fn require_nonnegative<S: Scalar>(name: &str, v: S) -> Result<()> {
    if v < S::zero() || !v.is_finite() {
        return Err(Error::Precondition(format!(
            "{name} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// One switched queue update: max(0, d*Q - [d*S + (1-d)*I]*z + I*dt), rates
/// taken per second. Clamping to zero is reported, not silently applied.
pub fn queue_step_scalar<S: Scalar>(
    q: S,
    delta: Regime,
    saturation_vph: S,
    intensity_vph: S,
    z: S,
    dt: S,
) -> Result<Clamped<S>> {
    require_nonnegative("queue", q)?;
    require_nonnegative("saturation_vph", saturation_vph)?;
    require_nonnegative("intensity_vph", intensity_vph)?;
    require_nonnegative("green z", z)?;
    require_nonnegative("dt", dt)?;
    let d = delta.coeff::<S>();
    let service_rate = d * per_second(saturation_vph) + (S::one() - d) * per_second(intensity_vph);
    let raw = d * q - service_rate * z + per_second(intensity_vph) * dt;
    if raw < S::zero() {
        Ok(Clamped {
            value: S::zero(),
            clamped: true,
            correction: -raw,
        })
    } else {
        Ok(Clamped::exact(raw))
    }
}

/// One occupancy update: clamp(k*Q + beta*O + lambda, 0, 1).
pub fn occupancy_step_scalar<S: Scalar>(q: S, o: S, k: S, beta: S, lambda: S) -> Result<Clamped<S>> {
    if o < S::zero() || o > S::one() || !o.is_finite() {
        return Err(Error::Precondition(format!(
            "occupancy must lie in [0, 1], got {o}"
        )));
    }
    let raw = k * q + beta * o + lambda;
    Ok(clamp_unit(raw))
}

fn clamp_unit<S: Scalar>(raw: S) -> Clamped<S> {
    if raw < S::zero() {
        Clamped {
            value: S::zero(),
            clamped: true,
            correction: -raw,
        }
    } else if raw > S::one() {
        Clamped {
            value: S::one(),
            clamped: true,
            correction: S::one() - raw,
        }
    } else {
        Clamped::exact(raw)
    }
}

/// Regime decision at a cycle boundary: unsaturated only while demand stays
/// strictly below the saturation flow. Equality counts as saturated.
pub fn update_delta<S: Scalar>(params: &ArmParams<S>, cycle_mean_intensity: S) -> Regime {
    if cycle_mean_intensity < params.saturation_vph {
        Regime::Unsaturated
    } else {
        Regime::Saturated
    }
}

/// State-transition matrix for the stacked state [Q1, Q2, O1, O2].
pub fn build_a<S: Scalar>(params: &[ArmParams<S>; 2], deltas: [Regime; 2]) -> Mat4<S> {
    let z = S::zero();
    let d1 = deltas[0].coeff();
    let d2 = deltas[1].coeff();
    [
        [d1, z, z, z],
        [z, d2, z, z],
        [params[0].k, z, params[0].beta, z],
        [z, params[1].k, z, params[1].beta],
    ]
}

/// Input matrix mapping green seconds to served vehicles (per-second rates).
pub fn build_b<S: Scalar>(params: &[ArmParams<S>; 2], deltas: [Regime; 2]) -> Mat4x2<S> {
    let z = S::zero();
    let col = |p: &ArmParams<S>, d: S| -> S {
        -(d * per_second(p.saturation_vph) + (S::one() - d) * per_second(p.intensity_vph))
    };
    [
        [col(&params[0], deltas[0].coeff()), z],
        [z, col(&params[1], deltas[1].coeff())],
        [z, z],
        [z, z],
    ]
}

/// Constant drive: arrivals integrated over dt on the queue rows, occupancy
/// offsets on the occupancy rows.
pub fn build_f<S: Scalar>(params: &[ArmParams<S>; 2], dt: S) -> Vec4<S> {
    [
        per_second(params[0].intensity_vph) * dt,
        per_second(params[1].intensity_vph) * dt,
        params[0].lambda,
        params[1].lambda,
    ]
}

/// Observation matrix. The flow rows carry only left-turn cross terms, so
/// with alpha = 0 they vanish; see [`observe`] for how dispatched-vehicle
/// outputs are actually emitted.
pub fn build_c<S: Scalar>(alpha: S) -> Mat4<S> {
    let z = S::zero();
    let o = S::one();
    [
        [z, -alpha, z, z],
        [alpha, z, z, z],
        [z, z, o, z],
        [z, z, z, o],
    ]
}

/// Observation offset -C * [Q1 + a1, Q2 + a2, 0, 0].
pub fn build_h<S: Scalar>(c: &Mat4<S>, prev_queues: [S; 2], arrivals: [S; 2]) -> Vec4<S> {
    let v = [
        prev_queues[0] + arrivals[0],
        prev_queues[1] + arrivals[1],
        S::zero(),
        S::zero(),
    ];
    let cv = mat4_mul_vec4(c, &v);
    [-cv[0], -cv[1], -cv[2], -cv[3]]
}

/// Outcome of one literal switched matrix step.
#[derive(Debug, Clone)]
pub struct DynamicsStep<S: Scalar> {
    pub state: IntersectionState<S>,
    pub queue: [Clamped<S>; 2],
    pub occupancy: [Clamped<S>; 2],
}

/// Advances the stacked state one step through the switched matrices built
/// from the current regimes. `green_in_step` is the green time each pair
/// actually receives within this step, in seconds.
pub fn step_dynamics<S: Scalar>(
    state: &IntersectionState<S>,
    params: &[ArmParams<S>; 2],
    green_in_step: [S; 2],
    noise: &ProcessNoise<S>,
) -> Result<DynamicsStep<S>> {
    let deltas = [state.pairs[0].delta, state.pairs[1].delta];
    let a = build_a(params, deltas);
    let b = build_b(params, deltas);
    let f = build_f(params, state.dt);
    let x = [
        state.pairs[0].queue,
        state.pairs[1].queue,
        state.pairs[0].occupancy,
        state.pairs[1].occupancy,
    ];
    let p = [
        noise.queue[0],
        noise.queue[1],
        noise.occupancy[0],
        noise.occupancy[1],
    ];
    let raw = vec4_add(
        &vec4_add(
            &vec4_add(&mat4_mul_vec4(&a, &x), &mat4x2_mul_vec2(&b, &green_in_step)),
            &f,
        ),
        &p,
    );
    for (i, v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return numeric_fault(state, ["Q1", "Q2", "O1", "O2"][i], *v);
        }
    }
    let q = [clamp_queue(raw[0]), clamp_queue(raw[1])];
    let o = [clamp_unit(raw[2]), clamp_unit(raw[3])];
    let mut next = *state;
    for i in 0..2 {
        next.pairs[i].queue = q[i].value;
        next.pairs[i].occupancy = o[i].value;
    }
    next.sim_time = state.sim_time + state.dt;
    Ok(DynamicsStep {
        state: next,
        queue: q,
        occupancy: o,
    })
}

fn clamp_queue<S: Scalar>(raw: S) -> Clamped<S> {
    if raw < S::zero() {
        Clamped {
            value: S::zero(),
            clamped: true,
            correction: -raw,
        }
    } else {
        Clamped::exact(raw)
    }
}

fn numeric_fault<S: Scalar, T>(state: &IntersectionState<S>, quantity: &str, v: S) -> Result<T> {
    Err(Error::NumericFault {
        step: (state.sim_time / state.dt).to_f64_lossy().round() as u64,
        quantity: quantity.to_string(),
        value: v.to_f64_lossy(),
        snapshot: format!("{state:?}"),
    })
}

/// Outcome of one harness plant step, with exact flow bookkeeping.
///
/// Per arm and step the identity `queue_next + dispatched + spill == supply`
/// holds, where `supply = (queue + arrivals) + noise` evaluated in exactly
/// that association order. `dispatched` is nonnegative; `spill` is nonzero
/// only when negative process noise pushes the supply itself below zero.
#[derive(Debug, Clone)]
pub struct PlantStep<S: Scalar> {
    pub state: IntersectionState<S>,
    /// Vehicles that left the stop line this step, per pair.
    pub dispatched: [S; 2],
    /// Literal signed flow (queue delta plus arrivals), logged alongside the
    /// nonnegative dispatched count.
    pub signed_flow: [S; 2],
    /// True when the queue emptied before the step's service capacity was
    /// exhausted.
    pub queue_emptied: [bool; 2],
    /// Negative-supply correction (zero in noise-free runs).
    pub spill: [S; 2],
    pub occupancy: [Clamped<S>; 2],
}

/// Per-dt plant refinement used by the simulation harness: carry the standing
/// queue, add arrivals and noise, serve at most `saturation * green_in_step`.
///
/// `arrivals` is the realized vehicle count for this step (fluid or drawn),
/// so the same bookkeeping covers both arrival modes.
pub fn step_plant<S: Scalar>(
    state: &IntersectionState<S>,
    params: &[ArmParams<S>; 2],
    green_in_step: [S; 2],
    arrivals: [S; 2],
    noise: &ProcessNoise<S>,
) -> Result<PlantStep<S>> {
    let mut next = *state;
    let mut dispatched = [S::zero(); 2];
    let mut signed_flow = [S::zero(); 2];
    let mut queue_emptied = [false; 2];
    let mut spill = [S::zero(); 2];
    let mut occupancy = [Clamped::exact(S::zero()); 2];
    for i in 0..2 {
        let arm = &state.pairs[i];
        let p = &params[i];
        // Association order is load-bearing: conservation tests recompute
        // this exact expression from logged columns.
        let supply = (arm.queue + arrivals[i]) + noise.queue[i];
        if !supply.is_finite() {
            return numeric_fault(state, if i == 0 { "Q1" } else { "Q2" }, supply);
        }
        let capacity = per_second(p.saturation_vph) * green_in_step[i];
        let (q_next, d, s, emptied) = if supply < S::zero() {
            (S::zero(), S::zero(), supply, true)
        } else if capacity >= supply {
            // Queue clears within the green window.
            (S::zero(), supply, S::zero(), true)
        } else {
            let q = supply - capacity;
            (q, supply - q, S::zero(), false)
        };
        let o = occupancy_step_scalar(
            arm.queue,
            arm.occupancy,
            p.k,
            p.beta,
            p.lambda + noise.occupancy[i],
        )?;
        if !o.value.is_finite() {
            return numeric_fault(state, if i == 0 { "O1" } else { "O2" }, o.value);
        }
        next.pairs[i].queue = q_next;
        next.pairs[i].occupancy = o.value;
        dispatched[i] = d;
        signed_flow[i] = (q_next - arm.queue) + arrivals[i];
        queue_emptied[i] = emptied;
        spill[i] = s;
        occupancy[i] = o;
    }
    next.sim_time = state.sim_time + state.dt;
    Ok(PlantStep {
        state: next,
        dispatched,
        signed_flow,
        queue_emptied,
        spill,
        occupancy,
    })
}

/// Sensor-side observation for one completed step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<S: Scalar> {
    /// Nonnegative dispatched-vehicle counts: -(Q_next - Q_prev) + arrivals.
    pub dispatched: [S; 2],
    /// The literal signed form (Q_next - Q_prev) + arrivals.
    pub signed_flow: [S; 2],
    /// Measured occupancy after additive noise and unit clamping.
    pub occupancy_meas: [S; 2],
    /// Realized measurement-noise draws.
    pub meas_noise: [S; 2],
}

/// Builds the observation for the step prev -> next. The flow rows of the
/// observation matrix are zero at alpha = 0 (they carry only left-turn cross
/// terms), so dispatched counts are emitted from the queue balance directly.
pub fn observe<S: Scalar>(
    prev: &IntersectionState<S>,
    next: &IntersectionState<S>,
    arrivals: [S; 2],
    meas_noise: [S; 2],
) -> Observation<S> {
    let c = build_c(prev.alpha);
    let h = build_h(
        &c,
        [prev.pairs[0].queue, prev.pairs[1].queue],
        arrivals,
    );
    let x_next = [
        next.pairs[0].queue,
        next.pairs[1].queue,
        next.pairs[0].occupancy,
        next.pairs[1].occupancy,
    ];
    let cx = mat4_mul_vec4(&c, &x_next);
    let mut dispatched = [S::zero(); 2];
    let mut signed_flow = [S::zero(); 2];
    let mut occupancy_meas = [S::zero(); 2];
    for i in 0..2 {
        let dq = next.pairs[i].queue - prev.pairs[i].queue;
        let y = -dq + arrivals[i];
        dispatched[i] = if y < S::zero() { S::zero() } else { y };
        signed_flow[i] = dq + arrivals[i];
        // Occupancy rows of C are identity; cx + h reduces to the occupancy
        // itself, kept in matrix form so nonzero alpha stays representable.
        occupancy_meas[i] = clamp_unit(cx[2 + i] + h[2 + i] + meas_noise[i]).value;
    }
    Observation {
        dispatched,
        signed_flow,
        occupancy_meas,
        meas_noise,
    }
}

/// Multiplicative green-time update from per-cycle occupancy differences,
/// floored at min_green and constrained to the cycle budget.
pub fn control_update<S: Scalar>(
    controls: &ControlState<S>,
    delta_o: [S; 2],
) -> Result<ControlState<S>> {
    for d in delta_o {
        if !d.is_finite() {
            return Err(Error::Precondition(format!(
                "occupancy difference must be finite, got {d}"
            )));
        }
    }
    let mut z = [S::zero(); 2];
    for i in 0..2 {
        let scaled = controls.green[i] * (S::one() + controls.f * delta_o[i]);
        z[i] = if scaled < controls.min_green {
            controls.min_green
        } else {
            scaled
        };
    }
    let (z1, z2) = enforce_cycle_budget(z[0], z[1], controls.cycle_time, controls.min_green)?;
    Ok(ControlState {
        green: [z1, z2],
        ..*controls
    })
}

/// Caps the green-time sum at the cycle length by proportional rescale.
/// The second component is derived as the budget remainder so the pair sums
/// to the cycle time without a second rounding, then nudged down if the
/// floating sum still overshoots by an ulp.
pub fn enforce_cycle_budget<S: Scalar>(
    z1: S,
    z2: S,
    cycle_time: S,
    min_green: S,
) -> Result<(S, S)> {
    if min_green + min_green > cycle_time {
        return Err(Error::Config(format!(
            "min_green {min_green} twice exceeds cycle_time {cycle_time}"
        )));
    }
    if z1 < S::zero() || z2 < S::zero() {
        return Err(Error::Precondition(format!(
            "green times must be nonnegative, got ({z1}, {z2})"
        )));
    }
    let sum = z1 + z2;
    if sum <= cycle_time {
        return Ok((z1, z2));
    }
    let scale = cycle_time / sum;
    let mut a = z1 * scale;
    if a < min_green {
        a = min_green;
    }
    let mut b = cycle_time - a;
    if b < min_green {
        b = min_green;
        a = cycle_time - b;
    }
    while a + b > cycle_time {
        b = b.next_down();
    }
    Ok((a, b))
}

/// Green seconds each pair receives within the step starting `tau` seconds
/// into the cycle. Pair 0 holds [0, z1), pair 1 holds [z1, z1+z2), and any
/// remaining budget is slack at the end of the cycle.
pub fn green_in_step<S: Scalar>(tau: S, dt: S, green: [S; 2]) -> [S; 2] {
    let z1 = green[0];
    let z12 = green[0] + green[1];
    let end = tau + dt;
    let o1 = clamp_nonneg(min(end, z1) - tau);
    let o2 = clamp_nonneg(min(end, z12) - max(tau, z1));
    [o1, o2]
}

fn min<S: Scalar>(a: S, b: S) -> S {
    if a < b {
        a
    } else {
        b
    }
}

fn max<S: Scalar>(a: S, b: S) -> S {
    if a > b {
        a
    } else {
        b
    }
}

fn clamp_nonneg<S: Scalar>(v: S) -> S {
    if v < S::zero() {
        S::zero()
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(intensity: f64, k: f64, beta: f64, lambda: f64) -> ArmParams<f64> {
        ArmParams {
            intensity_vph: intensity,
            saturation_vph: 1800.0,
            k,
            beta,
            lambda,
        }
    }

    fn state(q: [f64; 2], o: [f64; 2], deltas: [Regime; 2], dt: f64) -> IntersectionState<f64> {
        IntersectionState {
            pairs: [
                ArmState {
                    queue: q[0],
                    occupancy: o[0],
                    delta: deltas[0],
                },
                ArmState {
                    queue: q[1],
                    occupancy: o[1],
                    delta: deltas[1],
                },
            ],
            sim_time: 0.0,
            dt,
            alpha: 0.0,
        }
    }

    fn assert_close(a: f64, b: f64, rel: f64) {
        let scale = a.abs().max(b.abs()).max(1e-30);
        assert!(
            (a - b).abs() <= rel * scale,
            "expected {b}, got {a} (rel tol {rel})"
        );
    }

    #[test]
    fn queue_step_saturated_example() {
        // 10 - (1800/3600)*10 + (700/3600)*10.
        let r = queue_step_scalar(10.0, Regime::Saturated, 1800.0, 700.0, 10.0, 10.0).unwrap();
        assert_close(r.value, 10.0 - 5.0 + 7000.0 / 3600.0, 1e-14);
        assert_close(r.value, 6.944444444444445, 1e-12);
        assert!(!r.clamped);
    }

    #[test]
    fn queue_step_no_green_no_arrivals_is_identity() {
        let r = queue_step_scalar(5.0, Regime::Saturated, 1800.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(r.value, 5.0);
        assert!(!r.clamped);
    }

    #[test]
    fn queue_step_clamps_at_zero_and_reports() {
        let r = queue_step_scalar(0.0, Regime::Saturated, 3600.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.clamped);
        assert_close(r.correction, 10.0, 1e-14);
    }

    #[test]
    fn queue_step_rejects_negative_inputs() {
        assert!(queue_step_scalar(-1.0, Regime::Saturated, 1800.0, 700.0, 1.0, 1.0).is_err());
        assert!(queue_step_scalar(1.0, Regime::Saturated, 1800.0, -700.0, 1.0, 1.0).is_err());
        assert!(queue_step_scalar(1.0, Regime::Saturated, 1800.0, 700.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn queue_step_matches_fine_grained_integration_when_unclamped() {
        // The recursion is linear away from the clamp, so integrating the
        // same rates in 1000 substeps must land on the one-shot value.
        let (q0, s, i, z, dt) = (10.0, 1800.0, 700.0, 10.0, 10.0);
        let one_shot = queue_step_scalar(q0, Regime::Saturated, s, i, z, dt)
            .unwrap()
            .value;
        let n = 1000;
        let mut q = q0;
        for _ in 0..n {
            q = q - (s / 3600.0) * (z / n as f64) + (i / 3600.0) * (dt / n as f64);
        }
        assert_close(one_shot, q, 1e-9);
    }

    #[test]
    fn occupancy_step_examples() {
        let r = occupancy_step_scalar(0.0, 0.4, 0.01, 1.0, 0.0).unwrap();
        assert_eq!(r.value, 0.4);
        let r = occupancy_step_scalar(10.0, 0.5, 0.01, 0.9, 0.02).unwrap();
        assert_close(r.value, 0.57, 1e-12);
        let r = occupancy_step_scalar(200.0, 0.9, 0.01, 0.9, 0.1).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.clamped);
    }

    #[test]
    fn occupancy_step_rejects_out_of_range() {
        assert!(occupancy_step_scalar(1.0, 1.5, 0.01, 0.9, 0.0).is_err());
        assert!(occupancy_step_scalar(1.0, -0.1, 0.01, 0.9, 0.0).is_err());
    }

    #[test]
    fn delta_switch_boundary() {
        let p = params(700.0, 0.01, 0.9, 0.02);
        assert_eq!(update_delta(&p, 700.0), Regime::Unsaturated);
        assert_eq!(update_delta(&p, 1800.0), Regime::Saturated);
        assert_eq!(update_delta(&p, 2400.0), Regime::Saturated);
    }

    #[test]
    fn matrix_step_reduces_to_scalar_recursions() {
        let ps = [params(700.0, 0.01, 0.9, 0.02), params(300.0, 0.004, 0.85, 0.01)];
        for deltas in [
            [Regime::Saturated, Regime::Saturated],
            [Regime::Unsaturated, Regime::Saturated],
            [Regime::Unsaturated, Regime::Unsaturated],
        ] {
            let st = state([10.0, 4.0], [0.5, 0.3], deltas, 1.0);
            let z = [0.6, 0.2];
            let got = step_dynamics(&st, &ps, z, &ProcessNoise::zero()).unwrap();
            for i in 0..2 {
                let q = queue_step_scalar(
                    st.pairs[i].queue,
                    deltas[i],
                    ps[i].saturation_vph,
                    ps[i].intensity_vph,
                    z[i],
                    st.dt,
                )
                .unwrap();
                let o = occupancy_step_scalar(
                    st.pairs[i].queue,
                    st.pairs[i].occupancy,
                    ps[i].k,
                    ps[i].beta,
                    ps[i].lambda,
                )
                .unwrap();
                assert_close(got.state.pairs[i].queue, q.value, 1e-12);
                assert_close(got.state.pairs[i].occupancy, o.value, 1e-12);
            }
        }
    }

    #[test]
    fn matrix_step_zero_input_keeps_queues() {
        let ps = [params(0.0, 0.01, 0.9, 0.02), params(0.0, 0.01, 0.9, 0.02)];
        let st = state(
            [7.0, 3.0],
            [0.4, 0.2],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        let got = step_dynamics(&st, &ps, [0.0, 0.0], &ProcessNoise::zero()).unwrap();
        assert_eq!(got.state.pairs[0].queue, 7.0);
        assert_eq!(got.state.pairs[1].queue, 3.0);
        assert_close(got.state.pairs[0].occupancy, 0.01 * 7.0 + 0.9 * 0.4 + 0.02, 1e-14);
        assert_eq!(got.state.sim_time, 1.0);
    }

    #[test]
    fn symmetric_arms_stay_symmetric() {
        let ps = [params(700.0, 0.01, 0.9, 0.02), params(700.0, 0.01, 0.9, 0.02)];
        let mut st = state(
            [2.0, 2.0],
            [0.3, 0.3],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        for _ in 0..200 {
            let got = step_plant(&st, &ps, [0.4, 0.4], [0.19, 0.19], &ProcessNoise::zero()).unwrap();
            st = got.state;
            assert_eq!(st.pairs[0].queue, st.pairs[1].queue);
            assert_eq!(st.pairs[0].occupancy, st.pairs[1].occupancy);
        }
    }

    #[test]
    fn plant_step_matches_saturated_matrix_step_off_clamp() {
        let ps = [params(700.0, 0.01, 0.9, 0.02), params(300.0, 0.004, 0.85, 0.01)];
        let st = state(
            [10.0, 4.0],
            [0.5, 0.3],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        let z = [0.6, 0.2];
        let arrivals = [700.0 / 3600.0 * 1.0, 300.0 / 3600.0 * 1.0];
        let plant = step_plant(&st, &ps, z, arrivals, &ProcessNoise::zero()).unwrap();
        let matrix = step_dynamics(&st, &ps, z, &ProcessNoise::zero()).unwrap();
        for i in 0..2 {
            assert_close(plant.state.pairs[i].queue, matrix.state.pairs[i].queue, 1e-12);
            assert_close(
                plant.state.pairs[i].occupancy,
                matrix.state.pairs[i].occupancy,
                1e-12,
            );
        }
    }

    #[test]
    fn plant_step_books_every_vehicle() {
        let ps = [params(700.0, 0.01, 0.9, 0.02), params(300.0, 0.004, 0.85, 0.01)];
        // Service-limited, clamp-at-empty, and negative-noise cases.
        let cases: [(f64, f64, f64, f64); 3] = [
            (10.0, 0.2, 0.4, 0.0),
            (0.1, 0.0, 1.0, 0.0),
            (0.1, 0.0, 0.0, -0.5),
        ];
        for (q0, a, z, pq) in cases {
            let st = state(
                [q0, 1.0],
                [0.3, 0.2],
                [Regime::Saturated, Regime::Saturated],
                1.0,
            );
            let noise = ProcessNoise {
                queue: [pq, 0.0],
                occupancy: [0.0, 0.0],
            };
            let got = step_plant(&st, &ps, [z, 0.0], [a, 0.0], &noise).unwrap();
            let supply = (q0 + a) + pq;
            assert_eq!(
                got.state.pairs[0].queue + got.dispatched[0] + got.spill[0],
                supply
            );
            assert!(got.dispatched[0] >= 0.0);
        }
    }

    #[test]
    fn observe_reports_dispatched_and_signed_flow() {
        let prev = state(
            [10.0, 2.0],
            [0.5, 0.2],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        let mut next = prev;
        next.pairs[0].queue = 7.0; // dQ = -3
        next.sim_time = 1.0;
        let obs = observe(&prev, &next, [1.0, 0.0], [0.0, 0.0]);
        assert_eq!(obs.dispatched[0], 4.0);
        assert_eq!(obs.signed_flow[0], -2.0);
        assert_eq!(obs.occupancy_meas[0], 0.5);
    }

    #[test]
    fn observe_static_plant_is_silent() {
        let prev = state(
            [3.0, 3.0],
            [0.4, 0.4],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        let mut next = prev;
        next.sim_time = 1.0;
        let obs = observe(&prev, &next, [0.0, 0.0], [0.0, 0.0]);
        assert_eq!(obs.dispatched, [0.0, 0.0]);
        assert_eq!(obs.occupancy_meas, [0.4, 0.4]);
    }

    #[test]
    fn observe_clamps_noisy_occupancy() {
        let prev = state(
            [0.0, 0.0],
            [0.95, 0.05],
            [Regime::Saturated, Regime::Saturated],
            1.0,
        );
        let mut next = prev;
        next.sim_time = 1.0;
        let obs = observe(&prev, &next, [0.0, 0.0], [0.2, -0.2]);
        assert_eq!(obs.occupancy_meas, [1.0, 0.0]);
    }

    #[test]
    fn left_turn_rows_vanish_at_zero_alpha() {
        let c = build_c(0.0_f64);
        assert_eq!(c[0], [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c[1], [0.0, 0.0, 0.0, 0.0]);
        let h = build_h(&c, [5.0, 5.0], [1.0, 1.0]);
        assert_eq!(h, [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn control_update_example() {
        let c = ControlState {
            green: [30.0, 20.0],
            cycle_time: 60.0,
            f: 0.7,
            min_green: 0.0,
        };
        let next = control_update(&c, [-0.10, 0.0]).unwrap();
        assert_close(next.green[0], 27.9, 1e-12);
        assert_eq!(next.green[1], 20.0);
    }

    #[test]
    fn control_update_zero_difference_is_fixed_point() {
        let c = ControlState {
            green: [23.371, 11.913],
            cycle_time: 60.0,
            f: 0.7,
            min_green: 0.0,
        };
        let next = control_update(&c, [0.0, 0.0]).unwrap();
        assert_eq!(next.green, c.green);
    }

    #[test]
    fn control_update_floors_at_min_green() {
        let c = ControlState {
            green: [5.0, 20.0],
            cycle_time: 60.0,
            f: 0.7,
            min_green: 4.0,
        };
        let next = control_update(&c, [-0.9, 0.0]).unwrap();
        assert_eq!(next.green[0], 4.0);
    }

    #[test]
    fn budget_examples() {
        assert_eq!(enforce_cycle_budget(20.0, 30.0, 60.0, 0.0).unwrap(), (20.0, 30.0));
        assert_eq!(enforce_cycle_budget(40.0, 40.0, 60.0, 0.0).unwrap(), (30.0, 30.0));
        assert_eq!(enforce_cycle_budget(0.0, 0.0, 60.0, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn budget_rejects_infeasible_min_green() {
        assert!(matches!(
            enforce_cycle_budget(10.0, 10.0, 60.0, 31.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn budget_sum_never_exceeds_cycle() {
        let mut z1 = 17.3;
        let mut z2 = 55.9;
        for _ in 0..500 {
            let (a, b) = enforce_cycle_budget(z1, z2, 60.0, 0.0).unwrap();
            assert!(a + b <= 60.0, "{a} + {b} > 60");
            z1 = a * 1.618 + 0.1;
            z2 = b * 1.414 + 7.7;
        }
    }

    #[test]
    fn green_window_layout() {
        let g = [20.0, 30.0];
        assert_eq!(green_in_step(0.0, 1.0, g), [1.0, 0.0]);
        assert_eq!(green_in_step(19.0, 1.0, g), [1.0, 0.0]);
        assert_eq!(green_in_step(20.0, 1.0, g), [0.0, 1.0]);
        assert_eq!(green_in_step(49.0, 1.0, g), [0.0, 1.0]);
        assert_eq!(green_in_step(50.0, 1.0, g), [0.0, 0.0]);
        // Fractional allocations split one step between pair and slack.
        let g: [f64; 2] = [19.5, 30.25];
        assert_eq!(green_in_step(19.0, 1.0, g), [0.5, 0.5]);
        let got = green_in_step(49.0, 1.0, g);
        assert!((got[1] - 0.75).abs() < 1e-12);
    }
}
