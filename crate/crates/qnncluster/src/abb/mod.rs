//! Closed-loop adaptive body-biasing simulation: a calibrated path-delay
//! model, a sampled path population with shadow-register pre-error monitors
//! on the most critical endpoints, a bias-generator state machine with a
//! settle pipeline, and the cluster power model.


use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{AbbCalib, Calibration, DelayCalib, PowerCalib};

/// Frequency the minimum-voltage calibration anchors refer to.
const ANCHOR_FREQ_HZ: f64 = 400.0e6;

/// Critical-path delay law d(Vdd, Vbb) = d0 · Vdd / (Vdd − Vth0 + k_bb·Vbb)^alpha.
/// All four parameters are solved from the calibration anchors, which the
/// model therefore reproduces exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub d0: f64,
    pub vth0: f64,
    pub k_bb: f64,
    pub alpha: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum AbbError {
    #[error("delay anchors admit no threshold solution in (0, {0})")]
    NoThreshold(f64),
    #[error("no feasible supply in [{0}, {1}] at {2:.0} Hz")]
    NoFeasibleVdd(f64, f64, f64),
}

impl DelayModel {
    /// Solves (Vth0, alpha, d0) from the three frequency/voltage anchors by
    /// bisection, then k_bb from the minimum-voltage-with-bias anchor.
    pub fn calibrate(delay: &DelayCalib, abb: &AbbCalib) -> Result<Self, AbbError> {
        let (v1, d1) = (delay.vdd_nominal, 1.0 / delay.fmax_hz_at_nominal);
        let (v2, d2) = (delay.vdd_low, 1.0 / delay.fmax_hz_at_low);
        let (v3, d3) = (delay.min_vdd_no_bias_at_400mhz, 1.0 / ANCHOR_FREQ_HZ);
        let a3 = (d3 * v1 / (d1 * v3)).ln(); // alpha·ln((v1−vth)/(v3−vth))
        let a2 = (d2 * v1 / (d1 * v2)).ln(); // alpha·ln((v1−vth)/(v2−vth))
        let h = |vth: f64| {
            a3 * ((v1 - vth) / (v2 - vth)).ln() - a2 * ((v1 - vth) / (v3 - vth)).ln()
        };
        let (mut lo, mut hi) = (1e-4, v2 - 1e-4);
        if h(lo) * h(hi) > 0.0 {
            return Err(AbbError::NoThreshold(v2));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(lo) * h(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let vth0 = 0.5 * (lo + hi);
        let alpha = a3 / ((v1 - vth0) / (v3 - vth0)).ln();
        let d0 = d1 * (v1 - vth0).powf(alpha) / v1;
        // k_bb: full forward bias makes the with-bias minimum voltage meet
        // the anchor period (times the configured safety factor)
        let v4 = delay.min_vdd_full_bias_at_400mhz;
        let target = (delay.bias_solve_margin * d0 * v4 / d3).powf(1.0 / alpha);
        let k_bb = (target - (v4 - vth0)) / abb.vbb_max;
        Ok(DelayModel { d0, vth0, k_bb, alpha })
    }

    /// Slowest-path delay in seconds.
    pub fn delay(&self, vdd: f64, vbb: f64) -> f64 {
        self.d0 * vdd / (vdd - self.vth0 + self.k_bb * vbb).powf(self.alpha)
    }

    pub fn fmax(&self, vdd: f64, vbb: f64) -> f64 {
        1.0 / self.delay(vdd, vbb)
    }
}

/// Sampled per-path nominal delays relative to the slowest path, sorted
/// descending with the maximum normalized to exactly 1 so the calibration
/// anchors stay exact. The monitored subset is the top slice by delay.
#[derive(Debug, Clone)]
pub struct PathPopulation {
    pub rel: Vec<f64>,
    pub monitored: usize,
}

impl PathPopulation {
    pub fn generate(abb: &AbbCalib) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(abb.population_seed);
        let mut rel: Vec<f64> = (0..abb.path_count)
            .map(|_| {
                // Box-Muller standard normal
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (abb.path_sigma * z).exp()
            })
            .collect();
        rel.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let max = rel[0];
        for r in rel.iter_mut() {
            *r /= max;
        }
        let monitored = ((abb.path_count as f64 * abb.monitored_fraction).ceil() as usize)
            .clamp(1, abb.path_count);
        PathPopulation { rel, monitored }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Detect {
    pub pre_error: bool,
    pub error: bool,
}

/// One cycle of endpoint monitoring: `slowest` is the current delay of the
/// relative-1.0 path, `active[i]` whether path i toggles this cycle. A
/// pre-error fires when a monitored active path lands in (period − δ,
/// period]; a real error when any active path exceeds the period.
pub fn detect(
    pop: &PathPopulation,
    active: &[bool],
    slowest: f64,
    period: f64,
    delta: f64,
) -> Detect {
    let mut out = Detect::default();
    // relative guard so a path sitting exactly on the period (a calibration
    // anchor) is not pushed over the edge by rounding in powf
    let limit = period * (1.0 + 1e-9);
    for (i, &r) in pop.rel.iter().enumerate() {
        let d = slowest * r;
        if d <= period - delta {
            break; // sorted: nothing below the shadow window can fire
        }
        if !active[i] {
            continue;
        }
        if d > limit {
            out.error = true;
        } else if i < pop.monitored {
            out.pre_error = true;
        }
    }
    out
}

/// Bias-generator state machine. Bias moves by one step at a time through a
/// linear ramp lasting `settle_cycles`; a pre-error starts an upward ramp,
/// a full quiet relax window steps back down.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    from: f64,
    target: f64,
    settle_left: u64,
    quiet: u64,
}

impl Controller {
    pub fn new(initial_vbb: f64) -> Self {
        Controller { from: initial_vbb, target: initial_vbb, settle_left: 0, quiet: 0 }
    }

    /// Instantaneous bias voltage, interpolated along the settle ramp.
    pub fn vbb(&self, abb: &AbbCalib) -> f64 {
        if self.settle_left == 0 {
            self.target
        } else {
            let frac = self.settle_left as f64 / abb.settle_cycles as f64;
            self.target - (self.target - self.from) * frac
        }
    }

    pub fn step(&mut self, pre_error: bool, abb: &AbbCalib) {
        if self.settle_left > 0 {
            self.settle_left -= 1;
            if self.settle_left == 0 {
                self.from = self.target;
            }
        }
        if pre_error {
            self.quiet = 0;
            if self.settle_left == 0 && self.target < abb.vbb_max - 1e-12 {
                self.from = self.target;
                self.target = (self.target + abb.vbb_step).min(abb.vbb_max);
                self.settle_left = abb.settle_cycles;
            }
        } else {
            self.quiet += 1;
            if self.quiet >= abb.relax_window_cycles
                && self.settle_left == 0
                && self.target > 1e-12
            {
                self.from = self.target;
                self.target = (self.target - abb.vbb_step).max(0.0);
                self.settle_left = abb.settle_cycles;
                self.quiet = 0;
            }
        }
    }
}

/// Cluster power in milliwatts: activity-scaled dynamic CV²f plus leakage
/// growing with supply and exponentially with forward body bias. Reproduces
/// the nominal-point calibration anchor exactly at activity 1.
pub fn power(p: &PowerCalib, vdd: f64, freq_hz: f64, vbb: f64, activity: f64) -> f64 {
    let dyn_nominal = p.total_mw_nominal * p.dynamic_fraction_nominal;
    let leak_nominal = p.total_mw_nominal - dyn_nominal;
    let dynamic = dyn_nominal * activity * (freq_hz / p.nominal_freq_hz)
        * (vdd / p.nominal_vdd).powi(2);
    let leak = leak_nominal * (vdd / p.nominal_vdd).powf(p.leakage_vdd_exponent)
        * (p.leakage_fbb_coeff * vbb).exp();
    dynamic + leak
}

/// One workload phase: `cycles` long, with every path toggling with
/// probability `activity` per cycle (1.0 = deterministic worst case).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Phase {
    pub cycles: u64,
    pub activity: f64,
}

/// Closed-loop scenario: supply starts at `vdd_start`, ramps linearly to
/// `vdd_end` over `ramp_cycles`, then holds, with an optional sinusoidal
/// ripple. Workload phases repeat until `duration` cycles have run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbbScenario {
    pub freq_hz: f64,
    pub vdd_start: f64,
    pub vdd_end: f64,
    pub ramp_cycles: u64,
    #[serde(default)]
    pub ripple_amplitude: f64,
    #[serde(default)]
    pub ripple_period_cycles: u64,
    pub abb_on: bool,
    #[serde(default)]
    pub initial_vbb: f64,
    #[serde(default)]
    pub phases: Vec<Phase>,
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
}

impl AbbScenario {
    fn vdd_at(&self, t: u64) -> f64 {
        let frac = if self.ramp_cycles == 0 {
            1.0
        } else {
            (t as f64 / self.ramp_cycles as f64).min(1.0)
        };
        let mut v = self.vdd_start + (self.vdd_end - self.vdd_start) * frac;
        if self.ripple_amplitude > 0.0 && self.ripple_period_cycles > 0 {
            v += self.ripple_amplitude
                * (std::f64::consts::TAU * t as f64 / self.ripple_period_cycles as f64).sin();
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbbSample {
    pub t: u64,
    pub vdd: f64,
    pub vbb: f64,
    pub pre_error: bool,
    pub error: bool,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbbTrace {
    pub pre_errors: u64,
    pub real_errors: u64,
    /// Pre-error / real-error counts attributed to each scenario phase.
    pub phase_pre_errors: Vec<u64>,
    pub phase_real_errors: Vec<u64>,
    pub final_vbb: f64,
    pub max_vbb: f64,
    /// Decimated per-cycle samples (every `sample_every` cycles).
    pub samples: Vec<AbbSample>,
    pub sample_every: u64,
}

/// Runs the closed loop for `sc.duration` cycles. With `abb_on = false` the
/// bias is pinned at `initial_vbb` (normally 0).
pub fn simulate(sc: &AbbScenario, model: &DelayModel, pop: &PathPopulation, calib: &Calibration) -> AbbTrace {
    let abb = &calib.abb;
    let period = 1.0 / sc.freq_hz;
    let delta = abb.preerror_margin_fraction * period;
    let mut ctl = Controller::new(sc.initial_vbb);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut active = vec![true; pop.rel.len()];
    let n_phases = sc.phases.len().max(1);
    let mut trace = AbbTrace {
        pre_errors: 0,
        real_errors: 0,
        phase_pre_errors: vec![0; n_phases],
        phase_real_errors: vec![0; n_phases],
        final_vbb: sc.initial_vbb,
        max_vbb: sc.initial_vbb,
        samples: vec![],
        sample_every: 64,
    };
    let mut phase_idx = 0usize;
    let mut phase_left = sc.phases.first().map(|p| p.cycles).unwrap_or(u64::MAX);
    for t in 0..sc.duration {
        if phase_left == 0 {
            phase_idx = (phase_idx + 1) % n_phases;
            phase_left = sc.phases[phase_idx].cycles;
        }
        let activity = sc.phases.get(phase_idx).map(|p| p.activity).unwrap_or(1.0);
        let vdd = sc.vdd_at(t);
        let vbb = if sc.abb_on { ctl.vbb(abb) } else { sc.initial_vbb };
        let slowest = model.delay(vdd, vbb);
        // only paths that can reach the shadow window need activity draws
        let threshold = (period - delta) / slowest;
        for (i, &r) in pop.rel.iter().enumerate() {
            if r <= threshold {
                break;
            }
            active[i] = activity >= 1.0 || rng.random::<f64>() < activity;
        }
        let det = detect(pop, &active, slowest, period, delta);
        if det.pre_error {
            trace.pre_errors += 1;
            trace.phase_pre_errors[phase_idx] += 1;
        }
        if det.error {
            trace.real_errors += 1;
            trace.phase_real_errors[phase_idx] += 1;
        }
        if sc.abb_on {
            ctl.step(det.pre_error, abb);
        }
        trace.max_vbb = trace.max_vbb.max(vbb);
        if t % trace.sample_every == 0 {
            trace.samples.push(AbbSample {
                t,
                vdd,
                vbb,
                pre_error: det.pre_error,
                error: det.error,
                power_mw: power(&calib.power, vdd, sc.freq_hz, vbb, activity),
            });
        }
        phase_left = phase_left.saturating_sub(1);
    }
    trace.final_vbb = if sc.abb_on { ctl.vbb(abb) } else { sc.initial_vbb };
    trace
}

/// Deterministic minimum-supply probe: ramp the supply from the nominal
/// point down to the candidate over a settle-friendly window, hold, and
/// demand zero real errors; bisect the candidate.
pub fn find_min_vdd(
    freq_hz: f64,
    abb_on: bool,
    model: &DelayModel,
    pop: &PathPopulation,
    calib: &Calibration,
) -> Result<f64, AbbError> {
    let hi_start = calib.power.nominal_vdd.max(0.85);
    let feasible = |v: f64| -> bool {
        let sc = AbbScenario {
            freq_hz,
            vdd_start: hi_start,
            vdd_end: v,
            ramp_cycles: 6000,
            ripple_amplitude: 0.0,
            ripple_period_cycles: 0,
            abb_on,
            initial_vbb: 0.0,
            phases: vec![],
            duration: 12_000,
            seed: 0,
        };
        simulate(&sc, model, pop, calib).real_errors == 0
    };
    let (mut lo, mut hi) = (0.40, hi_start);
    if !feasible(hi) {
        return Err(AbbError::NoFeasibleVdd(lo, hi, freq_hz));
    }
    if feasible(lo) {
        return Ok(lo);
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
