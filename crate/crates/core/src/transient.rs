//! Switched time-domain model: full-bridge square-wave source, coupled
//! series tanks, diode bridge into a constant-voltage battery.
//!
//! Fixed-step RK4 on the piecewise-linear ODE. Inverter edges are segment
//! boundaries; diode commutations are located by bisection inside a step.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use thiserror::Error;

use crate::circuit::{CircuitError, CircuitParams};
use crate::table::{Cell, SweepTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransientError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("inductance matrix is singular (k = {0})")]
    SingularInductance(f64),
    #[error("state diverged past 1e6 at t = {time:.6e} s (cycle {cycle})")]
    Divergence { time: f64, cycle: usize },
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error("result is not steady")]
    NotSteady,
    #[error("only {available} cycles retained, {requested} requested")]
    InsufficientCycles { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub i_l1: f64,
    pub i_l2: f64,
    pub v_c1: f64,
    pub v_c2: f64,
}

impl StateVector {
    /// Magnetic plus capacitive energy.
    pub fn energy(&self, p: &CircuitParams) -> f64 {
        let m = p.k * (p.l1 * p.l2).sqrt();
        0.5 * (p.l1 * self.i_l1 * self.i_l1
            + 2.0 * m * self.i_l1 * self.i_l2
            + p.l2 * self.i_l2 * self.i_l2
            + p.c1 * self.v_c1 * self.v_c1
            + p.c2 * self.v_c2 * self.v_c2)
    }
}

/// One retained sample, taken at a regular step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Bridge output for the interval starting at `t`.
    pub bridge_voltage: f64,
    pub state: StateVector,
    /// Rectifier input voltage (clamp when conducting, open-circuit otherwise).
    pub v_rect: f64,
    /// DC current into the battery.
    pub battery_current: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub i1_rms: f64,
    pub i2_rms: f64,
    pub pout: f64,
    pub pin: f64,
    pub ploss: f64,
    pub eta: f64,
    /// Smallest turn-on current margin in the final cycle; `None` unless steady.
    pub zvs_margin: Option<f64>,
    pub thd_i1: f64,
    /// (source energy − battery energy − losses − stored-energy change) over
    /// source energy, final cycle.
    pub energy_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub steady: bool,
    pub cycles_run: usize,
    pub period: f64,
    pub steps_per_cycle: usize,
    /// Samples of the retained trailing cycles, oldest first.
    pub samples: Vec<Sample>,
    pub retained_cycles: usize,
    pub final_state: StateVector,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub max_cycles: usize,
    pub steps_per_cycle: usize,
    /// Number of trailing cycles kept for export.
    pub retain_cycles: usize,
    /// Stop at the first steady detection instead of running `max_cycles`.
    pub stop_when_steady: bool,
    pub steady_tolerance: f64,
}

pub const DEFAULT_MAX_CYCLES: usize = 2000;
pub const DEFAULT_STEPS_PER_CYCLE: usize = 1000;
pub const MIN_STEPS_PER_CYCLE: usize = 200;
const STEADY_CONSECUTIVE: usize = 3;
const DIVERGENCE_LIMIT: f64 = 1e6;
const EVENT_TIME_TOLERANCE: f64 = 1e-12;
const MAX_EVENTS_PER_SEGMENT: usize = 16;

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_cycles: DEFAULT_MAX_CYCLES,
            steps_per_cycle: DEFAULT_STEPS_PER_CYCLE,
            retain_cycles: 4,
            stop_when_steady: true,
            steady_tolerance: 1e-4,
        }
    }
}

pub fn simulate(
    params: &CircuitParams,
    max_cycles: usize,
    steps_per_cycle: usize,
) -> Result<TransientResult, TransientError> {
    simulate_with(
        params,
        &SimOptions {
            max_cycles,
            steps_per_cycle,
            ..SimOptions::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rectifier {
    Blocking,
    /// Conducting with current sign ±1.
    Conducting(i8),
}

/// State plus running integrals ∫i1², ∫i2², ∫v_bridge·i1, ∫|i2|.
type Ext = [f64; 8];

struct Model {
    l1: f64,
    l2: f64,
    m: f64,
    det: f64,
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
    clamp: f64,
}

impl Model {
    fn new(p: &CircuitParams) -> Result<Self, TransientError> {
        if p.k >= 1.0 {
            return Err(TransientError::SingularInductance(p.k));
        }
        p.validate()?;
        let m = p.k * (p.l1 * p.l2).sqrt();
        Ok(Self {
            l1: p.l1,
            l2: p.l2,
            m,
            det: p.l1 * p.l2 - m * m,
            c1: p.c1,
            c2: p.c2,
            r1: p.r1,
            r2: p.r2,
            clamp: p.vb + 2.0 * p.vd,
        })
    }

    fn blocking_di1(&self, y: &Ext, vbr: f64) -> f64 {
        (vbr - y[2] - self.r1 * y[0]) / self.l1
    }

    /// Secondary terminal voltage with the bridge open.
    fn open_circuit_voltage(&self, y: &Ext, vbr: f64) -> f64 {
        -y[3] - self.m * self.blocking_di1(y, vbr)
    }

    fn conducting_di(&self, y: &Ext, vbr: f64, s: f64) -> (f64, f64) {
        let a1 = vbr - y[2] - self.r1 * y[0];
        let a2 = -y[3] - self.r2 * y[1] - s * self.clamp;
        (
            (self.l2 * a1 - self.m * a2) / self.det,
            (self.l1 * a2 - self.m * a1) / self.det,
        )
    }

    fn derivative(&self, y: &Ext, vbr: f64, mode: Rectifier) -> Ext {
        match mode {
            Rectifier::Blocking => [
                self.blocking_di1(y, vbr),
                0.0,
                y[0] / self.c1,
                0.0,
                y[0] * y[0],
                0.0,
                vbr * y[0],
                0.0,
            ],
            Rectifier::Conducting(s) => {
                let s = f64::from(s);
                let (di1, di2) = self.conducting_di(y, vbr, s);
                [
                    di1,
                    di2,
                    y[0] / self.c1,
                    y[1] / self.c2,
                    y[0] * y[0],
                    y[1] * y[1],
                    vbr * y[0],
                    s * y[1],
                ]
            }
        }
    }

    fn rk4(&self, y: &Ext, h: f64, vbr: f64, mode: Rectifier) -> Ext {
        let add = |a: &Ext, b: &Ext, s: f64| -> Ext { std::array::from_fn(|i| a[i] + s * b[i]) };
        let k1 = self.derivative(y, vbr, mode);
        let k2 = self.derivative(&add(y, &k1, 0.5 * h), vbr, mode);
        let k3 = self.derivative(&add(y, &k2, 0.5 * h), vbr, mode);
        let k4 = self.derivative(&add(y, &k3, h), vbr, mode);
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Whether the current mode must end at state `y`.
    fn event(&self, y: &Ext, vbr: f64, mode: Rectifier) -> bool {
        match mode {
            Rectifier::Blocking => self.open_circuit_voltage(y, vbr).abs() > self.clamp,
            Rectifier::Conducting(s) => f64::from(s) * y[1] <= 0.0,
        }
    }

    /// Resolve the rectifier state at an instant.
    fn settle(&self, y: &mut Ext, vbr: f64, mut mode: Rectifier) -> Rectifier {
        for _ in 0..4 {
            match mode {
                Rectifier::Blocking => {
                    let voc = self.open_circuit_voltage(y, vbr);
                    if voc.abs() > self.clamp {
                        mode = Rectifier::Conducting(if voc > 0.0 { 1 } else { -1 });
                    } else {
                        return mode;
                    }
                }
                Rectifier::Conducting(s) => {
                    let sf = f64::from(s);
                    if sf * y[1] > 0.0 {
                        return mode;
                    }
                    let mut at_zero = *y;
                    at_zero[1] = 0.0;
                    let (_, di2) = self.conducting_di(&at_zero, vbr, sf);
                    y[1] = 0.0;
                    if sf * di2 > 0.0 {
                        return mode;
                    }
                    mode = Rectifier::Blocking;
                }
            }
        }
        mode
    }

    fn v_rect(&self, y: &Ext, vbr: f64, mode: Rectifier) -> f64 {
        match mode {
            Rectifier::Blocking => self.open_circuit_voltage(y, vbr),
            Rectifier::Conducting(s) => f64::from(s) * self.clamp,
        }
    }
}

/// Bridge voltage at cycle offset `tau`: dead band, +Vdc, dead band, −Vdc.
fn bridge_voltage(vdc: f64, period: f64, dead: f64, tau: f64) -> f64 {
    let half = 0.5 * period;
    if tau < dead {
        0.0
    } else if tau < half {
        vdc
    } else if tau < half + dead {
        0.0
    } else {
        -vdc
    }
}

fn validate_options(p: &CircuitParams, o: &SimOptions) -> Result<(), TransientError> {
    if o.steps_per_cycle < MIN_STEPS_PER_CYCLE {
        return Err(TransientError::InvalidOptions(format!(
            "steps per cycle must be at least {MIN_STEPS_PER_CYCLE} (got {})",
            o.steps_per_cycle
        )));
    }
    if o.max_cycles == 0 {
        return Err(TransientError::InvalidOptions(
            "max cycles must be at least 1".into(),
        ));
    }
    if o.retain_cycles == 0 {
        return Err(TransientError::InvalidOptions(
            "retain at least one cycle".into(),
        ));
    }
    if !(o.steady_tolerance > 0.0) {
        return Err(TransientError::InvalidOptions(
            "steady tolerance must be positive".into(),
        ));
    }
    if !(p.dead_time >= 0.0 && p.dead_time < 0.5 / p.fs) {
        return Err(TransientError::InvalidOptions(format!(
            "dead time {} s must lie in [0, T/2)",
            p.dead_time
        )));
    }
    Ok(())
}

struct CycleLog {
    samples: Vec<Sample>,
    zvs_margin: f64,
    peaks: [f64; 4],
}

pub fn simulate_with(
    params: &CircuitParams,
    options: &SimOptions,
) -> Result<TransientResult, TransientError> {
    let model = Model::new(params)?;
    validate_options(params, options)?;
    let n = options.steps_per_cycle;
    let period = 1.0 / params.fs;
    let dt = period / n as f64;
    let dead = params.dead_time;
    let half = 0.5 * period;

    // Segment boundaries within one cycle: regular steps plus bridge edges.
    let mut offsets: Vec<(f64, Option<usize>)> = (0..n).map(|j| (j as f64 * dt, Some(j))).collect();
    for edge in [dead, half, half + dead] {
        if !offsets
            .iter()
            .any(|(t, _)| (t - edge).abs() < 1e-9 * period)
        {
            offsets.push((edge, None));
        }
    }
    offsets.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Turn-on instants: bridge enters +Vdc (rising) or −Vdc (falling).
    let turn_on = |tau: f64| -> Option<f64> {
        if (tau - dead).abs() < 1e-9 * period {
            Some(-1.0)
        } else if (tau - (half + dead)).abs() < 1e-9 * period {
            Some(1.0)
        } else {
            None
        }
    };

    let mut y: Ext = [0.0; 8];
    let mut mode = Rectifier::Blocking;
    let mut retained: VecDeque<CycleLog> = VecDeque::with_capacity(options.retain_cycles + 1);
    let mut previous_start: Option<[f64; 4]> = None;
    let mut consecutive = 0;
    let mut steady = false;
    let mut cycles_run = 0;
    let mut last_cycle_integrals = [0.0; 4];
    let mut last_cycle_energy = (0.0, 0.0);

    for cycle in 0..options.max_cycles {
        let t0 = cycle as f64 * period;
        let y_start = y;
        let start_state = StateVector {
            i_l1: y[0],
            i_l2: y[1],
            v_c1: y[2],
            v_c2: y[3],
        };
        let mut log = CycleLog {
            samples: Vec::with_capacity(n),
            zvs_margin: f64::INFINITY,
            peaks: [0.0; 4],
        };

        for (idx, &(tau, regular)) in offsets.iter().enumerate() {
            let tau_end = offsets.get(idx + 1).map_or(period, |o| o.0);
            let vbr = bridge_voltage(params.vdc, period, dead, tau);
            // inverter edge first, then the rectifier reacts
            mode = model.settle(&mut y, vbr, mode);
            if let Some(sign) = turn_on(tau) {
                log.zvs_margin = log.zvs_margin.min(sign * y[0]);
            }
            if regular.is_some() {
                let v_rect = model.v_rect(&y, vbr, mode);
                let battery_current = match mode {
                    Rectifier::Blocking => 0.0,
                    Rectifier::Conducting(s) => f64::from(s) * y[1],
                };
                for (peak, v) in log.peaks.iter_mut().zip(&y[..4]) {
                    *peak = peak.max(v.abs());
                }
                log.samples.push(Sample {
                    t: t0 + tau,
                    bridge_voltage: vbr,
                    state: StateVector {
                        i_l1: y[0],
                        i_l2: y[1],
                        v_c1: y[2],
                        v_c2: y[3],
                    },
                    v_rect,
                    battery_current,
                });
            }

            let mut remaining = tau_end - tau;
            let mut events = 0;
            while remaining > 0.0 {
                let next = model.rk4(&y, remaining, vbr, mode);
                if events >= MAX_EVENTS_PER_SEGMENT || !model.event(&next, vbr, mode) {
                    y = next;
                    break;
                }
                let (mut lo, mut hi) = (0.0, remaining);
                while hi - lo > EVENT_TIME_TOLERANCE {
                    let mid = 0.5 * (lo + hi);
                    if model.event(&model.rk4(&y, mid, vbr, mode), vbr, mode) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                y = model.rk4(&y, hi, vbr, mode);
                remaining -= hi;
                events += 1;
                mode = model.settle(&mut y, vbr, mode);
            }
            if y[..4].iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
                return Err(TransientError::Divergence {
                    time: t0 + tau_end,
                    cycle,
                });
            }
        }
        cycles_run = cycle + 1;

        let end = [y[0], y[1], y[2], y[3]];
        let start = [y_start[0], y_start[1], y_start[2], y_start[3]];
        let within = end
            .iter()
            .zip(&start)
            .zip(&log.peaks)
            .all(|((a, b), peak)| (a - b).abs() <= options.steady_tolerance * peak);
        if previous_start.is_some() && within {
            consecutive += 1;
        } else {
            consecutive = 0;
        }
        previous_start = Some(start);
        steady = consecutive >= STEADY_CONSECUTIVE;

        for (i, slot) in last_cycle_integrals.iter_mut().enumerate() {
            *slot = y[4 + i] - y_start[4 + i];
        }
        let end_state = StateVector {
            i_l1: y[0],
            i_l2: y[1],
            v_c1: y[2],
            v_c2: y[3],
        };
        last_cycle_energy = (start_state.energy(params), end_state.energy(params));

        retained.push_back(log);
        if retained.len() > options.retain_cycles {
            retained.pop_front();
        }
        if steady && options.stop_when_steady {
            break;
        }
    }

    let last = retained.back().expect("at least one cycle ran");
    let [q11, q22, ein, q2abs] = last_cycle_integrals;
    let pin = ein / period;
    let pout = params.vb * q2abs / period;
    let ploss = (params.r1 * q11 + params.r2 * q22 + 2.0 * params.vd * q2abs) / period;
    let stored_change = last_cycle_energy.1 - last_cycle_energy.0;
    let energy_residual = if ein.abs() > 0.0 {
        (ein - (pout + ploss) * period - stored_change) / ein
    } else {
        0.0
    };
    let metrics = Metrics {
        i1_rms: (q11 / period).sqrt(),
        i2_rms: (q22 / period).sqrt(),
        pout,
        pin,
        ploss,
        eta: if pin > 0.0 { pout / pin } else { 0.0 },
        zvs_margin: steady.then_some(last.zvs_margin),
        thd_i1: total_harmonic_distortion(last.samples.iter().map(|s| s.state.i_l1)),
        energy_residual,
    };
    let retained_cycles = retained.len();
    Ok(TransientResult {
        steady,
        cycles_run,
        period,
        steps_per_cycle: n,
        samples: retained.into_iter().flat_map(|c| c.samples).collect(),
        retained_cycles,
        final_state: StateVector {
            i_l1: y[0],
            i_l2: y[1],
            v_c1: y[2],
            v_c2: y[3],
        },
        metrics,
    })
}

/// Fundamental phasor (peak amplitude, phase) of one period of uniform samples.
pub fn fundamental(samples: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = samples.into_iter().collect();
    let n = xs.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (j, x) in xs.iter().enumerate() {
        let (s, c) = (TAU * j as f64 / n).sin_cos();
        re += x * c;
        im += x * s;
    }
    let (a, b) = (2.0 * re / n, 2.0 * im / n);
    // x ≈ a·cos θ + b·sin θ = A·cos(θ − φ)
    (a.hypot(b), b.atan2(a))
}

fn total_harmonic_distortion(samples: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = samples.into_iter().collect();
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ac_ms = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    let (amp, _) = fundamental(xs.iter().copied());
    let fund_ms = 0.5 * amp * amp;
    if fund_ms == 0.0 {
        return 0.0;
    }
    ((ac_ms - fund_ms).max(0.0) / fund_ms).sqrt()
}

/// True when every turn-on edge of the final cycle finds the bridge current
/// still flowing in the outgoing direction, by at least 1 % of I1rms.
pub fn zvs_check(result: &TransientResult) -> Result<bool, TransientError> {
    let margin = result.metrics.zvs_margin.ok_or(TransientError::NotSteady)?;
    Ok(result.metrics.i1_rms > 0.0 && margin >= 0.01 * result.metrics.i1_rms)
}

pub const WAVEFORM_COLUMNS: [&str; 6] = [
    "t_s",
    "bridge_voltage_V",
    "iL1_A",
    "vC1_V",
    "iL2_A",
    "vRect_V",
];

/// Per-sample rows of the trailing `last_n_cycles` retained cycles.
pub fn waveform_export(
    result: &TransientResult,
    last_n_cycles: usize,
) -> Result<SweepTable, TransientError> {
    if last_n_cycles > result.retained_cycles {
        return Err(TransientError::InsufficientCycles {
            requested: last_n_cycles,
            available: result.retained_cycles,
        });
    }
    let skip = result.samples.len() - last_n_cycles * result.steps_per_cycle;
    let mut table = SweepTable::new(WAVEFORM_COLUMNS);
    for s in &result.samples[skip..] {
        table
            .push(vec![
                Cell::Num(s.t),
                Cell::Num(s.bridge_voltage),
                Cell::Num(s.state.i_l1),
                Cell::Num(s.state.v_c1),
                Cell::Num(s.state.i_l2),
                Cell::Num(s.v_rect),
            ])
            .expect("row width matches header");
    }
    Ok(table)
}
