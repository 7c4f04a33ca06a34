//! Central pattern generator: a network of coupled phase oscillators with
//! critically damped amplitude and offset dynamics.
//!
//! Each oscillator `i` evolves as
//!
//! ```text
//! dφ_i/dt = ω_i + Σ_j w_ij r_j sin(φ_j − φ_i − b_ij)
//! d²r_i/dt² = a_r (a_r/4 (R_i − r_i) − dr_i/dt)
//! d²x_i/dt² = a_x (a_x/4 (X_i − x_i) − dx_i/dt)
//! ```
//!
//! The hexapod network has 12 oscillators: indices `0..6` drive the vertical
//! motor of legs `0..6`, indices `6..12` the horizontal motor of the same legs.
//! Legs `0..3` are on the left side (front to back), `3..6` on the right.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_LEGS: usize = 6;
pub const N_OSCILLATORS: usize = 2 * N_LEGS;

/// Weight used for every vertical–vertical and vertical–horizontal link.
pub const COUPLING_WEIGHT: f64 = 4.0;
pub const DEFAULT_GAIN: f64 = 20.0;
pub const DEFAULT_DT: f64 = 1e-3;
pub const MAX_DT: f64 = 5e-3;

pub const OMEGA_MIN: f64 = PI;
pub const OMEGA_MAX: f64 = 16.0 * PI;
pub const VH_PHASE_MIN: f64 = 0.0;
pub const VH_PHASE_MAX: f64 = PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpgError {
    #[error("gait is not canonical: leg 0 offset is {0} (expected 0)")]
    NonCanonicalGait(f64),
    #[error("gait offset for leg {leg} is {value}, outside [0, 2π)")]
    OffsetOutOfRange { leg: usize, value: f64 },
    #[error("parameter `{name}` = {value} outside [{lower}, {upper}]")]
    ParamOutOfBounds {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("step fraction for leg {leg} is {value}, outside [0, 1)")]
    FractionOutOfRange { leg: usize, value: f64 },
    #[error("unknown gait `{0}`")]
    UnknownGait(String),
    #[error("time step {0} s outside (0, {MAX_DT}]")]
    InvalidTimeStep(f64),
    #[error("non-finite state in oscillator {0}")]
    IntegrationFault(usize),
    #[error("gains must be positive, got a_r = {a_r}, a_x = {a_x}")]
    InvalidGains { a_r: f64, a_x: f64 },
    #[error("inconsistent network dimensions: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, CpgError>;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OscillatorState {
    pub phase: f64,
    pub amplitude: f64,
    pub amplitude_rate: f64,
    pub offset: f64,
    pub offset_rate: f64,
}

impl OscillatorState {
    fn axpy(&self, h: f64, d: &OscillatorState) -> OscillatorState {
        OscillatorState {
            phase: self.phase + h * d.phase,
            amplitude: self.amplitude + h * d.amplitude,
            amplitude_rate: self.amplitude_rate + h * d.amplitude_rate,
            offset: self.offset + h * d.offset,
            offset_rate: self.offset_rate + h * d.offset_rate,
        }
    }

    fn is_finite(&self) -> bool {
        self.phase.is_finite()
            && self.amplitude.is_finite()
            && self.amplitude_rate.is_finite()
            && self.offset.is_finite()
            && self.offset_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaitName {
    Tripod,
    Ripple,
    Wave,
    FourTwo,
    Custom,
}

impl GaitName {
    pub const CATALOG: [GaitName; 4] = [GaitName::Tripod, GaitName::Ripple, GaitName::Wave, GaitName::FourTwo];

    pub fn as_str(&self) -> &'static str {
        match self {
            GaitName::Tripod => "tripod",
            GaitName::Ripple => "ripple",
            GaitName::Wave => "wave",
            GaitName::FourTwo => "four-two",
            GaitName::Custom => "custom",
        }
    }
}

impl fmt::Display for GaitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GaitName {
    type Err = CpgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tripod" | "dual-tripod" => Ok(GaitName::Tripod),
            "ripple" => Ok(GaitName::Ripple),
            "wave" => Ok(GaitName::Wave),
            "four-two" | "fourtwo" => Ok(GaitName::FourTwo),
            _ => Err(CpgError::UnknownGait(s.to_string())),
        }
    }
}

/// Per-leg phase offsets of the vertical oscillators, relative to leg 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub name: GaitName,
    pub leg_phase_offsets: [f64; N_LEGS],
}

impl GaitSpec {
    /// Builds a canonical gait: offsets are shifted so leg 0 sits at 0 and
    /// wrapped into `[0, 2π)`.
    pub fn canonical(name: GaitName, offsets: [f64; N_LEGS]) -> GaitSpec {
        let base = offsets[0];
        let mut leg_phase_offsets = [0.0; N_LEGS];
        for (o, &raw) in leg_phase_offsets.iter_mut().zip(offsets.iter()) {
            *o = wrap_phase(raw - base);
        }
        GaitSpec {
            name,
            leg_phase_offsets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (leg, &v) in self.leg_phase_offsets.iter().enumerate() {
            if !(0.0..TAU).contains(&v) {
                return Err(CpgError::OffsetOutOfRange { leg, value: v });
            }
        }
        if self.leg_phase_offsets[0] != 0.0 {
            return Err(CpgError::NonCanonicalGait(self.leg_phase_offsets[0]));
        }
        Ok(())
    }
}

/// Catalog lookup by name.
pub fn gait_from_name(name: &str) -> Result<GaitSpec> {
    catalog_gait(name.parse()?)
}

pub fn catalog_gait(name: GaitName) -> Result<GaitSpec> {
    let offsets = match name {
        // {L1, L3, R2} against {L2, R1, R3}
        GaitName::Tripod => [0.0, PI, 0.0, PI, 0.0, PI],
        // one leg at a time, evenly spaced
        GaitName::Wave => [0.0, PI / 3.0, 2.0 * PI / 3.0, PI, 4.0 * PI / 3.0, 5.0 * PI / 3.0],
        // left side 120° apart, right side the same sequence half a cycle later
        GaitName::Ripple => [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0, PI, 5.0 * PI / 3.0, PI / 3.0],
        // middle legs against the four corner legs
        GaitName::FourTwo => [0.0, PI, 0.0, 0.0, PI, 0.0],
        GaitName::Custom => return Err(CpgError::UnknownGait("custom".into())),
    };
    Ok(GaitSpec {
        name,
        leg_phase_offsets: offsets,
    })
}

/// The optimized controller parameters `[ω, vh_phase_diff, X_l, X_r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Shared oscillator frequency in rad/s.
    pub omega: f64,
    /// Phase lead of each horizontal oscillator over its vertical partner.
    pub vh_phase_diff: f64,
    pub amp_left: f64,
    pub amp_right: f64,
}

impl ControlParams {
    pub const DIM: usize = 4;
    pub const NAMES: [&'static str; 4] = ["omega", "vh_phase_diff", "amp_left", "amp_right"];
    pub const LOWER: [f64; 4] = [OMEGA_MIN, VH_PHASE_MIN, 0.0, 0.0];
    pub const UPPER: [f64; 4] = [OMEGA_MAX, VH_PHASE_MAX, 1.0, 1.0];

    pub fn new(omega: f64, vh_phase_diff: f64, amp_left: f64, amp_right: f64) -> Self {
        ControlParams {
            omega,
            vh_phase_diff,
            amp_left,
            amp_right,
        }
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        ControlParams::new(theta[0], theta[1], theta[2], theta[3])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.omega, self.vh_phase_diff, self.amp_left, self.amp_right]
    }

    pub fn mirrored(&self) -> Self {
        ControlParams {
            amp_left: self.amp_right,
            amp_right: self.amp_left,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.to_vec().into_iter().enumerate() {
            let (lo, hi) = (Self::LOWER[i], Self::UPPER[i]);
            if !(lo..=hi).contains(&v) || !v.is_finite() {
                return Err(CpgError::ParamOutOfBounds {
                    name: Self::NAMES[i],
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

/// Maps per-leg step-start fractions plus `(ω, vh_phase_diff)` to a gait and
/// full-amplitude control parameters.
pub fn gait_from_schedule(
    step_starts: [f64; N_LEGS],
    omega: f64,
    vh_phase_diff: f64,
) -> Result<(GaitSpec, ControlParams)> {
    for (leg, &f) in step_starts.iter().enumerate() {
        if !(0.0..1.0).contains(&f) {
            return Err(CpgError::FractionOutOfRange { leg, value: f });
        }
    }
    let offsets = step_starts.map(|f| TAU * f);
    let gait = GaitSpec::canonical(GaitName::Custom, offsets);
    let params = ControlParams::new(omega, vh_phase_diff, 1.0, 1.0);
    params.validate()?;
    Ok((gait, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgConfig {
    pub frequencies: Vec<f64>,
    pub coupling_weights: Vec<Vec<f64>>,
    pub phase_biases: Vec<Vec<f64>>,
    pub target_amplitudes: Vec<f64>,
    pub target_offsets: Vec<f64>,
    pub a_r: f64,
    pub a_x: f64,
}

impl CpgConfig {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&self.coupling_weights)
            || !square(&self.phase_biases)
            || self.target_amplitudes.len() != n
            || self.target_offsets.len() != n
        {
            return Err(CpgError::Dimension(format!("expected {n} oscillators")));
        }
        if !(self.a_r > 0.0 && self.a_x > 0.0) {
            return Err(CpgError::InvalidGains {
                a_r: self.a_r,
                a_x: self.a_x,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    to: usize,
    from: usize,
    weight: f64,
    bias: f64,
}

/// A CPG network: configuration plus the evolving oscillator states.
#[derive(Debug, Clone)]
pub struct CpgNetwork {
    config: CpgConfig,
    links: Vec<Link>,
    states: Vec<OscillatorState>,
    time: f64,
}

impl CpgNetwork {
    pub fn new(config: CpgConfig, initial: Vec<OscillatorState>) -> Result<Self> {
        config.validate()?;
        if initial.len() != config.len() {
            return Err(CpgError::Dimension(format!(
                "{} initial states for {} oscillators",
                initial.len(),
                config.len()
            )));
        }
        let mut links = Vec::new();
        for (to, row) in config.coupling_weights.iter().enumerate() {
            for (from, &w) in row.iter().enumerate() {
                if w != 0.0 && to != from {
                    links.push(Link {
                        to,
                        from,
                        weight: w,
                        bias: config.phase_biases[to][from],
                    });
                }
            }
        }
        let states = initial
            .into_iter()
            .map(|s| OscillatorState {
                phase: wrap_phase(s.phase),
                ..s
            })
            .collect();
        Ok(CpgNetwork {
            config,
            links,
            states,
            time: 0.0,
        })
    }

    pub fn config(&self) -> &CpgConfig {
        &self.config
    }

    pub fn states(&self) -> &[OscillatorState] {
        &self.states
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn derivative(&self, s: &[OscillatorState], out: &mut [OscillatorState]) {
        let c = &self.config;
        for (i, (st, d)) in s.iter().zip(out.iter_mut()).enumerate() {
            let (a_r, a_x) = (c.a_r, c.a_x);
            *d = OscillatorState {
                phase: c.frequencies[i],
                amplitude: st.amplitude_rate,
                amplitude_rate: a_r * (a_r / 4.0 * (c.target_amplitudes[i] - st.amplitude) - st.amplitude_rate),
                offset: st.offset_rate,
                offset_rate: a_x * (a_x / 4.0 * (c.target_offsets[i] - st.offset) - st.offset_rate),
            };
        }
        for l in &self.links {
            let (si, sj) = (&s[l.to], &s[l.from]);
            out[l.to].phase += l.weight * sj.amplitude * (sj.phase - si.phase - l.bias).sin();
        }
    }

    /// Advances the network by one classical RK4 step.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(CpgError::InvalidTimeStep(dt));
        }
        let n = self.states.len();
        let s0 = &self.states;
        let mut k1 = vec![OscillatorState::default(); n];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        self.derivative(s0, &mut k1);
        let s1: Vec<_> = s0.iter().zip(&k1).map(|(s, k)| s.axpy(0.5 * dt, k)).collect();
        self.derivative(&s1, &mut k2);
        let s2: Vec<_> = s0.iter().zip(&k2).map(|(s, k)| s.axpy(0.5 * dt, k)).collect();
        self.derivative(&s2, &mut k3);
        let s3: Vec<_> = s0.iter().zip(&k3).map(|(s, k)| s.axpy(dt, k)).collect();
        self.derivative(&s3, &mut k4);

        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let incr = OscillatorState {
                phase: k1[i].phase + 2.0 * k2[i].phase + 2.0 * k3[i].phase + k4[i].phase,
                amplitude: k1[i].amplitude + 2.0 * k2[i].amplitude + 2.0 * k3[i].amplitude + k4[i].amplitude,
                amplitude_rate: k1[i].amplitude_rate
                    + 2.0 * k2[i].amplitude_rate
                    + 2.0 * k3[i].amplitude_rate
                    + k4[i].amplitude_rate,
                offset: k1[i].offset + 2.0 * k2[i].offset + 2.0 * k3[i].offset + k4[i].offset,
                offset_rate: k1[i].offset_rate + 2.0 * k2[i].offset_rate + 2.0 * k3[i].offset_rate + k4[i].offset_rate,
            };
            let mut s = s0[i].axpy(dt / 6.0, &incr);
            if !s.is_finite() {
                return Err(CpgError::IntegrationFault(i));
            }
            s.phase = wrap_phase(s.phase);
            next.push(s);
        }
        self.states = next;
        self.time += dt;
        Ok(())
    }

    /// Motor commands for the six legs of a hexapod network.
    pub fn motor_output(&self) -> [MotorCommand; N_LEGS] {
        debug_assert_eq!(self.states.len(), N_OSCILLATORS);
        std::array::from_fn(|leg| {
            let v = &self.states[leg];
            let h = &self.states[N_LEGS + leg];
            MotorCommand::from_raw(leg_output(v, h))
        })
    }
}

/// Builds the 12-oscillator hexapod network for a gait and parameter set.
pub fn build_network(gait: &GaitSpec, params: &ControlParams, a_r: f64, a_x: f64) -> Result<CpgNetwork> {
    gait.validate()?;
    params.validate()?;
    let n = N_OSCILLATORS;
    let mut weights = vec![vec![0.0; n]; n];
    let mut biases = vec![vec![0.0; n]; n];
    let off = &gait.leg_phase_offsets;
    for a in 0..N_LEGS {
        for b in 0..N_LEGS {
            if a != b {
                weights[a][b] = COUPLING_WEIGHT;
                biases[a][b] = off[b] - off[a];
            }
        }
        let h = N_LEGS + a;
        weights[a][h] = COUPLING_WEIGHT;
        biases[a][h] = params.vh_phase_diff;
        weights[h][a] = COUPLING_WEIGHT;
        biases[h][a] = -params.vh_phase_diff;
    }
    let amplitudes: Vec<f64> = (0..n)
        .map(|i| {
            if i % N_LEGS < 3 {
                params.amp_left
            } else {
                params.amp_right
            }
        })
        .collect();
    let config = CpgConfig {
        frequencies: vec![params.omega; n],
        coupling_weights: weights,
        phase_biases: biases,
        target_amplitudes: amplitudes,
        target_offsets: vec![0.0; n],
        a_r,
        a_x,
    };
    let initial = (0..n)
        .map(|i| OscillatorState {
            phase: if i < N_LEGS {
                off[i]
            } else {
                off[i - N_LEGS] + params.vh_phase_diff
            },
            ..Default::default()
        })
        .collect();
    CpgNetwork::new(config, initial)
}

/// Per-leg command as stroke fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    /// Fraction of the vertical stroke.
    pub vertical: f64,
    /// Fraction of the horizontal stroke; 1 is the stride fully extended
    /// (foot rearmost).
    pub horizontal: f64,
}

impl MotorCommand {
    pub fn from_raw((v, h): (f64, f64)) -> Self {
        MotorCommand {
            vertical: ((v + 1.0) / 2.0).clamp(0.0, 1.0),
            horizontal: ((h + 1.0) / 2.0).clamp(0.0, 1.0),
        }
    }
}

/// Raw (pre-normalization) outputs of one vertical/horizontal oscillator pair.
///
/// Each motor follows its cosine only in the active half-cycle (φ > π) and
/// otherwise holds at full extension. When the vertical motor is active while
/// the horizontal one is holding, the horizontal motor is snapped to full
/// retraction.
pub fn leg_output(vertical: &OscillatorState, horizontal: &OscillatorState) -> (f64, f64) {
    let (vi, hj) = (vertical, horizontal);
    let v_active = vi.phase > PI;
    let h_active = hj.phase > PI;
    let v_out = if v_active {
        vi.offset + vi.amplitude * vi.phase.cos()
    } else {
        vi.offset + vi.amplitude
    };
    let h_out = match (v_active, h_active) {
        (_, true) => hj.offset + hj.amplitude * hj.phase.cos(),
        (false, false) => hj.offset + hj.amplitude,
        (true, false) => hj.offset - hj.amplitude,
    };
    (v_out, h_out)
}

/// Vertical extension of a leg relative to its own oscillation envelope.
/// Equals 1 while holding and `(1 + cos φ) / 2` in the active half-cycle.
pub fn relative_extension(phase: f64) -> f64 {
    if phase > PI {
        0.5 * (1.0 + phase.cos())
    } else {
        1.0
    }
}

/// Human-readable network description, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub gait: String,
    pub omega: f64,
    pub vh_phase_diff: f64,
    pub amp_left: f64,
    pub amp_right: f64,
    #[serde(default = "default_gain")]
    pub a_r: f64,
    #[serde(default = "default_gain")]
    pub a_x: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_gain() -> f64 {
    DEFAULT_GAIN
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl NetworkSpec {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network spec serializes")
    }

    pub fn params(&self) -> ControlParams {
        ControlParams::new(self.omega, self.vh_phase_diff, self.amp_left, self.amp_right)
    }

    pub fn build(&self) -> Result<CpgNetwork> {
        build_network(&gait_from_name(&self.gait)?, &self.params(), self.a_r, self.a_x)
    }
}

/// Integrates a hexapod network for `duration` seconds and writes every
/// oscillator state as CSV rows `t,osc_id,phi,r,x,output`.
pub fn write_trajectory_csv<W: std::io::Write>(
    network: &mut CpgNetwork,
    dt: f64,
    duration: f64,
    mut out: W,
) -> std::result::Result<(), TrajectoryError> {
    writeln!(out, "t,osc_id,phi,r,x,output")?;
    let steps = (duration / dt).round() as usize;
    for k in 0..=steps {
        if k > 0 {
            network.step(dt)?;
        }
        let s = network.states();
        for leg in 0..N_LEGS {
            let (v, h) = leg_output(&s[leg], &s[N_LEGS + leg]);
            for (id, o) in [(leg, v), (N_LEGS + leg, h)] {
                let st = &s[id];
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    network.time(),
                    id,
                    st.phase,
                    st.amplitude,
                    st.offset,
                    o
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cpg(#[from] CpgError),
}
