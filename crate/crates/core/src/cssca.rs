//! Long-timescale optimization by constrained stochastic successive convex
//! approximation (CSSCA).
//!
//! Each iteration draws one fading realization, evaluates the sample
//! objective and its gradients at the current antenna positions `t`, array
//! orientations `r` and long-timescale parameter `c`, folds the gradients into
//! running averages, maximises the resulting strongly concave quadratic
//! surrogate in closed form (a projected ascent step), and moves the iterate
//! part of the way towards that maximiser.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamform::{
    centralized_mmse, estimate_v, local_receiver, solve_long_param, BeamformerSet,
    LongTimescaleParam,
};
use crate::channel::{
    assemble_ap_block, sample_fading, ChannelMatrix, FadingSample, PathSet, Scenario,
};
use crate::geometry::{AntennaLayout, Orientation};
use crate::objective::{
    ap_terms_with_receiver, grad_c_with_receivers, grad_numeric_coordinatewise,
    objective_from_terms, per_user_rates, sample_objective, ApTerms,
};
use crate::{CMatrix, Error, Result, C64};

/// Diminishing step sizes `rho^s = (1 + s)^(-a)` for gradient tracking and
/// `gamma^s = b / (b + s)` for iterate smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub rho_exponent: f64,
    pub gamma_offset: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            rho_exponent: 0.9,
            gamma_offset: 15.0,
        }
    }
}

impl StepSchedule {
    pub fn rho(&self, s: usize) -> f64 {
        (1.0 + s as f64).powf(-self.rho_exponent)
    }

    pub fn gamma(&self, s: usize) -> f64 {
        self.gamma_offset / (self.gamma_offset + s as f64)
    }

    pub fn at(&self, s: usize) -> (f64, f64) {
        (self.rho(s), self.gamma(s))
    }
}

/// `(rho^s, gamma^s)` of the default schedule.
pub fn step_schedule(s: usize) -> (f64, f64) {
    StepSchedule::default().at(s)
}

/// Which variables a run may change. The long-timescale parameter always
/// adapts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Antenna positions and array orientations.
    #[serde(rename = "proposed_6dma")]
    Proposed6dma,
    /// Fixed positions and orientations.
    Fpa,
    PositionOnly,
    OrientationOnly,
    /// Joint MMSE over the stacked channel at the fixed initial layout.
    CentralizedMmse,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed6dma,
        Scheme::Fpa,
        Scheme::PositionOnly,
        Scheme::OrientationOnly,
        Scheme::CentralizedMmse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Proposed6dma => "proposed_6dma",
            Scheme::Fpa => "fpa",
            Scheme::PositionOnly => "position_only",
            Scheme::OrientationOnly => "orientation_only",
            Scheme::CentralizedMmse => "centralized_mmse",
        }
    }

    /// `(moves antennas, rotates arrays)`.
    pub fn flexibility(self) -> (bool, bool) {
        match self {
            Scheme::Proposed6dma => (true, true),
            Scheme::PositionOnly => (true, false),
            Scheme::OrientationOnly => (false, true),
            Scheme::Fpa | Scheme::CentralizedMmse => (false, false),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsscaConfig {
    pub s_max: usize,
    /// Ascent step `κ̂` for positions measured in wavelengths.
    pub step_t: f64,
    /// Ascent step for orientations measured in degrees.
    pub step_r: f64,
    /// Ascent step for the long-timescale parameter.
    pub step_c: f64,
    pub schedule: StepSchedule,
    /// Relative finite-difference step for position and orientation
    /// gradients.
    pub fd_rel_step: f64,
    pub move_positions: bool,
    pub rotate_arrays: bool,
    /// Start from the solution of the long-timescale linear system estimated
    /// with this many samples instead of `c_{k,m} = e_k`.
    pub warm_start_samples: Option<usize>,
    /// Stop once the last 20 running objectives spread less than this.
    pub early_stop_tolerance: Option<f64>,
}

impl Default for CsscaConfig {
    fn default() -> Self {
        Self {
            s_max: 100,
            step_t: 0.1,
            step_r: 10.0,
            step_c: 10.0,
            schedule: StepSchedule::default(),
            fd_rel_step: 1e-6,
            move_positions: true,
            rotate_arrays: true,
            warm_start_samples: None,
            early_stop_tolerance: None,
        }
    }
}

impl CsscaConfig {
    pub fn for_scheme(&self, scheme: Scheme) -> Self {
        let (move_positions, rotate_arrays) = scheme.flexibility();
        Self {
            move_positions,
            rotate_arrays,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step_t", self.step_t),
            ("step_r", self.step_r),
            ("step_c", self.step_c),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.fd_rel_step > 0.0) {
            return Err(Error::InvalidConfig("fd_rel_step must be positive".into()));
        }
        Ok(())
    }
}

/// Proximal weight `τ = -1/(2κ̂)` of the quadratic surrogate for ascent
/// step `κ̂`.
pub fn tau_for_step(step: f64) -> f64 {
    -1.0 / (2.0 * step)
}

/// Coordinate-wise clipping onto `[lower, upper]`.
pub fn project_box(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| {
            if v <= lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
        .collect()
}

pub fn in_box(x: &[f64], bounds: &[(f64, f64)]) -> bool {
    x.iter()
        .zip(bounds)
        .all(|(&v, &(lo, hi))| lo <= v && v <= hi)
}

/// Box constraints on stacked positions and orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    pub t_bounds: Vec<(f64, f64)>,
    pub r_bounds: Vec<(f64, f64)>,
}

impl FeasibleSet {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let layouts = scenario.initial_layouts()?;
        let t_bounds = layouts.iter().flat_map(|l| l.flat_bounds()).collect();
        let r_bounds = vec![scenario.orientation_bounds(); 3 * scenario.num_aps];
        Ok(Self { t_bounds, r_bounds })
    }
}

/// Iterate plus gradient-tracking memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CsscaState {
    pub iteration: usize,
    /// Antenna positions stacked per AP, antenna and axis (`3NM` entries).
    pub t: Vec<f64>,
    /// Orientations stacked per AP as `(alpha, beta, gamma)` (`3M` entries).
    pub r: Vec<f64>,
    pub c: LongTimescaleParam,
    pub f_t: Vec<f64>,
    pub f_r: Vec<f64>,
    pub f_c: Vec<C64>,
    pub tau_t: f64,
    pub tau_r: f64,
    pub tau_c: f64,
}

impl CsscaState {
    /// Initial layouts, zero rotation, and `c0` (or `c_{k,m} = e_k`).
    pub fn initial(
        scenario: &Scenario,
        config: &CsscaConfig,
        c0: Option<LongTimescaleParam>,
    ) -> Result<Self> {
        let t: Vec<f64> = scenario
            .initial_layouts()?
            .iter()
            .flat_map(|l| l.flat_positions())
            .collect();
        let r = vec![0.0; 3 * scenario.num_aps];
        let c = c0.unwrap_or_else(|| {
            LongTimescaleParam::interference_free(scenario.num_users, scenario.num_aps)
        });
        let nc = c.as_slice().len();
        Ok(Self {
            iteration: 0,
            f_t: vec![0.0; t.len()],
            f_r: vec![0.0; r.len()],
            f_c: vec![C64::new(0.0, 0.0); nc],
            t,
            r,
            c,
            tau_t: tau_for_step(config.step_t * scenario.wavelength.powi(2)),
            tau_r: tau_for_step(config.step_r * 1f64.to_radians().powi(2)),
            tau_c: tau_for_step(config.step_c),
        })
    }

    pub fn orientations(&self) -> Vec<Orientation> {
        self.r
            .chunks_exact(3)
            .map(Orientation::from_slice)
            .collect()
    }

    /// Antenna positions of AP `m`.
    pub fn positions(&self, m: usize, num_antennas: usize) -> Vec<Vector3<f64>> {
        positions_of(&self.t, m, num_antennas)
    }

    pub fn layouts(&self, scenario: &Scenario) -> Result<Vec<AntennaLayout>> {
        let n = scenario.num_antennas;
        scenario
            .initial_layouts()?
            .into_iter()
            .enumerate()
            .map(|(m, l)| l.with_flat_positions(&self.t[3 * n * m..3 * n * (m + 1)]))
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.t
            .iter()
            .chain(&self.r)
            .chain(&self.f_t)
            .chain(&self.f_r)
            .all(|v| v.is_finite())
            && self.c.is_finite()
            && self
                .f_c
                .iter()
                .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn positions_of(t: &[f64], m: usize, num_antennas: usize) -> Vec<Vector3<f64>> {
    t[3 * num_antennas * m..3 * num_antennas * (m + 1)]
        .chunks_exact(3)
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect()
}

/// Fresh sample gradients. Frozen variables carry empty vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<C64>,
}

/// `f_v ← (1 − rho) f_v + rho ∇_v g` for every variable with a fresh
/// gradient.
pub fn track_gradients(state: &mut CsscaState, fresh: &Gradients, rho: f64) {
    fn mix<T>(acc: &mut [T], fresh: &[T], rho: f64)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        if fresh.is_empty() {
            return;
        }
        for (a, g) in acc.iter_mut().zip(fresh) {
            *a = *a * (1.0 - rho) + *g * rho;
        }
    }
    mix(&mut state.f_t, &fresh.t, rho);
    mix(&mut state.f_r, &fresh.r, rho);
    mix(&mut state.f_c, &fresh.c, rho);
}

/// Maximisers of the three decoupled surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct Bars {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<C64>,
}

/// `v̄ = Π(v − f_v / (2 τ_v))` for positions and orientations, unprojected
/// for the long-timescale parameter.
pub fn solve_subproblems(state: &CsscaState, feasible: &FeasibleSet) -> Bars {
    let step = |v: &[f64], f: &[f64], tau: f64| -> Vec<f64> {
        v.iter().zip(f).map(|(x, g)| x - g / (2.0 * tau)).collect()
    };
    let t = project_box(&step(&state.t, &state.f_t, state.tau_t), &feasible.t_bounds);
    let r = project_box(&step(&state.r, &state.f_r, state.tau_r), &feasible.r_bounds);
    let c = state
        .c
        .as_slice()
        .iter()
        .zip(&state.f_c)
        .map(|(x, g)| x - g / (2.0 * state.tau_c))
        .collect();
    Bars { t, r, c }
}

/// `v ← (1 − gamma) v + gamma v̄`; advances the iteration counter.
pub fn smooth_update(state: &mut CsscaState, bars: &Bars, gamma: f64) {
    for (v, b) in state.t.iter_mut().zip(&bars.t) {
        *v = (1.0 - gamma) * *v + gamma * b;
    }
    for (v, b) in state.r.iter_mut().zip(&bars.r) {
        *v = (1.0 - gamma) * *v + gamma * b;
    }
    for (v, b) in state.c.as_mut_slice().iter_mut().zip(&bars.c) {
        *v = *v * (1.0 - gamma) + *b * gamma;
    }
    state.iteration += 1;
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub rho: f64,
    pub gamma: f64,
    /// Sum rate of this iteration's short-timescale beamformers on its
    /// fading draw.
    pub sample_objective: f64,
    /// Average of the objective at the current iterate over every fading
    /// draw seen so far.
    pub running_objective: f64,
    pub positions_feasible: bool,
    pub orientations_feasible: bool,
}

#[derive(Debug, Clone)]
pub struct CsscaOutcome {
    pub state: CsscaState,
    pub trace: Vec<TraceRecord>,
}

impl CsscaOutcome {
    pub fn orientations(&self) -> Vec<Orientation> {
        self.state.orientations()
    }
}

/// Channel, local receivers and per-AP objective terms at one iterate.
struct Snapshot {
    channel: ChannelMatrix,
    receivers: Vec<CMatrix>,
    terms: Vec<ApTerms>,
}

struct Evaluator<'a> {
    scenario: &'a Scenario,
    paths: &'a PathSet,
}

impl Evaluator<'_> {
    fn block(
        &self,
        fading: &FadingSample,
        m: usize,
        positions: &[Vector3<f64>],
        o: Orientation,
    ) -> CMatrix {
        assemble_ap_block(
            self.paths,
            fading,
            m,
            positions,
            o,
            self.scenario.wavelength,
        )
    }

    fn terms(&self, h_m: &CMatrix, m: usize, c: &LongTimescaleParam) -> Result<(CMatrix, ApTerms)> {
        let g = local_receiver(h_m, self.scenario.noise_power)?;
        let terms = ap_terms_with_receiver(h_m, &g, m, c);
        Ok((g, terms))
    }

    fn snapshot(&self, state: &CsscaState, fading: &FadingSample) -> Result<Snapshot> {
        let n = self.scenario.num_antennas;
        let orientations = state.orientations();
        let mut blocks = Vec::with_capacity(self.scenario.num_aps);
        let mut receivers = Vec::with_capacity(self.scenario.num_aps);
        let mut terms = Vec::with_capacity(self.scenario.num_aps);
        for m in 0..self.scenario.num_aps {
            let h_m = self.block(fading, m, &state.positions(m, n), orientations[m]);
            let (g, t) = self.terms(&h_m, m, &state.c)?;
            blocks.push(h_m);
            receivers.push(g);
            terms.push(t);
        }
        Ok(Snapshot {
            channel: ChannelMatrix { blocks },
            receivers,
            terms,
        })
    }

    fn objective(&self, state: &CsscaState, fading: &FadingSample) -> Result<f64> {
        let snap = self.snapshot(state, fading)?;
        Ok(objective_from_terms(
            &snap.terms,
            None,
            self.scenario.noise_power,
        ))
    }

    /// Objective with AP `m` replaced by the given block; errors surface as
    /// NaN so the caller can detect them after the sweep.
    fn objective_with_block(
        &self,
        snap: &Snapshot,
        m: usize,
        h_m: &CMatrix,
        c: &LongTimescaleParam,
    ) -> f64 {
        match self.terms(h_m, m, c) {
            Ok((_, t)) => {
                objective_from_terms(&snap.terms, Some((m, &t)), self.scenario.noise_power)
            }
            Err(_) => f64::NAN,
        }
    }

    fn position_gradient(
        &self,
        state: &CsscaState,
        snap: &Snapshot,
        fading: &FadingSample,
        feasible: &FeasibleSet,
        rel_step: f64,
    ) -> Vec<f64> {
        let n = self.scenario.num_antennas;
        let orientations = state.orientations();
        grad_numeric_coordinatewise(
            |i, value| {
                let m = i / (3 * n);
                let mut positions = state.positions(m, n);
                let local = i % (3 * n);
                positions[local / 3][local % 3] = value;
                let h_m = self.block(fading, m, &positions, orientations[m]);
                self.objective_with_block(snap, m, &h_m, &state.c)
            },
            &state.t,
            &feasible.t_bounds,
            rel_step,
        )
    }

    fn orientation_gradient(
        &self,
        state: &CsscaState,
        snap: &Snapshot,
        fading: &FadingSample,
        feasible: &FeasibleSet,
        rel_step: f64,
    ) -> Vec<f64> {
        let n = self.scenario.num_antennas;
        grad_numeric_coordinatewise(
            |i, value| {
                let m = i / 3;
                let mut angles = [state.r[3 * m], state.r[3 * m + 1], state.r[3 * m + 2]];
                angles[i % 3] = value;
                let h_m = self.block(
                    fading,
                    m,
                    &state.positions(m, n),
                    Orientation::from_slice(&angles),
                );
                self.objective_with_block(snap, m, &h_m, &state.c)
            },
            &state.r,
            &feasible.r_bounds,
            rel_step,
        )
    }
}

fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Runs the optimizer from `state`, drawing one fading realization per
/// iteration from `sampler`.
pub fn run_from_state<S>(
    scenario: &Scenario,
    paths: &PathSet,
    config: &CsscaConfig,
    mut state: CsscaState,
    mut sampler: S,
) -> Result<CsscaOutcome>
where
    S: FnMut() -> FadingSample,
{
    config.validate()?;
    let feasible = FeasibleSet::from_scenario(scenario)?;
    let eval = Evaluator { scenario, paths };
    let noise = scenario.noise_power;
    let mut history: Vec<FadingSample> = Vec::with_capacity(config.s_max);
    let mut trace = Vec::with_capacity(config.s_max);

    for s in 0..config.s_max {
        let (rho, gamma) = config.schedule.at(s);
        history.push(sampler());
        let fading = history.last().expect("just pushed");

        let snap = eval.snapshot(&state, fading)?;
        // short-timescale beamformers of this slot
        let w = BeamformerSet::decentralized(&snap.receivers, &state.c);
        let sample = per_user_rates(&snap.channel.stacked(), &w, noise)?.sum_rate;

        let mut running = sample;
        for past in &history[..history.len() - 1] {
            running += eval.objective(&state, past)?;
        }
        running /= history.len() as f64;

        let fresh = Gradients {
            c: grad_c_with_receivers(&snap.channel, &snap.receivers, &state.c, noise),
            t: if config.move_positions {
                eval.position_gradient(&state, &snap, fading, &feasible, config.fd_rel_step)
            } else {
                Vec::new()
            },
            r: if config.rotate_arrays {
                eval.orientation_gradient(&state, &snap, fading, &feasible, config.fd_rel_step)
            } else {
                Vec::new()
            },
        };
        if fresh.t.iter().chain(&fresh.r).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: s,
                what: "finite-difference gradient",
            });
        }

        track_gradients(&mut state, &fresh, rho);
        let bars = solve_subproblems(&state, &feasible);
        smooth_update(&mut state, &bars, gamma);
        // a convex combination can round one ulp past a face
        state.t = project_box(&state.t, &feasible.t_bounds);
        state.r = project_box(&state.r, &feasible.r_bounds);
        if !state.is_finite() {
            return Err(Error::Diverged {
                iteration: s,
                what: "iterate",
            });
        }

        trace.push(TraceRecord {
            iteration: s,
            rho,
            gamma,
            sample_objective: sample,
            running_objective: running,
            positions_feasible: in_box(&state.t, &feasible.t_bounds),
            orientations_feasible: in_box(&state.r, &feasible.r_bounds),
        });

        if let Some(tol) = config.early_stop_tolerance {
            if trace.len() >= 20 {
                let last: Vec<f64> = trace[trace.len() - 20..]
                    .iter()
                    .map(|r| r.running_objective)
                    .collect();
                if spread(&last) < tol {
                    break;
                }
            }
        }
    }
    Ok(CsscaOutcome { state, trace })
}

/// Runs the optimizer from the initial layout with fading drawn from `rng`.
pub fn run<R: Rng + ?Sized>(
    scenario: &Scenario,
    paths: &PathSet,
    config: &CsscaConfig,
    rng: &mut R,
) -> Result<CsscaOutcome> {
    let c0 = match config.warm_start_samples {
        Some(samples) => {
            let layouts = scenario.initial_layouts()?;
            let orientations = vec![Orientation::IDENTITY; scenario.num_aps];
            let v = estimate_v(
                paths,
                &layouts,
                &orientations,
                scenario.wavelength,
                scenario.noise_power,
                samples,
                rng,
            )?;
            Some(solve_long_param(&v)?)
        }
        None => None,
    };
    let state = CsscaState::initial(scenario, config, c0)?;
    run_from_state(scenario, paths, config, state, || sample_fading(paths, rng))
}

/// Runs one comparison scheme. Optimizing schemes run the CSSCA loop with
/// their frozen variables excluded; the centralized baseline keeps the
/// initial layout and records the centralized MMSE sum rate of `s_max`
/// fading draws as its trace.
pub fn run_baseline<R: Rng + ?Sized>(
    scheme: Scheme,
    scenario: &Scenario,
    paths: &PathSet,
    config: &CsscaConfig,
    rng: &mut R,
) -> Result<CsscaOutcome> {
    if scheme != Scheme::CentralizedMmse {
        return run(scenario, paths, &config.for_scheme(scheme), rng);
    }
    let state = CsscaState::initial(scenario, config, None)?;
    let layouts = scenario.initial_layouts()?;
    let orientations = vec![Orientation::IDENTITY; scenario.num_aps];
    let mut trace = Vec::with_capacity(config.s_max);
    let mut total = 0.0;
    for s in 0..config.s_max {
        let fading = sample_fading(paths, rng);
        let h = crate::channel::assemble_channel(
            paths,
            &fading,
            &layouts,
            &orientations,
            scenario.wavelength,
        )?
        .stacked();
        let w = centralized_mmse(&h, scenario.noise_power)?;
        let rate = per_user_rates(&h, &w, scenario.noise_power)?.sum_rate;
        total += rate;
        let (rho, gamma) = config.schedule.at(s);
        trace.push(TraceRecord {
            iteration: s,
            rho,
            gamma,
            sample_objective: rate,
            running_objective: total / (s + 1) as f64,
            positions_feasible: true,
            orientations_feasible: true,
        });
    }
    Ok(CsscaOutcome { state, trace })
}

/// Sample objective of a finished state on one fading draw.
pub fn evaluate_state(
    scenario: &Scenario,
    paths: &PathSet,
    state: &CsscaState,
    fading: &FadingSample,
) -> Result<f64> {
    let layouts = state.layouts(scenario)?;
    let h = crate::channel::assemble_channel(
        paths,
        fading,
        &layouts,
        &state.orientations(),
        scenario.wavelength,
    )?;
    sample_objective(&h, &state.c, scenario.noise_power)
}

/// Centralized MMSE sum rate at the state's layout on one fading draw.
pub fn evaluate_centralized(
    scenario: &Scenario,
    paths: &PathSet,
    state: &CsscaState,
    fading: &FadingSample,
) -> Result<f64> {
    let layouts = state.layouts(scenario)?;
    let h = crate::channel::assemble_channel(
        paths,
        fading,
        &layouts,
        &state.orientations(),
        scenario.wavelength,
    )?
    .stacked();
    let w = centralized_mmse(&h, scenario.noise_power)?;
    Ok(per_user_rates(&h, &w, scenario.noise_power)?.sum_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_paths, place_users, ScenarioConfig, UserDistribution};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: ScenarioConfig, seed: u64) -> (Scenario, PathSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Scenario::from_config(&cfg).unwrap();
        let users = place_users(UserDistribution::Uniform, &s, &mut rng);
        let s = s.with_users(users).unwrap();
        let p = generate_paths(&s, &mut rng).unwrap();
        (s, p)
    }

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_aps: 3,
            num_antennas: 2,
            num_users: 3,
            num_paths: 3,
            tx_power_dbm: 50.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(step_schedule(0), (1.0, 1.0));
        let (rho, gamma) = step_schedule(15);
        assert!((rho - 16f64.powf(-0.9)).abs() < 1e-15);
        assert_eq!(gamma, 0.5);
        for s in 0..200 {
            let (a, b) = step_schedule(s);
            let (c, d) = step_schedule(s + 1);
            assert!(c < a && d < b && c > 0.0 && d > 0.0);
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("bogus".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let (s, p) = setup(small(), 1);
        let cfg = CsscaConfig {
            s_max: 0,
            ..CsscaConfig::default()
        };
        let out = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.state, CsscaState::initial(&s, &cfg, None).unwrap());
    }

    #[test]
    fn frozen_region_and_range_keep_layout() {
        let (s, p) = setup(
            ScenarioConfig {
                movable_region_wavelengths: 0.0,
                rotatable_range_deg: 0.0,
                ..small()
            },
            3,
        );
        let cfg = CsscaConfig {
            s_max: 8,
            ..CsscaConfig::default()
        };
        let init = CsscaState::initial(&s, &cfg, None).unwrap();
        let out = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(out.state.t, init.t);
        assert!(out.state.r.iter().all(|&v| v == 0.0));
        assert_ne!(out.state.c, init.c);
    }

    #[test]
    fn fpa_freezes_layout_and_iterates_stay_feasible() {
        let (s, p) = setup(small(), 5);
        let cfg = CsscaConfig {
            s_max: 10,
            ..CsscaConfig::default()
        };
        let init = CsscaState::initial(&s, &cfg, None).unwrap();
        let fpa =
            run_baseline(Scheme::Fpa, &s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(fpa.state.t, init.t);
        assert_eq!(fpa.state.r, init.r);

        let full = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(full.trace.len(), 10);
        assert!(full
            .trace
            .iter()
            .all(|r| r.positions_feasible && r.orientations_feasible));
        assert_ne!(full.state.t, init.t);
        let feasible = FeasibleSet::from_scenario(&s).unwrap();
        assert!(in_box(&full.state.t, &feasible.t_bounds));
        assert!(in_box(&full.state.r, &feasible.r_bounds));
        assert!(full.state.layouts(&s).is_ok());
    }

    #[test]
    fn runs_are_reproducible() {
        let (s, p) = setup(small(), 7);
        let cfg = CsscaConfig {
            s_max: 6,
            ..CsscaConfig::default()
        };
        let a = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn first_running_objective_is_the_sample_objective() {
        let (s, p) = setup(small(), 9);
        let cfg = CsscaConfig {
            s_max: 3,
            ..CsscaConfig::default()
        };
        let out = run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(
            out.trace[0].running_objective,
            out.trace[0].sample_objective
        );
    }

    #[test]
    fn deterministic_channel_trace_settles_monotonically() {
        let (s, p) = setup(small(), 11);
        let p = p.los_only();
        let fading = sample_fading(&p, &mut ChaCha8Rng::seed_from_u64(12));
        // steps below the inverse curvature of the objective
        let cfg = CsscaConfig {
            s_max: 200,
            step_t: 0.05,
            step_r: 150.0,
            ..CsscaConfig::default()
        };
        let init = CsscaState::initial(&s, &cfg, None).unwrap();
        let out = run_from_state(&s, &p, &cfg, init, || fading.clone()).unwrap();
        for r in &out.trace {
            assert!(
                (r.running_objective - r.sample_objective).abs()
                    < 1e-9 * r.sample_objective.max(1.0)
            );
        }
        let tail = &out.trace[out.trace.len() - 50..];
        for w in tail.windows(2) {
            assert!(
                w[1].running_objective >= w[0].running_objective - 1e-6,
                "{} -> {}",
                w[0].running_objective,
                w[1].running_objective
            );
        }
        assert!(out.trace.last().unwrap().running_objective > out.trace[0].running_objective);
    }

    #[test]
    fn early_stop_cuts_trace() {
        let (s, p) = setup(small(), 13);
        let p = p.los_only();
        let fading = sample_fading(&p, &mut ChaCha8Rng::seed_from_u64(14));
        let cfg = CsscaConfig {
            s_max: 300,
            early_stop_tolerance: Some(f64::INFINITY),
            ..CsscaConfig::default()
        };
        let init = CsscaState::initial(&s, &cfg, None).unwrap();
        let out = run_from_state(&s, &p, &cfg, init, || fading.clone()).unwrap();
        assert_eq!(out.trace.len(), 20);
    }

    #[test]
    fn centralized_baseline_records_sample_rates() {
        let (s, p) = setup(small(), 15);
        let cfg = CsscaConfig {
            s_max: 5,
            ..CsscaConfig::default()
        };
        let out = run_baseline(
            Scheme::CentralizedMmse,
            &s,
            &p,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(16),
        )
        .unwrap();
        assert_eq!(out.trace.len(), 5);
        let mean = out.trace.iter().map(|r| r.sample_objective).sum::<f64>() / 5.0;
        assert!((out.trace[4].running_objective - mean).abs() < 1e-9 * mean);
    }

    #[test]
    fn invalid_step_rejected() {
        let (s, p) = setup(small(), 17);
        let cfg = CsscaConfig {
            step_r: 0.0,
            ..CsscaConfig::default()
        };
        assert!(matches!(
            run(&s, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn tracking_with_unit_weight_replaces_memory() {
        let (s, _) = setup(small(), 18);
        let cfg = CsscaConfig::default();
        let mut st = CsscaState::initial(&s, &cfg, None).unwrap();
        st.f_r = vec![5.0; st.r.len()];
        let fresh = Gradients {
            t: Vec::new(),
            r: vec![1.0; st.r.len()],
            c: vec![C64::new(2.0, -1.0); st.f_c.len()],
        };
        track_gradients(&mut st, &fresh, 1.0);
        assert!(st.f_r.iter().all(|&v| v == 1.0));
        assert!(st.f_t.iter().all(|&v| v == 0.0));
        assert!(st.f_c.iter().all(|&z| z == C64::new(2.0, -1.0)));
        track_gradients(&mut st, &fresh, 0.25);
        assert!(st.f_r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn subproblem_is_projected_ascent_step() {
        let (s, _) = setup(small(), 19);
        let cfg = CsscaConfig::default();
        let feasible = FeasibleSet::from_scenario(&s).unwrap();
        let mut st = CsscaState::initial(&s, &cfg, None).unwrap();
        st.f_r = vec![1e-3; st.r.len()];
        st.f_c = vec![C64::new(0.1, 0.2); st.f_c.len()];
        let bars = solve_subproblems(&st, &feasible);
        // ten degrees squared per unit gradient, in radians
        let kappa_r = 10.0 * (std::f64::consts::PI / 180.0).powi(2);
        assert!(bars.r.iter().all(|&v| (v - 1e-3 * kappa_r).abs() < 1e-15));
        assert!(bars
            .c
            .iter()
            .zip(st.c.as_slice())
            .all(|(b, c)| (b - c - C64::new(1.0, 2.0)).norm() < 1e-12));
        st.f_r = vec![1e3; st.r.len()];
        let bars = solve_subproblems(&st, &feasible);
        assert!(bars.r.iter().all(|&v| v == feasible.r_bounds[0].1));
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(
            xs in prop::collection::vec((-5.0f64..5.0, -2.0f64..0.0, 0.0f64..2.0), 1..12)
        ) {
            let x: Vec<f64> = xs.iter().map(|p| p.0).collect();
            let b: Vec<(f64, f64)> = xs.iter().map(|p| (p.1, p.2)).collect();
            let once = project_box(&x, &b);
            prop_assert!(in_box(&once, &b));
            prop_assert_eq!(project_box(&once, &b), once.clone());
            for ((v, p), bound) in x.iter().zip(&once).zip(&b) {
                if bound.0 <= *v && *v <= bound.1 {
                    prop_assert_eq!(v, p);
                }
            }
        }

        #[test]
        fn smoothing_preserves_feasibility(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10),
            gamma in 0.0f64..=1.0,
        ) {
            let bounds = vec![(0.0, 1.0); pts.len()];
            let mut x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let bar: Vec<f64> = pts.iter().map(|p| p.1).collect();
            for (v, b) in x.iter_mut().zip(&bar) {
                *v = (1.0 - gamma) * *v + gamma * b;
            }
            prop_assert!(in_box(&x, &bounds));
        }
    }
}
