//! Strang split-step propagation of the coupled condensate/impurity system.
//!
//! In units of the condensate oscillator length and trap period the two
//! fields obey
//!
//! ```text
//! i dψ/dt   = [-1/2 ∂² + z²/2 + G_B |ψ|² + G_IB |ψ_I|²] ψ
//! i dψ_I/dt = [-α²/2 ∂² + z²/(2α²) + G_BI |ψ|²] ψ_I
//! ```
//!
//! with both fields normalised to one. Imaginary time uses the same kernels
//! with `dt -> -i dτ` followed by renormalisation.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D, RealField};

/// How the dimensionless coupling `g_IB` maps onto the two effective couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingConvention {
    /// `G_IB = G_BI = N_I g_IB`: the quoted value acts on both species.
    Symmetric,
    /// `G_IB = N_I g_IB`, `G_BI = N_B g_IB`: mean-field counting of pairs.
    PerPair,
}

impl CouplingConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Symmetric => "symmetric",
            Self::PerPair => "per_pair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symmetric" => Some(Self::Symmetric),
            "per_pair" => Some(Self::PerPair),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    Condensate,
    Impurity,
}

impl Species {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Condensate => "bec",
            Self::Impurity => "impurity",
        }
    }
}

/// Dimensionless model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub g_b: f64,
    pub g_ib: f64,
    pub n_b: u32,
    pub n_i: u32,
    pub alpha: f64,
    pub trap_b_on: bool,
    pub trap_i_on: bool,
    pub g_ib_override: Option<f64>,
    pub g_bi_override: Option<f64>,
    pub convention: CouplingConvention,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            g_b: 4.71,
            g_ib: 0.16,
            n_b: 200,
            n_i: 1,
            alpha: 0.808,
            trap_b_on: true,
            trap_i_on: true,
            g_ib_override: None,
            g_bi_override: None,
            convention: CouplingConvention::Symmetric,
        }
    }
}

/// Couplings and trap flags resolved for one stretch of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings {
    pub g_b: f64,
    /// Impurity density seen by the condensate.
    pub g_ib: f64,
    /// Condensate density seen by the impurity.
    pub g_bi: f64,
    pub alpha: f64,
    pub trap_b: bool,
    pub trap_i: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.n_b < 1 || self.n_i < 1 {
            return Err(Error::InvalidParameter("atom numbers must be at least 1".into()));
        }
        let finite = [self.g_b, self.g_ib]
            .into_iter()
            .chain(self.g_ib_override)
            .chain(self.g_bi_override)
            .all(f64::is_finite);
        if !finite {
            return Err(Error::InvalidParameter("couplings must be finite".into()));
        }
        Ok(())
    }

    /// `G_IB`: override if set, otherwise `N_I g_IB`.
    pub fn coupling_ib(&self) -> f64 {
        self.g_ib_override.unwrap_or(self.n_i as f64 * self.g_ib)
    }

    /// `G_BI`: override if set, otherwise per the coupling convention.
    pub fn coupling_bi(&self) -> f64 {
        self.g_bi_override.unwrap_or(match self.convention {
            CouplingConvention::Symmetric => self.n_i as f64 * self.g_ib,
            CouplingConvention::PerPair => self.n_b as f64 * self.g_ib,
        })
    }

    pub fn couplings(&self) -> Couplings {
        Couplings {
            g_b: self.g_b,
            g_ib: self.coupling_ib(),
            g_bi: self.coupling_bi(),
            alpha: self.alpha,
            trap_b: self.trap_b_on,
            trap_i: self.trap_i_on,
        }
    }

    /// Parameters in force during `segment`.
    pub fn for_segment(&self, segment: &Segment) -> ModelParams {
        let mut p = self.with_g_ib(segment.g_ib);
        p.trap_b_on = segment.trap_b_on;
        p.trap_i_on = segment.trap_i_on;
        p
    }

    /// Same parameters at another `g_ib`.
    ///
    /// Overrides are values at the configured `g_ib`; they scale in
    /// proportion, so switching the coupling off zeroes them too.
    pub fn with_g_ib(&self, g_ib: f64) -> ModelParams {
        let mut p = self.clone();
        if g_ib != self.g_ib {
            if self.g_ib != 0.0 {
                let ratio = g_ib / self.g_ib;
                p.g_ib_override = self.g_ib_override.map(|v| v * ratio);
                p.g_bi_override = self.g_bi_override.map(|v| v * ratio);
            } else {
                p.g_ib_override = None;
                p.g_bi_override = None;
            }
            p.g_ib = g_ib;
        }
        p
    }
}

/// Both wave functions and the current dimensionless time.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub psi_b: ComplexField,
    pub psi_i: ComplexField,
    pub time: f64,
}

impl SystemState {
    pub fn new(psi_b: ComplexField, psi_i: ComplexField) -> Result<Self> {
        if !psi_b.same_grid(&psi_i) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            psi_b,
            psi_i,
            time: 0.0,
        })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        self.psi_b.grid()
    }

    pub fn field(&self, species: Species) -> &ComplexField {
        match species {
            Species::Condensate => &self.psi_b,
            Species::Impurity => &self.psi_i,
        }
    }
}

/// One constant stretch of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub trap_b_on: bool,
    pub trap_i_on: bool,
    pub g_ib: f64,
}

/// Piecewise-constant time course of traps and interspecies coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct QuenchSchedule {
    segments: Vec<Segment>,
}

impl QuenchSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Schedule("schedule has no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::Schedule(format!(
                "first segment starts at {} instead of 0",
                first.t_start
            )));
        }
        for s in &segments {
            if !(s.t_end > s.t_start) {
                return Err(Error::Schedule(format!("empty segment [{}, {}]", s.t_start, s.t_end)));
            }
        }
        for w in segments.windows(2) {
            if w[1].t_start != w[0].t_end {
                return Err(Error::Schedule(format!(
                    "segments not contiguous at t = {} / {}",
                    w[0].t_end, w[1].t_start
                )));
            }
        }
        Ok(Self { segments })
    }

    /// Nothing changes: the configured traps and coupling hold throughout.
    pub fn constant(params: &ModelParams, t_final: f64) -> Result<Self> {
        Self::new(vec![Segment {
            t_start: 0.0,
            t_end: t_final,
            trap_b_on: params.trap_b_on,
            trap_i_on: params.trap_i_on,
            g_ib: params.g_ib,
        }])
    }

    /// Both traps switched off at t = 0, interspecies coupling kept.
    pub fn time_of_flight(params: &ModelParams, t_final: f64) -> Result<Self> {
        Self::new(vec![Segment {
            t_start: 0.0,
            t_end: t_final,
            trap_b_on: false,
            trap_i_on: false,
            g_ib: params.g_ib,
        }])
    }

    /// Interspecies coupling set to `g_after` at t = 0, traps kept on.
    pub fn interspecies_quench(params: &ModelParams, t_final: f64, g_after: f64) -> Result<Self> {
        Self::new(vec![Segment {
            t_start: 0.0,
            t_end: t_final,
            trap_b_on: params.trap_b_on,
            trap_i_on: params.trap_i_on,
            g_ib: g_after,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }
}

/// Time-ordered snapshots of an evolution.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    pub grid: Arc<Grid1D>,
    pub times: Vec<f64>,
    pub psi_b: Vec<ComplexField>,
    pub psi_i: Vec<ComplexField>,
    pub steps: usize,
}

impl SnapshotSeries {
    fn new(grid: Arc<Grid1D>) -> Self {
        Self {
            grid,
            times: Vec::new(),
            psi_b: Vec::new(),
            psi_i: Vec::new(),
            steps: 0,
        }
    }

    fn push(&mut self, state: &SystemState) {
        self.times.push(state.time);
        self.psi_b.push(state.psi_b.clone());
        self.psi_i.push(state.psi_i.clone());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn fields(&self, species: Species) -> &[ComplexField] {
        match species {
            Species::Condensate => &self.psi_b,
            Species::Impurity => &self.psi_i,
        }
    }

    pub fn densities(&self, species: Species) -> Vec<Vec<f64>> {
        self.fields(species).iter().map(|f| f.density().into_values()).collect()
    }

    pub fn last_state(&self) -> Option<SystemState> {
        let k = self.len().checked_sub(1)?;
        Some(SystemState {
            psi_b: self.psi_b[k].clone(),
            psi_i: self.psi_i[k].clone(),
            time: self.times[k],
        })
    }
}

fn check_grids(state: &SystemState) -> Result<()> {
    if state.psi_b.same_grid(&state.psi_i) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Pointwise condensate potential `z²/2 [trap] + G_B|ψ|² + G_IB|ψ_I|²`.
pub fn potential_b(state: &SystemState, params: &ModelParams) -> Result<RealField> {
    check_grids(state)?;
    let c = params.couplings();
    let mut v = vec![0.0; state.grid().n_points()];
    fill_potential_b(&mut v, state, &c);
    RealField::from_values(Arc::clone(state.grid()), v)
}

/// Pointwise impurity potential `z²/(2α²) [trap] + G_BI|ψ|²`.
pub fn potential_i(state: &SystemState, params: &ModelParams) -> Result<RealField> {
    check_grids(state)?;
    let c = params.couplings();
    let mut v = vec![0.0; state.grid().n_points()];
    fill_potential_i(&mut v, state, &c);
    RealField::from_values(Arc::clone(state.grid()), v)
}

fn fill_potential_b(out: &mut [f64], state: &SystemState, c: &Couplings) {
    let trap = if c.trap_b { 0.5 } else { 0.0 };
    let nodes = state.grid().nodes();
    for (j, v) in out.iter_mut().enumerate() {
        let z = nodes[j];
        *v = trap * z * z + c.g_b * state.psi_b.values()[j].norm_sqr() + c.g_ib * state.psi_i.values()[j].norm_sqr();
    }
}

fn fill_potential_i(out: &mut [f64], state: &SystemState, c: &Couplings) {
    let trap = if c.trap_i { 0.5 / (c.alpha * c.alpha) } else { 0.0 };
    let nodes = state.grid().nodes();
    for (j, v) in out.iter_mut().enumerate() {
        let z = nodes[j];
        *v = trap * z * z + c.g_bi * state.psi_b.values()[j].norm_sqr();
    }
}

/// Condensate and impurity energies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub e_b: f64,
    pub e_i: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.e_b + self.e_i
    }
}

/// `E_B` is the Gross-Pitaevskii functional of the condensate including its
/// interaction with the impurity density; `E_I` is the impurity expectation
/// value of its single-particle Hamiltonian. Kinetic terms are spectral.
pub fn energy(state: &SystemState, params: &ModelParams) -> Energies {
    energy_with(state, &params.couplings())
}

pub fn energy_with(state: &SystemState, c: &Couplings) -> Energies {
    let nodes = state.grid().nodes();
    let dz = state.grid().dz();
    let trap_b = if c.trap_b { 0.5 } else { 0.0 };
    let trap_i = if c.trap_i { 0.5 / (c.alpha * c.alpha) } else { 0.0 };
    let mut pot_b = 0.0;
    let mut pot_i = 0.0;
    for (j, &z) in nodes.iter().enumerate() {
        let nb = state.psi_b.values()[j].norm_sqr();
        let ni = state.psi_i.values()[j].norm_sqr();
        pot_b += trap_b * z * z * nb + 0.5 * c.g_b * nb * nb + c.g_ib * ni * nb;
        pot_i += trap_i * z * z * ni + c.g_bi * nb * ni;
    }
    Energies {
        e_b: 0.5 * state.psi_b.gradient_norm2() + pot_b * dz,
        e_i: 0.5 * c.alpha * c.alpha * state.psi_i.gradient_norm2() + pot_i * dz,
    }
}

struct KineticCache {
    dt: Complex64,
    alpha: f64,
    phase_b: Vec<Complex64>,
    phase_i: Vec<Complex64>,
}

/// Reusable split-step workspace bound to one grid.
pub struct Propagator {
    grid: Arc<Grid1D>,
    v_b: Vec<f64>,
    v_i: Vec<f64>,
    kinetic: Option<KineticCache>,
}

impl Propagator {
    pub fn new(grid: Arc<Grid1D>) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            v_b: vec![0.0; n],
            v_i: vec![0.0; n],
            kinetic: None,
        }
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    fn kinetic_phases(&mut self, dt: Complex64, alpha: f64) -> &KineticCache {
        let stale = match &self.kinetic {
            Some(k) => k.dt != dt || k.alpha != alpha,
            None => true,
        };
        if stale {
            let minus_i = Complex64::new(0.0, -1.0);
            let ks = self.grid.wavenumbers();
            let phase_b = ks.iter().map(|&k| (minus_i * dt * (0.5 * k * k)).exp()).collect();
            let phase_i = ks
                .iter()
                .map(|&k| (minus_i * dt * (0.5 * alpha * alpha * k * k)).exp())
                .collect();
            self.kinetic = Some(KineticCache {
                dt,
                alpha,
                phase_b,
                phase_i,
            });
        }
        self.kinetic.as_ref().expect("kinetic cache just filled")
    }

    fn kick(&mut self, state: &mut SystemState, c: &Couplings, dt: Complex64) {
        fill_potential_b(&mut self.v_b, state, c);
        fill_potential_i(&mut self.v_i, state, c);
        let factor = Complex64::new(0.0, -0.5) * dt;
        apply_potential(state.psi_b.values_mut(), &self.v_b, factor);
        apply_potential(state.psi_i.values_mut(), &self.v_i, factor);
    }

    /// One Strang step of length `dt` (imaginary time `dτ = dt` when
    /// `imaginary`). Both species receive a half potential kick from the
    /// current densities, a full kinetic step, and a half kick from the
    /// updated densities.
    pub fn step(&mut self, state: &mut SystemState, c: &Couplings, dt: f64, imaginary: bool, zeno: bool) -> Result<()> {
        let dtc = if imaginary {
            Complex64::new(0.0, -dt)
        } else {
            Complex64::new(dt, 0.0)
        };
        self.kick(state, c, dtc);
        let grid = Arc::clone(&self.grid);
        let phases = self.kinetic_phases(dtc, c.alpha);
        for (field, phase) in [(&mut state.psi_b, &phases.phase_b), (&mut state.psi_i, &phases.phase_i)] {
            let values = field.values_mut();
            grid.forward(values);
            for (v, p) in values.iter_mut().zip(phase.iter()) {
                *v *= p;
            }
            grid.inverse(values);
        }
        self.kick(state, c, dtc);
        if zeno {
            state.psi_i.project_odd_in_place();
        }
        if imaginary {
            state.psi_b.normalize();
            state.psi_i.normalize();
        } else if zeno {
            state.psi_i.normalize();
        }
        state.time += dt;
        if !(state.psi_b.is_finite() && state.psi_i.is_finite()) {
            return Err(Error::NonFinite { time: state.time });
        }
        Ok(())
    }
}

fn apply_potential(values: &mut [Complex64], potential: &[f64], factor: Complex64) {
    if factor.im == 0.0 {
        // imaginary time: factor = -dτ/2 is real
        for (v, &p) in values.iter_mut().zip(potential) {
            *v *= (factor.re * p).exp();
        }
    } else if factor.re == 0.0 {
        for (v, &p) in values.iter_mut().zip(potential) {
            let (s, c) = (factor.im * p).sin_cos();
            *v *= Complex64::new(c, s);
        }
    } else {
        for (v, &p) in values.iter_mut().zip(potential) {
            *v *= (factor * p).exp();
        }
    }
}

/// Single step returning a new state.
pub fn step(state: &SystemState, params: &ModelParams, dt: f64, imaginary: bool, zeno: bool) -> Result<SystemState> {
    check_grids(state)?;
    if !(dt.abs() > 0.0) {
        return Err(Error::InvalidParameter("dt must be nonzero".into()));
    }
    let mut next = state.clone();
    Propagator::new(Arc::clone(state.grid())).step(&mut next, &params.couplings(), dt, imaginary, zeno)?;
    Ok(next)
}

/// Options for a real-time evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub zeno: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            t_final: 10.0,
            dt: 1e-4,
            snapshot_stride: 500,
            zeno: false,
        }
    }
}

/// Result of an evolution that may have stopped early.
#[derive(Debug)]
pub struct Evolution {
    pub series: SnapshotSeries,
    pub state: SystemState,
    pub failure: Option<Error>,
}

/// Real-time evolution under `schedule`. Snapshots are taken at t = 0 and
/// after every `snapshot_stride` steps; segment boundaries are hit exactly by
/// shortening the last step of a segment.
pub fn evolve(
    state: &SystemState,
    params: &ModelParams,
    schedule: &QuenchSchedule,
    opts: &EvolveOptions,
) -> Result<SnapshotSeries> {
    let run = evolve_observed(state, params, schedule, opts, |_| {})?;
    match run.failure {
        Some(e) => Err(e),
        None => Ok(run.series),
    }
}

/// Like [`evolve`], calling `observer` after every step and returning the
/// partial series when the fields blow up.
pub fn evolve_observed(
    state: &SystemState,
    params: &ModelParams,
    schedule: &QuenchSchedule,
    opts: &EvolveOptions,
    mut observer: impl FnMut(&SystemState),
) -> Result<Evolution> {
    check_grids(state)?;
    params.validate()?;
    if !(opts.dt > 0.0) || opts.snapshot_stride == 0 {
        return Err(Error::InvalidParameter(
            "dt must be positive and snapshot_stride at least 1".into(),
        ));
    }
    if schedule.end() < opts.t_final * (1.0 - 1e-12) {
        return Err(Error::Schedule(format!(
            "schedule ends at {} before t_final = {}",
            schedule.end(),
            opts.t_final
        )));
    }

    let grid = Arc::clone(state.grid());
    let mut prop = Propagator::new(Arc::clone(&grid));
    let mut series = SnapshotSeries::new(grid);
    let mut current = state.clone();
    current.time = 0.0;
    series.push(&current);

    let mut global_step = 0usize;
    for segment in schedule.segments() {
        if segment.t_start >= opts.t_final {
            break;
        }
        let t_end = segment.t_end.min(opts.t_final);
        let couplings = params.for_segment(segment).couplings();
        let span = t_end - segment.t_start;
        let full = (span / opts.dt * (1.0 + 1e-12)).floor() as usize;
        let remainder = span - full as f64 * opts.dt;
        let n_steps = if remainder > 1e-9 * opts.dt { full + 1 } else { full };
        for i in 0..n_steps {
            let t0 = segment.t_start + i as f64 * opts.dt;
            let t1 = if i + 1 == n_steps {
                t_end
            } else {
                segment.t_start + (i + 1) as f64 * opts.dt
            };
            if let Err(e) = prop.step(&mut current, &couplings, t1 - t0, false, opts.zeno) {
                series.steps = global_step;
                return Ok(Evolution {
                    series,
                    state: current,
                    failure: Some(e),
                });
            }
            current.time = t1;
            global_step += 1;
            observer(&current);
            if global_step.is_multiple_of(opts.snapshot_stride) {
                series.push(&current);
            }
        }
    }
    series.steps = global_step;
    Ok(Evolution {
        series,
        state: current,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn gaussian(grid: &Arc<Grid1D>, width: f64) -> ComplexField {
        let c = 1.0 / (PI.sqrt() * width).sqrt();
        ComplexField::from_real_fn(Arc::clone(grid), |z| c * (-z * z / (2.0 * width * width)).exp())
    }

    fn excited(grid: &Arc<Grid1D>, a: f64) -> ComplexField {
        let c = (2.0 / (PI.sqrt() * a.powi(3))).sqrt();
        let mut f = ComplexField::from_real_fn(Arc::clone(grid), |z| c * z * (-z * z / (2.0 * a * a)).exp());
        f.project_odd_in_place();
        f
    }

    fn free_params() -> ModelParams {
        ModelParams {
            g_b: 0.0,
            g_ib: 0.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn coupling_resolution() {
        let mut p = ModelParams {
            g_ib: 2.0,
            n_b: 200,
            n_i: 1,
            ..ModelParams::default()
        };
        assert_eq!(p.coupling_ib(), 2.0);
        assert_eq!(p.coupling_bi(), 2.0);
        p.convention = CouplingConvention::PerPair;
        assert_eq!(p.coupling_bi(), 400.0);
        p.g_bi_override = Some(7.0);
        p.g_ib_override = Some(-1.0);
        assert_eq!(p.coupling_bi(), 7.0);
        assert_eq!(p.coupling_ib(), -1.0);
    }

    #[test]
    fn segment_scaling_of_overrides() {
        let p = ModelParams {
            g_ib: 80.0,
            g_bi_override: Some(40.0),
            ..ModelParams::default()
        };
        let off = p.for_segment(&Segment {
            t_start: 0.0,
            t_end: 1.0,
            trap_b_on: true,
            trap_i_on: true,
            g_ib: 0.0,
        });
        assert_eq!(off.coupling_bi(), 0.0);
        assert_eq!(off.coupling_ib(), 0.0);
        let same = p.for_segment(&Segment {
            t_start: 0.0,
            t_end: 1.0,
            trap_b_on: false,
            trap_i_on: false,
            g_ib: 80.0,
        });
        assert_eq!(same.coupling_bi(), 40.0);
        assert!(!same.trap_b_on && !same.trap_i_on);
    }

    #[test]
    fn potentials_trivial_cases() {
        let g = Grid1D::shared(64, 6.0).unwrap();
        let state = SystemState::new(gaussian(&g, 1.0), excited(&g, 0.808)).unwrap();
        let p = free_params();
        let vb = potential_b(&state, &p).unwrap();
        for (v, z) in vb.values().iter().zip(g.nodes()) {
            assert_abs_diff_eq!(*v, z * z / 2.0, epsilon = 1e-15);
        }
        let vi = potential_i(&state, &p).unwrap();
        for (v, z) in vi.values().iter().zip(g.nodes()) {
            assert_abs_diff_eq!(*v, z * z / (2.0 * 0.808 * 0.808), epsilon = 1e-12);
        }
        let trapless = ModelParams {
            g_b: 3.0,
            g_ib: 0.0,
            trap_b_on: false,
            trap_i_on: false,
            ..ModelParams::default()
        };
        let vb = potential_b(&state, &trapless).unwrap();
        for (v, f) in vb.values().iter().zip(state.psi_b.values()) {
            assert_abs_diff_eq!(*v, 3.0 * f.norm_sqr(), epsilon = 1e-15);
        }
        let vi = potential_i(&state, &trapless).unwrap();
        assert!(vi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repulsive_condensate_is_a_barrier_for_the_impurity() {
        let g = Grid1D::shared(256, 8.0).unwrap();
        let mu: f64 = 2.0;
        let r = (2.0 * mu).sqrt();
        let mut tf = ComplexField::from_real_fn(Arc::clone(&g), |z| (1.0 - z * z / (r * r)).max(0.0).sqrt());
        tf.normalize();
        let state = SystemState::new(tf, excited(&g, 0.808)).unwrap();
        let p = ModelParams {
            g_ib: 5.0,
            trap_i_on: false,
            ..ModelParams::default()
        };
        let vi = potential_i(&state, &p).unwrap();
        let centre = g.n_points() / 2;
        assert!(vi.values()[centre] > vi.values()[centre + 20]);
        assert!(vi.values()[centre + 20] > 0.0);
        assert_eq!(vi.values()[centre + 40], 0.0);
        assert_eq!(vi.values()[0], 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g1 = Grid1D::shared(64, 6.0).unwrap();
        let g2 = Grid1D::shared(128, 6.0).unwrap();
        assert!(matches!(
            SystemState::new(gaussian(&g1, 1.0), gaussian(&g2, 1.0)),
            Err(Error::GridMismatch)
        ));
        let bad = SystemState {
            psi_b: gaussian(&g1, 1.0),
            psi_i: gaussian(&g2, 1.0),
            time: 0.0,
        };
        assert!(matches!(potential_b(&bad, &free_params()), Err(Error::GridMismatch)));
    }

    #[test]
    fn oscillator_energies() {
        let g = Grid1D::shared(2048, 16.0).unwrap();
        let state = SystemState::new(gaussian(&g, 1.0), excited(&g, 0.808)).unwrap();
        let e = energy(&state, &free_params());
        assert_abs_diff_eq!(e.e_b, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(e.e_i, 1.5, epsilon = 1e-8);
    }

    #[test]
    fn real_time_step_is_unitary() {
        let g = Grid1D::shared(512, 12.0).unwrap();
        let mut state = SystemState::new(gaussian(&g, 1.3), excited(&g, 0.808)).unwrap();
        let p = ModelParams {
            g_b: 4.71,
            g_ib: 3.0,
            ..ModelParams::default()
        };
        let c = p.couplings();
        let mut prop = Propagator::new(Arc::clone(&g));
        for _ in 0..10 {
            prop.step(&mut state, &c, 1e-3, false, false).unwrap();
        }
        assert_abs_diff_eq!(state.psi_b.norm2(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.psi_i.norm2(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn imaginary_time_finds_ground_state() {
        let g = Grid1D::shared(256, 10.0).unwrap();
        let mut b = gaussian(&g, 1.7);
        for (v, z) in b.values_mut().iter_mut().zip(g.nodes()) {
            *v *= 1.0 + 0.3 * (z * 0.5).cos();
        }
        b.normalize();
        let mut state = SystemState::new(b, excited(&g, 1.4)).unwrap();
        let c = free_params().couplings();
        let mut prop = Propagator::new(Arc::clone(&g));
        for _ in 0..20_000 {
            prop.step(&mut state, &c, 1e-3, true, true).unwrap();
        }
        let e = energy_with(&state, &c);
        assert_abs_diff_eq!(e.e_b, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(e.e_i, 1.5, epsilon = 1e-6);
    }

    #[test]
    fn blow_up_is_reported() {
        let g = Grid1D::shared(64, 4.0).unwrap();
        let mut state = SystemState::new(gaussian(&g, 1.0), excited(&g, 1.0)).unwrap();
        let c = ModelParams {
            g_b: -1e300,
            ..ModelParams::default()
        }
        .couplings();
        let mut prop = Propagator::new(Arc::clone(&g));
        let res = prop.step(&mut state, &c, 1.0, true, false);
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn schedule_validation() {
        let seg = |a: f64, b: f64| Segment {
            t_start: a,
            t_end: b,
            trap_b_on: true,
            trap_i_on: true,
            g_ib: 0.0,
        };
        assert!(QuenchSchedule::new(vec![]).is_err());
        assert!(QuenchSchedule::new(vec![seg(0.5, 1.0)]).is_err());
        assert!(QuenchSchedule::new(vec![seg(0.0, 1.0), seg(1.5, 2.0)]).is_err());
        assert!(QuenchSchedule::new(vec![seg(0.0, 1.0), seg(1.0, 2.0)]).is_ok());
    }

    #[test]
    fn evolve_hits_segment_boundaries() {
        let g = Grid1D::shared(64, 6.0).unwrap();
        let state = SystemState::new(gaussian(&g, 1.0), excited(&g, 0.808)).unwrap();
        let seg = |a: f64, b: f64, trap: bool| Segment {
            t_start: a,
            t_end: b,
            trap_b_on: trap,
            trap_i_on: trap,
            g_ib: 0.0,
        };
        let schedule = QuenchSchedule::new(vec![seg(0.0, 0.0125, true), seg(0.0125, 0.05, false)]).unwrap();
        let mut times = Vec::new();
        let opts = EvolveOptions {
            t_final: 0.05,
            dt: 0.01,
            snapshot_stride: 1,
            zeno: false,
        };
        evolve_observed(&state, &free_params(), &schedule, &opts, |s| times.push(s.time)).unwrap();
        assert!(times.contains(&0.0125));
        assert_eq!(*times.last().unwrap(), 0.05);
        assert!(times.windows(2).all(|w| w[1] > w[0]));

        let short = QuenchSchedule::constant(&free_params(), 0.02).unwrap();
        assert!(matches!(
            evolve(&state, &free_params(), &short, &opts),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn snapshot_count_follows_stride() {
        let g = Grid1D::shared(64, 6.0).unwrap();
        let state = SystemState::new(gaussian(&g, 1.0), excited(&g, 0.808)).unwrap();
        let p = free_params();
        let sched = QuenchSchedule::constant(&p, 1.0).unwrap();
        let opts = EvolveOptions {
            t_final: 1.0,
            dt: 0.01,
            snapshot_stride: 10,
            zeno: false,
        };
        let series = evolve(&state, &p, &sched, &opts).unwrap();
        assert_eq!(series.len(), 11);
        assert_eq!(series.steps, 100);
        assert_abs_diff_eq!(series.times[10], 1.0, epsilon = 1e-12);
    }
}
