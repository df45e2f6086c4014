//! Imaginary-time relaxation of the coupled equilibrium.
//!
//! The condensate relaxes to its ground state while the impurity is held in
//! the odd-parity sector by projecting after every step, which is how the
//! excited impurity is kept from decaying.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::analytics::thomas_fermi_profile;
use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D};
use crate::observables::depleted_density;
use crate::solver::{energy_with, ModelParams, Propagator, SystemState};

/// Normalised trial excited state `sqrt(2/(sqrt(pi) A^3)) z exp(-z^2/(2A^2))`.
pub fn trial_impurity(grid: &Arc<Grid1D>, width: f64) -> ComplexField {
    let c = (2.0 / (PI.sqrt() * width.powi(3))).sqrt();
    let mut f = ComplexField::from_real_fn(Arc::clone(grid), |z| c * z * (-z * z / (2.0 * width * width)).exp());
    f.project_odd_in_place();
    f
}

/// Normalised Gaussian `exp(-z^2/(2w^2)) / (sqrt(pi) w)^{1/2}`.
pub fn gaussian_state(grid: &Arc<Grid1D>, width: f64) -> ComplexField {
    let c = 1.0 / (PI.sqrt() * width).sqrt();
    ComplexField::from_real_fn(Arc::clone(grid), |z| c * (-z * z / (2.0 * width * width)).exp())
}

/// Square root of the Thomas-Fermi density for coupling `g`, normalised.
pub fn thomas_fermi_state(grid: &Arc<Grid1D>, g: f64) -> Result<ComplexField> {
    let tf = thomas_fermi_profile(g)?;
    let mut f = ComplexField::from_real_fn(Arc::clone(grid), |z| tf.density(z).sqrt());
    f.normalize();
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BecSeed {
    /// Gaussian for `G_B <= 10`, Thomas-Fermi above.
    Auto,
    Gaussian,
    ThomasFermi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxOptions {
    pub dtau: f64,
    /// Relative energy change per unit imaginary time.
    pub tol: f64,
    pub max_iters: usize,
    /// Steps between energy samples and convergence checks.
    pub check_interval: usize,
    pub seed: BecSeed,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            dtau: 1e-4,
            tol: 1e-10,
            max_iters: 5_000_000,
            check_interval: 100,
            seed: BecSeed::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub tau: f64,
    pub e_b: f64,
    pub e_i: f64,
}

#[derive(Debug, Clone)]
pub struct RelaxationReport {
    pub final_state: SystemState,
    pub params: ModelParams,
    pub energy_trace: Vec<EnergySample>,
    pub iterations: usize,
    pub converged: bool,
}

impl RelaxationReport {
    pub fn final_energy(&self) -> Option<EnergySample> {
        self.energy_trace.last().copied()
    }

    /// True when `E_B + E_I` never rises by more than `slack` between
    /// samples, ignoring the first `skip_fraction` of the trace.
    pub fn is_energy_monotone(&self, skip_fraction: f64, slack: f64) -> bool {
        let skip = (self.energy_trace.len() as f64 * skip_fraction).ceil() as usize;
        self.energy_trace[skip.min(self.energy_trace.len())..]
            .windows(2)
            .all(|w| w[1].e_b + w[1].e_i <= w[0].e_b + w[0].e_i + slack)
    }
}

fn seed_state(params: &ModelParams, grid: &Arc<Grid1D>, seed: BecSeed) -> Result<SystemState> {
    let use_tf = match seed {
        BecSeed::Auto => params.g_b > 10.0,
        BecSeed::Gaussian => false,
        BecSeed::ThomasFermi => true,
    };
    let psi_b = if use_tf && params.g_b > 0.0 {
        thomas_fermi_state(grid, params.g_b)?
    } else {
        gaussian_state(grid, 1.0)
    };
    SystemState::new(psi_b, trial_impurity(grid, params.alpha))
}

/// Simultaneous imaginary-time relaxation of both species with the impurity
/// held odd. Stops once both energies change by less than `tol` (relative,
/// per unit imaginary time) between samples; hitting `max_iters` returns the
/// partial report with `converged = false`.
pub fn relax_coupled(params: &ModelParams, grid: &Arc<Grid1D>, opts: &RelaxOptions) -> Result<RelaxationReport> {
    let state = seed_state(params, grid, opts.seed)?;
    relax_from(state, params, opts)
}

/// Relaxation from a caller-supplied starting state.
pub fn relax_from(mut state: SystemState, params: &ModelParams, opts: &RelaxOptions) -> Result<RelaxationReport> {
    params.validate()?;
    if !(opts.tol > 0.0) || !(opts.dtau > 0.0) || opts.check_interval == 0 {
        return Err(Error::InvalidParameter(
            "relaxation needs tol > 0, dtau > 0 and check_interval >= 1".into(),
        ));
    }
    let c = params.couplings();
    let mut prop = Propagator::new(Arc::clone(state.grid()));
    state.psi_b.normalize();
    state.psi_i.project_odd_in_place();
    state.psi_i.normalize();
    state.time = 0.0;

    let e0 = energy_with(&state, &c);
    let mut trace = vec![EnergySample {
        tau: 0.0,
        e_b: e0.e_b,
        e_i: e0.e_i,
    }];
    let mut iterations = 0;
    let mut converged = false;
    let window = opts.dtau * opts.check_interval as f64;

    while iterations < opts.max_iters {
        let batch = opts.check_interval.min(opts.max_iters - iterations);
        for _ in 0..batch {
            prop.step(&mut state, &c, opts.dtau, true, true)?;
        }
        iterations += batch;
        let tau = iterations as f64 * opts.dtau;
        let e = energy_with(&state, &c);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(EnergySample {
            tau,
            e_b: e.e_b,
            e_i: e.e_i,
        });
        let rate = |now: f64, before: f64| (now - before).abs() / now.abs().max(1e-300) / window;
        if batch == opts.check_interval && rate(e.e_b, prev.e_b) < opts.tol && rate(e.e_i, prev.e_i) < opts.tol {
            converged = true;
            break;
        }
    }
    state.time = 0.0;
    Ok(RelaxationReport {
        final_state: state,
        params: params.clone(),
        energy_trace: trace,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurabilityOptions {
    pub alpha: f64,
    pub dtau: f64,
    pub tau_max: f64,
    /// Project onto odd parity after every step.
    pub zeno: bool,
    /// Amplitude of the impurity ground state mixed into the trial state.
    pub seed_amplitude: f64,
    pub sample_every: usize,
}

impl Default for DurabilityOptions {
    fn default() -> Self {
        Self {
            alpha: 0.808,
            dtau: 1e-3,
            tau_max: 100.0,
            zeno: false,
            seed_amplitude: 0.0,
            sample_every: 100,
        }
    }
}

/// Imaginary-time relaxation of a lone impurity started from the exact
/// excited state. Without projection the excited level survives only until
/// round-off (or the seeded contaminant) has grown into the ground state.
/// Returns `(tau, E_I)` samples.
pub fn zeno_durability_experiment(grid: &Arc<Grid1D>, opts: &DurabilityOptions) -> Result<Vec<(f64, f64)>> {
    if !(opts.alpha > 0.0) || !(opts.dtau > 0.0) || !(opts.tau_max > 0.0) || opts.sample_every == 0 {
        return Err(Error::InvalidParameter(
            "durability experiment needs positive alpha, dtau, tau_max".into(),
        ));
    }
    let alpha = opts.alpha;
    let mut psi = trial_impurity(grid, alpha);
    if opts.seed_amplitude != 0.0 {
        let ground = gaussian_state(grid, alpha);
        for (v, g) in psi.values_mut().iter_mut().zip(ground.values()) {
            *v += g * opts.seed_amplitude;
        }
        psi.normalize();
    }

    let nodes = grid.nodes();
    let half_kick: Vec<f64> = nodes
        .iter()
        .map(|z| (-0.5 * opts.dtau * z * z / (2.0 * alpha * alpha)).exp())
        .collect();
    let kinetic: Vec<f64> = grid
        .wavenumbers()
        .iter()
        .map(|k| (-opts.dtau * 0.5 * alpha * alpha * k * k).exp())
        .collect();
    let impurity_energy = |f: &ComplexField| {
        let pot: f64 = nodes
            .iter()
            .zip(f.values())
            .map(|(z, v)| z * z / (2.0 * alpha * alpha) * v.norm_sqr())
            .sum::<f64>()
            * grid.dz();
        0.5 * alpha * alpha * f.gradient_norm2() + pot
    };

    let n_steps = (opts.tau_max / opts.dtau).round() as usize;
    let mut trace = vec![(0.0, impurity_energy(&psi))];
    for step in 1..=n_steps {
        let values = psi.values_mut();
        for (v, h) in values.iter_mut().zip(&half_kick) {
            *v *= *h;
        }
        grid.forward(values);
        for (v, k) in values.iter_mut().zip(&kinetic) {
            *v *= *k;
        }
        grid.inverse(values);
        for (v, h) in values.iter_mut().zip(&half_kick) {
            *v *= *h;
        }
        if opts.zeno {
            psi.project_odd_in_place();
        }
        psi.normalize();
        if step % opts.sample_every == 0 {
            trace.push((step as f64 * opts.dtau, impurity_energy(&psi)));
        }
    }
    Ok(trace)
}

/// First sample time at which `E_I` falls below `level`.
pub fn decay_onset(trace: &[(f64, f64)], level: f64) -> Option<f64> {
    trace.iter().find(|(_, e)| *e < level).map(|(t, _)| *t)
}

/// Morphology of the condensate imprint left by the impurity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImprintDescriptor {
    pub n_bumps: usize,
    pub n_dips: usize,
    pub fragmented: bool,
    /// Interior stretches where the condensate density is below the
    /// fragmentation threshold.
    pub interior_gaps: usize,
}

/// Fraction of the peak below which condensate density counts as empty.
pub const FRAGMENTATION_THRESHOLD: f64 = 1e-3;
/// Extrema smaller than this fraction of the largest imprint are ignored.
const EXTREMUM_SIGNIFICANCE: f64 = 0.05;
/// Cloud region: unperturbed density above this fraction of its peak.
const CLOUD_FRACTION: f64 = 0.01;

/// Compares relaxed states with and without the interspecies coupling.
pub fn classify_imprint(with: &RelaxationReport, without: &RelaxationReport) -> Result<ImprintDescriptor> {
    if !with.converged || !without.converged {
        return Err(Error::NotConverged(
            "imprint classification needs converged relaxations".into(),
        ));
    }
    let n_with = with.final_state.psi_b.density();
    let n_without = without.final_state.psi_b.density();
    let dd = depleted_density(&n_with, &n_without)?;
    let dd = dd.values();
    let base = n_without.values();

    let base_peak = n_without.max();
    let cloud: Vec<bool> = base.iter().map(|&v| v >= CLOUD_FRACTION * base_peak).collect();
    let scale = dd
        .iter()
        .zip(&cloud)
        .filter(|(_, &c)| c)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);

    let (mut n_bumps, mut n_dips) = (0, 0);
    if scale > 1e-9 * base_peak {
        let thr = EXTREMUM_SIGNIFICANCE * scale;
        for j in 1..dd.len() - 1 {
            if !cloud[j] {
                continue;
            }
            if dd[j] > thr && dd[j] >= dd[j - 1] && dd[j] > dd[j + 1] {
                n_bumps += 1;
            }
            if dd[j] < -thr && dd[j] <= dd[j - 1] && dd[j] < dd[j + 1] {
                n_dips += 1;
            }
        }
    }

    let interior_gaps = count_interior_gaps(n_with.values(), FRAGMENTATION_THRESHOLD);
    Ok(ImprintDescriptor {
        n_bumps,
        n_dips,
        fragmented: interior_gaps >= 2,
        interior_gaps,
    })
}

/// Number of separate runs of `density < fraction * peak` lying strictly
/// between the first and last occupied nodes.
pub fn count_interior_gaps(density: &[f64], fraction: f64) -> usize {
    let peak = density.iter().copied().fold(0.0, f64::max);
    let thr = fraction * peak;
    let first = density.iter().position(|&v| v >= thr);
    let last = density.iter().rposition(|&v| v >= thr);
    let (Some(first), Some(last)) = (first, last) else {
        return 0;
    };
    let mut gaps = 0;
    let mut in_gap = false;
    for &v in &density[first..=last] {
        if v < thr {
            if !in_gap {
                gaps += 1;
                in_gap = true;
            }
        } else {
            in_gap = false;
        }
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trial_state_is_normalised_and_odd() {
        let g = Grid1D::shared(2048, 16.0).unwrap();
        let t = trial_impurity(&g, 0.808);
        assert_abs_diff_eq!(t.norm2(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.moment(2), 1.5 * 0.808 * 0.808, epsilon = 1e-9);
        assert_abs_diff_eq!(t.moment(2), 0.979, epsilon = 5e-4);
        for w in [0.2, 0.808, 1.5, 3.0] {
            let t = trial_impurity(&g, w);
            let p = t.project_odd();
            assert!(t.values().iter().zip(p.values()).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn trial_state_peaks_at_its_width() {
        let g = Grid1D::shared(2048, 16.0).unwrap();
        let t = trial_impurity(&g, 1.0);
        let (j, _) = t
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.re.partial_cmp(&b.1.re).unwrap())
            .unwrap();
        assert_abs_diff_eq!(g.nodes()[j], 1.0, epsilon = g.dz());
    }

    #[test]
    fn free_relaxation_gives_oscillator_levels() {
        let g = Grid1D::shared(512, 12.0).unwrap();
        let p = ModelParams {
            g_b: 0.0,
            g_ib: 0.0,
            ..ModelParams::default()
        };
        let r = relax_coupled(&p, &g, &RelaxOptions::default()).unwrap();
        assert!(r.converged);
        let e = r.final_energy().unwrap();
        assert_abs_diff_eq!(e.e_b, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(e.e_i, 1.5, epsilon = 1e-6);
    }

    #[test]
    fn max_iters_gives_partial_report() {
        let g = Grid1D::shared(128, 8.0).unwrap();
        let p = ModelParams::default();
        let opts = RelaxOptions {
            max_iters: 250,
            ..RelaxOptions::default()
        };
        let r = relax_coupled(&p, &g, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 250);
        assert!(r.energy_trace.len() >= 3);
    }

    #[test]
    fn invalid_tolerance_rejected() {
        let g = Grid1D::shared(64, 6.0).unwrap();
        let opts = RelaxOptions {
            tol: 0.0,
            ..RelaxOptions::default()
        };
        assert!(relax_coupled(&ModelParams::default(), &g, &opts).is_err());
    }

    #[test]
    fn zeno_keeps_the_excited_level() {
        let g = Grid1D::shared(256, 10.0).unwrap();
        let opts = DurabilityOptions {
            tau_max: 60.0,
            zeno: true,
            seed_amplitude: 1e-3,
            ..DurabilityOptions::default()
        };
        let trace = zeno_durability_experiment(&g, &opts).unwrap();
        assert!(trace.iter().all(|(_, e)| (e - 1.5).abs() < 1e-5));
    }

    #[test]
    fn seeded_contaminant_decays_to_ground_level() {
        let g = Grid1D::shared(256, 10.0).unwrap();
        let opts = DurabilityOptions {
            tau_max: 40.0,
            seed_amplitude: 1e-3,
            ..DurabilityOptions::default()
        };
        let trace = zeno_durability_experiment(&g, &opts).unwrap();
        assert_abs_diff_eq!(trace[0].1, 1.5, epsilon = 1e-3);
        assert_abs_diff_eq!(trace.last().unwrap().1, 0.5, epsilon = 1e-3);
        // contaminant amplitude 1e-3 grows as e^{tau}: crossing near ln(1e3)
        let onset = decay_onset(&trace, 1.0).unwrap();
        assert!((onset - 1e3f64.ln()).abs() < 1.0, "onset {onset}");
    }

    #[test]
    fn interior_gaps() {
        let d = [0.0, 1.0, 2.0, 0.0, 0.0, 2.0, 1.0, 0.0, 2.0, 0.0];
        assert_eq!(count_interior_gaps(&d, 1e-3), 2);
        assert_eq!(count_interior_gaps(&[0.0, 1.0, 2.0, 1.0, 0.0], 1e-3), 0);
        assert_eq!(count_interior_gaps(&[0.0; 5], 1e-3), 0);
    }
}
