//! Uniform periodic grid, spectral transforms and field algebra.
//!
//! Nodes are `z_j = (j - n/2) dz` for `j = 0..n`, so the grid contains the
//! origin, excludes `+L`, and the mirror partner of node `j` is
//! `(n - j) mod n`. Node 0 (at `-L`) is its own partner under the periodic
//! wrap. Every integral is a rectangle rule over these nodes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Grid1D {
    n_points: usize,
    half_width: f64,
    dz: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid1D")
            .field("n_points", &self.n_points)
            .field("half_width", &self.half_width)
            .field("dz", &self.dz)
            .finish()
    }
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.n_points == other.n_points && self.half_width == other.half_width
    }
}

impl Grid1D {
    /// Builds a grid of `n_points` nodes covering `[-half_width, half_width)`.
    pub fn new(n_points: usize, half_width: f64) -> Result<Self> {
        if n_points < 8 || !n_points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_points must be even and at least 8, got {n_points}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        let dz = 2.0 * half_width / n_points as f64;
        let half = (n_points / 2) as i64;
        let nodes = (0..n_points as i64).map(|j| (j - half) as f64 * dz).collect();
        let dk = 2.0 * PI / (n_points as f64 * dz);
        let wavenumbers = (0..n_points as i64)
            .map(|j| {
                let m = if j < half { j } else { j - n_points as i64 };
                m as f64 * dk
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Self {
            n_points,
            half_width,
            dz,
            nodes,
            wavenumbers,
            forward,
            inverse,
        })
    }

    /// Shared-handle constructor; fields hold `Arc<Grid1D>`.
    pub fn shared(n_points: usize, half_width: f64) -> Result<Arc<Self>> {
        Self::new(n_points, half_width).map(Arc::new)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Wavenumbers in FFT order; the ladder spans `[-pi/dz, pi/dz)`.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn k_max(&self) -> f64 {
        PI / self.dz
    }

    pub fn mirror(&self, j: usize) -> usize {
        (self.n_points - j) % self.n_points
    }

    /// Unnormalised forward DFT in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.forward.process(data);
    }

    /// Inverse DFT in place, including the `1/n` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.inverse.process(data);
        let scale = 1.0 / self.n_points as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Rectangle-rule integral of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.dz
    }
}

/// One species' wave function sampled on a grid.
#[derive(Debug, Clone)]
pub struct ComplexField {
    grid: Arc<Grid1D>,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: Arc<Grid1D>) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.n_points()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid1D>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.nodes().iter().map(|&z| f(z)).collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Arc<Grid1D>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |z| Complex64::new(f(z), 0.0))
    }

    pub fn from_values(grid: Arc<Grid1D>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn same_grid(&self, other: &ComplexField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dz()
    }

    /// Rescales to unit norm. A zero field is left untouched.
    pub fn normalize(&mut self) {
        let n2 = self.norm2();
        if n2 > 0.0 {
            let s = 1.0 / n2.sqrt();
            for v in &mut self.values {
                *v *= s;
            }
        }
    }

    pub fn density(&self) -> RealField {
        RealField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
        }
    }

    /// `sum_j z_j^power |f_j|^2 dz`.
    pub fn moment(&self, power: i32) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&z, v)| z.powi(power) * v.norm_sqr())
            .sum::<f64>()
            * self.grid.dz()
    }

    /// Odd-parity part `(f(z) - f(-z)) / 2`.
    pub fn project_odd(&self) -> ComplexField {
        let mut out = self.clone();
        out.project_odd_in_place();
        out
    }

    pub fn project_odd_in_place(&mut self) {
        let n = self.values.len();
        let half = n / 2;
        // Node 0 and node n/2 (the origin) are their own mirrors.
        self.values[0] = Complex64::new(0.0, 0.0);
        self.values[half] = Complex64::new(0.0, 0.0);
        for j in 1..half {
            let m = n - j;
            let odd = (self.values[j] - self.values[m]) * 0.5;
            self.values[j] = odd;
            self.values[m] = -odd;
        }
    }

    /// Even-parity part `(f(z) + f(-z)) / 2`.
    pub fn project_even(&self) -> ComplexField {
        let mut out = self.clone();
        let n = out.values.len();
        for j in 1..n / 2 {
            let m = n - j;
            let even = (out.values[j] + out.values[m]) * 0.5;
            out.values[j] = even;
            out.values[m] = even;
        }
        out
    }

    /// Applies `exp(-i dt mass_factor k^2 / 2)` in Fourier space.
    ///
    /// `dt` is complex so the same kernel serves real time (`dt` real) and
    /// imaginary time (`dt = -i dtau`).
    pub fn spectral_kinetic_phase(&self, mass_factor: f64, dt: Complex64) -> ComplexField {
        let mut out = self.clone();
        out.apply_kinetic_phase(mass_factor, dt);
        out
    }

    pub fn apply_kinetic_phase(&mut self, mass_factor: f64, dt: Complex64) {
        let grid = Arc::clone(&self.grid);
        grid.forward(&mut self.values);
        let minus_i = Complex64::new(0.0, -1.0);
        for (v, &k) in self.values.iter_mut().zip(grid.wavenumbers()) {
            *v *= (minus_i * dt * (0.5 * mass_factor * k * k)).exp();
        }
        grid.inverse(&mut self.values);
    }

    /// `int |f'|^2 dz`, evaluated spectrally.
    pub fn gradient_norm2(&self) -> f64 {
        let mut buf = self.values.clone();
        self.grid.forward(&mut buf);
        let n = self.grid.n_points() as f64;
        buf.iter()
            .zip(self.grid.wavenumbers())
            .map(|(v, &k)| k * k * v.norm_sqr())
            .sum::<f64>()
            * self.grid.dz()
            / n
    }

    /// Squared L2 distance `int |f - g|^2 dz`.
    pub fn distance2(&self, other: &ComplexField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.dz())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Real samples on a grid (densities, potentials).
#[derive(Debug, Clone)]
pub struct RealField {
    grid: Arc<Grid1D>,
    values: Vec<f64>,
}

impl RealField {
    pub fn from_values(grid: Arc<Grid1D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &RealField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(grid: &Arc<Grid1D>) -> ComplexField {
        ComplexField::from_real_fn(Arc::clone(grid), |z| (-z * z / 2.0).exp() / PI.powf(0.25))
    }

    fn trial(grid: &Arc<Grid1D>, a: f64) -> ComplexField {
        let c = (2.0 / (PI.sqrt() * a.powi(3))).sqrt();
        ComplexField::from_real_fn(Arc::clone(grid), |z| c * z * (-z * z / (2.0 * a * a)).exp())
    }

    /// Composite Simpson on [-l, l]; independent of the grid machinery.
    fn simpson(f: impl Fn(f64) -> f64, l: f64, n: usize) -> f64 {
        let h = 2.0 * l / n as f64;
        let mut s = f(-l) + f(l);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(-l + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn small_grid_layout() {
        let g = Grid1D::new(8, 4.0).unwrap();
        assert_eq!(g.dz(), 1.0);
        assert_eq!(g.nodes(), &[-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.dz() * g.n_points() as f64, 2.0 * g.half_width());
    }

    #[test]
    fn default_grid_spacing_and_kmax() {
        assert_eq!(Grid1D::new(2048, 16.0).unwrap().dz(), 0.015625);
        let g = Grid1D::new(1024, 32.0).unwrap();
        assert_abs_diff_eq!(g.k_max(), 16.0 * PI, epsilon = 1e-12);
        let kmin = g.wavenumbers().iter().copied().fold(f64::INFINITY, f64::min);
        let kmax = g.wavenumbers().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(kmin, -16.0 * PI, epsilon = 1e-12);
        assert!(kmax < 16.0 * PI);
    }

    #[test]
    fn rejects_odd_or_tiny_grids() {
        assert!(matches!(Grid1D::new(7, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid1D::new(6, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid1D::new(9, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid1D::new(16, 0.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid1D::new(16, -1.0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn nodes_are_mirror_symmetric() {
        let g = Grid1D::new(64, 5.0).unwrap();
        for j in 0..64 {
            assert_eq!(g.mirror(g.mirror(j)), j);
            if j != 0 {
                assert_eq!(g.nodes()[j], -g.nodes()[g.mirror(j)]);
            }
        }
        assert_eq!(g.mirror(0), 0);
    }

    #[test]
    fn round_trip_transform() {
        let g = Grid1D::shared(256, 10.0).unwrap();
        let f = ComplexField::from_fn(Arc::clone(&g), |z| {
            Complex64::new((-z * z).exp() * (1.0 + z), (z / 3.0).sin() * (-0.1 * z * z).exp())
        });
        let mut buf = f.values().to_vec();
        g.forward(&mut buf);
        g.inverse(&mut buf);
        let scale = f.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in buf.iter().zip(f.values()) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn norms() {
        let g = Grid1D::shared(2048, 16.0).unwrap();
        assert_eq!(ComplexField::zeros(Arc::clone(&g)).norm2(), 0.0);
        assert_abs_diff_eq!(gaussian(&g).norm2(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(trial(&g, 0.808).norm2(), 1.0, epsilon = 1e-10);
        let mut f = gaussian(&g);
        for v in f.values_mut() {
            *v *= 3.7;
        }
        f.normalize();
        assert_abs_diff_eq!(f.norm2(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn second_moment_of_excited_state_matches_quadrature() {
        let a: f64 = 0.808;
        let c = 2.0 / (PI.sqrt() * a.powi(3));
        let oracle = simpson(|z| z * z * c * z * z * (-z * z / (a * a)).exp(), 12.0, 20_000);
        assert_abs_diff_eq!(oracle, 1.5 * a * a, epsilon = 1e-9);
        assert_abs_diff_eq!(oracle, 0.979296, epsilon = 1e-6);

        let g = Grid1D::shared(2048, 16.0).unwrap();
        assert_abs_diff_eq!(trial(&g, a).moment(2), oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(gaussian(&g).moment(2), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn first_moment_vanishes_for_definite_parity() {
        let g = Grid1D::shared(2048, 16.0).unwrap();
        assert_abs_diff_eq!(gaussian(&g).moment(1), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(trial(&g, 1.3).moment(1), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn odd_projection() {
        let g = Grid1D::shared(512, 8.0).unwrap();
        let even = gaussian(&g).project_odd();
        assert!(even.values().iter().all(|v| v.norm() == 0.0));

        let t = trial(&g, 0.808);
        let p = t.project_odd();
        for (a, b) in p.values().iter().zip(t.values()) {
            assert!((a - b).norm() < 1e-15);
        }

        let mixed = ComplexField::from_real_fn(Arc::clone(&g), |z| (-z * z).exp() * (1.0 + z));
        let expected = ComplexField::from_real_fn(Arc::clone(&g), |z| z * (-z * z).exp());
        let got = mixed.project_odd();
        for (a, b) in got.values().iter().zip(expected.values()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn kinetic_phase_identity_at_zero_dt() {
        let g = Grid1D::shared(256, 8.0).unwrap();
        let f = trial(&g, 1.0);
        let out = f.spectral_kinetic_phase(1.0, Complex64::new(0.0, 0.0));
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn kinetic_phase_on_plane_wave() {
        let g = Grid1D::shared(128, 8.0).unwrap();
        let k0 = g.wavenumbers()[5];
        let f = ComplexField::from_fn(Arc::clone(&g), |z| Complex64::new(0.0, k0 * z).exp());
        let dt = 0.37;
        let out = f.spectral_kinetic_phase(1.0, Complex64::new(dt, 0.0));
        let phase = Complex64::new(0.0, -dt * k0 * k0 / 2.0).exp();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b * phase).norm() < 1e-12);
        }
    }

    #[test]
    fn free_gaussian_spreads() {
        let g = Grid1D::shared(2048, 40.0).unwrap();
        let f = gaussian(&g);
        let w0 = f.moment(2).sqrt();
        for t in [0.5, 1.0, 2.0, 3.0] {
            let out = f.spectral_kinetic_phase(1.0, Complex64::new(t, 0.0));
            let w = out.moment(2).sqrt();
            assert_abs_diff_eq!(w, w0 * (1.0f64 + t * t).sqrt(), epsilon = 1e-6);
            assert_abs_diff_eq!(out.norm2(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectral_gradient_norm_of_gaussian() {
        // int |d/dz (e^{-z^2/2}/pi^{1/4})|^2 dz = 1/2
        let g = Grid1D::shared(1024, 16.0).unwrap();
        assert_abs_diff_eq!(gaussian(&g).gradient_norm2(), 0.5, epsilon = 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field(values: Vec<(f64, f64)>) -> ComplexField {
            let g = Grid1D::shared(values.len(), 3.0).unwrap();
            let v = values.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            ComplexField::from_values(g, v).unwrap()
        }

        proptest! {
            #[test]
            fn project_odd_is_idempotent(values in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 32)) {
                let f = field(values);
                let once = f.project_odd();
                let twice = once.project_odd();
                for (a, b) in once.values().iter().zip(twice.values()) {
                    prop_assert!((a - b).norm() <= 1e-15);
                }
                let g = once.grid();
                for j in 0..g.n_points() {
                    prop_assert_eq!(once.values()[j], -once.values()[g.mirror(j)]);
                }
            }

            #[test]
            fn kinetic_phase_is_unitary(
                values in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 64),
                dt in -2.0..2.0f64,
                mass in 0.01..3.0f64,
            ) {
                let f = field(values);
                let before = f.norm2();
                let after = f.spectral_kinetic_phase(mass, Complex64::new(dt, 0.0)).norm2();
                prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
            }
        }
    }
}
