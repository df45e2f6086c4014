//! Dimensional parameters, mean-field validity estimates and depletion
//! fractions.
//!
//! Lengths in [`PhysicalParams`] are in Bohr radii and masses in atomic mass
//! units; everything is converted to SI internally.

use std::f64::consts::PI;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Apery's constant to the precision used by the depletion formulas.
pub const ZETA3: f64 = 1.2020569;

/// Relative difference above which a computed value is flagged against a
/// quoted one.
pub const MISMATCH_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub name: &'static str,
    /// J s
    pub hbar: f64,
    /// J/K
    pub k_b: f64,
    /// m
    pub bohr: f64,
    /// kg
    pub amu: f64,
}

impl PhysicalConstants {
    pub const CODATA: Self = Self {
        name: "codata",
        hbar: 1.054571817e-34,
        k_b: 1.380649e-23,
        bohr: 5.29177210903e-11,
        amu: 1.66053906660e-27,
    };

    /// CODATA with `hbar` rounded to three digits.
    pub const ROUNDED: Self = Self {
        name: "rounded",
        hbar: 1.05e-34,
        ..Self::CODATA
    };

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "codata" => Ok(Self::CODATA),
            "rounded" => Ok(Self::ROUNDED),
            other => Err(Error::InvalidParameter(format!("unknown constant set '{other}'"))),
        }
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub n_b: u32,
    /// Bohr radii
    pub a_b: f64,
    /// Bohr radii
    pub a_ib: f64,
    /// rad/s
    pub omega_r: f64,
    pub omega_z: f64,
    pub omega_ir: f64,
    pub omega_iz: f64,
    /// atomic mass units
    pub m_b: f64,
    pub m_i: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let two_pi = 2.0 * PI;
        Self {
            n_b: 200,
            a_b: 94.7,
            a_ib: 650.0,
            omega_r: two_pi * 179.0,
            omega_z: two_pi * 50.0,
            omega_ir: two_pi * 179.0,
            omega_iz: two_pi * 50.0,
            m_b: 87.0,
            m_i: 133.0,
        }
    }
}

impl PhysicalParams {
    /// Checks positivity; returns warnings for a weakly elongated trap.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = [
            ("omega_r", self.omega_r),
            ("omega_z", self.omega_z),
            ("omega_Ir", self.omega_ir),
            ("omega_Iz", self.omega_iz),
            ("m_B", self.m_b),
            ("m_I", self.m_i),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_b == 0 {
            return Err(Error::InvalidParameter("N_B must be positive".into()));
        }
        if !(self.a_b >= 0.0) || !self.a_ib.is_finite() {
            return Err(Error::InvalidParameter(
                "scattering lengths must be finite, a_B >= 0".into(),
            ));
        }
        let mut warnings = Vec::new();
        if self.omega_z > 0.5 * self.omega_r {
            warnings.push(format!(
                "omega_z/omega_r = {:.3}: trap is not strongly elongated, the quasi one-dimensional reduction is questionable",
                self.omega_z / self.omega_r
            ));
        }
        Ok(warnings)
    }
}

/// Lengths in metres, temperature in kelvin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedScales {
    pub l_z: f64,
    pub l_r: f64,
    pub l_iz: f64,
    pub f_geometric: f64,
    pub g_b: f64,
    pub g_ib: f64,
    pub alpha: f64,
    pub t_c: f64,
    pub gamma: f64,
    pub n_qf_fraction: f64,
}

fn oscillator_length(c: &PhysicalConstants, mass_amu: f64, omega: f64) -> f64 {
    (c.hbar / (mass_amu * c.amu * omega)).sqrt()
}

/// `f = [1 + m_B/m_I] / [1 + m_B omega_r / (m_I omega_Ir)]`
pub fn geometric_factor(phys: &PhysicalParams) -> f64 {
    (1.0 + phys.m_b / phys.m_i) / (1.0 + phys.m_b * phys.omega_r / (phys.m_i * phys.omega_ir))
}

pub fn nondimensionalize(phys: &PhysicalParams, c: &PhysicalConstants) -> DerivedScales {
    let l_z = oscillator_length(c, phys.m_b, phys.omega_z);
    let l_r = oscillator_length(c, phys.m_b, phys.omega_r);
    let l_iz = oscillator_length(c, phys.m_i, phys.omega_iz);
    let f = geometric_factor(phys);
    let a_b = phys.a_b * c.bohr;
    let a_ib = phys.a_ib * c.bohr;
    let thermal = thermal_depletion(phys, c);
    DerivedScales {
        l_z,
        l_r,
        l_iz,
        f_geometric: f,
        g_b: 2.0 * phys.n_b as f64 * phys.omega_r * a_b / (phys.omega_z * l_z),
        g_ib: 2.0 * a_ib * phys.omega_r * f / (phys.omega_z * l_z),
        alpha: l_iz / l_z,
        t_c: thermal.t_c,
        gamma: thermal.gamma,
        n_qf_fraction: quantum_depletion_fraction(phys, c),
    }
}

/// `|a_IB| xi^-1` with `xi^-1 = sqrt(2 n a_B / l_z) / l_r` and `n` the
/// dimensionless peak density.
pub fn healing_check(phys: &PhysicalParams, c: &PhysicalConstants, n_peak: f64) -> f64 {
    let l_z = oscillator_length(c, phys.m_b, phys.omega_z);
    let l_r = oscillator_length(c, phys.m_b, phys.omega_r);
    let a_b = phys.a_b * c.bohr;
    phys.a_ib.abs() * c.bohr * (2.0 * n_peak * a_b / l_z).sqrt() / l_r
}

/// Unit-normalized inverted parabola `n(z) = (mu/G)(1 - z^2/R^2)`, `R^2 = 2 mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThomasFermiProfile {
    pub g: f64,
    pub mu: f64,
    pub radius: f64,
}

impl ThomasFermiProfile {
    pub fn density(&self, z: f64) -> f64 {
        (self.mu / self.g * (1.0 - z * z / (self.radius * self.radius))).max(0.0)
    }

    pub fn peak(&self) -> f64 {
        self.mu / self.g
    }
}

pub fn thomas_fermi_profile(g: f64) -> Result<ThomasFermiProfile> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Thomas-Fermi profile needs G > 0, got {g}"
        )));
    }
    let mu = (3.0 * g / (4.0 * 2f64.sqrt())).powf(2.0 / 3.0);
    Ok(ThomasFermiProfile {
        g,
        mu,
        radius: (2.0 * mu).sqrt(),
    })
}

/// `N_QF/N_B = (3^(1/3)/4) (a_B^4 N_B / (l_r^2 l_z^2))^(1/3)`
pub fn quantum_depletion_fraction(phys: &PhysicalParams, c: &PhysicalConstants) -> f64 {
    let l_z = oscillator_length(c, phys.m_b, phys.omega_z);
    let l_r = oscillator_length(c, phys.m_b, phys.omega_r);
    let a_b = phys.a_b * c.bohr;
    3f64.cbrt() / 4.0 * (a_b.powi(4) * phys.n_b as f64 / (l_r * l_r * l_z * l_z)).cbrt()
}

/// Prefactor and critical temperature of `N_TF/N_B = gamma (T/T_c)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalDepletion {
    pub gamma: f64,
    /// kelvin
    pub t_c: f64,
}

impl ThermalDepletion {
    pub fn fraction_at(&self, temperature: f64) -> f64 {
        self.gamma * (temperature / self.t_c).powi(2)
    }

    /// `T = T_c sqrt(fraction / gamma)`
    pub fn temperature_for(&self, fraction: f64) -> Result<f64> {
        if !(fraction >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fraction must be >= 0, got {fraction}"
            )));
        }
        Ok(self.t_c * (fraction / self.gamma).sqrt())
    }
}

pub fn thermal_depletion(phys: &PhysicalParams, c: &PhysicalConstants) -> ThermalDepletion {
    let l_z = oscillator_length(c, phys.m_b, phys.omega_z);
    let l_r = oscillator_length(c, phys.m_b, phys.omega_r);
    let a_b = phys.a_b * c.bohr;
    let n = phys.n_b as f64;
    let prefactor = 5f64.powf(0.4) * PI * PI / (2f64.powf(1.5) * 3f64.powf(0.6));
    let inner = n.cbrt() / ZETA3.powf(8.0 / 3.0) * a_b * a_b / (l_r.powf(4.0 / 3.0) * l_z.powf(2.0 / 3.0));
    let gamma = prefactor * inner.powf(0.2);
    let t_c = c.hbar / c.k_b * (phys.omega_r * phys.omega_r * phys.omega_z * n / ZETA3).cbrt();
    ThermalDepletion { gamma, t_c }
}

/// Quoted reference values for the baseline parameters.
pub mod quoted {
    pub const L_Z_BOHR: f64 = 28742.3;
    pub const G_B: f64 = 4.71;
    pub const G_IB: f64 = 0.16;
    pub const ALPHA: f64 = 0.808;
    pub const HEALING_G10: f64 = 0.0020;
    pub const HEALING_G100: f64 = 0.0014;
    pub const PEAK_G10: f64 = 0.355;
    pub const PEAK_G100: f64 = 0.164;
    pub const N_QF_FRACTION: f64 = 0.0022;
    pub const GAMMA: f64 = 0.046;
    pub const T_C_NK: f64 = 14.7;
    pub const THERMAL_FRACTION: f64 = 0.001;
    pub const T_FOR_FRACTION_NK: f64 = 2.15;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub key: String,
    pub value: f64,
    pub quoted: Option<f64>,
}

impl ReportEntry {
    pub fn relative_difference(&self) -> Option<f64> {
        self.quoted.map(|q| ((self.value - q) / q).abs())
    }

    pub fn mismatch(&self) -> Option<bool> {
        self.relative_difference().map(|d| d > MISMATCH_THRESHOLD)
    }
}

/// Flat key-value analytics report.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticsReport {
    pub constants: &'static str,
    pub warnings: Vec<String>,
    pub entries: Vec<ReportEntry>,
}

impl AnalyticsReport {
    pub fn get(&self, key: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("constants = {}\n", self.constants);
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{} = {}", e.key, e.value));
            if let (Some(q), Some(m)) = (e.quoted, e.mismatch()) {
                out.push_str(&format!("  quoted = {q}  mismatch = {m}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut entries = Map::new();
        for e in &self.entries {
            entries.insert(
                e.key.clone(),
                json!({
                    "value": e.value,
                    "quoted": e.quoted,
                    "relative_difference": e.relative_difference(),
                    "mismatch": e.mismatch(),
                }),
            );
        }
        json!({
            "constants": self.constants,
            "warnings": self.warnings,
            "entries": entries,
        })
    }
}

/// Evaluates every closed-form estimate for `phys`, side by side with the
/// quoted baseline values.
pub fn analyze(phys: &PhysicalParams, c: &PhysicalConstants) -> Result<AnalyticsReport> {
    let warnings = phys.validate()?;
    let d = nondimensionalize(phys, c);
    let thermal = thermal_depletion(phys, c);
    let t_target = thermal.temperature_for(quoted::THERMAL_FRACTION)?;
    let entry = |key: &str, value: f64, quoted: Option<f64>| ReportEntry {
        key: key.to_string(),
        value,
        quoted,
    };
    let entries = vec![
        entry("l_z_bohr", d.l_z / c.bohr, Some(quoted::L_Z_BOHR)),
        entry("l_r_bohr", d.l_r / c.bohr, None),
        entry("l_Iz_bohr", d.l_iz / c.bohr, None),
        entry("f_geometric", d.f_geometric, None),
        entry("G_B", d.g_b, Some(quoted::G_B)),
        entry("g_IB", d.g_ib, Some(quoted::G_IB)),
        entry("alpha", d.alpha, Some(quoted::ALPHA)),
        entry(
            "healing_G10",
            healing_check(phys, c, quoted::PEAK_G10),
            Some(quoted::HEALING_G10),
        ),
        entry(
            "healing_G100",
            healing_check(phys, c, quoted::PEAK_G100),
            Some(quoted::HEALING_G100),
        ),
        entry("N_QF_fraction", d.n_qf_fraction, Some(quoted::N_QF_FRACTION)),
        entry("gamma", thermal.gamma, Some(quoted::GAMMA)),
        entry("T_c_nK", thermal.t_c * 1e9, Some(quoted::T_C_NK)),
        entry("N_TF_fraction_target", quoted::THERMAL_FRACTION, None),
        entry("T_for_fraction_nK", t_target * 1e9, Some(quoted::T_FOR_FRACTION_NK)),
    ];
    Ok(AnalyticsReport {
        constants: c.name,
        warnings,
        entries,
    })
}
