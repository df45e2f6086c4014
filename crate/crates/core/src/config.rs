//! Flat `section.key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key may be overridden from
//! the command line with `--section.key value`. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::analytics::{PhysicalConstants, PhysicalParams};
use crate::error::{Error, Result};
use crate::solver::{CouplingConvention, ModelParams};
use crate::stationary::{BecSeed, DurabilityOptions, RelaxOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Relax,
    Tof,
    Quench,
    MassScan,
    CouplingScan,
    ZenoDecay,
    Analyze,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Relax,
        Scenario::Tof,
        Scenario::Quench,
        Scenario::MassScan,
        Scenario::CouplingScan,
        Scenario::ZenoDecay,
        Scenario::Analyze,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Relax => "relax",
            Scenario::Tof => "tof",
            Scenario::Quench => "quench",
            Scenario::MassScan => "mass_scan",
            Scenario::CouplingScan => "coupling_scan",
            Scenario::ZenoDecay => "zeno_decay",
            Scenario::Analyze => "analyze",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every accepted key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("scenario", "relax"),
    ("grid.n_points", "2048"),
    ("grid.half_width", "16"),
    ("params.g_b", "4.71"),
    ("params.g_ib", "0.16"),
    ("params.n_b", "200"),
    ("params.n_i", "1"),
    ("params.alpha", "0.808"),
    ("params.trap_b", "true"),
    ("params.trap_i", "true"),
    ("params.g_ib_override", "none"),
    ("params.g_bi_override", "none"),
    ("params.convention", "symmetric"),
    ("relax.dtau", "1e-3"),
    ("relax.tol", "1e-9"),
    ("relax.max_iters", "200000"),
    ("relax.check_interval", "100"),
    ("relax.seed", "auto"),
    ("run.t_final", "10"),
    ("run.dt", "1e-4"),
    ("run.snapshot_stride", "500"),
    ("quench.g_after", "0"),
    ("scan.g_ib", ""),
    ("scan.alpha", ""),
    ("zeno.dtau", "1e-3"),
    ("zeno.tau_max", "100"),
    ("zeno.tau_max_projected", "200"),
    ("zeno.seed_amplitude", "0"),
    ("zeno.sample_every", "100"),
    ("phys.n_b", "200"),
    ("phys.a_b", "94.7"),
    ("phys.a_ib", "650"),
    ("phys.nu_r", "179"),
    ("phys.nu_z", "50"),
    ("phys.nu_ir", "179"),
    ("phys.nu_iz", "50"),
    ("phys.m_b", "87"),
    ("phys.m_i", "133"),
    ("phys.constants", "codata"),
    ("output.text", "true"),
    ("output.binary", "true"),
];

/// Parses `key = value` lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("{key}: '{v}' is not a finite number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: '{v}' is not a boolean"))),
    }
}

fn parse_optional(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" || v.is_empty() {
        Ok(None)
    } else {
        parse_f64(key, v).map(Some)
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub n_points: usize,
    pub half_width: f64,
    pub params: ModelParams,
    pub relax: RelaxOptions,
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub quench_g_after: f64,
    pub scan_g_ib: Vec<f64>,
    pub scan_alpha: Vec<f64>,
    pub durability: DurabilityOptions,
    pub tau_max_projected: f64,
    pub phys: PhysicalParams,
    pub constants: PhysicalConstants,
    pub write_text: bool,
    pub write_binary: bool,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults overlaid with `pairs` in order.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let mut map: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            let (k, v) = (k.as_ref(), v.as_ref());
            match map.get_mut(k) {
                Some(slot) => *slot = v.to_string(),
                None => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        Self::from_map(map)
    }

    /// Reads `path`, then applies `overrides`.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut pairs = parse_pairs(&text)?;
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map[k].as_str();
        let f = |k: &str| parse_f64(k, get(k));
        let u = |k: &str| parse_usize(k, get(k));
        let b = |k: &str| parse_bool(k, get(k));

        let convention = CouplingConvention::parse(get("params.convention"))
            .ok_or_else(|| Error::Config(format!("params.convention: '{}'", get("params.convention"))))?;
        let to_u32 =
            |k: &str| -> Result<u32> { u32::try_from(u(k)?).map_err(|_| Error::Config(format!("{k}: too large"))) };
        let params = ModelParams {
            g_b: f("params.g_b")?,
            g_ib: f("params.g_ib")?,
            n_b: to_u32("params.n_b")?,
            n_i: to_u32("params.n_i")?,
            alpha: f("params.alpha")?,
            trap_b_on: b("params.trap_b")?,
            trap_i_on: b("params.trap_i")?,
            g_ib_override: parse_optional("params.g_ib_override", get("params.g_ib_override"))?,
            g_bi_override: parse_optional("params.g_bi_override", get("params.g_bi_override"))?,
            convention,
        };
        params.validate().map_err(|e| Error::Config(e.to_string()))?;

        let seed = match get("relax.seed") {
            "auto" => BecSeed::Auto,
            "gaussian" => BecSeed::Gaussian,
            "thomas_fermi" => BecSeed::ThomasFermi,
            other => return Err(Error::Config(format!("relax.seed: '{other}'"))),
        };
        let relax = RelaxOptions {
            dtau: f("relax.dtau")?,
            tol: f("relax.tol")?,
            max_iters: u("relax.max_iters")?,
            check_interval: u("relax.check_interval")?,
            seed,
        };
        let durability = DurabilityOptions {
            alpha: params.alpha,
            dtau: f("zeno.dtau")?,
            tau_max: f("zeno.tau_max")?,
            zeno: false,
            seed_amplitude: f("zeno.seed_amplitude")?,
            sample_every: u("zeno.sample_every")?,
        };
        let two_pi = 2.0 * PI;
        let phys = PhysicalParams {
            n_b: to_u32("phys.n_b")?,
            a_b: f("phys.a_b")?,
            a_ib: f("phys.a_ib")?,
            omega_r: two_pi * f("phys.nu_r")?,
            omega_z: two_pi * f("phys.nu_z")?,
            omega_ir: two_pi * f("phys.nu_ir")?,
            omega_iz: two_pi * f("phys.nu_iz")?,
            m_b: f("phys.m_b")?,
            m_i: f("phys.m_i")?,
        };
        let constants = PhysicalConstants::parse(get("phys.constants")).map_err(|e| Error::Config(e.to_string()))?;

        let cfg = Self {
            scenario: Scenario::parse(get("scenario"))?,
            n_points: u("grid.n_points")?,
            half_width: f("grid.half_width")?,
            params,
            relax,
            t_final: f("run.t_final")?,
            dt: f("run.dt")?,
            snapshot_stride: u("run.snapshot_stride")?,
            quench_g_after: f("quench.g_after")?,
            scan_g_ib: parse_list("scan.g_ib", get("scan.g_ib"))?,
            scan_alpha: parse_list("scan.alpha", get("scan.alpha"))?,
            durability,
            tau_max_projected: f("zeno.tau_max_projected")?,
            phys,
            constants,
            write_text: b("output.text")?,
            write_binary: b("output.binary")?,
            resolved: map,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_points < 8 || !self.n_points.is_multiple_of(2) {
            return bad("grid.n_points must be even and at least 8");
        }
        if !(self.half_width > 0.0) {
            return bad("grid.half_width must be positive");
        }
        if !(self.relax.dtau > 0.0) || !(self.relax.tol > 0.0) || self.relax.check_interval == 0 {
            return bad("relax.dtau, relax.tol and relax.check_interval must be positive");
        }
        if !(self.t_final > 0.0) || !(self.dt > 0.0) || self.snapshot_stride == 0 {
            return bad("run.t_final, run.dt and run.snapshot_stride must be positive");
        }
        if matches!(self.scenario, Scenario::Tof | Scenario::Quench) {
            // the kinetic phase per step must stay below pi at the largest grid wavenumber
            let kmax = std::f64::consts::PI * self.n_points as f64 / (2.0 * self.half_width);
            if self.dt * kmax * kmax / 2.0 >= std::f64::consts::PI {
                return Err(Error::Config(format!(
                    "run.dt = {} is unstable on this grid; use run.dt < {:.3e}",
                    self.dt,
                    2.0 * std::f64::consts::PI / (kmax * kmax)
                )));
            }
        }
        if !(self.durability.dtau > 0.0) || !(self.durability.tau_max > 0.0) || self.durability.sample_every == 0 {
            return bad("zeno.dtau, zeno.tau_max and zeno.sample_every must be positive");
        }
        if !self.write_text && !self.write_binary {
            return bad("at least one of output.text and output.binary must be on");
        }
        match self.scenario {
            Scenario::CouplingScan if self.scan_g_ib.is_empty() => bad("coupling_scan needs scan.g_ib"),
            Scenario::MassScan if self.scan_alpha.is_empty() => bad("mass_scan needs scan.alpha"),
            Scenario::MassScan if self.scan_alpha.iter().any(|a| !(*a > 0.0)) => {
                bad("scan.alpha values must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Every key with its resolved value, in key order.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    /// Resolved configuration in the file format.
    pub fn to_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Copy with extra key overrides applied.
    pub fn with(&self, pairs: &[(&str, String)]) -> Result<Self> {
        let mut all: Vec<(String, String)> = self.resolved.clone().into_iter().collect();
        all.extend(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())));
        Self::from_pairs(&all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::from_pairs::<&str, &str>(&[]).unwrap();
        assert_eq!(c.scenario, Scenario::Relax);
        assert_eq!(c.n_points, 2048);
        assert_eq!(c.params, ModelParams::default());
        assert!(c.scan_g_ib.is_empty());
        assert_eq!(c.constants, PhysicalConstants::CODATA);
        assert!((c.phys.omega_r - 2.0 * PI * 179.0).abs() < 1e-12);
    }

    #[test]
    fn file_and_overrides() {
        let text = "# comment\nscenario = coupling_scan\n\ngrid.n_points = 512\nscan.g_ib = -10, 0, 10\nparams.g_bi_override = 40\n";
        let mut pairs = parse_pairs(text).unwrap();
        pairs.push(("grid.n_points".into(), "1024".into()));
        let c = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!(c.scenario, Scenario::CouplingScan);
        assert_eq!(c.n_points, 1024);
        assert_eq!(c.scan_g_ib, vec![-10.0, 0.0, 10.0]);
        assert_eq!(c.params.g_bi_override, Some(40.0));
        assert_eq!(c.resolved()["grid.n_points"], "1024");
    }

    #[test]
    fn round_trip_through_text() {
        let c = RunConfig::from_pairs(&[("scenario", "quench"), ("params.alpha", "1.5")]).unwrap();
        let again = RunConfig::from_pairs(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.params.alpha, 1.5);
        let moved = c.with(&[("params.alpha", "0.2".into())]).unwrap();
        assert_eq!(moved.params.alpha, 0.2);
        assert_eq!(moved.scenario, Scenario::Quench);
    }

    #[test]
    fn rejections() {
        let err = |pairs: &[(&str, &str)]| RunConfig::from_pairs(pairs).unwrap_err();
        assert!(matches!(err(&[("grid.bogus", "1")]), Error::Config(_)));
        assert!(matches!(err(&[("scenario", "dance")]), Error::Config(_)));
        assert!(matches!(err(&[("grid.n_points", "7")]), Error::Config(_)));
        assert!(matches!(err(&[("run.dt", "nan")]), Error::Config(_)));
        assert!(matches!(
            err(&[("scenario", "quench"), ("run.dt", "2e-4")]),
            Error::Config(_)
        ));
        assert!(RunConfig::from_pairs(&[("scenario", "relax"), ("run.dt", "2e-4")]).is_ok());
        assert!(matches!(err(&[("params.trap_b", "maybe")]), Error::Config(_)));
        assert!(matches!(err(&[("scenario", "coupling_scan")]), Error::Config(_)));
        assert!(matches!(err(&[("params.alpha", "-1")]), Error::Config(_)));
        assert!(parse_pairs("novalue\n").is_err());
    }
}
