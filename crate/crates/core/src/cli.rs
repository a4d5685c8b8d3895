//! Parameter sweeps over the analytic and simulated paths, written as CSV.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::build_composite;
use crate::error::{Error, Result};
use crate::polyval::DEFAULT_TOL;
use crate::protocols::{analyze, AnalysisOptions, Metrics, ProtocolParams, Scheme};
use crate::sim::{simulate, GeParams, SimConfig, SimStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Analytic,
    Sim,
    Both,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "sim" => Ok(Mode::Sim),
            "both" => Ok(Mode::Both),
            other => Err(Error::Domain(format!("unknown mode {other:?}"))),
        }
    }
}

/// `Gamma/rho` as a function of the block-error rate: `c*eps` or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    Proportional(f64),
    Constant(f64),
}

impl GammaRule {
    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            GammaRule::Proportional(c) => c * eps,
            GammaRule::Constant(c) => *c,
        }
    }
}

impl std::str::FromStr for GammaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("cannot parse Gamma/rho rule {s:?}"));
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact == "eps" {
            return Ok(GammaRule::Proportional(1.0));
        }
        let factors: Vec<&str> = compact.split('*').collect();
        match factors.as_slice() {
            [c] => c.parse().map(GammaRule::Constant).map_err(|_| bad()),
            [c, "eps"] | ["eps", c] => c.parse().map(GammaRule::Proportional).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

fn default_k() -> u32 {
    5
}
fn default_r() -> f64 {
    0.3
}
fn default_eps_b() -> f64 {
    1.0
}
fn default_frame() -> u32 {
    5
}
fn default_dof() -> u32 {
    4
}
fn default_gamma() -> String {
    "10*eps".into()
}
fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}
fn default_horizon() -> u64 {
    100_000
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    #[serde(rename = "T")]
    pub timeouts: Vec<u32>,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(rename = "eps_G", default)]
    pub eps_g: f64,
    #[serde(rename = "eps_B", default = "default_eps_b")]
    pub eps_b: f64,
    pub schemes: Vec<String>,
    #[serde(rename = "M", default = "default_frame")]
    pub frame_size: u32,
    #[serde(rename = "N", default = "default_dof")]
    pub dof: u32,
    #[serde(default = "default_gamma")]
    pub gamma_over_rho: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Domain(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Domain(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn checked(&self) -> Result<(Vec<Scheme>, GammaRule)> {
        if self.eps.is_empty() || self.timeouts.is_empty() || self.schemes.is_empty() {
            return Err(Error::Domain("eps, T and schemes must be non-empty".into()));
        }
        if self.mode != Mode::Analytic && (self.seeds.is_empty() || self.horizon == 0) {
            return Err(Error::Domain("simulation needs seeds and a positive horizon".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Domain(format!("tol = {} must be positive", self.tol)));
        }
        let schemes = self.schemes.iter().map(|s| s.parse()).collect::<Result<Vec<Scheme>>>()?;
        Ok((schemes, self.gamma_over_rho.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub eps: f64,
    pub k: u32,
    pub timeout: u32,
    pub frame_size: u32,
    pub dof: u32,
    pub mode: &'static str,
    pub throughput: Option<f64>,
    pub tau_mean: Option<f64>,
    pub delay_mean: Option<f64>,
    pub stderr_throughput: Option<f64>,
    pub stderr_delay: Option<f64>,
    pub mgf_check: Option<f64>,
    /// Analytic means within three standard errors of the simulation (mode `both`).
    pub agree: Option<bool>,
    pub error: Option<String>,
}

pub const HEADER: [&str; 15] = [
    "scheme",
    "eps",
    "k",
    "T",
    "M",
    "N",
    "mode",
    "throughput",
    "tau_mean",
    "delay_mean",
    "stderr_throughput",
    "stderr_delay",
    "mgf_check",
    "agree",
    "error",
];

/// Twelve significant digits, shortest decimal form.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        "0".into()
    } else if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

impl SweepRow {
    pub fn record(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map(format_sig).unwrap_or_default();
        vec![
            self.scheme.to_string(),
            format_sig(self.eps),
            self.k.to_string(),
            self.timeout.to_string(),
            self.frame_size.to_string(),
            self.dof.to_string(),
            self.mode.to_string(),
            num(self.throughput),
            num(self.tau_mean),
            num(self.delay_mean),
            num(self.stderr_throughput),
            num(self.stderr_delay),
            num(self.mgf_check),
            self.agree.map(|a| a.to_string()).unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

struct Point {
    scheme: Scheme,
    eps: f64,
    params: ProtocolParams,
}

fn analytic_point(cfg: &SweepConfig, pt: &Point) -> Result<Metrics> {
    let ge = channel_params(cfg, pt.eps);
    let h = ge.build()?;
    let ch = build_composite(&h, &h)?;
    let opts = AnalysisOptions {
        tol: cfg.tol,
        ..Default::default()
    };
    analyze(&ch, &pt.params, &opts)
}

fn sim_point(cfg: &SweepConfig, pt: &Point) -> Result<SimStats> {
    let ge = channel_params(cfg, pt.eps);
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| simulate(&SimConfig::new(pt.params.clone(), ge, seed, cfg.horizon)))
        .collect::<Result<Vec<_>>>()?;
    SimStats::pool(&runs).ok_or_else(|| Error::Domain("no seeds".into()))
}

fn channel_params(cfg: &SweepConfig, eps: f64) -> GeParams {
    GeParams {
        r: cfg.r,
        eps_g: cfg.eps_g,
        eps_b: cfg.eps_b,
        eps,
    }
}

fn rows_for(cfg: &SweepConfig, pt: &Point) -> Vec<SweepRow> {
    let base = |mode: &'static str| SweepRow {
        scheme: pt.scheme,
        eps: pt.eps,
        k: pt.params.k,
        timeout: pt.params.timeout,
        frame_size: pt.params.frame_size,
        dof: pt.params.dof,
        mode,
        throughput: None,
        tau_mean: None,
        delay_mean: None,
        stderr_throughput: None,
        stderr_delay: None,
        mgf_check: None,
        agree: None,
        error: None,
    };
    let analytic = (cfg.mode != Mode::Sim).then(|| analytic_point(cfg, pt));
    let sim = (cfg.mode != Mode::Analytic).then(|| sim_point(cfg, pt));
    let agree = match (&analytic, &sim) {
        (Some(Ok(a)), Some(Ok(s))) => Some(
            (a.tau_mean - s.tau.mean).abs() <= 3.0 * s.tau.stderr()
                && (a.delay_mean - s.delay.mean).abs() <= 3.0 * s.delay.stderr(),
        ),
        _ => None,
    };
    let mut rows = Vec::new();
    if let Some(a) = analytic {
        let mut row = base("analytic");
        match a {
            Ok(m) => {
                row.throughput = Some(m.throughput);
                row.tau_mean = Some(m.tau_mean);
                row.delay_mean = Some(m.delay_mean);
                row.mgf_check = Some(m.mgf_error());
                row.agree = agree;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    if let Some(s) = sim {
        let mut row = base("sim");
        match s {
            Ok(s) => {
                row.throughput = Some(s.throughput_hat());
                row.tau_mean = Some(s.tau.mean);
                row.delay_mean = Some(s.delay.mean);
                row.stderr_throughput = Some(s.throughput_stderr());
                row.stderr_delay = Some(s.delay.stderr());
                row.agree = agree;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    rows
}

/// Evaluates every grid point; rows are ordered by scheme (as configured), eps, T, mode.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let (schemes, gamma) = cfg.checked()?;
    let mut points = Vec::new();
    for &scheme in &schemes {
        for &eps in &cfg.eps {
            for &timeout in &cfg.timeouts {
                let params = match scheme {
                    Scheme::Uncoded => ProtocolParams::uncoded(cfg.k, timeout),
                    Scheme::Harq => ProtocolParams::harq(cfg.k, timeout, gamma.eval(eps)),
                    Scheme::Coded => ProtocolParams::coded(cfg.k, timeout, cfg.frame_size, cfg.dof),
                };
                points.push(Point { scheme, eps, params });
            }
        }
    }
    Ok(points.par_iter().flat_map_iter(|pt| rows_for(cfg, pt)).collect())
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(io)?;
    for row in rows {
        w.write_record(row.record()).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Domain(format!("csv: {e}")))
}

pub fn sweep_to_string(cfg: &SweepConfig) -> Result<(String, bool)> {
    let rows = run_sweep(cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    let failed = rows.iter().any(|r| r.error.is_some());
    Ok((String::from_utf8(buf).expect("csv is utf-8"), failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_rules() {
        assert_eq!("10*eps".parse::<GammaRule>().unwrap(), GammaRule::Proportional(10.0));
        assert_eq!("eps * 2.5".parse::<GammaRule>().unwrap(), GammaRule::Proportional(2.5));
        assert_eq!("3".parse::<GammaRule>().unwrap(), GammaRule::Constant(3.0));
        assert!("10*rho".parse::<GammaRule>().is_err());
        assert!((GammaRule::Proportional(10.0).eval(0.3) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.1 + 0.2), "0.3");
        assert_eq!(format_sig(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_sig(-0.0), "0");
        assert_eq!(format_sig(1.0 / 3.0 * 1e-16), "3.33333333333e-17");
    }

    #[test]
    fn error_free_row() {
        let cfg = SweepConfig::from_toml("eps = [0.0]\nT = [5]\nschemes = [\"uncoded\"]").unwrap();
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].throughput, Some(1.0));
        assert!((rows[0].delay_mean.unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn point_errors_are_recorded() {
        let cfg = SweepConfig::from_toml("eps = [0.1]\nT = [3, 5]\nschemes = [\"uncoded\"]").unwrap();
        let (csv, failed) = sweep_to_string(&cfg).unwrap();
        assert!(failed);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().contains("timeout"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SweepConfig::from_toml("eps = [0.1]\nT = [5]\nschemes = [\"coded\"]\nfoo = 1").is_err());
        assert!(SweepConfig::from_toml("eps = [0.1]\nT = [5]\nschemes = [\"fec\"]")
            .and_then(|c| run_sweep(&c))
            .is_err());
    }
}
