//! Problem files: TOML documents with the constants of the problem at the top
//! level and tables for coefficients, measurements, an optional reference
//! control, an optional manufactured solution, and discretization knobs.
//!
//! ```toml
//! T = 1.0
//! l = 2.0
//! s0 = 1.0
//! delta = 0.5
//! R = 10.0
//!
//! [coefficients]
//! a = "1"
//! phi = "x^2"
//!
//! [measurements]
//! nu = "2*t"
//! mu = { csv = "mu.csv", interpolation = "linear" }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    manufactured_problem, CoefficientExpr, Interpolation, ManufacturedCase, MeasurementMode,
    ProblemData, SampledSeries, Signal, SolverSettings,
};
use crate::control::{sample_qn, DiscreteControl};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "T")]
    horizon: f64,
    l: f64,
    s0: f64,
    delta: f64,
    #[serde(rename = "R")]
    radius: f64,
    #[serde(default = "one")]
    beta0: f64,
    #[serde(default = "one")]
    beta1: f64,
    #[serde(default = "one")]
    a0: f64,
    #[serde(default)]
    coefficients: BTreeMap<String, String>,
    #[serde(default)]
    measurements: BTreeMap<String, RawSignal>,
    control: Option<RawControl>,
    manufactured: Option<RawManufactured>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    data: RawData,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSignal {
    Expr(String),
    Csv {
        csv: PathBuf,
        #[serde(default = "linear")]
        interpolation: Interpolation,
    },
}

fn linear() -> Interpolation {
    Interpolation::Linear
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    s: Option<String>,
    g: Option<String>,
    csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManufactured {
    u: String,
    s: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "one")]
    c_h: f64,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid { c_h: 1.0 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(default)]
    measurements: MeasurementMode,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    #[serde(default)]
    phi_steklov: bool,
}

/// Where a reference control comes from.
#[derive(Debug, Clone)]
pub enum ControlSource {
    /// Expressions in `t`, sampled on the requested grid.
    Expr {
        s: CoefficientExpr,
        g: CoefficientExpr,
    },
    /// A `k,s_k,g_k` file; its row count fixes `n`.
    Csv(PathBuf),
}

impl ControlSource {
    /// The control on `n` steps; a CSV source must have exactly `n + 1` rows.
    pub fn discretize(&self, horizon: f64, n: usize) -> Result<DiscreteControl> {
        match self {
            ControlSource::Expr { s, g } => sample_qn(s, g, &TimeGrid::new(horizon, n)?),
            ControlSource::Csv(path) => {
                let v = DiscreteControl::read_csv(path, horizon)?;
                if v.steps() != n {
                    return Err(Error::config(
                        path,
                        format!("control file has {} steps, requested n = {n}", v.steps()),
                    ));
                }
                Ok(v)
            }
        }
    }
}

/// A loaded problem file.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub problem: ProblemData,
    pub settings: SolverSettings,
    pub control: Option<ControlSource>,
    pub manufactured: Option<ManufacturedCase>,
    /// The file as read, for hashing into run manifests.
    pub source: Vec<u8>,
    pub path: PathBuf,
}

const COEFFICIENTS: [&str; 7] = ["a", "b", "c", "f", "gamma", "chi", "phi"];
const DERIVED_BY_MANUFACTURED: [&str; 3] = ["f", "chi", "phi"];

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&source)
            .map_err(|_| Error::config(path, "problem file is not UTF-8"))?;
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(text, path, base_dir)?;
        cfg.source = source;
        Ok(cfg)
    }

    /// Parses a problem document; relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, path: &Path, base_dir: &Path) -> Result<Self> {
        let cerr = |msg: String| Error::config(path, msg);
        let raw: RawConfig = toml::from_str(text).map_err(|e| cerr(e.to_string()))?;
        if raw.data.phi_steklov {
            return Err(cerr(
                "data.phi_steklov (cell-averaged initial data) is not implemented".into(),
            ));
        }

        let mut p = ProblemData::heat_equation(raw.horizon, raw.l, raw.s0, raw.delta, raw.radius);
        p.beta0 = raw.beta0;
        p.beta1 = raw.beta1;
        p.a0 = raw.a0;

        for (name, src) in &raw.coefficients {
            if !COEFFICIENTS.contains(&name.as_str()) {
                return Err(cerr(format!("unknown coefficient `{name}`")));
            }
            let e = CoefficientExpr::parse(src)
                .map_err(|e| cerr(format!("coefficient {name}: {e}")))?;
            let slot = match name.as_str() {
                "a" => &mut p.a,
                "b" => &mut p.b,
                "c" => &mut p.c,
                "f" => &mut p.f,
                "gamma" => &mut p.gamma,
                "chi" => &mut p.chi,
                _ => &mut p.phi,
            };
            *slot = e;
        }
        for (name, sig) in &raw.measurements {
            let signal = match sig {
                RawSignal::Expr(src) => Signal::Expr(
                    CoefficientExpr::parse(src)
                        .map_err(|e| cerr(format!("measurement {name}: {e}")))?,
                ),
                RawSignal::Csv { csv, interpolation } => Signal::Series(SampledSeries::read_csv(
                    &base_dir.join(csv),
                    *interpolation,
                )?),
            };
            match name.as_str() {
                "nu" => p.nu = signal,
                "mu" => p.mu = signal,
                _ => return Err(cerr(format!("unknown measurement `{name}`"))),
            }
        }

        let manufactured = match &raw.manufactured {
            Some(m) => {
                if let Some(name) = DERIVED_BY_MANUFACTURED
                    .iter()
                    .find(|n| raw.coefficients.contains_key(**n))
                {
                    return Err(cerr(format!(
                        "coefficient `{name}` is derived from [manufactured] and must not be set"
                    )));
                }
                if !raw.measurements.is_empty() {
                    return Err(cerr(
                        "[measurements] are derived from [manufactured] and must not be set".into(),
                    ));
                }
                let parse = |what: &str, src: &str| {
                    CoefficientExpr::parse(src)
                        .map_err(|e| cerr(format!("manufactured {what}: {e}")))
                };
                let case = manufactured_problem(&parse("u", &m.u)?, &parse("s", &m.s)?, &p)
                    .map_err(|e| cerr(e.to_string()))?;
                p = case.problem.clone();
                Some(case)
            }
            None => None,
        };

        let control = match &raw.control {
            None => manufactured.as_ref().map(|c| ControlSource::Expr {
                s: c.exact_s.clone(),
                g: c.flux.clone(),
            }),
            Some(RawControl {
                csv: Some(csv),
                s: None,
                g: None,
            }) => Some(ControlSource::Csv(base_dir.join(csv))),
            Some(RawControl { csv: None, s, g }) => {
                let parse = |what: &str, src: Option<&String>, default: &str| {
                    CoefficientExpr::parse(src.map_or(default, String::as_str))
                        .map_err(|e| cerr(format!("control {what}: {e}")))
                };
                Some(ControlSource::Expr {
                    s: parse("s", s.as_ref(), &raw.s0.to_string())?,
                    g: parse("g", g.as_ref(), "0")?,
                })
            }
            Some(_) => {
                return Err(cerr(
                    "[control] takes either `csv` or `s`/`g`, not both".into(),
                ))
            }
        };

        p.validate().map_err(|e| cerr(e.to_string()))?;
        if !(raw.grid.c_h.is_finite() && raw.grid.c_h > 0.0) {
            return Err(cerr(format!(
                "grid.c_h must be positive, got {}",
                raw.grid.c_h
            )));
        }

        Ok(ProblemConfig {
            problem: p,
            settings: SolverSettings {
                c_h: raw.grid.c_h,
                measurements: raw.cost.measurements,
            },
            control,
            manufactured,
            source: text.as_bytes().to_vec(),
            path: path.to_path_buf(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::TimeFunction;

    fn parse(text: &str) -> Result<ProblemConfig> {
        ProblemConfig::parse(text, Path::new("test.prob"), Path::new("."))
    }

    const HEAD: &str = "T = 1.0\nl = 2.0\ns0 = 1.0\ndelta = 0.5\nR = 10.0\n";

    #[test]
    fn minimal_file_gives_heat_equation() {
        let cfg = parse(HEAD).unwrap();
        assert_eq!(cfg.problem.a.as_constant(), Some(1.0));
        assert_eq!(cfg.problem.beta0, 1.0);
        assert_eq!(cfg.settings, SolverSettings::default());
        assert!(cfg.control.is_none());
    }

    #[test]
    fn coefficients_and_measurements() {
        let text = format!(
            "{HEAD}beta1 = 0.5\n[coefficients]\na = \"2 + x\"\nphi = \"1\"\n[measurements]\nnu = \"2*t\"\n[grid]\nc_h = 0.5\n[cost]\nmeasurements = \"point\"\n"
        );
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.problem.a.eval(1.0, 0.0).unwrap(), 3.0);
        assert_eq!(cfg.problem.nu.value_at(0.25).unwrap(), 0.5);
        assert_eq!(cfg.problem.beta1, 0.5);
        assert_eq!(cfg.settings.c_h, 0.5);
        assert_eq!(cfg.settings.measurements, MeasurementMode::Point);
    }

    #[test]
    fn manufactured_block_derives_data_and_control() {
        let text = format!("{HEAD}[manufactured]\nu = \"x^2 + 2*t\"\ns = \"1\"\n");
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.problem.chi.as_constant(), Some(2.0));
        assert_eq!(cfg.problem.mu.value_at(0.5).unwrap(), 2.0);
        let v = cfg.control.unwrap().discretize(1.0, 4).unwrap();
        assert_eq!(v.s(), &[1.0; 5]);
        assert_eq!(v.g(), &[0.0; 5]);
    }

    #[test]
    fn rejections() {
        for bad in [
            format!("{HEAD}[coefficients]\nzeta = \"1\"\n"),
            format!("{HEAD}[coefficients]\na = \"x + * t\"\n"),
            format!("{HEAD}[coefficients]\na = \"0.5\"\n"),
            format!("{HEAD}[data]\nphi_steklov = true\n"),
            format!("{HEAD}[manufactured]\nu = \"x\"\ns = \"1\"\n[coefficients]\nf = \"1\"\n"),
            format!("{HEAD}[control]\ncsv = \"c.csv\"\ns = \"1\"\n"),
            format!("{HEAD}bogus = 1\n"),
            "T = 1.0\n".to_string(),
        ] {
            let err = parse(&bad).unwrap_err();
            assert!(matches!(err, Error::Config { .. }), "{bad}: {err:?}");
        }
    }

    #[test]
    fn csv_sources_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mu.csv"), "t,value\n0,1\n1,3\n").unwrap();
        std::fs::write(dir.path().join("c.csv"), "k,s_k,g_k\n0,1,0\n1,1,0.5\n").unwrap();
        let text = format!(
            "{HEAD}[measurements]\nmu = {{ csv = \"mu.csv\" }}\n[control]\ncsv = \"c.csv\"\n"
        );
        let path = dir.path().join("p.prob");
        std::fs::write(&path, &text).unwrap();
        let cfg = ProblemConfig::load(&path).unwrap();
        assert_eq!(cfg.problem.mu.value_at(0.5).unwrap(), 2.0);
        assert_eq!(cfg.source, text.as_bytes());
        let src = cfg.control.unwrap();
        assert_eq!(src.discretize(1.0, 1).unwrap().g(), &[0.0, 0.5]);
        assert!(src.discretize(1.0, 2).is_err());
    }
}
