//! Flat `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so a
//! typo never silently falls back to a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::driver::{Preconditioning, SolverSettings};
use crate::error::{Error, Result};
use crate::fvm::FlowConditions;
use crate::mesh::{ChannelSpec, WallTreatment};
use crate::qls::QuantumNoiseConfig;

/// `(key, default)`; `None` marks a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("mesh.nx", None),
    ("mesh.ny", None),
    ("mesh.bump_height", Some("0.1")),
    ("mesh.length_x", Some("3.0")),
    ("mesh.length_y", Some("1.0")),
    ("mesh.walls", Some("slip_wall")),
    ("physics.mach", None),
    ("physics.aoa_deg", Some("0.0")),
    ("physics.gamma", Some("1.4")),
    ("solver.cfl", None),
    ("solver.tol", Some("1e-6")),
    ("solver.max_iters", Some("2000")),
    ("solver.linear_tol", Some("1e-10")),
    ("solver.divergence_factor", Some("1e6")),
    ("solver.preconditioner", Some("none")),
    ("quantum.epsilon", Some("1e-2")),
    ("quantum.shots_constant", Some("36")),
    ("quantum.ae_error", Some("auto")),
    ("quantum.sign_flip_prob", Some("0.0")),
    ("quantum.seed", Some("0")),
    ("quantum.bypass", Some("false")),
    ("scaling.perturbation", Some("1e-3")),
    ("scaling.cfl", Some("1e6")),
    ("scaling.baseline_cfl", Some("100")),
    ("output.wall_time", Some("true")),
    ("report.kappa", Some("true")),
];

pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _)| *k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingSettings {
    /// Amplitude of the smooth perturbation applied to converged states.
    pub perturbation: f64,
    /// CFL of the single measured step.
    pub cfl: f64,
    /// CFL used to converge the noise-free baselines.
    pub baseline_cfl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub mesh: ChannelSpec,
    pub flow: FlowConditions,
    pub solver: SolverSettings,
    pub quantum: QuantumNoiseConfig,
    pub scaling: ScalingSettings,
    /// Write wall-clock milliseconds into histories (zeros otherwise, which
    /// makes reruns byte-identical).
    pub wall_time: bool,
    pub report_kappa: bool,
}

/// Raw key-value pairs with the line each came from (0 for overrides).
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: line_no,
                message: format!("expected `key = value`, found `{body}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    message: format!("empty key or value in `{body}`"),
                });
            }
            if let Some((_, first)) = raw.values.get(k) {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    message: format!("duplicate key `{k}` (first set on line {first})"),
                });
            }
            raw.check_known(k, line_no)?;
            raw.values.insert(k.to_string(), (v.to_string(), line_no));
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check_known(&self, key: &str, line: usize) -> Result<()> {
        if known_keys().any(|k| k == key) {
            return Ok(());
        }
        let message = format!("unknown key `{key}`");
        if line > 0 {
            Err(Error::ConfigSyntax { line, message })
        } else {
            Err(Error::ConfigKey {
                key: key.to_string(),
                message: "unknown key".into(),
            })
        }
    }

    /// Sets or replaces a key, as a command-line override would.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.check_known(key, 0)?;
        self.values.insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn value(&self, key: &str) -> Result<&str> {
        if let Some(v) = self.get(key) {
            return Ok(v);
        }
        match KEYS.iter().find(|(k, _)| *k == key) {
            Some((_, Some(d))) => Ok(d),
            _ => Err(Error::ConfigKey {
                key: key.to_string(),
                message: "required key is missing".into(),
            }),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.value(key)?;
        v.parse().map_err(|e: T::Err| Error::ConfigKey {
            key: key.to_string(),
            message: format!("cannot parse `{v}`: {e}"),
        })
    }

    pub fn build(&self) -> Result<Config> {
        let key_err = |key: &str, e: Error| Error::ConfigKey {
            key: key.to_string(),
            message: e.to_string(),
        };
        let walls = match self.value("mesh.walls")? {
            "slip_wall" => WallTreatment::SlipWall,
            "farfield" => WallTreatment::Farfield,
            other => {
                return Err(Error::ConfigKey {
                    key: "mesh.walls".into(),
                    message: format!("expected slip_wall or farfield, found `{other}`"),
                })
            }
        };
        let mesh = ChannelSpec {
            nx: self.parsed("mesh.nx")?,
            ny: self.parsed("mesh.ny")?,
            bump_height: self.parsed("mesh.bump_height")?,
            length_x: self.parsed("mesh.length_x")?,
            length_y: self.parsed("mesh.length_y")?,
            walls,
        };
        let flow = FlowConditions {
            mach: self.parsed("physics.mach")?,
            aoa_deg: self.parsed("physics.aoa_deg")?,
            gamma: self.parsed("physics.gamma")?,
        };
        let solver = SolverSettings {
            cfl: self.parsed("solver.cfl")?,
            tol: self.parsed("solver.tol")?,
            max_iters: self.parsed("solver.max_iters")?,
            linear_tol: self.parsed("solver.linear_tol")?,
            divergence_factor: self.parsed("solver.divergence_factor")?,
            preconditioner: self
                .value("solver.preconditioner")?
                .parse::<Preconditioning>()
                .map_err(|e| key_err("solver.preconditioner", e))?,
            ..SolverSettings::default()
        };
        solver.validate().map_err(|e| key_err("solver", e))?;
        let ae = match self.value("quantum.ae_error")? {
            "auto" => None,
            _ => Some(self.parsed("quantum.ae_error")?),
        };
        let quantum = QuantumNoiseConfig {
            epsilon: self.parsed("quantum.epsilon")?,
            shots_constant: self.parsed("quantum.shots_constant")?,
            ae_relative_error: ae,
            sign_flip_prob: self.parsed("quantum.sign_flip_prob")?,
            seed: self.parsed("quantum.seed")?,
            bypass: self.parsed("quantum.bypass")?,
        };
        quantum.validate().map_err(|e| key_err("quantum", e))?;
        let scaling = ScalingSettings {
            perturbation: self.parsed("scaling.perturbation")?,
            cfl: self.parsed("scaling.cfl")?,
            baseline_cfl: self.parsed("scaling.baseline_cfl")?,
        };
        if !(scaling.cfl > 0.0 && scaling.baseline_cfl > 0.0) {
            return Err(Error::ConfigKey {
                key: "scaling.cfl".into(),
                message: "must be positive".into(),
            });
        }
        Ok(Config {
            mesh,
            flow,
            solver,
            quantum,
            scaling,
            wall_time: self.parsed("output.wall_time")?,
            report_kappa: self.parsed("report.kappa")?,
        })
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        RawConfig::parse(text)?.build()
    }

    /// Effective configuration as config text, every key spelled out.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mesh.nx", self.mesh.nx.to_string());
        put("mesh.ny", self.mesh.ny.to_string());
        put("mesh.bump_height", self.mesh.bump_height.to_string());
        put("mesh.length_x", self.mesh.length_x.to_string());
        put("mesh.length_y", self.mesh.length_y.to_string());
        put(
            "mesh.walls",
            match self.mesh.walls {
                WallTreatment::SlipWall => "slip_wall",
                WallTreatment::Farfield => "farfield",
            }
            .into(),
        );
        put("physics.mach", self.flow.mach.to_string());
        put("physics.aoa_deg", self.flow.aoa_deg.to_string());
        put("physics.gamma", self.flow.gamma.to_string());
        put("solver.cfl", self.solver.cfl.to_string());
        put("solver.tol", self.solver.tol.to_string());
        put("solver.max_iters", self.solver.max_iters.to_string());
        put("solver.linear_tol", self.solver.linear_tol.to_string());
        put("solver.divergence_factor", self.solver.divergence_factor.to_string());
        put("solver.preconditioner", self.solver.preconditioner.name().into());
        put("quantum.epsilon", self.quantum.epsilon.to_string());
        put("quantum.shots_constant", self.quantum.shots_constant.to_string());
        put(
            "quantum.ae_error",
            self.quantum
                .ae_relative_error
                .map_or_else(|| "auto".to_string(), |v| v.to_string()),
        );
        put("quantum.sign_flip_prob", self.quantum.sign_flip_prob.to_string());
        put("quantum.seed", self.quantum.seed.to_string());
        put("quantum.bypass", self.quantum.bypass.to_string());
        put("scaling.perturbation", self.scaling.perturbation.to_string());
        put("scaling.cfl", self.scaling.cfl.to_string());
        put("scaling.baseline_cfl", self.scaling.baseline_cfl.to_string());
        put("output.wall_time", self.wall_time.to_string());
        put("report.kappa", self.report_kappa.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mesh.nx = 32\nmesh.ny = 8\nphysics.mach = 0.5\nsolver.cfl = 10\n";

    #[test]
    fn defaults_fill_in() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!((c.mesh.nx, c.mesh.ny), (32, 8));
        assert_eq!(c.mesh.bump_height, 0.1);
        assert_eq!(c.solver.max_iters, 2000);
        assert_eq!(c.quantum.shots_constant, 36.0);
        assert_eq!(c.quantum.ae_error(), 1e-3);
        assert!(!c.quantum.bypass);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!("# golden case\n\n{MINIMAL}quantum.epsilon = 1e-3  # tight\n");
        assert_eq!(Config::parse(&text).unwrap().quantum.epsilon, 1e-3);
    }

    #[test]
    fn missing_required_key_names_it() {
        let err = Config::parse("mesh.nx = 8\nmesh.ny = 4\nsolver.cfl = 1\n").unwrap_err();
        assert!(err.to_string().contains("physics.mach"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = RawConfig::parse("mesh.nx = 8\nbogus line\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 2, .. }), "{err}");
        let err = RawConfig::parse("mesh.nx = 8\nmesh.nz = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 2, .. }), "{err}");
        let err = RawConfig::parse("mesh.nx = 8\nmesh.nx = 9\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = Config::parse(&format!("{MINIMAL}quantum.epsilon = lots\n")).unwrap_err();
        assert!(err.to_string().contains("quantum.epsilon"));
        let err = Config::parse(&format!("{MINIMAL}solver.preconditioner = ilu\n")).unwrap_err();
        assert!(err.to_string().contains("solver.preconditioner"));
    }

    #[test]
    fn overrides_replace_values() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.set("quantum.bypass", "true").unwrap();
        raw.set("mesh.nx", "16").unwrap();
        let c = raw.build().unwrap();
        assert!(c.quantum.bypass);
        assert_eq!(c.mesh.nx, 16);
        assert!(raw.set("quantum.nope", "1").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = Config::parse(&format!("{MINIMAL}quantum.ae_error = 0.25\nsolver.preconditioner = block_jacobi\n")).unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }
}
