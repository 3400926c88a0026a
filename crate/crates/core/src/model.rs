//! Planar SDE models `dX = f(X) dt + g(X) dW` (Itô).

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Reflecting,
    Truncated,
}

/// Axis-aligned rectangle `[x⁻, x⁺] × [y⁻, y⁺]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Domain {
    pub fn square(half_width: f64) -> Domain {
        Domain { x: [-half_width, half_width], y: [-half_width, half_width] }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x[0] + self.x[1]), 0.5 * (self.y[0] + self.y[1]))
    }

    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.x[0] && x <= self.x[1] && y >= self.y[0] && y <= self.y[1]
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.x, self.y].iter().all(|r| r[0].is_finite() && r[1].is_finite() && r[1] > r[0]);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("domain {self:?} has no positive area")))
        }
    }
}

/// On-disk model description. Key names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub drift: [String; 2],
    /// Two rows of `k` entries each.
    pub noise: Vec<Vec<String>>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub domain: Domain,
    pub boundary: Boundary,
}

/// A validated model with parsed and compiled right-hand sides.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    config: ModelConfig,
    drift: [Expr; 2],
    noise: [Vec<Expr>; 2],
    drift_c: [Compiled; 2],
    noise_c: [Vec<Compiled>; 2],
}

impl ModelSpec {
    pub fn from_config(config: ModelConfig) -> Result<ModelSpec> {
        config.domain.validate()?;
        if config.noise.len() != 2 {
            return Err(Error::InvalidModel(format!(
                "noise matrix needs 2 rows, got {}",
                config.noise.len()
            )));
        }
        let k = config.noise[0].len();
        if k == 0 || config.noise[1].len() != k {
            return Err(Error::InvalidModel("noise rows must share a nonzero length".into()));
        }
        let parse = |s: &String| Expr::parse(s);
        let drift = [parse(&config.drift[0])?, parse(&config.drift[1])?];
        let noise = [
            config.noise[0].iter().map(parse).collect::<Result<Vec<_>>>()?,
            config.noise[1].iter().map(parse).collect::<Result<Vec<_>>>()?,
        ];
        let params: HashMap<String, f64> =
            config.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for (k, v) in &params {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("parameter `{k}` is not finite")));
            }
        }
        let compile = |e: &Expr| e.compile(&params);
        let drift_c = [compile(&drift[0])?, compile(&drift[1])?];
        let noise_c = [
            noise[0].iter().map(compile).collect::<Result<Vec<_>>>()?,
            noise[1].iter().map(compile).collect::<Result<Vec<_>>>()?,
        ];
        let spec = ModelSpec { config, drift, noise, drift_c, noise_c };

        let d = spec.eval_diffusion(spec.config.domain.center())?;
        let (tr, det) = (d[0][0] + d[1][1], d[0][0] * d[1][1] - d[0][1] * d[1][0]);
        let scale = tr.abs().max(f64::MIN_POSITIVE);
        if tr < 0.0 || det < -1e-12 * scale * scale {
            return Err(Error::InvalidModel("diffusion is not positive semidefinite".into()));
        }
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<ModelSpec> {
        let config: ModelConfig = serde_json::from_str(text)?;
        ModelSpec::from_config(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ModelSpec> {
        ModelSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn domain(&self) -> Domain {
        self.config.domain
    }

    pub fn boundary(&self) -> Boundary {
        self.config.boundary
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.config.parameters
    }

    pub fn drift_exprs(&self) -> &[Expr; 2] {
        &self.drift
    }

    pub fn noise_exprs(&self) -> &[Vec<Expr>; 2] {
        &self.noise
    }

    /// Number of independent noise sources.
    pub fn noise_dim(&self) -> usize {
        self.noise[0].len()
    }

    /// Returns a copy with parameters replaced by name. Unknown names are errors.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
        let mut config = self.config.clone();
        for (k, v) in overrides {
            match config.parameters.get_mut(k) {
                Some(slot) => *slot = *v,
                None => return Err(Error::UnknownOverride(k.clone())),
            }
        }
        ModelSpec::from_config(config)
    }

    pub fn with_domain(&self, domain: Domain) -> Result<ModelSpec> {
        let mut config = self.config.clone();
        config.domain = domain;
        ModelSpec::from_config(config)
    }

    pub fn with_boundary(&self, boundary: Boundary) -> ModelSpec {
        let mut spec = self.clone();
        spec.config.boundary = boundary;
        spec
    }

    /// Drift without the finiteness check; used in hot loops.
    #[inline]
    pub(crate) fn drift_unchecked(&self, x: f64, y: f64) -> (f64, f64) {
        (self.drift_c[0].eval(x, y), self.drift_c[1].eval(x, y))
    }

    #[inline]
    pub(crate) fn noise_entry(&self, row: usize, col: usize, x: f64, y: f64) -> f64 {
        self.noise_c[row][col].eval(x, y)
    }

    /// Noise matrix when it does not depend on the state.
    pub(crate) fn constant_noise(&self) -> Option<[Vec<f64>; 2]> {
        let row = |r: &Vec<Compiled>| r.iter().map(|c| c.constant()).collect::<Option<Vec<f64>>>();
        Some([row(&self.noise_c[0])?, row(&self.noise_c[1])?])
    }

    pub fn eval_drift(&self, (x, y): (f64, f64)) -> Result<(f64, f64)> {
        let f = self.drift_unchecked(x, y);
        if f.0.is_finite() && f.1.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite)
        }
    }

    /// `D = ½ g gᵀ` at a point.
    pub fn eval_diffusion(&self, (x, y): (f64, f64)) -> Result<[[f64; 2]; 2]> {
        let k = self.noise_dim();
        let mut g = [vec![0.0; k], vec![0.0; k]];
        for (r, row) in g.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.noise_entry(r, c, x, y);
                if !v.is_finite() {
                    return Err(Error::NonFinite);
                }
            }
        }
        let dot = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let d01 = dot(&g[0], &g[1]);
        Ok([[dot(&g[0], &g[0]), d01], [d01, dot(&g[1], &g[1])]])
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Names accepted by [`builtin_model`].
pub const BUILTIN_NAMES: [&str; 3] = ["spiral-sink", "stuart-landau", "heteroclinic"];

/// Builtin models with their published parameters and domains, then `overrides` merged by name.
pub fn builtin_model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let config = match name {
        "spiral-sink" => ModelConfig {
            name: name.into(),
            drift: ["a11*x + a12*y".into(), "a21*x + a22*y".into()],
            noise: vec![strings(["sqrt(2*D)", "0"]), strings(["0", "sqrt(2*D)"])],
            parameters: params(&[
                ("a11", 0.1598),
                ("a12", -0.52),
                ("a21", 0.7227),
                ("a22", -0.319),
                ("D", 1.25e-3),
            ]),
            domain: Domain::square(0.6),
            boundary: Boundary::Truncated,
        },
        "stuart-landau" => ModelConfig {
            name: name.into(),
            drift: [
                "b*x*(1 - (x^2 + y^2)) - y*(1 + b*a*(x^2 + y^2))".into(),
                "b*y*(1 - (x^2 + y^2)) + x*(1 + b*a*(x^2 + y^2))".into(),
            ],
            noise: vec![strings(["sqrt(2*Dx)", "0"]), strings(["0", "sqrt(2*Dy)"])],
            parameters: params(&[("a", 1.0), ("b", 2.0), ("Dx", 0.1), ("Dy", 0.1)]),
            domain: Domain::square(1.75),
            boundary: Boundary::Truncated,
        },
        "heteroclinic" => ModelConfig {
            name: name.into(),
            drift: [
                "cos(x)*sin(y) + alpha*sin(2*x)".into(),
                "-sin(x)*cos(y) + alpha*sin(2*y)".into(),
            ],
            noise: vec![strings(["sqrt(2*D)", "0"]), strings(["0", "sqrt(2*D)"])],
            parameters: params(&[("alpha", 0.1), ("D", 0.1)]),
            domain: Domain::square(FRAC_PI_2),
            boundary: Boundary::Reflecting,
        },
        _ => return Err(Error::UnknownModel(name.to_string())),
    };
    ModelSpec::from_config(config)?.with_overrides(overrides)
}

/// Linear model `dX = A X dt + B dW` with constant coefficients.
pub fn linear_model(
    name: &str,
    a: [[f64; 2]; 2],
    b: [[f64; 2]; 2],
    domain: Domain,
    boundary: Boundary,
) -> Result<ModelSpec> {
    ModelSpec::from_config(ModelConfig {
        name: name.into(),
        drift: ["a11*x + a12*y".into(), "a21*x + a22*y".into()],
        noise: vec![strings(["b11", "b12"]), strings(["b21", "b22"])],
        parameters: params(&[
            ("a11", a[0][0]),
            ("a12", a[0][1]),
            ("a21", a[1][0]),
            ("a22", a[1][1]),
            ("b11", b[0][0]),
            ("b12", b[0][1]),
            ("b21", b[1][0]),
            ("b22", b[1][1]),
        ]),
        domain,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn none() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn builtin_defaults() {
        let s = builtin_model("spiral-sink", &none()).unwrap();
        assert_eq!(s.domain(), Domain::square(0.6));
        assert_eq!(s.boundary(), Boundary::Truncated);
        let f = s.eval_drift((1.0, 0.0)).unwrap();
        assert_eq!(f, (0.1598, 0.7227));
        let d = s.eval_diffusion((0.3, -0.1)).unwrap();
        assert!((d[0][0] - 1.25e-3).abs() < 1e-18 && (d[1][1] - 1.25e-3).abs() < 1e-18);
        assert_eq!(d[0][1], 0.0);

        let sl = builtin_model("stuart-landau", &none()).unwrap();
        assert_eq!(sl.domain(), Domain::square(1.75));
        assert_eq!(sl.eval_drift((1.0, 0.0)).unwrap(), (0.0, 3.0));
        let d = sl.eval_diffusion((0.0, 0.0)).unwrap();
        assert!((d[0][0] - 0.1).abs() < 1e-15 && (d[1][1] - 0.1).abs() < 1e-15);

        let het = builtin_model("heteroclinic", &none()).unwrap();
        assert_eq!(het.boundary(), Boundary::Reflecting);
        assert_eq!(het.domain().x, [-FRAC_PI_2, FRAC_PI_2]);
        assert_eq!(het.parameters()["alpha"], 0.1);
        assert_eq!(het.parameters()["D"], 0.1);
        let f = het.eval_drift((0.0, 0.0)).unwrap();
        assert_eq!(f, (0.0, 0.0));
    }

    #[test]
    fn anisotropic_stuart_landau_diffusion() {
        let ov = params(&[("Dy", 2.5e-4)]);
        let sl = builtin_model("stuart-landau", &ov).unwrap();
        let d = sl.eval_diffusion((0.5, 0.5)).unwrap();
        assert!((d[0][0] - 0.1).abs() < 1e-15);
        assert!((d[1][1] - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn override_errors() {
        assert!(matches!(builtin_model("van-der-pol", &none()), Err(Error::UnknownModel(_))));
        let bad = params(&[("Dz", 1.0)]);
        assert!(matches!(
            builtin_model("stuart-landau", &bad),
            Err(Error::UnknownOverride(n)) if n == "Dz"
        ));
    }

    #[test]
    fn zero_noise_gives_zero_diffusion() {
        let m = linear_model("zero", [[0.0; 2]; 2], [[0.0; 2]; 2], Domain::square(1.0), Boundary::Reflecting)
            .unwrap();
        assert_eq!(m.eval_diffusion((0.2, 0.1)).unwrap(), [[0.0; 2]; 2]);
    }

    #[test]
    fn json_config_round_trip_and_validation() {
        let text = r#"{
            "name": "ou",
            "drift": ["mu*x - omega*y", "omega*x + mu*y"],
            "noise": [["s", "0", "0.01"], ["0", "s", "0"]],
            "parameters": {"mu": -0.1, "omega": 1.0, "s": 0.2},
            "domain": {"x": [-1, 1], "y": [-2, 2]},
            "boundary": "truncated"
        }"#;
        let m = ModelSpec::from_json(text).unwrap();
        assert_eq!(m.noise_dim(), 3);
        assert!((m.eval_drift((1.0, 0.0)).unwrap().0 - -0.1).abs() < 1e-15);
        let d = m.eval_diffusion((0.0, 0.0)).unwrap();
        assert!((d[0][0] - 0.5 * (0.04 + 1e-4)).abs() < 1e-15);

        let missing_param = text.replace("\"s\": 0.2", "\"t\": 0.2");
        assert!(matches!(ModelSpec::from_json(&missing_param), Err(Error::Unbound(_))));
        let flat = text.replace("[-2, 2]", "[2, 2]");
        assert!(matches!(ModelSpec::from_json(&flat), Err(Error::InvalidModel(_))));
        let extra = text.replace("\"name\"", "\"nmae\": 1, \"name\"");
        assert!(matches!(ModelSpec::from_json(&extra), Err(Error::Json(_))));
    }

    #[test]
    fn diffusion_is_psd_everywhere_on_builtins() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for name in BUILTIN_NAMES {
            let m = builtin_model(name, &none()).unwrap();
            let dom = m.domain();
            for _ in 0..200 {
                let p = (rng.random_range(dom.x[0]..dom.x[1]), rng.random_range(dom.y[0]..dom.y[1]));
                let d = m.eval_diffusion(p).unwrap();
                assert_eq!(d[0][1], d[1][0]);
                let tr = d[0][0] + d[1][1];
                let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
                assert!(tr >= 0.0 && det >= -1e-18);
            }
        }
    }

    #[test]
    fn heteroclinic_drift_is_odd() {
        let m = builtin_model("heteroclinic", &none()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = (rng.random_range(-FRAC_PI_2..FRAC_PI_2), rng.random_range(-FRAC_PI_2..FRAC_PI_2));
            let a = m.eval_drift(p).unwrap();
            let b = m.eval_drift((-p.0, -p.1)).unwrap();
            assert!((a.0 + b.0).abs() < 1e-15 && (a.1 + b.1).abs() < 1e-15);
        }
    }
}
