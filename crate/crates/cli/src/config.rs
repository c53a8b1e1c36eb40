//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ipslab_core::dynamics::{contact, cyclic_clock, exclusion, flip, glauber_heat_bath, glauber_metropolis};
use ipslab_core::gibbs::PotentialSpec;
use ipslab_core::measure::{state_count, STATE_CAP};
use ipslab_core::{Config, DenseMeasure, Potential, RateFamily, RateFamilySpec, Specification, Torus, Window};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{0}")]
    Io(String),
}

fn invalid(field: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub torus: TorusConfig,
    #[serde(default)]
    pub initial: InitialRecipe,
    #[serde(default)]
    pub time: TimeGrid,
    /// Diagnostic windows as lists of torus sites.
    #[serde(default)]
    pub windows: Vec<Vec<usize>>,
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub jensen: JensenConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GlauberHeatBath,
    GlauberMetropolis,
    Exclusion,
    CyclicClock,
    Flip,
    Contact,
    Inline,
}

/// A builtin with its parameters, or inline potential and rate tables.
/// Unused parameters are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub beta: Option<f64>,
    pub field: Option<f64>,
    pub q: Option<usize>,
    pub p_right: Option<f64>,
    pub p_left: Option<f64>,
    pub forward: Option<f64>,
    pub backward: Option<f64>,
    pub rate: Option<f64>,
    pub infection: Option<f64>,
    pub recovery: Option<f64>,
    pub potential: Option<PotentialSpec>,
    pub rates: Option<RateFamilySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusConfig {
    pub sides: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialRecipe {
    Uniform,
    /// The same single-site law (states in order `1..q`) at every site.
    Product { p: Vec<f64> },
    /// Point mass on a configuration string of the whole torus.
    Point { config: String },
    /// Uniformly random weights; the seed defaults to the run seed.
    Random { seed: Option<u64> },
    Soften { inner: Box<InitialRecipe>, eps: f64 },
    TranslationAverage { inner: Box<InitialRecipe> },
}

impl Default for InitialRecipe {
    fn default() -> Self {
        InitialRecipe::Uniform
    }
}

/// Explicit `times`, or `points` equally spaced times ending at `t_end`, or
/// at `gap_multiple` divided by the spectral gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub times: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub gap_multiple: Option<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    50
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            times: None,
            t_end: None,
            gap_multiple: Some(50.0),
            points: default_points(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Decay,
    Decomposition,
    Jensen,
    Gtilde,
    Reversible,
    Attractor,
    Conditions,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Decay => "decay",
            Suite::Decomposition => "decomposition",
            Suite::Jensen => "jensen",
            Suite::Gtilde => "gtilde",
            Suite::Reversible => "reversible",
            Suite::Attractor => "attractor",
            Suite::Conditions => "conditions",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Embed the measures in trajectory JSON.
    #[serde(default)]
    pub json_measures: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JensenConfig {
    /// Largest box index; defaults to the largest box that fits, at most 2.
    pub n_max: Option<u32>,
}

/// A validated configuration with its model built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub torus: Torus,
    pub spec: Specification,
    pub rates: RateFamily,
    pub windows: Vec<Window>,
    pub initial: DenseMeasure,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Ok((Self::from_toml_str(&text, &path.display().to_string())?, text))
    }

    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let torus = Torus::new(self.torus.sides.clone()).map_err(|e| invalid("torus.sides", e))?;
        let d = torus.dim();
        let (spec, rates) = self.model.build(d)?;
        if rates.q() != spec.q() || rates.dim() != d || spec.potential().dim() != d {
            return Err(invalid("model", "potential, rates and torus disagree on q or dimension"));
        }
        state_count(rates.q(), torus.len())
            .ok()
            .filter(|&n| n <= STATE_CAP)
            .ok_or_else(|| invalid("torus.sides", format!("q^N exceeds the state cap {STATE_CAP}")))?;
        for r in rates.rules() {
            if !torus.fits(&r.support()) {
                return Err(invalid("torus.sides", "torus is too small for the rate supports"));
            }
        }
        let mut windows = Vec::new();
        for (k, w) in self.windows.iter().enumerate() {
            if w.is_empty() || w.iter().any(|&s| s >= torus.len()) {
                return Err(invalid(&format!("windows[{k}]"), format!("sites must lie in 0..{}", torus.len())));
            }
            windows.push(Window::new(w.clone()));
        }
        if let Some(ts) = &self.time.times {
            if ts.is_empty() || ts[0] < 0.0 || ts.windows(2).any(|p| p[1] <= p[0]) {
                return Err(invalid("time.times", "must be non-negative and strictly increasing"));
            }
        } else if self.time.points == 0 {
            return Err(invalid("time.points", "must be positive"));
        }
        for (name, v) in [("time.t_end", self.time.t_end), ("time.gap_multiple", self.time.gap_multiple)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(name, "must be positive"));
                }
            }
        }
        if self.suites.is_empty() {
            return Err(invalid("suites", "select at least one suite"));
        }
        let initial = self.initial.build(&torus, rates.q(), self.seed, "initial")?;
        Ok(Experiment {
            config: self.clone(),
            torus,
            spec,
            rates,
            windows,
            initial,
        })
    }
}

impl ModelConfig {
    fn build(&self, d: usize) -> Result<(Specification, RateFamily), ConfigError> {
        use ModelKind::*;
        let allowed: &[&str] = match self.kind {
            GlauberHeatBath | GlauberMetropolis => &["beta", "field"],
            Exclusion => &["p_right", "p_left"],
            CyclicClock => &["q", "forward", "backward"],
            Flip => &["q", "rate"],
            Contact => &["infection", "recovery"],
            Inline => &["potential", "rates"],
        };
        let given = [
            ("beta", self.beta.is_some()),
            ("field", self.field.is_some()),
            ("q", self.q.is_some()),
            ("p_right", self.p_right.is_some()),
            ("p_left", self.p_left.is_some()),
            ("forward", self.forward.is_some()),
            ("backward", self.backward.is_some()),
            ("rate", self.rate.is_some()),
            ("infection", self.infection.is_some()),
            ("recovery", self.recovery.is_some()),
            ("potential", self.potential.is_some()),
            ("rates", self.rates.is_some()),
        ];
        for (name, present) in given {
            if present && !allowed.contains(&name) {
                return Err(invalid(&format!("model.{name}"), format!("not a parameter of {:?}", self.kind)));
            }
        }
        let err = |e: ipslab_core::Error| invalid("model", e);
        let ising = || -> Result<Specification, ConfigError> {
            Specification::new(Potential::ising(self.beta.unwrap_or(0.5), self.field.unwrap_or(0.0), d)).map_err(err)
        };
        let zero = |q: usize| Specification::new(Potential::zero(q, d)).map_err(err);
        let q = self.q.unwrap_or(3);
        Ok(match self.kind {
            GlauberHeatBath => {
                let s = ising()?;
                let r = glauber_heat_bath(&s).map_err(err)?;
                (s, r)
            }
            GlauberMetropolis => {
                let s = ising()?;
                let r = glauber_metropolis(&s).map_err(err)?;
                (s, r)
            }
            Exclusion => (
                zero(2)?,
                exclusion(self.p_right.unwrap_or(0.7), self.p_left.unwrap_or(0.3), d).map_err(err)?,
            ),
            CyclicClock => (
                zero(q)?,
                cyclic_clock(q, self.forward.unwrap_or(1.0), self.backward.unwrap_or(0.0), d).map_err(err)?,
            ),
            Flip => {
                let q = self.q.unwrap_or(2);
                (zero(q)?, flip(q, self.rate.unwrap_or(1.0), d).map_err(err)?)
            }
            Contact => (
                zero(2)?,
                contact(self.infection.unwrap_or(1.0), self.recovery.unwrap_or(1.0), d).map_err(err)?,
            ),
            Inline => {
                let rs = self
                    .rates
                    .as_ref()
                    .ok_or_else(|| invalid("model.rates", "inline models need a rates table"))?;
                let rates = RateFamily::from_spec(rs).map_err(|e| invalid("model.rates", e))?;
                let pot = match &self.potential {
                    Some(p) => Potential::from_spec(p).map_err(|e| invalid("model.potential", e))?,
                    None => Potential::zero(rates.q(), rates.dim()),
                };
                (Specification::new(pot).map_err(|e| invalid("model.potential", e))?, rates)
            }
        })
    }
}

impl InitialRecipe {
    pub fn build(&self, torus: &Torus, q: usize, seed: u64, field: &str) -> Result<DenseMeasure, ConfigError> {
        let full = torus.full_window();
        let err = |e: ipslab_core::Error| invalid(field, e);
        match self {
            InitialRecipe::Uniform => DenseMeasure::uniform(torus, full, q).map_err(err),
            InitialRecipe::Product { p } => {
                if p.len() != q {
                    return Err(invalid(&format!("{field}.p"), format!("needs {q} probabilities")));
                }
                DenseMeasure::product(torus, full, p).map_err(err)
            }
            InitialRecipe::Point { config } => {
                let c = Config::parse(full, q, config).map_err(|e| invalid(&format!("{field}.config"), e))?;
                DenseMeasure::point_mass(torus, q, &c).map_err(err)
            }
            InitialRecipe::Random { seed: s } => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.unwrap_or(seed));
                DenseMeasure::random(torus, full, q, &mut rng).map_err(err)
            }
            InitialRecipe::Soften { inner, eps } => {
                if !(*eps > 0.0 && *eps < 1.0) {
                    return Err(invalid(&format!("{field}.eps"), "must lie in (0, 1)"));
                }
                inner
                    .build(torus, q, seed, &format!("{field}.inner"))?
                    .soften(*eps)
                    .map_err(err)
            }
            InitialRecipe::TranslationAverage { inner } => inner
                .build(torus, q, seed, &format!("{field}.inner"))?
                .translation_average()
                .map_err(err),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GLAUBER: &str = r#"
seed = 3
suites = ["decay"]
windows = [[0], [0, 1]]

[model]
kind = "glauber_heat_bath"
beta = 0.5

[torus]
sides = [6]

[initial]
kind = "soften"
eps = 0.01
inner = { kind = "point", config = "111111" }

[time]
gap_multiple = 50.0
points = 50
"#;

    #[test]
    fn parses_and_builds() {
        let c = ExperimentConfig::from_toml_str(GLAUBER, "test").unwrap();
        assert_eq!(c.seed, 3);
        let e = c.build().unwrap();
        assert_eq!(e.windows.len(), 2);
        assert!((e.initial.weights()[0] - (0.99 + 0.01 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let bad_key = GLAUBER.replace("beta = 0.5", "beta = 0.5\nbogus = 1");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad_key, "x"),
            Err(ConfigError::Parse { .. })
        ));
        let bad_param = GLAUBER.replace("beta = 0.5", "p_right = 0.5");
        let err = ExperimentConfig::from_toml_str(&bad_param, "x").unwrap().build().unwrap_err();
        assert!(err.to_string().starts_with("model.p_right"));
        let bad_eps = GLAUBER.replace("eps = 0.01", "eps = 1.5");
        let err = ExperimentConfig::from_toml_str(&bad_eps, "x").unwrap().build().unwrap_err();
        assert!(err.to_string().starts_with("initial.eps"));
        let bad_window = GLAUBER.replace("[[0], [0, 1]]", "[[0], [7]]");
        let err = ExperimentConfig::from_toml_str(&bad_window, "x").unwrap().build().unwrap_err();
        assert!(err.to_string().starts_with("windows[1]"));
        let small = GLAUBER.replace("sides = [6]", "sides = [1]");
        assert!(ExperimentConfig::from_toml_str(&small, "x").unwrap().build().is_err());
    }

    #[test]
    fn inline_model() {
        let text = r#"
suites = ["conditions"]
[model]
kind = "inline"
[model.rates]
q = 2
dim = 1
[[model.rates.rules]]
shape = [[0]]
dep_window = [[0]]
table = { "1->2" = 1.0, "2->1" = 2.0 }
[torus]
sides = [3]
"#;
        let e = ExperimentConfig::from_toml_str(text, "x").unwrap().build().unwrap();
        assert_eq!(e.rates.rules().len(), 1);
        assert_eq!(e.spec.q(), 2);
    }
}
