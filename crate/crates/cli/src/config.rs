use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eigengrowth::{ChartPoint, HamiltonianModel, ManifoldModel, Profile};
use serde::{Deserialize, Serialize};

use crate::check::CheckSpec;

pub const EXPERIMENTS: [&str; 8] = ["flow", "return-map", "recurrence", "quasimode", "defect", "bounds", "scaling", "cluster"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiments: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default, rename = "check", skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Sphere {
        #[serde(default = "one")]
        radius: f64,
    },
    Torus {
        periods: Vec<f64>,
    },
    /// Surface of revolution with profile `r(s) = c₀ + Σ c_k cos(2πks/L)`.
    Revolution {
        length: f64,
        cosine: Vec<f64>,
        #[serde(default = "profile_samples")]
        samples: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn profile_samples() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Base point in chart coordinates; `[θ, φ]` on the sphere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    pub degrees: Vec<usize>,
    /// Semiclassical parameters; when set they replace `degrees` by the
    /// nearest admissible levels.
    pub h: Vec<f64>,
    pub directions: usize,
    pub t_max: f64,
    pub samples: usize,
    pub fiber_tol: f64,
    pub eps_return: f64,
    pub epsilons: Vec<f64>,
    /// Fiber atoms `[angle, mass]` added to the uniform density.
    pub atoms: Vec<[f64; 2]>,
    /// Mass of the uniform part of the fiber density.
    pub uniform_mass: f64,
    pub c_n: f64,
    pub cluster_width: f64,
    pub symbols: usize,
    pub grid: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            point: None,
            degrees: vec![50, 100, 200],
            h: vec![],
            directions: 64,
            t_max: 10.0,
            samples: 20,
            fiber_tol: 1e-6,
            eps_return: 1e-3,
            epsilons: vec![],
            atoms: vec![],
            uniform_mass: 1.0,
            c_n: 1.0,
            cluster_width: 0.5,
            symbols: 10,
            grid: 128,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate().with_context(|| format!("validating {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for name in &self.experiments {
            if !EXPERIMENTS.contains(&name.as_str()) {
                bail!("experiments: unknown experiment `{name}` (expected one of {})", EXPERIMENTS.join(", "));
            }
        }
        match &self.model {
            ModelConfig::Sphere { radius } => positive("model.radius", *radius)?,
            ModelConfig::Torus { periods } => {
                if periods.len() != 2 {
                    bail!("model.periods: expected two periods");
                }
                for p in periods {
                    positive("model.periods", *p)?;
                }
            }
            ModelConfig::Revolution { length, cosine, samples } => {
                positive("model.length", *length)?;
                if cosine.is_empty() {
                    bail!("model.cosine: need at least the mean radius");
                }
                if *samples < 16 {
                    bail!("model.samples: need at least 16 samples");
                }
            }
        }
        let p = &self.params;
        for (key, v) in [
            ("params.t_max", p.t_max),
            ("params.fiber_tol", p.fiber_tol),
            ("params.eps_return", p.eps_return),
            ("params.c_n", p.c_n),
            ("params.cluster_width", p.cluster_width),
        ] {
            positive(key, v)?;
        }
        if p.uniform_mass.is_nan() || p.uniform_mass < 0.0 {
            bail!("params.uniform_mass: must be non-negative");
        }
        for h in &p.h {
            positive("params.h", *h)?;
        }
        if p.h.windows(2).any(|w| w[1] >= w[0]) {
            bail!("params.h: sequence must be strictly decreasing");
        }
        for e in &p.epsilons {
            positive("params.epsilons", *e)?;
        }
        for [_, mass] in &p.atoms {
            positive("params.atoms", *mass)?;
        }
        for (key, n) in [("params.directions", p.directions), ("params.samples", p.samples), ("params.grid", p.grid)] {
            if n == 0 {
                bail!("{key}: must be positive");
            }
        }
        if p.degrees.contains(&0) {
            bail!("params.degrees: degrees must be positive");
        }
        if let Some(x) = &p.point {
            if x.len() != 2 || x.iter().any(|v| !v.is_finite()) {
                bail!("params.point: expected two finite coordinates");
            }
        }
        Ok(())
    }

    pub fn manifold(&self) -> Result<ManifoldModel> {
        Ok(match &self.model {
            ModelConfig::Sphere { radius } => ManifoldModel::round_sphere(*radius)?,
            ModelConfig::Torus { periods } => ManifoldModel::flat_torus(periods.clone())?,
            ModelConfig::Revolution { length, cosine, samples } => {
                let (l, c) = (*length, cosine.clone());
                let profile = Profile::from_fn(l, *samples, move |s| {
                    c.iter().enumerate().map(|(k, a)| a * (2.0 * PI * k as f64 * s / l).cos()).sum()
                })?;
                ManifoldModel::surface_of_revolution(profile)
            }
        })
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianModel> {
        Ok(HamiltonianModel::laplace(self.manifold()?))
    }

    pub fn base_point(&self) -> ChartPoint {
        let default = match self.model {
            ModelConfig::Sphere { .. } => vec![0.0, 0.0],
            ModelConfig::Torus { .. } => vec![0.3, 0.2],
            ModelConfig::Revolution { .. } => vec![0.0, 0.0],
        };
        let x = self.params.point.clone().unwrap_or(default);
        match self.model {
            ModelConfig::Sphere { .. } => {
                let (t, f) = (x[0], x[1]);
                ManifoldModel::sphere_point([t.sin() * f.cos(), t.sin() * f.sin(), t.cos()])
            }
            _ => ChartPoint::global(x),
        }
    }

    /// Canonical serialization, hashed into the bundle metadata.
    pub fn canonical(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_nan() || v <= 0.0 || v.is_infinite() {
        bail!("{key}: must be positive and finite, got {v}");
    }
    Ok(())
}
