//! Experiment configuration: a TOML file with an instance block (inline
//! parallel-route curves or a network file), the experiment kind, sweep
//! grids, seed, and output directory. Missing instance fields fall back to
//! the standard two-route test problem.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use daytoll_core::mdp::{ProblemConfig, RouteSystem};
use daytoll_core::network::{parse_network, NetworkFile};
use daytoll_core::pwl::{approximate_bpr, ApproxConfig, BprFunction, PwlFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Solve,
    Verify,
    Simulate,
    SweepTheta,
    SweepEta,
    SweepXmax,
    SweepAggregation,
    SweepRoutes,
}

impl ExperimentKind {
    pub fn parse(raw: &str) -> Result<Self> {
        Ok(match raw {
            "solve" => Self::Solve,
            "verify" => Self::Verify,
            "simulate" => Self::Simulate,
            "sweep-theta" => Self::SweepTheta,
            "sweep-eta" => Self::SweepEta,
            "sweep-xmax" => Self::SweepXmax,
            "sweep-aggregation" => Self::SweepAggregation,
            "sweep-routes" => Self::SweepRoutes,
            other => bail!(
                "unknown experiment kind '{other}' (expected solve, verify, simulate, \
                 sweep-theta, sweep-eta, sweep-xmax, sweep-aggregation or sweep-routes)"
            ),
        })
    }

    pub fn is_sweep(self) -> bool {
        matches!(
            self,
            Self::SweepTheta | Self::SweepEta | Self::SweepXmax | Self::SweepAggregation | Self::SweepRoutes
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Solve => "solve",
            Self::Verify => "verify",
            Self::Simulate => "simulate",
            Self::SweepTheta => "sweep-theta",
            Self::SweepEta => "sweep-eta",
            Self::SweepXmax => "sweep-xmax",
            Self::SweepAggregation => "sweep-aggregation",
            Self::SweepRoutes => "sweep-routes",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    instance: RawInstance,
    sweep: Option<RawSweep>,
    simulate: Option<RawSimulate>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    c: Option<Vec<f64>>,
    b: Option<Vec<f64>>,
    a: Option<f64>,
    epsilon: Option<f64>,
    eta: Option<usize>,
    toll_levels: Option<Vec<f64>>,
    theta: Option<f64>,
    x_max: Option<usize>,
    aggregation: Option<usize>,
    network: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    grid: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    horizon: Option<usize>,
}

/// Instance description after defaults: either inline BPR parameters or a
/// network file path (already parsed).
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub bpr_c: Vec<f64>,
    pub bpr_b: Vec<f64>,
    pub bpr_a: f64,
    pub epsilon: f64,
    pub eta: usize,
    pub toll_levels: Vec<f64>,
    pub theta: f64,
    pub x_max: usize,
    pub aggregation: Option<usize>,
    pub network: Option<(PathBuf, NetworkFile)>,
}

impl InstanceSpec {
    /// Parallel routes from the BPR parameters, cycling the configured
    /// parameter pairs to reach `route_count` routes.
    pub fn build_routes(&self, route_count: usize, eta: usize) -> Result<Vec<PwlFunction>> {
        let approx = ApproxConfig::new(self.epsilon, eta)?;
        (0..route_count)
            .map(|r| {
                let c = self.bpr_c[r % self.bpr_c.len()];
                let b = self.bpr_b[r % self.bpr_b.len()];
                let bpr = BprFunction::new(c, self.bpr_a, b)?;
                Ok(approximate_bpr(&bpr, &approx)?)
            })
            .collect()
    }

    /// Problem for this instance with optional overrides, used both for the
    /// base experiments and for the sweep points.
    pub fn problem(
        &self,
        theta: f64,
        x_max: usize,
        eta: usize,
        route_count: usize,
    ) -> Result<ProblemConfig> {
        let routes = match &self.network {
            Some((_, file)) => match &file.multi_od {
                Some(spec) => RouteSystem::MultiOd(file.network.clone(), spec.clone()),
                None => RouteSystem::SingleOd(file.network.clone()),
            },
            None => RouteSystem::Parallel(self.build_routes(route_count, eta)?),
        };
        let cfg = ProblemConfig {
            theta,
            x_max,
            toll_levels: self.toll_levels.clone(),
            routes,
            aggregation: self.aggregation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn base_problem(&self) -> Result<ProblemConfig> {
        self.problem(self.theta, self.x_max, self.eta, self.bpr_c.len())
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: PathBuf,
    pub instance: InstanceSpec,
    pub grid: Vec<f64>,
    pub horizon: usize,
    /// Echo of the resolved values for the manifest.
    pub source_path: PathBuf,
}

impl ExperimentConfig {
    /// Integer view of the sweep grid for the integer-valued sweeps.
    pub fn integer_grid(&self) -> Result<Vec<usize>> {
        self.grid
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && v >= 1.0 {
                    Ok(v as usize)
                } else {
                    bail!("grid value {v} must be a positive integer for this sweep")
                }
            })
            .collect()
    }

    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config: {}\n", self.source_path.display()));
        out.push_str(&format!("kind: {}\n", self.kind));
        out.push_str(&format!("seed: {}\n", self.seed));
        let inst = &self.instance;
        match &inst.network {
            Some((path, _)) => out.push_str(&format!("network: {}\n", path.display())),
            None => {
                out.push_str(&format!("bpr_c: {:?}\n", inst.bpr_c));
                out.push_str(&format!("bpr_b: {:?}\n", inst.bpr_b));
                out.push_str(&format!("bpr_a: {}\n", inst.bpr_a));
                out.push_str(&format!("epsilon: {}\n", inst.epsilon));
                out.push_str(&format!("eta: {}\n", inst.eta));
            }
        }
        out.push_str(&format!("toll_levels: {:?}\n", inst.toll_levels));
        out.push_str(&format!("theta: {}\n", inst.theta));
        out.push_str(&format!("x_max: {}\n", inst.x_max));
        if let Some(n) = inst.aggregation {
            out.push_str(&format!("aggregation: {n}\n"));
        }
        if self.kind.is_sweep() {
            out.push_str(&format!("grid: {:?}\n", self.grid));
        }
        if self.kind == ExperimentKind::Simulate {
            out.push_str(&format!("horizon: {}\n", self.horizon));
        }
        out
    }
}

/// Reads and validates a config file. `kind_override` comes from the CLI
/// subcommand; when the file also names a kind the two must agree.
pub fn parse_config(
    path: &Path,
    kind_override: Option<ExperimentKind>,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let raw: RawConfig = toml::from_str(&text)
        .with_context(|| format!("invalid config file {}", path.display()))?;

    let file_kind = raw.kind.as_deref().map(ExperimentKind::parse).transpose()?;
    let kind = match (file_kind, kind_override) {
        (Some(a), Some(b)) => {
            if !compatible_kind(a, b) {
                bail!("config file declares kind '{a}' but the subcommand requested '{b}'");
            }
            a
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => bail!("no experiment kind: set 'kind' in the config or use a subcommand"),
    };

    let inst = raw.instance;
    let bpr_c = inst.c.unwrap_or_else(|| vec![1.0, 2.0]);
    let bpr_b = inst.b.unwrap_or_else(|| vec![0.5, 1.0]);
    if bpr_c.is_empty() || bpr_c.len() != bpr_b.len() {
        bail!("instance.c and instance.b must be non-empty and of equal length");
    }
    let theta = inst.theta.unwrap_or(100.0);
    if !(theta.is_finite() && theta > 0.0) {
        bail!("instance.theta must be positive and finite, got {theta}");
    }
    let toll_levels = inst.toll_levels.unwrap_or_else(|| vec![2.0, 3.0, 4.0]);
    let x_max = inst.x_max.unwrap_or(15);
    if x_max < 1 {
        bail!("instance.x_max must be at least 1");
    }
    let epsilon = inst.epsilon.unwrap_or(1.0);
    let eta = inst.eta.unwrap_or(4);
    let network = match inst.network {
        Some(rel) => {
            let resolved = if rel.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(&rel)
            } else {
                rel.clone()
            };
            let text = std::fs::read_to_string(&resolved)
                .with_context(|| format!("cannot read network file {}", resolved.display()))?;
            let parsed = parse_network(&text)
                .with_context(|| format!("invalid network file {}", resolved.display()))?;
            Some((resolved, parsed))
        }
        None => None,
    };

    let grid = raw.sweep.map(|s| s.grid).unwrap_or_default();
    if kind.is_sweep() && grid.is_empty() {
        bail!("experiment kind '{kind}' needs a non-empty [sweep] grid");
    }
    if network.is_some()
        && matches!(
            kind,
            ExperimentKind::SweepEta | ExperimentKind::SweepRoutes
        )
    {
        bail!("'{kind}' varies the inline BPR routes and cannot run on a network file");
    }
    let horizon = raw
        .simulate
        .and_then(|s| s.horizon)
        .unwrap_or(1_000_000);
    if horizon == 0 {
        bail!("simulate.horizon must be at least 1");
    }

    let instance = InstanceSpec {
        bpr_c,
        bpr_b,
        bpr_a: inst.a.unwrap_or(4.0),
        epsilon,
        eta,
        toll_levels,
        theta,
        x_max,
        aggregation: inst.aggregation,
        network,
    };
    // Surface bad instance values (negative tolls, eta = 0, ...) now rather
    // than at run time.
    instance.base_problem()?;

    Ok(ExperimentConfig {
        kind,
        seed: seed_override.or(raw.seed).unwrap_or(0),
        out: out_override
            .or(raw.out)
            .unwrap_or_else(|| PathBuf::from("daytoll-out")),
        instance,
        grid,
        horizon,
        source_path: path.to_path_buf(),
    })
}

/// The fixed subcommands must match the kind declared in the file; the
/// `sweep` subcommand passes no override and defers to the file entirely.
fn compatible_kind(file: ExperimentKind, requested: ExperimentKind) -> bool {
    file == requested
}
