//! Finite control model: states, the Cartesian toll action set, truncated
//! Poisson (or aggregated normal) transition rows, and expected-cost tables.
//!
//! Demand in the next time step is Poisson with mean `theta / TSTT(x, u)`:
//! a higher system travel time today depresses tomorrow's demand. The
//! countable chain is truncated to `0..=x_max` and each row renormalized
//! over the kept support. State aggregation replaces integers by interval
//! centers and the Poisson row by a normal-density integral with matching
//! mean and variance, renormalized the same way.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use crate::equilibrium::{self, EquilibriumError, TollVector};
use crate::network::{self, MultiOdSpec, Network, NetworkError};
use crate::pwl::PwlFunction;

#[derive(Debug)]
pub enum ModelError {
    InvalidTheta { value: f64 },
    InvalidXMax,
    InvalidTollLevels { reason: String },
    InvalidAggregation { value: usize },
    NonPositiveTstt { state: f64, value: f64 },
    NonFiniteMean { value: f64 },
    DegenerateRow { state: f64 },
    TollCountMismatch { expected: usize, got: usize },
    Equilibrium(EquilibriumError),
    Network(NetworkError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidTheta { value } => {
                write!(f, "theta must be positive and finite, got {value}")
            }
            ModelError::InvalidXMax => write!(f, "model needs at least one state and one action"),
            ModelError::InvalidTollLevels { reason } => write!(f, "invalid toll levels: {reason}"),
            ModelError::InvalidAggregation { value } => {
                write!(f, "aggregation count must be at least 1, got {value}")
            }
            ModelError::NonPositiveTstt { state, value } => {
                write!(f, "TSTT at state {state} is {value}, expected positive")
            }
            ModelError::NonFiniteMean { value } => {
                write!(f, "Poisson mean is not finite: {value}")
            }
            ModelError::DegenerateRow { state } => {
                write!(f, "transition row from state {state} has zero mass")
            }
            ModelError::TollCountMismatch { expected, got } => {
                write!(f, "expected {expected} tolls, got {got}")
            }
            ModelError::Equilibrium(e) => write!(f, "{e}"),
            ModelError::Network(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<EquilibriumError> for ModelError {
    fn from(e: EquilibriumError) -> Self {
        ModelError::Equilibrium(e)
    }
}

impl From<NetworkError> for ModelError {
    fn from(e: NetworkError) -> Self {
        ModelError::Network(e)
    }
}

/// What the tolled system looks like: parallel single-link routes, a
/// single-OD network reduced per action, or a demand chain over a network.
#[derive(Clone, Debug)]
pub enum RouteSystem {
    Parallel(Vec<PwlFunction>),
    SingleOd(Network),
    MultiOd(Network, MultiOdSpec),
}

impl RouteSystem {
    /// Length of the toll vector an action must supply.
    pub fn toll_dimension(&self) -> usize {
        match self {
            RouteSystem::Parallel(routes) => routes.len(),
            RouteSystem::SingleOd(net) | RouteSystem::MultiOd(net, _) => net.toll_slots(),
        }
    }

    /// TSTT at each listed demand under one action. Network systems are
    /// reduced once per action, then queried per state.
    pub fn tstt_profile(&self, states: &[f64], tolls: &[f64]) -> Result<Vec<f64>, ModelError> {
        match self {
            RouteSystem::Parallel(routes) => {
                let u = TollVector::new(tolls.to_vec())?;
                states
                    .iter()
                    .map(|&x| Ok(equilibrium::tstt(routes, x, &u)?))
                    .collect()
            }
            RouteSystem::SingleOd(net) => {
                let reduced = network::reduce_series_parallel(net, tolls)?;
                states
                    .iter()
                    .map(|&x| Ok(network::reduced_tstt(&reduced, x, tolls)?))
                    .collect()
            }
            RouteSystem::MultiOd(net, spec) => {
                let cap = states.iter().cloned().fold(0.0f64, f64::max);
                let reduced = network::reduce_multi_od(net, spec, cap, tolls)?;
                let routes = std::slice::from_ref(&reduced);
                states
                    .iter()
                    .map(|&x| Ok(network::reduced_tstt(routes, x, tolls)?))
                    .collect()
            }
        }
    }
}

/// Instance description: demand scale, truncation bound, toll levels, and
/// the route system the tolls act on.
#[derive(Clone, Debug)]
pub struct ProblemConfig {
    pub theta: f64,
    pub x_max: usize,
    pub toll_levels: Vec<f64>,
    pub routes: RouteSystem,
    pub aggregation: Option<usize>,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(ModelError::InvalidTheta { value: self.theta });
        }
        if self.toll_levels.is_empty() {
            return Err(ModelError::InvalidTollLevels {
                reason: "need at least one level".into(),
            });
        }
        for pair in self.toll_levels.windows(2) {
            if pair[0] >= pair[1] {
                return Err(ModelError::InvalidTollLevels {
                    reason: "levels must be strictly increasing".into(),
                });
            }
        }
        for &level in &self.toll_levels {
            if !(level.is_finite() && level > 0.0) {
                return Err(ModelError::InvalidTollLevels {
                    reason: format!("level {level} must be positive and finite"),
                });
            }
        }
        if let Some(n) = self.aggregation {
            if n < 1 {
                return Err(ModelError::InvalidAggregation { value: n });
            }
        }
        Ok(())
    }

    pub fn tau_min(&self) -> f64 {
        self.toll_levels[0]
    }

    pub fn tau_max(&self) -> f64 {
        self.toll_levels[self.toll_levels.len() - 1]
    }

    /// Full Cartesian product of toll levels over the toll slots, in
    /// lexicographic order (slot 0 most significant), so index 0 is the
    /// all-minimum action and smaller index means lexicographically smaller
    /// toll vector.
    pub fn actions(&self) -> Vec<Vec<f64>> {
        let dim = self.routes.toll_dimension();
        let m = self.toll_levels.len();
        let total = m.pow(dim as u32);
        let mut actions = Vec::with_capacity(total);
        for index in 0..total {
            let mut action = vec![0.0; dim];
            let mut rest = index;
            for slot in (0..dim).rev() {
                action[slot] = self.toll_levels[rest % m];
                rest /= m;
            }
            actions.push(action);
        }
        actions
    }
}

/// A fully materialized finite MDP: per-action row-stochastic transition
/// matrices plus expected-cost and TSTT tables.
#[derive(Clone, Debug)]
pub struct MdpModel {
    states: Vec<f64>,
    actions: Vec<Vec<f64>>,
    /// `transitions[a][i * n + j]`
    transitions: Vec<Vec<f64>>,
    /// `costs[i * num_actions + a]`
    costs: Vec<f64>,
    tstt: Vec<f64>,
    pub theta: f64,
}

impl MdpModel {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn transition_row(&self, action: usize, state: usize) -> &[f64] {
        let n = self.states.len();
        &self.transitions[action][state * n..(state + 1) * n]
    }

    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.costs[state * self.actions.len() + action]
    }

    pub fn tstt(&self, state: usize, action: usize) -> f64 {
        self.tstt[state * self.actions.len() + action]
    }

    /// Differential costs are anchored at the last (largest) state.
    pub fn anchor(&self) -> usize {
        self.states.len() - 1
    }

    /// Assembles a model from raw tables. `transitions[a]` is row-major
    /// `n x n`; `costs` and `tstt` are `n x num_actions` row-major. Every
    /// transition row must sum to 1 within 1e-12.
    pub fn from_tables(
        states: Vec<f64>,
        actions: Vec<Vec<f64>>,
        transitions: Vec<Vec<f64>>,
        costs: Vec<f64>,
        tstt: Vec<f64>,
        theta: f64,
    ) -> Result<Self, ModelError> {
        let n = states.len();
        if n == 0 || actions.is_empty() {
            return Err(ModelError::InvalidXMax);
        }
        if transitions.len() != actions.len()
            || costs.len() != n * actions.len()
            || tstt.len() != n * actions.len()
        {
            return Err(ModelError::TollCountMismatch {
                expected: n * actions.len(),
                got: costs.len(),
            });
        }
        for matrix in &transitions {
            if matrix.len() != n * n {
                return Err(ModelError::TollCountMismatch {
                    expected: n * n,
                    got: matrix.len(),
                });
            }
            for i in 0..n {
                let total: f64 = matrix[i * n..(i + 1) * n].iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(ModelError::DegenerateRow { state: states[i] });
                }
            }
        }
        Ok(Self {
            states,
            actions,
            transitions,
            costs,
            tstt,
            theta,
        })
    }

    /// Writes one transition-matrix CSV per action plus a cost table.
    pub fn dump_csv(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let n = self.num_states();
        for (a, matrix) in self.transitions.iter().enumerate() {
            let mut f = std::fs::File::create(dir.join(format!("transitions_action_{a}.csv")))?;
            let header: Vec<String> = (0..n).map(|j| format!("to_{j}")).collect();
            writeln!(f, "from,{}", header.join(","))?;
            for i in 0..n {
                let row: Vec<String> = matrix[i * n..(i + 1) * n]
                    .iter()
                    .map(|p| format!("{p}"))
                    .collect();
                writeln!(f, "{},{}", self.states[i], row.join(","))?;
            }
        }
        let mut f = std::fs::File::create(dir.join("costs.csv"))?;
        let header: Vec<String> = (0..self.num_actions())
            .map(|a| format!("action_{a}"))
            .collect();
        writeln!(f, "state,{}", header.join(","))?;
        for i in 0..n {
            let row: Vec<String> = (0..self.num_actions())
                .map(|a| format!("{}", self.cost(i, a)))
                .collect();
            writeln!(f, "{},{}", self.states[i], row.join(","))?;
        }
        Ok(())
    }
}

/// Truncated Poisson pmf over `0..=x_max`, computed in log space and
/// renormalized over the kept support.
fn truncated_poisson(mean: f64, x_max: usize) -> Result<Vec<f64>, ModelError> {
    if !mean.is_finite() || mean <= 0.0 {
        return Err(ModelError::NonFiniteMean { value: mean });
    }
    let ln_mean = mean.ln();
    let logs: Vec<f64> = (0..=x_max)
        .map(|j| j as f64 * ln_mean - mean - libm::lgamma(j as f64 + 1.0))
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut row: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = row.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(ModelError::DegenerateRow { state: mean });
    }
    for p in &mut row {
        *p /= total;
    }
    Ok(row)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn check_action(cfg: &ProblemConfig, tolls: &[f64]) -> Result<(), ModelError> {
    let dim = cfg.routes.toll_dimension();
    if tolls.len() != dim {
        return Err(ModelError::TollCountMismatch {
            expected: dim,
            got: tolls.len(),
        });
    }
    Ok(())
}

/// Truncated transition row out of state `x` under one action.
pub fn poisson_row(cfg: &ProblemConfig, x: f64, tolls: &[f64]) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    check_action(cfg, tolls)?;
    let ts = cfg.routes.tstt_profile(&[x], tolls)?[0];
    if ts <= 0.0 {
        return Err(ModelError::NonPositiveTstt { state: x, value: ts });
    }
    truncated_poisson(cfg.theta / ts, cfg.x_max)
}

/// Expected cost per time step: the truncated-Poisson expectation of the
/// next state's TSTT, evaluated under the current action.
pub fn expected_cost(cfg: &ProblemConfig, x: f64, tolls: &[f64]) -> Result<f64, ModelError> {
    cfg.validate()?;
    check_action(cfg, tolls)?;
    let integers: Vec<f64> = (0..=cfg.x_max).map(|j| j as f64).collect();
    let ts_next = cfg.routes.tstt_profile(&integers, tolls)?;
    let ts_here = cfg.routes.tstt_profile(&[x], tolls)?[0];
    if ts_here <= 0.0 {
        return Err(ModelError::NonPositiveTstt { state: x, value: ts_here });
    }
    let row = truncated_poisson(cfg.theta / ts_here, cfg.x_max)?;
    Ok(row.iter().zip(&ts_next).map(|(p, t)| p * t).sum())
}

/// Enumerates states `0..=x_max` and the full action product; fills the
/// transition and cost tables. Deterministic given the config.
pub fn build_truncated_model(cfg: &ProblemConfig) -> Result<MdpModel, ModelError> {
    cfg.validate()?;
    let states: Vec<f64> = (0..=cfg.x_max).map(|j| j as f64).collect();
    let actions = cfg.actions();
    let n = states.len();
    let mut transitions = Vec::with_capacity(actions.len());
    let mut costs = vec![0.0; n * actions.len()];
    let mut tstt = vec![0.0; n * actions.len()];
    for (a, action) in actions.iter().enumerate() {
        let ts = cfg.routes.tstt_profile(&states, action)?;
        let mut matrix = vec![0.0; n * n];
        for (i, &t) in ts.iter().enumerate() {
            if t <= 0.0 {
                return Err(ModelError::NonPositiveTstt {
                    state: states[i],
                    value: t,
                });
            }
            let row = truncated_poisson(cfg.theta / t, cfg.x_max)?;
            let g: f64 = row.iter().zip(&ts).map(|(p, tn)| p * tn).sum();
            matrix[i * n..(i + 1) * n].copy_from_slice(&row);
            costs[i * actions.len() + a] = g;
            tstt[i * actions.len() + a] = t;
        }
        transitions.push(matrix);
    }
    Ok(MdpModel {
        states,
        actions,
        transitions,
        costs,
        tstt,
        theta: cfg.theta,
    })
}

/// Aggregated model over `num_intervals` equal pieces of `[0, x_max]`.
/// Transitions integrate a normal density (mean and variance both
/// `theta / TSTT`) over each target interval and renormalize; costs keep
/// the truncated-Poisson form with the interval center as the state.
pub fn build_aggregated_model(
    cfg: &ProblemConfig,
    num_intervals: usize,
) -> Result<MdpModel, ModelError> {
    cfg.validate()?;
    if num_intervals < 1 {
        return Err(ModelError::InvalidAggregation {
            value: num_intervals,
        });
    }
    let n = num_intervals;
    let half_width = cfg.x_max as f64 / (2.0 * n as f64);
    let states: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64 * half_width).collect();
    let integers: Vec<f64> = (0..=cfg.x_max).map(|j| j as f64).collect();
    let actions = cfg.actions();
    let mut transitions = Vec::with_capacity(actions.len());
    let mut costs = vec![0.0; n * actions.len()];
    let mut tstt = vec![0.0; n * actions.len()];
    for (a, action) in actions.iter().enumerate() {
        let ts_centers = cfg.routes.tstt_profile(&states, action)?;
        let ts_int = cfg.routes.tstt_profile(&integers, action)?;
        let mut matrix = vec![0.0; n * n];
        for (i, &t) in ts_centers.iter().enumerate() {
            if t <= 0.0 {
                return Err(ModelError::NonPositiveTstt {
                    state: states[i],
                    value: t,
                });
            }
            let mean = cfg.theta / t;
            let sd = mean.sqrt();
            let mut raw: Vec<f64> = states
                .iter()
                .map(|&c| {
                    normal_cdf((c + half_width - mean) / sd) - normal_cdf((c - half_width - mean) / sd)
                })
                .collect();
            let total: f64 = raw.iter().sum();
            if !(total.is_finite() && total > 0.0) {
                return Err(ModelError::DegenerateRow { state: states[i] });
            }
            for p in &mut raw {
                *p /= total;
            }
            matrix[i * n..(i + 1) * n].copy_from_slice(&raw);
            let pois = truncated_poisson(mean, cfg.x_max)?;
            costs[i * actions.len() + a] = pois.iter().zip(&ts_int).map(|(p, tn)| p * tn).sum();
            tstt[i * actions.len() + a] = t;
        }
        transitions.push(matrix);
    }
    Ok(MdpModel {
        states,
        actions,
        transitions,
        costs,
        tstt,
        theta: cfg.theta,
    })
}

/// Piecewise TSTT form for every action of the instance, in action order.
/// Network systems are reduced per action first, so the toll coefficients
/// refer to the surviving parallel routes.
pub fn tstt_pwls(cfg: &ProblemConfig) -> Result<Vec<equilibrium::TsttPwl>, ModelError> {
    cfg.validate()?;
    cfg.actions()
        .iter()
        .map(|action| match &cfg.routes {
            RouteSystem::Parallel(routes) => Ok(equilibrium::extract_tstt_pwl(
                routes,
                &TollVector::new(action.clone())?,
            )?),
            RouteSystem::SingleOd(net) => {
                let reduced = network::reduce_series_parallel(net, action)?;
                let pwls: Vec<PwlFunction> = reduced.iter().map(|r| r.cost.clone()).collect();
                let tolls: Vec<f64> = reduced.iter().map(|r| r.route_toll(action)).collect();
                Ok(equilibrium::extract_tstt_pwl(&pwls, &TollVector::new(tolls)?)?)
            }
            RouteSystem::MultiOd(net, spec) => {
                let reduced =
                    network::reduce_multi_od(net, spec, cfg.x_max as f64, action)?;
                let tolls = vec![reduced.route_toll(action)];
                Ok(equilibrium::extract_tstt_pwl(
                    std::slice::from_ref(&reduced.cost),
                    &TollVector::new(tolls)?,
                )?)
            }
        })
        .collect()
}

/// The two-route instance used throughout the experiments: BPR parameters
/// `c = [1, 2]`, `b = [0.5, 1]`, `a = 4`, band half-width 1, four segments,
/// toll levels `{2, 3, 4}`, `theta = 100`, `x_max = 15`.
pub fn original_problem() -> Result<ProblemConfig, ModelError> {
    use crate::pwl::{approximate_bpr, ApproxConfig, BprFunction};
    let cfg = ApproxConfig::new(1.0, 4).expect("constant parameters are valid");
    let routes = vec![
        approximate_bpr(&BprFunction::new(1.0, 4.0, 0.5).expect("valid curve"), &cfg)
            .expect("band construction succeeds for the reference curve"),
        approximate_bpr(&BprFunction::new(2.0, 4.0, 1.0).expect("valid curve"), &cfg)
            .expect("band construction succeeds for the reference curve"),
    ];
    Ok(ProblemConfig {
        theta: 100.0,
        x_max: 15,
        toll_levels: vec![2.0, 3.0, 4.0],
        routes: RouteSystem::Parallel(routes),
        aggregation: None,
    })
}
