//! Average-cost dynamic programming: exact policy iteration, relative value
//! iteration as an independent cross-check, and seeded Monte-Carlo policy
//! simulation.
//!
//! Policy evaluation solves the linear system
//! `h(i) + lambda = g(i, mu(i)) + sum_j q_ij(mu(i)) h(j)` with the
//! differential cost anchored to zero at the largest state. Improvement is
//! the greedy argmin with ties broken towards the lexicographically
//! smallest toll vector (equivalently, the smallest action index).

use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::mdp::MdpModel;

const TERMINATION_TOL: f64 = 1e-10;
const SPAN_TOL: f64 = 1e-10;
const DEFAULT_ITERATION_CAP: usize = 1000;
const RVI_ITERATION_CAP: usize = 5_000_000;

#[derive(Debug)]
pub enum SolveError {
    PolicyLengthMismatch { states: usize, got: usize },
    ActionOutOfRange { state: usize, action: usize },
    AnchorUnreachable,
    NotConverged { iterations: usize, trace: Vec<IterationRecord> },
    EmptyHorizon,
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::PolicyLengthMismatch { states, got } => {
                write!(f, "policy has {got} entries for {states} states")
            }
            SolveError::ActionOutOfRange { state, action } => {
                write!(f, "policy action {action} at state {state} is out of range")
            }
            SolveError::AnchorUnreachable => write!(
                f,
                "policy evaluation system is singular: the anchor state is not reached under this policy"
            ),
            SolveError::NotConverged { iterations, .. } => {
                write!(f, "no convergence after {iterations} iterations")
            }
            SolveError::EmptyHorizon => write!(f, "simulation horizon must be at least 1"),
        }
    }
}

impl std::error::Error for SolveError {}

/// One action index per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    /// The same action everywhere.
    pub fn uniform(action: usize, num_states: usize) -> Self {
        Self(vec![action; num_states])
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, model: &MdpModel) -> Result<(), SolveError> {
        if self.0.len() != model.num_states() {
            return Err(SolveError::PolicyLengthMismatch {
                states: model.num_states(),
                got: self.0.len(),
            });
        }
        for (state, &action) in self.0.iter().enumerate() {
            if action >= model.num_actions() {
                return Err(SolveError::ActionOutOfRange { state, action });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub lambda: f64,
    pub policy_changes: usize,
}

/// Result of a policy-iteration run.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub policy: Policy,
    pub lambda: f64,
    /// Differential cost per state, zero at the anchor.
    pub h: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// `max_i |min_u [g + Σ q h] - h(i) - lambda|` at the returned solution.
    pub bellman_residual: f64,
    pub wall: Duration,
}

impl SolveResult {
    /// `state,toll_route_1,...,toll_route_R` rows.
    pub fn policy_csv(&self, model: &MdpModel) -> String {
        let dim = model.actions().first().map_or(0, Vec::len);
        let mut header = String::from("state");
        for r in 0..dim {
            header.push_str(&format!(",toll_route_{}", r + 1));
        }
        header.push('\n');
        let mut out = header;
        for (i, &state) in model.states().iter().enumerate() {
            out.push_str(&format!("{state}"));
            for toll in &model.actions()[self.policy.action(i)] {
                out.push_str(&format!(",{toll}"));
            }
            out.push('\n');
        }
        out
    }

    /// `lambda,iterations,wall_ms` summary row.
    pub fn summary_csv(&self) -> String {
        format!(
            "lambda,iterations,wall_ms\n{},{},{}\n",
            self.lambda,
            self.iterations,
            self.wall.as_millis()
        )
    }
}

/// Exact evaluation of a stationary policy: returns the average cost and
/// the differential costs (zero at the anchor state).
pub fn policy_evaluation(model: &MdpModel, policy: &Policy) -> Result<(f64, Vec<f64>), SolveError> {
    policy.check(model)?;
    let n = model.num_states();
    let anchor = model.anchor();
    // Unknowns: h(i) for i != anchor, then lambda.
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let row = model.transition_row(policy.action(i), i);
        let mut col = 0;
        for (j, &p) in row.iter().enumerate() {
            if j == anchor {
                continue;
            }
            let delta = if i == j { 1.0 } else { 0.0 };
            a[(i, col)] = delta - p;
            col += 1;
        }
        a[(i, n - 1)] = 1.0;
        b[i] = model.cost(i, policy.action(i));
    }
    let solution = a.lu().solve(&b).ok_or(SolveError::AnchorUnreachable)?;
    let mut h = vec![0.0; n];
    let mut col = 0;
    for (j, slot) in h.iter_mut().enumerate() {
        if j == anchor {
            continue;
        }
        *slot = solution[col];
        col += 1;
    }
    Ok((solution[n - 1], h))
}

fn q_value(model: &MdpModel, state: usize, action: usize, h: &[f64]) -> f64 {
    let row = model.transition_row(action, state);
    model.cost(state, action) + row.iter().zip(h).map(|(p, hv)| p * hv).sum::<f64>()
}

/// Greedy policy with respect to the differential costs `h`; ties go to the
/// smallest action index, i.e. the lexicographically smallest toll vector.
pub fn policy_improvement(model: &MdpModel, h: &[f64]) -> Policy {
    let actions = (0..model.num_states())
        .map(|i| {
            let mut best = 0;
            let mut best_q = f64::INFINITY;
            for a in 0..model.num_actions() {
                let q = q_value(model, i, a, h);
                if q < best_q {
                    best_q = q;
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::new(actions)
}

fn bellman_residual(model: &MdpModel, lambda: f64, h: &[f64]) -> f64 {
    (0..model.num_states())
        .map(|i| {
            let best = (0..model.num_actions())
                .map(|a| q_value(model, i, a, h))
                .fold(f64::INFINITY, f64::min);
            (best - h[i] - lambda).abs()
        })
        .fold(0.0, f64::max)
}

/// Alternates exact evaluation and greedy improvement until the average
/// and differential costs stop changing (1e-10) or a policy repeats.
pub fn policy_iteration(model: &MdpModel, initial: &Policy) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    let mut policy = initial.clone();
    let (mut lambda, mut h) = policy_evaluation(model, &policy)?;
    let mut seen: HashSet<Policy> = HashSet::from([policy.clone()]);
    let mut trace = Vec::new();
    for iteration in 1..=DEFAULT_ITERATION_CAP {
        let next = policy_improvement(model, &h);
        let changes = next
            .actions()
            .iter()
            .zip(policy.actions())
            .filter(|(a, b)| a != b)
            .count();
        let (next_lambda, next_h) = policy_evaluation(model, &next)?;
        trace.push(IterationRecord {
            lambda: next_lambda,
            policy_changes: changes,
        });
        let h_gap = h
            .iter()
            .zip(&next_h)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let settled = (next_lambda - lambda).abs() <= TERMINATION_TOL && h_gap <= TERMINATION_TOL;
        let repeated = !seen.insert(next.clone());
        policy = next;
        lambda = next_lambda;
        h = next_h;
        if settled || repeated {
            return Ok(SolveResult {
                bellman_residual: bellman_residual(model, lambda, &h),
                policy,
                lambda,
                h,
                iterations: iteration,
                trace,
                wall: start.elapsed(),
            });
        }
    }
    Err(SolveError::NotConverged {
        iterations: DEFAULT_ITERATION_CAP,
        trace,
    })
}

/// Relative value iteration: `h <- T(h) - T(h)(anchor)` until the span of
/// `T(h) - h` is below 1e-10. Independent of the policy-iteration path.
pub fn relative_value_iteration(model: &MdpModel) -> Result<(f64, Vec<f64>), SolveError> {
    let n = model.num_states();
    let anchor = model.anchor();
    let mut h = vec![0.0; n];
    for _ in 0..RVI_ITERATION_CAP {
        let th: Vec<f64> = (0..n)
            .map(|i| {
                (0..model.num_actions())
                    .map(|a| q_value(model, i, a, &h))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (t, old) in th.iter().zip(&h) {
            let d = t - old;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let lambda = th[anchor];
        h = th.iter().map(|t| t - lambda).collect();
        if hi - lo <= SPAN_TOL {
            return Ok((lambda, h));
        }
    }
    Err(SolveError::NotConverged {
        iterations: RVI_ITERATION_CAP,
        trace: Vec::new(),
    })
}

/// Plain 64-bit mixing generator. Small, seedable, and stable across
/// platforms and releases, which keeps simulation outputs bit-identical.
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Empirical estimates from one simulated trajectory.
#[derive(Clone, Debug)]
pub struct SimulationReport {
    /// Running average of `g(x_k, mu(x_k))` over the horizon.
    pub average_cost: f64,
    /// Batch-means standard error (zero when only one batch fits).
    pub standard_error: f64,
    /// Steps spent in each state; sums to the horizon.
    pub visits: Vec<u64>,
    /// Completed excursions from state index 0 back to itself.
    pub excursions: usize,
    /// Mean steps per excursion, when any completed.
    pub mean_return_steps: Option<f64>,
    /// Mean accumulated cost per excursion, when any completed.
    pub mean_return_cost: Option<f64>,
    pub seed: u64,
}

/// Samples the chain under a fixed policy from state index 0.
pub fn simulate_policy(
    model: &MdpModel,
    policy: &Policy,
    horizon: usize,
    seed: u64,
) -> Result<SimulationReport, SolveError> {
    simulate_policy_traced(model, policy, horizon, seed, 0).map(|(report, _)| report)
}

/// Like [`simulate_policy`], additionally recording the running average
/// every `sample_every` steps (0 disables the trace).
pub fn simulate_policy_traced(
    model: &MdpModel,
    policy: &Policy,
    horizon: usize,
    seed: u64,
    sample_every: usize,
) -> Result<(SimulationReport, Vec<(usize, f64)>), SolveError> {
    policy.check(model)?;
    if horizon == 0 {
        return Err(SolveError::EmptyHorizon);
    }
    let mut rng = SplitMix64::new(seed);
    let n = model.num_states();
    let mut visits = vec![0u64; n];
    let mut total_cost = 0.0;

    let num_batches = if horizon >= 200 { 100 } else { 1 };
    let batch_size = horizon / num_batches;
    let mut batch_means: Vec<f64> = Vec::with_capacity(num_batches);
    let mut batch_accum = 0.0;
    let mut batch_count = 0usize;

    // Excursions: state 0 is visited at k = 0 by construction; an excursion
    // spans the steps from one visit to the next and accumulates the costs
    // incurred along the way, including at state 0 itself.
    let mut excursions = 0usize;
    let mut steps_sum = 0u64;
    let mut cost_sum = 0.0;
    let mut current_steps = 0u64;
    let mut current_cost = 0.0;

    let mut trace = Vec::new();
    let mut state = 0usize;
    for step in 0..horizon {
        let g = model.cost(state, policy.action(state));
        total_cost += g;
        visits[state] += 1;
        if sample_every > 0 && (step + 1) % sample_every == 0 {
            trace.push((step + 1, total_cost / (step + 1) as f64));
        }
        batch_accum += g;
        batch_count += 1;
        if batch_count == batch_size && batch_means.len() < num_batches {
            batch_means.push(batch_accum / batch_size as f64);
            batch_accum = 0.0;
            batch_count = 0;
        }
        current_steps += 1;
        current_cost += g;

        let row = model.transition_row(policy.action(state), state);
        let draw = rng.next_f64();
        let mut cumulative = 0.0;
        let mut next = n - 1;
        for (j, &p) in row.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                next = j;
                break;
            }
        }
        state = next;
        if state == 0 {
            excursions += 1;
            steps_sum += current_steps;
            cost_sum += current_cost;
            current_steps = 0;
            current_cost = 0.0;
        }
    }

    let average_cost = total_cost / horizon as f64;
    let standard_error = if batch_means.len() >= 2 {
        let b = batch_means.len() as f64;
        let mean: f64 = batch_means.iter().sum::<f64>() / b;
        let var: f64 =
            batch_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (b - 1.0);
        (var / b).sqrt()
    } else {
        0.0
    };
    let (mean_return_steps, mean_return_cost) = if excursions > 0 {
        (
            Some(steps_sum as f64 / excursions as f64),
            Some(cost_sum / excursions as f64),
        )
    } else {
        (None, None)
    };
    Ok((
        SimulationReport {
            average_cost,
            standard_error,
            visits,
            excursions,
            mean_return_steps,
            mean_return_cost,
            seed,
        },
        trace,
    ))
}
