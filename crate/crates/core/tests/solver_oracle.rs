//! Solver cross-checks on models small enough to enumerate: policy
//! iteration, relative value iteration, and brute force over every
//! stationary policy must agree. Brute-force evaluation goes through the
//! stationary distribution (power iteration), a path independent of the
//! linear solve inside `policy_evaluation`.

use daytoll_core::mdp::MdpModel;
use daytoll_core::solver::{
    policy_evaluation, policy_iteration, policy_improvement, relative_value_iteration,
    simulate_policy, Policy,
};

struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn random_model(rng: &mut Lcg, n: usize, m: usize) -> MdpModel {
    let mut transitions = Vec::with_capacity(m);
    for _ in 0..m {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|_| 0.05 + rng.next_f64()).collect();
            let total: f64 = row.iter().sum();
            for j in 0..n {
                matrix[i * n + j] = row[j] / total;
            }
        }
        transitions.push(matrix);
    }
    let costs: Vec<f64> = (0..n * m).map(|_| 0.5 + 1.5 * rng.next_f64()).collect();
    let states: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let actions: Vec<Vec<f64>> = (0..m).map(|a| vec![a as f64 + 1.0]).collect();
    let tstt = costs.clone();
    MdpModel::from_tables(states, actions, transitions, costs, tstt, 1.0).unwrap()
}

/// Stationary distribution by power iteration.
fn stationary(model: &MdpModel, policy: &Policy) -> Vec<f64> {
    let n = model.num_states();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for (i, &mass) in pi.iter().enumerate() {
            let row = model.transition_row(policy.action(i), i);
            for (slot, &p) in next.iter_mut().zip(row) {
                *slot += mass * p;
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn brute_force_optimum(model: &MdpModel) -> (f64, Policy) {
    let n = model.num_states();
    let m = model.num_actions();
    let policy_count = m.pow(n as u32);
    let mut best = (f64::INFINITY, Policy::uniform(0, n));
    for code in 0..policy_count {
        let mut actions = vec![0usize; n];
        let mut rest = code;
        for slot in actions.iter_mut() {
            *slot = rest % m;
            rest /= m;
        }
        let policy = Policy::new(actions);
        let pi = stationary(model, &policy);
        let lambda: f64 = pi
            .iter()
            .enumerate()
            .map(|(i, p)| p * model.cost(i, policy.action(i)))
            .sum();
        if lambda < best.0 - 1e-13 {
            best = (lambda, policy);
        }
    }
    best
}

#[test]
fn three_methods_agree_on_random_small_models() {
    let mut rng = Lcg(0xabcd_0005);
    for case in 0..100 {
        let n = 1 + (rng.next_f64() * 3.0) as usize;
        let m = 1 + (rng.next_f64() * 3.0) as usize;
        let model = random_model(&mut rng, n.min(3), m.min(3));
        let n = model.num_states();

        let (brute_lambda, brute_policy) = brute_force_optimum(&model);
        let pi_result = policy_iteration(&model, &Policy::uniform(0, n)).unwrap();
        let (rvi_lambda, rvi_h) = relative_value_iteration(&model).unwrap();
        let rvi_policy = policy_improvement(&model, &rvi_h);

        assert!(
            (pi_result.lambda - brute_lambda).abs() <= 1e-8,
            "case {case}: PI {} vs brute {brute_lambda}",
            pi_result.lambda
        );
        assert!(
            (rvi_lambda - brute_lambda).abs() <= 1e-8,
            "case {case}: RVI {rvi_lambda} vs brute {brute_lambda}"
        );
        assert_eq!(pi_result.policy, brute_policy, "case {case}");
        assert_eq!(rvi_policy, brute_policy, "case {case}");
        assert!(pi_result.bellman_residual <= 1e-8);
    }
}

#[test]
fn evaluation_lambda_is_stationary_average_of_costs() {
    let mut rng = Lcg(0xabcd_0006);
    for _ in 0..25 {
        let model = random_model(&mut rng, 3, 2);
        let policy = Policy::new(vec![0, 1, 0]);
        let (lambda, _) = policy_evaluation(&model, &policy).unwrap();
        let pi = stationary(&model, &policy);
        let expected: f64 = pi
            .iter()
            .enumerate()
            .map(|(i, p)| p * model.cost(i, policy.action(i)))
            .sum();
        assert!((lambda - expected).abs() <= 1e-9);
    }
}

#[test]
fn simulation_estimates_lambda_within_three_standard_errors() {
    let mut rng = Lcg(0xabcd_0007);
    let model = random_model(&mut rng, 3, 2);
    let policy = Policy::new(vec![1, 0, 1]);
    let (lambda, _) = policy_evaluation(&model, &policy).unwrap();
    let report = simulate_policy(&model, &policy, 1_000_000, 9).unwrap();
    assert!(report.standard_error > 0.0);
    assert!(
        (report.average_cost - lambda).abs() <= 3.0 * report.standard_error,
        "estimate {} vs lambda {lambda}, se {}",
        report.average_cost,
        report.standard_error
    );
    assert_eq!(report.visits.iter().sum::<u64>(), 1_000_000);
    // Return-time bookkeeping: excursions partition the trajectory.
    assert!(report.excursions > 0);
    let n_hat = report.mean_return_steps.unwrap();
    assert!(n_hat >= 1.0);
    assert!(report.mean_return_cost.unwrap() > 0.0);
}
