use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfddp::ddp::{
    backward_pass, dissipative_controls, forward_pass, rollout, solve, swing_up_cost, Dynamics, LinearDynamics,
    Linearization, Mode, OcpProblem, QuadraticCost, RobotDynamics, SolveOptions, SolveReport, SwingUpWeights,
};
use tfddp::derivs::Backend;
use tfddp::rbmodel::{build_pendubot, build_serial_arm7, ArmParams, RigidBodyModel};

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(n, n) * shift
}

fn random_lq(seed: u64, nx: usize, m: usize, horizon: usize) -> (OcpProblem<LinearDynamics>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(nx, nx, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
    let b = DMatrix::from_fn(nx, m, |_, _| rng.random_range(-1.0..1.0));
    let cost = QuadraticCost {
        q: random_spd(&mut rng, nx, 0.1),
        r: random_spd(&mut rng, m, 0.5),
        qf: random_spd(&mut rng, nx, 1.0),
        x_ref: DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0)),
    };
    let x0 = DVector::from_fn(nx, |_, _| rng.random_range(-2.0..2.0));
    let us = (0..horizon)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let problem = OcpProblem {
        dynamics: LinearDynamics::new(a, b).unwrap(),
        horizon,
        cost,
        x0,
    };
    (problem, us)
}

fn linearize(problem: &OcpProblem<LinearDynamics>, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Vec<Linearization> {
    us.iter()
        .zip(xs)
        .map(|(u, x)| problem.dynamics.linearize(x.as_slice(), u.as_slice()).unwrap())
        .collect()
}

/// Feedback gains from the dense Riccati recursion.
fn riccati_gains(problem: &OcpProblem<LinearDynamics>) -> Vec<DMatrix<f64>> {
    let (a, b) = (problem.dynamics.a(), problem.dynamics.b());
    let c = &problem.cost;
    let mut p = c.qf.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); problem.horizon];
    for k in (0..problem.horizon).rev() {
        let s = &c.r + b.transpose() * &p * b;
        let k_gain = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
        p = &c.q + a.transpose() * &p * a - a.transpose() * &p * b * &k_gain;
        p = (&p + p.transpose()) * 0.5;
        gains[k] = k_gain;
    }
    gains
}

/// Optimal controls from the stacked quadratic program over all controls.
fn batch_optimal_controls(problem: &OcpProblem<LinearDynamics>) -> Vec<DVector<f64>> {
    let (a, b) = (problem.dynamics.a(), problem.dynamics.b());
    let (nx, m, n) = (a.nrows(), b.ncols(), problem.horizon);
    let c = &problem.cost;
    // stacked x_1..x_N = phi x0 + gamma U
    let mut phi = DMatrix::zeros(n * nx, nx);
    let mut gamma = DMatrix::zeros(n * nx, n * m);
    let mut a_pow = DMatrix::identity(nx, nx);
    let mut powers = vec![a_pow.clone()];
    for k in 0..n {
        a_pow = a * &a_pow;
        powers.push(a_pow.clone());
        phi.view_mut((k * nx, 0), (nx, nx)).copy_from(&a_pow);
    }
    for k in 0..n {
        for j in 0..=k {
            let blk = &powers[k - j] * b;
            gamma.view_mut((k * nx, j * m), (nx, m)).copy_from(&blk);
        }
    }
    let mut w = DMatrix::zeros(n * nx, n * nx);
    let mut r_big = DMatrix::zeros(n * m, n * m);
    let mut x_ref = DVector::zeros(n * nx);
    for k in 0..n {
        let q = if k + 1 == n { &c.qf } else { &c.q };
        w.view_mut((k * nx, k * nx), (nx, nx)).copy_from(q);
        r_big.view_mut((k * m, k * m), (m, m)).copy_from(&c.r);
        x_ref.rows_mut(k * nx, nx).copy_from(&c.x_ref);
    }
    let hess = gamma.transpose() * &w * &gamma + r_big;
    let grad = gamma.transpose() * &w * (&phi * &problem.x0 - x_ref);
    let u = -hess.cholesky().unwrap().solve(&grad);
    (0..n).map(|k| u.rows(k * m, m).into_owned()).collect()
}

#[test]
fn one_pass_on_lq_reproduces_riccati_gains_and_optimal_controls() {
    for (seed, nx, m, horizon) in [(1, 3, 1, 1), (2, 4, 2, 1), (3, 4, 2, 8), (4, 6, 3, 20)] {
        let (problem, us) = random_lq(seed, nx, m, horizon);
        let traj = rollout(&problem, &us).unwrap();
        let lins = linearize(&problem, &traj.xs, &traj.us);
        let back = backward_pass(&problem, &traj, &lins, Mode::Ddp, 0.0).unwrap().unwrap();
        for (k, k_ref) in back.gains.k.iter().zip(riccati_gains(&problem)) {
            assert!((k - &k_ref).amax() < 1e-8 * k_ref.amax().max(1.0));
        }
        let next = forward_pass(&problem, &traj, &back.gains, 1.0).unwrap();
        for (u, u_ref) in next.us.iter().zip(batch_optimal_controls(&problem)) {
            assert!((u - &u_ref).amax() < 1e-8 * u_ref.amax().max(1.0), "seed {seed}");
        }
        let reduction = traj.cost - next.cost;
        assert!((reduction - back.er).abs() <= 1e-10 * back.er.abs().max(1.0), "{reduction} vs {}", back.er);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lq_full_step_realizes_expected_reduction(seed in any::<u64>(), nx in 1usize..6, m in 1usize..4, horizon in 1usize..15) {
        let (problem, us) = random_lq(seed, nx, m, horizon);
        let traj = rollout(&problem, &us).unwrap();
        let lins = linearize(&problem, &traj.xs, &traj.us);
        let back = backward_pass(&problem, &traj, &lins, Mode::Ilqr, 0.0).unwrap().unwrap();
        let next = forward_pass(&problem, &traj, &back.gains, 1.0).unwrap();
        let ratio = (traj.cost - next.cost) / back.er;
        prop_assert!((ratio - 1.0).abs() <= 1e-9, "ratio {}", ratio);
    }

    #[test]
    fn lq_solve_costs_decrease_on_accepted_steps(seed in any::<u64>()) {
        let (problem, us) = random_lq(seed, 4, 2, 10);
        let report = solve(&problem, Mode::Ilqr, &us, &SolveOptions::default()).unwrap();
        prop_assert!(report.converged());
        assert_accepted_costs_decrease(&report);
    }
}

fn assert_accepted_costs_decrease(report: &SolveReport) {
    let mut last = report.initial_cost;
    for entry in &report.log {
        if entry.eps.is_some() {
            assert!(entry.cost < last, "iteration {} raised the cost", entry.iter);
            last = entry.cost;
        } else {
            assert_eq!(entry.cost, last);
        }
    }
}

fn swing_up(model: RigidBodyModel, backend: Backend) -> (OcpProblem<RobotDynamics>, Vec<DVector<f64>>) {
    let n = model.n_bodies();
    let cost = swing_up_cost(n, model.n_controls(), &SwingUpWeights::default());
    let x0 = DVector::zeros(2 * n);
    let init = dissipative_controls(&model, &x0, 500, 0.01, 0.1).unwrap();
    let problem = OcpProblem {
        dynamics: RobotDynamics { model, h: 0.01, backend },
        horizon: 500,
        cost,
        x0,
    };
    (problem, init)
}

struct ArmRuns {
    ilqr: SolveReport,
    ddp: SolveReport,
}

fn arm_runs() -> &'static ArmRuns {
    static RUNS: OnceLock<ArmRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let model = build_serial_arm7(&ArmParams::default()).unwrap();
        let opts = SolveOptions::default();
        let (p, init) = swing_up(model.clone(), Backend::Aba1);
        let ilqr = solve(&p, Mode::Ilqr, &init, &opts).unwrap();
        let (p, init) = swing_up(model, Backend::ModRnea2);
        let ddp = solve(&p, Mode::Ddp, &init, &opts).unwrap();
        ArmRuns { ilqr, ddp }
    })
}

#[test]
fn arm_swing_up_ddp_needs_fewer_iterations_for_the_same_cost() {
    let runs = arm_runs();
    assert!(runs.ilqr.converged() && runs.ddp.converged());
    assert!(runs.ddp.iterations < runs.ilqr.iterations);
    let (a, b) = (runs.ilqr.final_cost(), runs.ddp.final_cost());
    assert!((a - b).abs() <= 1e-4 * a.abs());
    assert_accepted_costs_decrease(&runs.ilqr);
    assert_accepted_costs_decrease(&runs.ddp);
}

#[test]
fn ilqr_never_regularizes_on_the_swing_up_cost() {
    let runs = arm_runs();
    let floor = SolveOptions::default().rho_min;
    for entry in &runs.ilqr.log {
        assert_eq!(entry.rho, floor);
        assert_eq!(entry.backward_sweeps, 1);
    }
}

/// Mean of `ln(e_{k+1}/e_k) / ln(e_k/e_{k-1})` over the last iterations
/// whose suboptimality is above round-off.
fn contraction_exponent(report: &SolveReport) -> f64 {
    let final_cost = report.final_cost();
    let errs: Vec<f64> = report
        .log
        .iter()
        .filter(|e| e.eps.is_some())
        .map(|e| e.cost - final_cost)
        .filter(|&e| e > 1e-9)
        .collect();
    let tail = &errs[errs.len().saturating_sub(5)..];
    assert!(tail.len() >= 3, "too few iterations to estimate the order");
    let orders: Vec<f64> = tail
        .windows(3)
        .map(|w| (w[2] / w[1]).ln() / (w[1] / w[0]).ln())
        .collect();
    orders.iter().sum::<f64>() / orders.len() as f64
}

#[test]
fn ddp_contracts_faster_than_ilqr_near_the_optimum() {
    let runs = arm_runs();
    let ddp = contraction_exponent(&runs.ddp);
    let ilqr = contraction_exponent(&runs.ilqr);
    assert!(ddp > ilqr, "ddp {ddp} ilqr {ilqr}");
}

#[test]
fn expected_reduction_predicts_full_steps_near_convergence() {
    let runs = arm_runs();
    for report in [&runs.ilqr, &runs.ddp] {
        let mut prev = report.initial_cost;
        let mut checked = 0;
        for e in &report.log {
            if let Some(eps) = e.eps {
                // above the cost's round-off, below the globalization phase
                if eps == 1.0 && e.er > 1e-6 && e.er < 1e-2 {
                    let ratio = (prev - e.cost) / e.er;
                    assert!((0.5..=2.0).contains(&ratio), "{} iteration {}: {ratio}", report.mode, e.iter);
                    checked += 1;
                }
                prev = e.cost;
            }
        }
        assert!(checked >= 2);
    }
}

#[test]
fn pendubot_second_order_backends_reach_the_same_cost() {
    let model = build_pendubot(2, 1.0, 0.5).unwrap();
    let opts = SolveOptions::default();
    let costs: Vec<f64> = [Backend::ModRnea2, Backend::Rnea2, Backend::Aba2, Backend::Tensor]
        .into_iter()
        .map(|b| {
            let (p, init) = swing_up(model.clone(), b);
            let r = solve(&p, Mode::Ddp, &init, &opts).unwrap();
            assert!(r.converged(), "{b}");
            assert_accepted_costs_decrease(&r);
            r.final_cost()
        })
        .collect();
    for c in &costs[1..] {
        assert!((c - costs[0]).abs() <= 1e-6 * costs[0], "{costs:?}");
    }
}

#[test]
#[ignore = "from the rest state iLQR creeps along a flat valley and stays above the DDP optimum"]
fn pendubot_ilqr_matches_ddp_cost() {
    let model = build_pendubot(2, 1.0, 0.5).unwrap();
    let opts = SolveOptions::default();
    let (p, init) = swing_up(model.clone(), Backend::Aba1);
    let ilqr = solve(&p, Mode::Ilqr, &init, &opts).unwrap();
    let (p, init) = swing_up(model, Backend::ModRnea2);
    let ddp = solve(&p, Mode::Ddp, &init, &opts).unwrap();
    assert!(ilqr.converged() && ddp.converged());
    assert!((ilqr.final_cost() - ddp.final_cost()).abs() <= 1e-6 * ddp.final_cost());
}
