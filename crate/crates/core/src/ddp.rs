//! DDP and iLQR for discrete dynamics `x' = f(x, u)` with quadratic costs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::derivs::{fd_partials, second_order_blocks, Backend, FdPartials};
use crate::dynamics::{step_euler_with, DynError, DynScratch};
use crate::rbmodel::RigidBodyModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Ilqr,
    Ddp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ilqr => "ilqr",
            Mode::Ddp => "ddp",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ilqr" => Ok(Mode::Ilqr),
            "ddp" => Ok(Mode::Ddp),
            other => Err(format!("unknown mode `{other}` (expected ilqr or ddp)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error("rollout diverged at step {0}")]
    Divergence(usize),
    #[error("{0}")]
    InvalidProblem(String),
}

/// First-order expansion of the dynamics at one knot, plus whatever the
/// implementation needs to contract second derivatives later.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    partials: Option<FdPartials>,
}

impl Linearization {
    pub fn new(fx: DMatrix<f64>, fu: DMatrix<f64>) -> Self {
        Self { fx, fu, partials: None }
    }
}

/// `λ·fxx` (2n×2n), `λ·fux` (m×2n), `λ·fuu` (m×m).
#[derive(Clone, Debug)]
pub struct Contraction {
    pub fxx: DMatrix<f64>,
    pub fux: DMatrix<f64>,
    pub fuu: DMatrix<f64>,
}

/// Discrete-time dynamics as seen by the solver.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SolveError>;
    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<Linearization, SolveError>;
    /// Second derivatives of `f` contracted with the costate `λ`.
    fn contract(&self, x: &[f64], u: &[f64], lin: &Linearization, lambda: &[f64]) -> Result<Contraction, SolveError>;
}

/// Euler-discretized rigid-body dynamics with a chosen derivative backend.
#[derive(Clone, Debug)]
pub struct RobotDynamics {
    pub model: RigidBodyModel,
    pub h: f64,
    pub backend: Backend,
}

impl Dynamics for RobotDynamics {
    fn state_dim(&self) -> usize {
        2 * self.model.n_bodies()
    }

    fn control_dim(&self) -> usize {
        self.model.n_controls()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SolveError> {
        let mut scratch = DynScratch::for_model(&self.model);
        Ok(step_euler_with(&self.model, &mut scratch, x, u, self.h)?)
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<Linearization, SolveError> {
        let p = fd_partials(self.backend, &self.model, x, u)?;
        Ok(Linearization {
            fx: p.fx(self.h),
            fu: p.fu(self.h),
            partials: Some(p),
        })
    }

    fn contract(&self, x: &[f64], u: &[f64], lin: &Linearization, lambda: &[f64]) -> Result<Contraction, SolveError> {
        let n = self.model.n_bodies();
        let first = match &lin.partials {
            Some(p) => p.clone(),
            None => fd_partials(self.backend, &self.model, x, u)?,
        };
        let b = second_order_blocks(self.backend, &self.model, x, u, &first, &lambda[n..], self.h)?;
        Ok(Contraction {
            fxx: b.lambda_fxx(),
            fux: b.lambda_fux(),
            fuu: b.lambda_fuu(),
        })
    }
}

/// `x' = A x + B u`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, SolveError> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(SolveError::InvalidProblem(format!(
                "linear dynamics need square A and B with matching rows, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SolveError> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        Ok((&self.a * x + &self.b * u).as_slice().to_vec())
    }

    fn linearize(&self, _: &[f64], _: &[f64]) -> Result<Linearization, SolveError> {
        Ok(Linearization::new(self.a.clone(), self.b.clone()))
    }

    fn contract(&self, _: &[f64], _: &[f64], _: &Linearization, _: &[f64]) -> Result<Contraction, SolveError> {
        let (n, m) = (self.state_dim(), self.control_dim());
        Ok(Contraction {
            fxx: DMatrix::zeros(n, n),
            fux: DMatrix::zeros(m, n),
            fuu: DMatrix::zeros(m, m),
        })
    }
}

/// `½(x−x_ref)ᵀQ(x−x_ref) + ½uᵀRu` per step and `½(x−x_ref)ᵀQf(x−x_ref)`
/// at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x_ref: DVector<f64>,
}

impl QuadraticCost {
    pub fn running(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.q * &dx)) + 0.5 * u.dot(&(&self.r * u))
    }

    pub fn terminal(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.qf * &dx))
    }
}

#[derive(Clone, Debug)]
pub struct OcpProblem<D> {
    pub dynamics: D,
    pub horizon: usize,
    pub cost: QuadraticCost,
    pub x0: DVector<f64>,
}

impl<D: Dynamics> OcpProblem<D> {
    pub fn validate(&self) -> Result<(), SolveError> {
        let (nx, nu) = (self.dynamics.state_dim(), self.dynamics.control_dim());
        let bad = |msg: String| Err(SolveError::InvalidProblem(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.x0.len() != nx || self.cost.x_ref.len() != nx {
            return bad(format!("state vectors must have length {nx}"));
        }
        if self.cost.q.shape() != (nx, nx) || self.cost.qf.shape() != (nx, nx) {
            return bad(format!("state weights must be {nx}×{nx}"));
        }
        if self.cost.r.shape() != (nu, nu) {
            return bad(format!("control weight must be {nu}×{nu}"));
        }
        if self.cost.r.clone().cholesky().is_none() {
            return bad("control weight must be positive definite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Open-loop rollout of `us` from the problem's initial state.
pub fn rollout<D: Dynamics>(problem: &OcpProblem<D>, us: &[DVector<f64>]) -> Result<Trajectory, SolveError> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(problem.x0.clone());
    let mut cost = 0.0;
    for (k, u) in us.iter().enumerate() {
        let x = &xs[k];
        cost += problem.cost.running(x, u);
        let next = DVector::from_vec(problem.dynamics.step(x.as_slice(), u.as_slice())?);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SolveError::Divergence(k));
        }
        xs.push(next);
    }
    cost += problem.cost.terminal(xs.last().expect("nonempty"));
    Ok(Trajectory {
        xs,
        us: us.to_vec(),
        cost,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QExpansion {
    pub qx: DVector<f64>,
    pub qu: DVector<f64>,
    pub qxx: DMatrix<f64>,
    pub quu: DMatrix<f64>,
    /// m×2n; `Qxu = Quxᵀ`.
    pub qux: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueExpansion {
    pub vx: DVector<f64>,
    pub vxx: DMatrix<f64>,
    pub er: f64,
}

/// Local cost derivatives at one knot.
#[derive(Clone, Debug)]
pub struct CostTerms {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

impl CostTerms {
    pub fn running(cost: &QuadraticCost, x: &DVector<f64>, u: &DVector<f64>) -> Self {
        let dx = x - &cost.x_ref;
        Self {
            lx: &cost.q * dx,
            lu: &cost.r * u,
            lxx: cost.q.clone(),
            luu: cost.r.clone(),
            lux: DMatrix::zeros(u.len(), x.len()),
        }
    }
}

/// Q-function expansion. `second` carries the costate-contracted dynamics
/// Hessians and is ignored in iLQR mode.
pub fn q_expansion(
    l: &CostTerms,
    fx: &DMatrix<f64>,
    fu: &DMatrix<f64>,
    second: Option<&Contraction>,
    next: &ValueExpansion,
    mode: Mode,
) -> QExpansion {
    let vxx_fx = &next.vxx * fx;
    let mut qxx = &l.lxx + fx.transpose() * &vxx_fx;
    let mut quu = &l.luu + fu.transpose() * &next.vxx * fu;
    let mut qux = &l.lux + fu.transpose() * &vxx_fx;
    if let (Mode::Ddp, Some(c)) = (mode, second) {
        qxx += &c.fxx;
        quu += &c.fuu;
        qux += &c.fux;
    }
    QExpansion {
        qx: &l.lx + fx.tr_mul(&next.vx),
        qu: &l.lu + fu.tr_mul(&next.vx),
        qxx: symmetrized(qxx),
        quu: symmetrized(quu),
        qux,
    }
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    pub kappa: Vec<DVector<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub gains: GainSchedule,
    /// Total expected reduction `Σ ½ QuᵀQuu⁻¹Qu`.
    pub er: f64,
    /// `Σ_k ‖Qu_k‖∞`
    pub grad_norm: f64,
    pub value0: ValueExpansion,
}

/// Backward sweep with `Quu + ρI`. Returns `None` when the regularized
/// `Quu` is not positive definite at some knot.
pub fn backward_pass<D: Dynamics>(
    problem: &OcpProblem<D>,
    traj: &Trajectory,
    lins: &[Linearization],
    mode: Mode,
    rho: f64,
) -> Result<Option<BackwardResult>, SolveError> {
    let n_steps = traj.us.len();
    let m = problem.dynamics.control_dim();
    let x_n = &traj.xs[n_steps];
    let mut value = ValueExpansion {
        vx: &problem.cost.qf * (x_n - &problem.cost.x_ref),
        vxx: problem.cost.qf.clone(),
        er: 0.0,
    };
    let mut kappa = vec![DVector::zeros(m); n_steps];
    let mut gains_k = vec![DMatrix::zeros(m, problem.dynamics.state_dim()); n_steps];
    let mut grad_norm = 0.0;
    for k in (0..n_steps).rev() {
        let (x, u) = (&traj.xs[k], &traj.us[k]);
        let l = CostTerms::running(&problem.cost, x, u);
        let lin = &lins[k];
        let second = match mode {
            Mode::Ddp => Some(problem.dynamics.contract(x.as_slice(), u.as_slice(), lin, value.vx.as_slice())?),
            Mode::Ilqr => None,
        };
        let q = q_expansion(&l, &lin.fx, &lin.fu, second.as_ref(), &value, mode);
        let quu_reg = &q.quu + DMatrix::identity(m, m) * rho;
        let Some(chol) = quu_reg.cholesky() else {
            return Ok(None);
        };
        let kap = chol.solve(&q.qu);
        let gain = chol.solve(&q.qux);
        grad_norm += q.qu.amax();
        let er = value.er + 0.5 * q.qu.dot(&kap);
        let vx = &q.qx - gain.tr_mul(&q.qu);
        let vxx = symmetrized(&q.qxx - q.qux.tr_mul(&gain));
        value = ValueExpansion { vx, vxx, er };
        kappa[k] = kap;
        gains_k[k] = gain;
    }
    Ok(Some(BackwardResult {
        gains: GainSchedule { kappa, k: gains_k },
        er: value.er,
        grad_norm,
        value0: value,
    }))
}

/// Rollout under `u_k = ū_k − ε κ_k − K_k δx_k`.
pub fn forward_pass<D: Dynamics>(
    problem: &OcpProblem<D>,
    nominal: &Trajectory,
    gains: &GainSchedule,
    eps: f64,
) -> Result<Trajectory, SolveError> {
    let n_steps = nominal.us.len();
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut us = Vec::with_capacity(n_steps);
    xs.push(problem.x0.clone());
    let mut cost = 0.0;
    for k in 0..n_steps {
        let x = &xs[k];
        let dx = x - &nominal.xs[k];
        let u = &nominal.us[k] - &gains.kappa[k] * eps - &gains.k[k] * dx;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(SolveError::Divergence(k));
        }
        cost += problem.cost.running(x, &u);
        let next = DVector::from_vec(problem.dynamics.step(x.as_slice(), u.as_slice())?);
        if !next.iter().all(|v| v.is_finite() && v.abs() < 1e8) {
            return Err(SolveError::Divergence(k));
        }
        xs.push(next);
        us.push(u);
    }
    cost += problem.cost.terminal(&xs[n_steps]);
    if !cost.is_finite() {
        return Err(SolveError::Divergence(n_steps));
    }
    Ok(Trajectory { xs, us, cost })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Converged when an accepted step reduces the cost by less than this.
    pub tol: f64,
    /// Converged when `Σ‖Qu‖∞` falls below this.
    pub grad_tol: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_increase: f64,
    pub rho_decrease: f64,
    /// Line search tries `ε = 1, ½, …, 2^-max_halvings`.
    pub max_halvings: u32,
    /// Require actual/predicted reduction above this ratio (off when `None`).
    pub armijo: Option<f64>,
    /// In DDP mode, take a Gauss-Newton sweep for the iteration instead of
    /// stalling when `ρ` reaches its cap.
    pub gauss_newton_fallback: bool,
    pub parallel: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            grad_tol: 1e-9,
            rho_min: 1e-10,
            rho_max: 1e8,
            rho_increase: 10.0,
            rho_decrease: 2.0,
            max_halvings: 10,
            armijo: None,
            gauss_newton_fallback: true,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    /// Cost after this iteration (unchanged when the step was rejected).
    pub cost: f64,
    pub er: f64,
    /// Accepted line-search step, `None` when no step was taken.
    pub eps: Option<f64>,
    pub rho: f64,
    pub grad_norm: f64,
    /// Number of backward sweeps this iteration, including regularized retries.
    pub backward_sweeps: usize,
    /// The sweep dropped the second-order dynamics terms.
    pub gauss_newton: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// Regularization hit its cap without producing a usable step.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub log: Vec<IterationLog>,
    pub trajectory: Trajectory,
    pub initial_cost: f64,
    pub status: Status,
    pub iterations: usize,
    pub mode: Mode,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn final_cost(&self) -> f64 {
        self.trajectory.cost
    }
}

fn linearize_all<D: Dynamics>(problem: &OcpProblem<D>, traj: &Trajectory, parallel: bool) -> Result<Vec<Linearization>, SolveError> {
    let knot = |k: usize| problem.dynamics.linearize(traj.xs[k].as_slice(), traj.us[k].as_slice());
    if parallel {
        (0..traj.us.len()).into_par_iter().map(knot).collect()
    } else {
        (0..traj.us.len()).map(knot).collect()
    }
}

/// Alternates backward and forward sweeps from `initial_controls` until the
/// accepted cost reduction drops below `opts.tol`.
pub fn solve<D: Dynamics>(
    problem: &OcpProblem<D>,
    mode: Mode,
    initial_controls: &[DVector<f64>],
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    problem.validate()?;
    if initial_controls.len() != problem.horizon {
        return Err(SolveError::InvalidProblem(format!(
            "expected {} initial controls, got {}",
            problem.horizon,
            initial_controls.len()
        )));
    }
    let mut traj = rollout(problem, initial_controls)?;
    let initial_cost = traj.cost;
    let mut rho = opts.rho_min;
    let mut log = Vec::new();
    let mut status = Status::MaxIterations;
    let mut lins = linearize_all(problem, &traj, opts.parallel)?;

    for iter in 1..=opts.max_iter {
        let mut sweeps = 0;
        let mut gauss_newton = false;
        let mut backward = loop {
            sweeps += 1;
            if let Some(b) = backward_pass(problem, &traj, &lins, mode, rho)? {
                break Some(b);
            }
            if rho >= opts.rho_max {
                break None;
            }
            rho = (rho * opts.rho_increase).min(opts.rho_max);
        };
        if backward.is_none() && mode == Mode::Ddp && opts.gauss_newton_fallback {
            rho = opts.rho_min;
            gauss_newton = true;
            backward = loop {
                sweeps += 1;
                if let Some(b) = backward_pass(problem, &traj, &lins, Mode::Ilqr, rho)? {
                    break Some(b);
                }
                if rho >= opts.rho_max {
                    break None;
                }
                rho = (rho * opts.rho_increase).min(opts.rho_max);
            };
        }
        let Some(backward) = backward else {
            log.push(IterationLog {
                iter,
                cost: traj.cost,
                er: f64::NAN,
                eps: None,
                rho,
                grad_norm: f64::NAN,
                backward_sweeps: sweeps,
                gauss_newton,
            });
            status = Status::Stalled;
            break;
        };
        if backward.grad_norm < opts.grad_tol {
            log.push(IterationLog {
                iter,
                cost: traj.cost,
                er: backward.er,
                eps: None,
                rho,
                grad_norm: backward.grad_norm,
                backward_sweeps: sweeps,
                gauss_newton,
            });
            status = Status::Converged;
            break;
        }

        let mut accepted = None;
        for halvings in 0..=opts.max_halvings {
            let eps = 0.5f64.powi(halvings as i32);
            let Ok(candidate) = forward_pass(problem, &traj, &backward.gains, eps) else {
                continue;
            };
            let reduction = traj.cost - candidate.cost;
            let predicted = (2.0 * eps - eps * eps) * backward.er;
            let ok = reduction > 0.0 && opts.armijo.is_none_or(|c| reduction >= c * predicted);
            if ok {
                accepted = Some((eps, candidate, reduction));
                break;
            }
        }

        match accepted {
            Some((eps, candidate, reduction)) => {
                traj = candidate;
                rho = (rho / opts.rho_decrease).max(opts.rho_min);
                log.push(IterationLog {
                    iter,
                    cost: traj.cost,
                    er: backward.er,
                    eps: Some(eps),
                    rho,
                    grad_norm: backward.grad_norm,
                    backward_sweeps: sweeps,
                    gauss_newton,
                });
                if reduction < opts.tol {
                    status = Status::Converged;
                    break;
                }
                lins = linearize_all(problem, &traj, opts.parallel)?;
            }
            None => {
                log.push(IterationLog {
                    iter,
                    cost: traj.cost,
                    er: backward.er,
                    eps: None,
                    rho,
                    grad_norm: backward.grad_norm,
                    backward_sweeps: sweeps,
                    gauss_newton,
                });
                // nothing left to gain at the requested resolution
                if backward.er < opts.tol {
                    status = Status::Converged;
                    break;
                }
                if rho >= opts.rho_max {
                    status = Status::Stalled;
                    break;
                }
                rho = (rho * opts.rho_increase).min(opts.rho_max);
            }
        }
    }
    Ok(SolveReport {
        iterations: log.len(),
        log,
        trajectory: traj,
        initial_cost,
        status,
        mode,
    })
}

/// Weights for the swing-up task, all configurable.
#[derive(Clone, Debug, PartialEq)]
pub struct SwingUpWeights {
    pub q: f64,
    pub qd: f64,
    pub r: f64,
    pub terminal: f64,
}

impl Default for SwingUpWeights {
    fn default() -> Self {
        Self {
            q: 1.0,
            qd: 0.1,
            r: 0.01,
            terminal: 100.0,
        }
    }
}

/// Upright target: first joint at π, the rest straight, zero velocity.
pub fn upright_state(n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(2 * n);
    x[0] = std::f64::consts::PI;
    x
}

pub fn swing_up_cost(n: usize, m: usize, w: &SwingUpWeights) -> QuadraticCost {
    let q_diag = DVector::from_iterator(2 * n, (0..2 * n).map(|i| if i < n { w.q } else { w.qd }));
    QuadraticCost {
        q: DMatrix::from_diagonal(&q_diag),
        r: DMatrix::identity(m, m) * w.r,
        qf: DMatrix::identity(2 * n, 2 * n) * w.terminal,
        x_ref: upright_state(n),
    }
}

/// Controls from simulating `u = −d·Bᵀq̇` in closed loop from `x0`.
pub fn dissipative_controls(
    model: &RigidBodyModel,
    x0: &DVector<f64>,
    horizon: usize,
    h: f64,
    gain: f64,
) -> Result<Vec<DVector<f64>>, SolveError> {
    let n = model.n_bodies();
    let mut scratch = DynScratch::for_model(model);
    let mut x = x0.as_slice().to_vec();
    let mut us = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u: Vec<f64> = model.actuated().iter().map(|&j| -gain * x[n + j]).collect();
        x = step_euler_with(model, &mut scratch, &x, &u, h)?;
        us.push(DVector::from_vec(u));
    }
    Ok(us)
}
