//! First- and second-order partials of the discrete dynamics
//! `f(x, u) = x + h·[q̇; FD(q, q̇, B u)]`.
//!
//! Second-order information is only ever needed contracted with the costate
//! `λ = [ξ; η]`. Because the `q`-rows of `f` are linear, only `η` survives,
//! so every backend produces the blocks of `h·ηᵀ∂²FD`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::autodiff::{vjp_grad_rows, Recording, VectorFn};
use crate::dynamics::{aba, aba_with, mass_matrix, mod_rnea, rnea, DynError, DynScratch};
use crate::rbmodel::RigidBodyModel;
use crate::Scalar;

/// Derivative strategy, selected by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backend {
    /// Full second-order tensor of FD, then contraction.
    Tensor,
    /// First-order partials by differentiating ABA.
    Aba1,
    /// First-order partials from RNEA partials mapped through `−M⁻¹`.
    Rnea1,
    /// Reverse-over-reverse on `ηᵀ·ABA`.
    Aba2,
    /// Inverse-dynamics identities with a two-pass `μᵀ·RNEA`.
    Rnea2,
    /// Inverse-dynamics identities with the single-pass modified RNEA.
    ModRnea2,
}

impl Backend {
    pub const ALL: [Backend; 6] = [
        Backend::Tensor,
        Backend::Aba1,
        Backend::Rnea1,
        Backend::Aba2,
        Backend::Rnea2,
        Backend::ModRnea2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Tensor => "tensor",
            Backend::Aba1 => "aba1",
            Backend::Rnea1 => "rnea1",
            Backend::Aba2 => "aba2",
            Backend::Rnea2 => "rnea2",
            Backend::ModRnea2 => "modrnea2",
        }
    }

    pub fn is_second_order(self) -> bool {
        !matches!(self, Backend::Aba1 | Backend::Rnea1)
    }

    /// The first-order method whose partials this backend reuses.
    pub fn first_order(self) -> Backend {
        match self {
            Backend::Tensor | Backend::Aba1 | Backend::Aba2 => Backend::Aba1,
            Backend::Rnea1 | Backend::Rnea2 | Backend::ModRnea2 => Backend::Rnea1,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Backend::ALL.iter().map(|b| b.name()).collect();
                format!("unknown backend `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// `λ = [ξ; η]`, split into position and velocity costates.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateSplit {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl CostateSplit {
    pub fn from_lambda(lambda: &[f64]) -> Self {
        let n = lambda.len() / 2;
        Self {
            xi: lambda[..n].to_vec(),
            eta: lambda[n..].to_vec(),
        }
    }

    pub fn to_lambda(&self) -> Vec<f64> {
        self.xi.iter().chain(&self.eta).copied().collect()
    }
}

/// Unscaled continuous-time partials of FD at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FdPartials {
    /// `N = ∂FD/∂q`
    pub dq: DMatrix<f64>,
    /// `Ψ = ∂FD/∂q̇`
    pub dqd: DMatrix<f64>,
    /// `Ξ·B = ∂FD/∂u`
    pub du: DMatrix<f64>,
    /// `FD(q, q̇, B u)`
    pub qdd: Vec<f64>,
}

impl FdPartials {
    /// `fx = I + h·[0 I; N Ψ]`
    pub fn fx(&self, h: f64) -> DMatrix<f64> {
        let n = self.qdd.len();
        let mut fx = DMatrix::identity(2 * n, 2 * n);
        for i in 0..n {
            fx[(i, n + i)] += h;
            for j in 0..n {
                fx[(n + i, j)] += h * self.dq[(i, j)];
                fx[(n + i, n + j)] += h * self.dqd[(i, j)];
            }
        }
        fx
    }

    /// `fu = h·[0; Ξ B]`
    pub fn fu(&self, h: f64) -> DMatrix<f64> {
        let (n, m) = self.du.shape();
        let mut fu = DMatrix::zeros(2 * n, m);
        fu.view_mut((n, 0), (n, m)).copy_from(&(&self.du * h));
        fu
    }
}

/// `h·ηᵀ∂²FD` blocks. `huu` and `hvu` vanish identically because
/// `∂FD/∂τ = M⁻¹(q)`; only the tensor backend evaluates them explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderBlocks {
    pub hqq: DMatrix<f64>,
    pub hvv: DMatrix<f64>,
    /// Rows `q`, columns `q̇`.
    pub hqv: DMatrix<f64>,
    /// Rows `q`, columns `u`.
    pub hqu: DMatrix<f64>,
    /// Rows `q̇`, columns `u`.
    pub hvu: DMatrix<f64>,
    pub huu: DMatrix<f64>,
}

impl SecondOrderBlocks {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            hqq: DMatrix::zeros(n, n),
            hvv: DMatrix::zeros(n, n),
            hqv: DMatrix::zeros(n, n),
            hqu: DMatrix::zeros(n, m),
            hvu: DMatrix::zeros(n, m),
            huu: DMatrix::zeros(m, m),
        }
    }

    /// `λ·fxx` (2n×2n, symmetric).
    pub fn lambda_fxx(&self) -> DMatrix<f64> {
        let n = self.hqq.nrows();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.hqq);
        out.view_mut((0, n), (n, n)).copy_from(&self.hqv);
        out.view_mut((n, 0), (n, n)).copy_from(&self.hqv.transpose());
        out.view_mut((n, n), (n, n)).copy_from(&self.hvv);
        out
    }

    /// `λ·fux` (m×2n).
    pub fn lambda_fux(&self) -> DMatrix<f64> {
        let (n, m) = self.hqu.shape();
        let mut out = DMatrix::zeros(m, 2 * n);
        out.view_mut((0, 0), (m, n)).copy_from(&self.hqu.transpose());
        out.view_mut((0, n), (m, n)).copy_from(&self.hvu.transpose());
        out
    }

    /// `λ·fuu` (m×m).
    pub fn lambda_fuu(&self) -> DMatrix<f64> {
        self.huu.clone()
    }
}

/// Dynamics derivatives at one `(x, u)`: Jacobians plus costate-contracted
/// second-order blocks, all already scaled by `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynDerivs {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub hqq: DMatrix<f64>,
    pub hvv: DMatrix<f64>,
    pub hqv: DMatrix<f64>,
    pub hqu: DMatrix<f64>,
    pub hvu: DMatrix<f64>,
    pub huu: DMatrix<f64>,
    pub backend: Backend,
}

impl DynDerivs {
    fn assemble(backend: Backend, first: &FdPartials, second: SecondOrderBlocks, h: f64) -> Self {
        Self {
            fx: first.fx(h),
            fu: first.fu(h),
            hqq: second.hqq,
            hvv: second.hvv,
            hqv: second.hqv,
            hqu: second.hqu,
            hvu: second.hvu,
            huu: second.huu,
            backend,
        }
    }

    pub fn blocks(&self) -> SecondOrderBlocks {
        SecondOrderBlocks {
            hqq: self.hqq.clone(),
            hvv: self.hvv.clone(),
            hqv: self.hqv.clone(),
            hqu: self.hqu.clone(),
            hvu: self.hvu.clone(),
            huu: self.huu.clone(),
        }
    }
}

fn split_state<'a>(model: &RigidBodyModel, x: &'a [f64], u: &[f64]) -> Result<(&'a [f64], &'a [f64]), DynError> {
    let n = model.n_bodies();
    if x.len() != 2 * n {
        return Err(DynError::DimensionMismatch {
            what: "x",
            expected: 2 * n,
            got: x.len(),
        });
    }
    if u.len() != model.n_controls() {
        return Err(DynError::DimensionMismatch {
            what: "u",
            expected: model.n_controls(),
            got: u.len(),
        });
    }
    Ok(x.split_at(n))
}

fn check_eta(model: &RigidBodyModel, eta: &[f64]) -> Result<(), DynError> {
    let n = model.n_bodies();
    if eta.len() != n {
        return Err(DynError::DimensionMismatch {
            what: "eta",
            expected: n,
            got: eta.len(),
        });
    }
    Ok(())
}

/// `z = (q, q̇, u) ↦ FD(q, q̇, B u)`
struct ForwardDynamicsFn<'a> {
    model: &'a RigidBodyModel,
}

impl VectorFn for ForwardDynamicsFn<'_> {
    fn input_dim(&self) -> usize {
        2 * self.model.n_bodies() + self.model.n_controls()
    }

    fn output_dim(&self) -> usize {
        self.model.n_bodies()
    }

    fn eval<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let n = self.model.n_bodies();
        let tau = self.model.apply_actuation(&z[2 * n..]);
        aba(self.model, &z[..n], &z[n..2 * n], &tau, &self.model.gravity())
            .expect("forward dynamics verified at this point")
    }
}

/// `(q, q̇) ↦ ID(q, q̇, q̈)` at a fixed acceleration.
struct InverseDynamicsFn<'a> {
    model: &'a RigidBodyModel,
    qdd: &'a [f64],
}

impl VectorFn for InverseDynamicsFn<'_> {
    fn input_dim(&self) -> usize {
        2 * self.model.n_bodies()
    }

    fn output_dim(&self) -> usize {
        self.model.n_bodies()
    }

    fn eval<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let n = self.model.n_bodies();
        let qdd = crate::scalar::lift::<S>(self.qdd);
        rnea(self.model, &z[..n], &z[n..], &qdd, &self.model.gravity()).expect("dimensions checked")
    }
}

/// `(q, q̇, q̈) ↦ μᵀ·ID(q, q̇, q̈)` with `μ` held constant.
struct WeightedInverseDynamicsFn<'a> {
    model: &'a RigidBodyModel,
    mu: &'a [f64],
    single_pass: bool,
}

impl VectorFn for WeightedInverseDynamicsFn<'_> {
    fn input_dim(&self) -> usize {
        3 * self.model.n_bodies()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let n = self.model.n_bodies();
        let g = self.model.gravity();
        let mu = crate::scalar::lift::<S>(self.mu);
        let (q, qd, qdd) = (&z[..n], &z[n..2 * n], &z[2 * n..]);
        let s = if self.single_pass {
            mod_rnea(self.model, q, qd, qdd, &g, &mu).expect("dimensions checked")
        } else {
            let tau = rnea(self.model, q, qd, qdd, &g).expect("dimensions checked");
            crate::scalar::dot(&mu, &tau)
        };
        vec![s]
    }
}

fn forward_point(model: &RigidBodyModel, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DynError> {
    let (q, qd) = split_state(model, x, u)?;
    let qdd = aba(model, q, qd, &model.apply_actuation(u), &model.gravity())?;
    let z = q.iter().chain(qd).chain(u).copied().collect();
    Ok((z, qdd))
}

/// FD partials by reverse-mode Jacobian of the articulated-body algorithm.
pub fn fd_partials_aba(model: &RigidBodyModel, x: &[f64], u: &[f64]) -> Result<FdPartials, DynError> {
    let (z, qdd) = forward_point(model, x, u)?;
    let (n, m) = (model.n_bodies(), model.n_controls());
    let jac = Recording::of(&ForwardDynamicsFn { model }, &z)
        .expect("dimensions checked")
        .jacobian();
    Ok(FdPartials {
        dq: jac.columns(0, n).into_owned(),
        dqd: jac.columns(n, n).into_owned(),
        du: jac.columns(2 * n, m).into_owned(),
        qdd,
    })
}

/// FD partials from `∂FD/∂z = −M⁻¹·∂ID/∂z`, evaluated at `q̈ = FD(q, q̇, τ)`.
///
/// With `dense_inverse` the mass matrix is factored once and applied by
/// matrix products; otherwise each column goes through a gravity- and
/// velocity-free ABA call.
pub fn fd_partials_rnea(
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    dense_inverse: bool,
) -> Result<FdPartials, DynError> {
    let (z, qdd) = forward_point(model, x, u)?;
    let (n, m) = (model.n_bodies(), model.n_controls());
    let id_jac = Recording::of(&InverseDynamicsFn { model, qdd: &qdd }, &z[..2 * n])
        .expect("dimensions checked")
        .jacobian();
    let q = &z[..n];
    let mut rhs = DMatrix::zeros(n, 2 * n + m);
    rhs.columns_mut(0, 2 * n).copy_from(&(-id_jac));
    for (k, &j) in model.actuated().iter().enumerate() {
        rhs[(j, 2 * n + k)] = 1.0;
    }
    let sol = if dense_inverse {
        let mass = mass_matrix(model, q)?;
        let chol = mass.cholesky().ok_or(DynError::SingularInertia(0))?;
        chol.solve(&rhs)
    } else {
        let mut scratch = DynScratch::for_model(model);
        let zeros = vec![0.0; n];
        let mut sol = DMatrix::zeros(n, 2 * n + m);
        let mut col = vec![0.0; n];
        for c in 0..2 * n + m {
            col.iter_mut().zip(rhs.column(c).iter()).for_each(|(d, s)| *d = *s);
            let out = aba_with(model, &mut scratch, q, &zeros, &col, &[0.0; 3])?;
            sol.column_mut(c).copy_from_slice(&out);
        }
        sol
    };
    Ok(FdPartials {
        dq: sol.columns(0, n).into_owned(),
        dqd: sol.columns(n, n).into_owned(),
        du: sol.columns(2 * n, m).into_owned(),
        qdd,
    })
}

/// First-order partials with the method `backend` relies on.
pub fn fd_partials(backend: Backend, model: &RigidBodyModel, x: &[f64], u: &[f64]) -> Result<FdPartials, DynError> {
    match backend.first_order() {
        Backend::Rnea1 => fd_partials_rnea(model, x, u, false),
        _ => fd_partials_aba(model, x, u),
    }
}

pub fn first_order_aba(
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynError> {
    let p = fd_partials_aba(model, x, u)?;
    Ok((p.fx(h), p.fu(h)))
}

pub fn first_order_rnea(
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    h: f64,
    dense_inverse: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynError> {
    let p = fd_partials_rnea(model, x, u, dense_inverse)?;
    Ok((p.fx(h), p.fu(h)))
}

fn scaled_sym(m: DMatrix<f64>, h: f64) -> DMatrix<f64> {
    (&m + m.transpose()) * (0.5 * h)
}

/// Contracted blocks from the explicit second-derivative tensor of FD.
pub fn tensor_blocks(model: &RigidBodyModel, x: &[f64], u: &[f64], eta: &[f64], h: f64) -> Result<SecondOrderBlocks, DynError> {
    check_eta(model, eta)?;
    let (z, _) = forward_point(model, x, u)?;
    let (n, m) = (model.n_bodies(), model.n_controls());
    let dim = 2 * n + m;
    let f = ForwardDynamicsFn { model };
    let mut contracted = DMatrix::zeros(dim, dim);
    let mut basis = vec![0.0; n];
    for r in 0..n {
        // Hessian of FD_r: one slice of the tensor
        basis[r] = 1.0;
        let slice = vjp_grad_rows(&f, &z, &basis, 0..dim).expect("dimensions checked");
        basis[r] = 0.0;
        contracted += slice * eta[r];
    }
    Ok(blocks_from_hessian(&contracted, n, m, h, true))
}

fn blocks_from_hessian(hess: &DMatrix<f64>, n: usize, m: usize, h: f64, with_u_rows: bool) -> SecondOrderBlocks {
    let huu = if with_u_rows {
        scaled_sym(hess.view((2 * n, 2 * n), (m, m)).into_owned(), h)
    } else {
        DMatrix::zeros(m, m)
    };
    SecondOrderBlocks {
        hqq: scaled_sym(hess.view((0, 0), (n, n)).into_owned(), h),
        hvv: scaled_sym(hess.view((n, n), (n, n)).into_owned(), h),
        hqv: hess.view((0, n), (n, n)) * h,
        hqu: hess.view((0, 2 * n), (n, m)) * h,
        hvu: hess.view((n, 2 * n), (n, m)) * h,
        huu,
    }
}

/// Reverse-over-reverse on `ηᵀ·FD` over `(q, q̇, u)`; rows `q` and `q̇` only.
pub fn aba_blocks(model: &RigidBodyModel, x: &[f64], u: &[f64], eta: &[f64], h: f64) -> Result<SecondOrderBlocks, DynError> {
    check_eta(model, eta)?;
    let (z, _) = forward_point(model, x, u)?;
    let (n, m) = (model.n_bodies(), model.n_controls());
    let rows = vjp_grad_rows(&ForwardDynamicsFn { model }, &z, eta, 0..2 * n).expect("dimensions checked");
    Ok(blocks_from_hessian(&rows, n, m, h, false))
}

/// Second-order blocks through inverse-dynamics identities.
///
/// With `μ = M⁻¹η` fixed, one reverse-over-reverse pass over
/// `(q, q̇, q̈) ↦ μᵀID` yields the `q`/`q̇` Hessian blocks and, from its
/// `q`–`q̈` block, `G = ∂(Mμ)/∂q`. Then
/// `A = −½∂²(μᵀID)/∂q² − NᵀG` and `ηᵀFD_qq = A + Aᵀ`,
/// `ηᵀFD_q̇q̇ = −∂²(μᵀID)/∂q̇²`, `ηᵀFD_qq̇ = −∂²(μᵀID)/∂q∂q̇ − GᵀΨ`,
/// `ηᵀFD_qu = −GᵀΞB`.
pub fn rnea_blocks(
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    first: &FdPartials,
    eta: &[f64],
    h: f64,
    single_pass: bool,
) -> Result<SecondOrderBlocks, DynError> {
    check_eta(model, eta)?;
    let (q, _) = split_state(model, x, u)?;
    let (n, m) = (model.n_bodies(), model.n_controls());
    let zeros = vec![0.0; n];
    let mu = aba(model, q, &zeros, eta, &[0.0; 3])?;
    let z: Vec<f64> = x.iter().chain(&first.qdd).copied().collect();
    let f = WeightedInverseDynamicsFn {
        model,
        mu: &mu,
        single_pass,
    };
    let hess = vjp_grad_rows(&f, &z, &[1.0], 0..2 * n).expect("dimensions checked");
    let d2_qq = hess.view((0, 0), (n, n));
    let d2_qv = hess.view((0, n), (n, n));
    let d2_vv = hess.view((n, n), (n, n));
    // ∂²(μᵀID)/∂q_i∂q̈_k = (∂M/∂q_i μ)_k = G_ki
    let g = hess.view((0, 2 * n), (n, n)).transpose();

    let a = d2_qq * -0.5 - first.dq.transpose() * &g;
    let gt = g.transpose();
    Ok(SecondOrderBlocks {
        hqq: (&a + a.transpose()) * h,
        hvv: scaled_sym(-d2_vv.into_owned(), h),
        hqv: (-d2_qv - &gt * &first.dqd) * h,
        hqu: (-(&gt * &first.du)) * h,
        hvu: DMatrix::zeros(n, m),
        huu: DMatrix::zeros(m, m),
    })
}

/// Second-order blocks for `backend` given its first-order partials; zero for
/// first-order backends.
pub fn second_order_blocks(
    backend: Backend,
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    first: &FdPartials,
    eta: &[f64],
    h: f64,
) -> Result<SecondOrderBlocks, DynError> {
    match backend {
        Backend::Aba1 | Backend::Rnea1 => Ok(SecondOrderBlocks::zeros(model.n_bodies(), model.n_controls())),
        Backend::Tensor => tensor_blocks(model, x, u, eta, h),
        Backend::Aba2 => aba_blocks(model, x, u, eta, h),
        Backend::Rnea2 => rnea_blocks(model, x, u, first, eta, h, false),
        Backend::ModRnea2 => rnea_blocks(model, x, u, first, eta, h, true),
    }
}

/// All derivatives at `(x, u)` for costate `λ` (2n) with the given backend.
pub fn compute(
    backend: Backend,
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    lambda: &[f64],
    h: f64,
) -> Result<DynDerivs, DynError> {
    let n = model.n_bodies();
    if lambda.len() != 2 * n {
        return Err(DynError::DimensionMismatch {
            what: "lambda",
            expected: 2 * n,
            got: lambda.len(),
        });
    }
    let first = fd_partials(backend, model, x, u)?;
    let eta = &lambda[n..];
    let second = second_order_blocks(backend, model, x, u, &first, eta, h)?;
    Ok(DynDerivs::assemble(backend, &first, second, h))
}

pub fn second_order_tensor(model: &RigidBodyModel, x: &[f64], u: &[f64], lambda: &[f64], h: f64) -> Result<DynDerivs, DynError> {
    compute(Backend::Tensor, model, x, u, lambda, h)
}

pub fn second_order_aba(model: &RigidBodyModel, x: &[f64], u: &[f64], lambda: &[f64], h: f64) -> Result<DynDerivs, DynError> {
    compute(Backend::Aba2, model, x, u, lambda, h)
}

pub fn second_order_rnea(
    model: &RigidBodyModel,
    x: &[f64],
    u: &[f64],
    lambda: &[f64],
    h: f64,
    use_mod_rnea: bool,
) -> Result<DynDerivs, DynError> {
    let backend = if use_mod_rnea { Backend::ModRnea2 } else { Backend::Rnea2 };
    compute(backend, model, x, u, lambda, h)
}
