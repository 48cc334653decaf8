//! Recursive rigid-body dynamics over any [`Scalar`].
//!
//! Conventions: `Xup[i]` maps parent coordinates to body `i` coordinates,
//! velocities are body-fixed, and gravity enters as a fictitious base
//! acceleration `a_0 = −a_g`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::rbmodel::RigidBodyModel;
use crate::spatial::{cross_force, cross_motion, Mat6, SpatialInertia, SpatialTransform, SpatialVec, Vec3};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("articulated inertia of body {0} is singular or not positive")]
    SingularInertia(usize),
}

/// Per-body workspace for the recursive algorithms. Reusable across calls
/// on models with the same number of bodies.
#[derive(Clone, Debug)]
pub struct DynScratch<S> {
    pub xup: Vec<SpatialTransform<S>>,
    pub v: Vec<SpatialVec<S>>,
    pub a: Vec<SpatialVec<S>>,
    pub f: Vec<SpatialVec<S>>,
    pub w: Vec<SpatialVec<S>>,
    inertia: Vec<SpatialInertia<S>>,
    ia: Vec<Mat6<S>>,
    pa: Vec<SpatialVec<S>>,
    c: Vec<SpatialVec<S>>,
    u_col: Vec<SpatialVec<S>>,
    d: Vec<S>,
    u: Vec<S>,
}

impl<S: Scalar> DynScratch<S> {
    pub fn new(n: usize) -> Self {
        let sv = vec![SpatialVec::zeros(); n];
        Self {
            xup: vec![SpatialTransform::identity(); n],
            v: sv.clone(),
            a: sv.clone(),
            f: sv.clone(),
            w: sv.clone(),
            inertia: Vec::with_capacity(n),
            ia: vec![Mat6::zeros(); n],
            pa: sv.clone(),
            c: sv.clone(),
            u_col: sv,
            d: vec![S::zero(); n],
            u: vec![S::zero(); n],
        }
    }

    pub fn for_model(model: &RigidBodyModel) -> Self {
        Self::new(model.n_bodies())
    }

    fn prepare(&mut self, model: &RigidBodyModel) {
        if self.xup.len() != model.n_bodies() {
            *self = Self::new(model.n_bodies());
        }
        if self.inertia.len() != model.n_bodies() {
            self.inertia = model.bodies().iter().map(|b| b.inertia.lift()).collect();
        }
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), DynError> {
    if expected == got {
        Ok(())
    } else {
        Err(DynError::DimensionMismatch { what, expected, got })
    }
}

/// Joint motion subspace `Φ_i` (pure rotation about the joint axis).
fn motion_subspace<S: Scalar>(axis: &[f64; 3]) -> SpatialVec<S> {
    SpatialVec::new(Vec3::from_f64(*axis), Vec3::zeros())
}

fn base_acceleration<S: Scalar>(gravity: &[f64; 3]) -> SpatialVec<S> {
    SpatialVec::new(
        Vec3::zeros(),
        Vec3::from_f64([-gravity[0], -gravity[1], -gravity[2]]),
    )
}

fn joint_transforms<S: Scalar>(model: &RigidBodyModel, q: &[S], scratch: &mut DynScratch<S>) {
    for (i, b) in model.bodies().iter().enumerate() {
        let xj = SpatialTransform::rotation(&Vec3::from_f64(b.axis), q[i]);
        scratch.xup[i] = xj.compose(&b.offset.lift());
    }
}

/// Forward pass shared by RNEA and the modified RNEA: fills `xup`, `v`,
/// `a` and the body forces `f`.
fn forward_pass<S: Scalar>(
    model: &RigidBodyModel,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    gravity: &[f64; 3],
    scratch: &mut DynScratch<S>,
) {
    joint_transforms(model, q, scratch);
    let a0 = base_acceleration::<S>(gravity);
    for (i, b) in model.bodies().iter().enumerate() {
        let phi = motion_subspace::<S>(&b.axis);
        let vj = phi.scale(qd[i]);
        let xup = &scratch.xup[i];
        let (v, a) = match b.parent {
            Some(p) => {
                let v = xup.apply_motion(&scratch.v[p]) + vj;
                let a = xup.apply_motion(&scratch.a[p]) + phi.scale(qdd[i]) + cross_motion(&v, &vj);
                (v, a)
            }
            None => (vj, xup.apply_motion(&a0) + phi.scale(qdd[i])),
        };
        let inertia = &scratch.inertia[i];
        let f = inertia.mul_motion(&a) + cross_force(&v, &inertia.mul_motion(&v));
        scratch.v[i] = v;
        scratch.a[i] = a;
        scratch.f[i] = f;
    }
}

/// Inverse dynamics `τ = M(q)q̈ + C(q,q̇) + τ_g(q)`.
pub fn rnea_with<S: Scalar>(
    model: &RigidBodyModel,
    scratch: &mut DynScratch<S>,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    gravity: &[f64; 3],
) -> Result<Vec<S>, DynError> {
    let n = model.n_bodies();
    check("q", n, q.len())?;
    check("qd", n, qd.len())?;
    check("qdd", n, qdd.len())?;
    scratch.prepare(model);
    forward_pass(model, q, qd, qdd, gravity, scratch);
    let mut tau = vec![S::zero(); n];
    for i in (0..n).rev() {
        let b = &model.bodies()[i];
        tau[i] = motion_subspace::<S>(&b.axis).dot(&scratch.f[i]);
        if let Some(p) = b.parent {
            let fp = scratch.xup[i].apply_transpose_force(&scratch.f[i]);
            scratch.f[p] += fp;
        }
    }
    Ok(tau)
}

pub fn rnea<S: Scalar>(
    model: &RigidBodyModel,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    gravity: &[f64; 3],
) -> Result<Vec<S>, DynError> {
    rnea_with(model, &mut DynScratch::for_model(model), q, qd, qdd, gravity)
}

/// `μᵀ·ID(q, q̇, q̈)` in one forward sweep.
///
/// Swapping the order of the double sum `Σ_i μ_i Φ_iᵀ Σ_{j ⪰ i} ⁱX_jᵀ F_j`
/// gives `Σ_j w_jᵀ F_j` with `w_j = ʲX_{p(j)} w_{p(j)} + Φ_j μ_j`, which
/// is available as soon as body `j` is visited.
pub fn mod_rnea_with<S: Scalar>(
    model: &RigidBodyModel,
    scratch: &mut DynScratch<S>,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    gravity: &[f64; 3],
    mu: &[S],
) -> Result<S, DynError> {
    let n = model.n_bodies();
    check("q", n, q.len())?;
    check("qd", n, qd.len())?;
    check("qdd", n, qdd.len())?;
    check("mu", n, mu.len())?;
    scratch.prepare(model);
    joint_transforms(model, q, scratch);
    let a0 = base_acceleration::<S>(gravity);
    let mut s = S::zero();
    for (i, b) in model.bodies().iter().enumerate() {
        let phi = motion_subspace::<S>(&b.axis);
        let vj = phi.scale(qd[i]);
        let xup = scratch.xup[i];
        let (v, a, w) = match b.parent {
            Some(p) => {
                let v = xup.apply_motion(&scratch.v[p]) + vj;
                let a = xup.apply_motion(&scratch.a[p]) + phi.scale(qdd[i]) + cross_motion(&v, &vj);
                let w = xup.apply_motion(&scratch.w[p]) + phi.scale(mu[i]);
                (v, a, w)
            }
            None => (vj, xup.apply_motion(&a0) + phi.scale(qdd[i]), phi.scale(mu[i])),
        };
        let inertia = &scratch.inertia[i];
        let f = inertia.mul_motion(&a) + cross_force(&v, &inertia.mul_motion(&v));
        s += w.dot(&f);
        scratch.v[i] = v;
        scratch.a[i] = a;
        scratch.w[i] = w;
    }
    Ok(s)
}

pub fn mod_rnea<S: Scalar>(
    model: &RigidBodyModel,
    q: &[S],
    qd: &[S],
    qdd: &[S],
    gravity: &[f64; 3],
    mu: &[S],
) -> Result<S, DynError> {
    mod_rnea_with(model, &mut DynScratch::for_model(model), q, qd, qdd, gravity, mu)
}

/// Forward dynamics by the articulated-body algorithm.
pub fn aba_with<S: Scalar>(
    model: &RigidBodyModel,
    scratch: &mut DynScratch<S>,
    q: &[S],
    qd: &[S],
    tau: &[S],
    gravity: &[f64; 3],
) -> Result<Vec<S>, DynError> {
    let n = model.n_bodies();
    check("q", n, q.len())?;
    check("qd", n, qd.len())?;
    check("tau", n, tau.len())?;
    scratch.prepare(model);
    joint_transforms(model, q, scratch);
    for (i, b) in model.bodies().iter().enumerate() {
        let vj = motion_subspace::<S>(&b.axis).scale(qd[i]);
        let v = match b.parent {
            Some(p) => scratch.xup[i].apply_motion(&scratch.v[p]) + vj,
            None => vj,
        };
        let inertia = &scratch.inertia[i];
        scratch.c[i] = cross_motion(&v, &vj);
        scratch.ia[i] = inertia.to_mat6();
        scratch.pa[i] = cross_force(&v, &inertia.mul_motion(&v));
        scratch.v[i] = v;
    }
    for i in (0..n).rev() {
        let b = &model.bodies()[i];
        let phi = motion_subspace::<S>(&b.axis);
        let ucol = scratch.ia[i].mul_vec(&phi);
        let d = phi.dot(&ucol);
        if d.value().is_nan() || d.value() <= 0.0 {
            return Err(DynError::SingularInertia(i));
        }
        let u = tau[i] - phi.dot(&scratch.pa[i]);
        scratch.u_col[i] = ucol;
        scratch.d[i] = d;
        scratch.u[i] = u;
        if let Some(p) = b.parent {
            let ia = scratch.ia[i].sub_outer(&ucol, d);
            let pa = scratch.pa[i] + ia.mul_vec(&scratch.c[i]) + ucol.scale(u / d);
            let xup = &scratch.xup[i];
            let ia_p = xup.congruence_transpose(&ia);
            let pa_p = xup.apply_transpose_force(&pa);
            scratch.ia[p] += ia_p;
            scratch.pa[p] += pa_p;
        }
    }
    let a0 = base_acceleration::<S>(gravity);
    let mut qdd = vec![S::zero(); n];
    for (i, b) in model.bodies().iter().enumerate() {
        let parent_a = match b.parent {
            Some(p) => scratch.a[p],
            None => a0,
        };
        let a = scratch.xup[i].apply_motion(&parent_a) + scratch.c[i];
        qdd[i] = (scratch.u[i] - scratch.u_col[i].dot(&a)) / scratch.d[i];
        scratch.a[i] = a + motion_subspace::<S>(&b.axis).scale(qdd[i]);
    }
    Ok(qdd)
}

pub fn aba<S: Scalar>(
    model: &RigidBodyModel,
    q: &[S],
    qd: &[S],
    tau: &[S],
    gravity: &[f64; 3],
) -> Result<Vec<S>, DynError> {
    aba_with(model, &mut DynScratch::for_model(model), q, qd, tau, gravity)
}

/// Joint-space inertia matrix by the composite-rigid-body algorithm.
pub fn mass_matrix_with(
    model: &RigidBodyModel,
    scratch: &mut DynScratch<f64>,
    q: &[f64],
) -> Result<DMatrix<f64>, DynError> {
    let n = model.n_bodies();
    check("q", n, q.len())?;
    scratch.prepare(model);
    joint_transforms(model, q, scratch);
    for i in 0..n {
        scratch.ia[i] = scratch.inertia[i].to_mat6();
    }
    for i in (0..n).rev() {
        if let Some(p) = model.parent(i) {
            let ic = scratch.xup[i].congruence_transpose(&scratch.ia[i]);
            scratch.ia[p] += ic;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut f = scratch.ia[i].mul_vec(&motion_subspace(&model.bodies()[i].axis));
        m[(i, i)] = motion_subspace(&model.bodies()[i].axis).dot(&f);
        let mut j = i;
        while let Some(p) = model.parent(j) {
            f = scratch.xup[j].apply_transpose_force(&f);
            j = p;
            let mij = motion_subspace(&model.bodies()[j].axis).dot(&f);
            m[(i, j)] = mij;
            m[(j, i)] = mij;
        }
    }
    Ok(m)
}

pub fn mass_matrix(model: &RigidBodyModel, q: &[f64]) -> Result<DMatrix<f64>, DynError> {
    mass_matrix_with(model, &mut DynScratch::for_model(model), q)
}

/// Explicit Euler step `x′ = x + h·[q̇; FD(q, q̇, B u)]` of the stacked state.
pub fn step_euler_with<S: Scalar>(
    model: &RigidBodyModel,
    scratch: &mut DynScratch<S>,
    x: &[S],
    u: &[S],
    h: f64,
) -> Result<Vec<S>, DynError> {
    let n = model.n_bodies();
    check("x", 2 * n, x.len())?;
    check("u", model.n_controls(), u.len())?;
    let (q, qd) = x.split_at(n);
    let tau = model.apply_actuation(u);
    let qdd = aba_with(model, scratch, q, qd, &tau, &model.gravity())?;
    let h = S::from_f64(h);
    let mut next = Vec::with_capacity(2 * n);
    next.extend(q.iter().zip(qd).map(|(&qi, &vi)| qi + h * vi));
    next.extend(qd.iter().zip(&qdd).map(|(&vi, &ai)| vi + h * ai));
    Ok(next)
}

pub fn step_euler<S: Scalar>(model: &RigidBodyModel, x: &[S], u: &[S], h: f64) -> Result<Vec<S>, DynError> {
    step_euler_with(model, &mut DynScratch::for_model(model), x, u, h)
}

/// Kinetic plus gravitational potential energy of the configuration.
pub fn total_energy(model: &RigidBodyModel, q: &[f64], qd: &[f64]) -> Result<f64, DynError> {
    let n = model.n_bodies();
    check("q", n, q.len())?;
    check("qd", n, qd.len())?;
    let mut scratch = DynScratch::for_model(model);
    scratch.prepare(model);
    joint_transforms(model, q, &mut scratch);
    let g = model.gravity();
    let mut to_body: Vec<SpatialTransform<f64>> = Vec::with_capacity(n);
    let mut energy = 0.0;
    for (i, b) in model.bodies().iter().enumerate() {
        let vj = motion_subspace::<f64>(&b.axis).scale(qd[i]);
        let (v, x0) = match b.parent {
            Some(p) => (
                scratch.xup[i].apply_motion(&scratch.v[p]) + vj,
                scratch.xup[i].compose(&to_body[p]),
            ),
            None => (vj, scratch.xup[i]),
        };
        let inertia = &scratch.inertia[i];
        energy += 0.5 * v.dot(&inertia.mul_motion(&v));
        let com_world = x0.trans + x0.rot.tr_mul_vec(&inertia.com());
        energy -= inertia.mass * (g[0] * com_world.x + g[1] * com_world.y + g[2] * com_world.z);
        scratch.v[i] = v;
        to_body.push(x0);
    }
    Ok(energy)
}
