#![allow(dead_code)]

pub mod dd;

use nalgebra::{DMatrix, Matrix3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tfddp::dynamics::step_euler;
use tfddp::rbmodel::{Body, RigidBodyModel, DEFAULT_GRAVITY};
use tfddp::spatial::{Mat3, SpatialInertia, SpatialTransform, Vec3};

use dd::DD;

pub const FD_STEP: f64 = 1e-6;

/// Entry-wise finite-difference agreement: relative 1e-5 for entries above
/// 1e-8 in magnitude, absolute 1e-7 otherwise.
pub fn fd_match(ad: f64, fd: f64) -> bool {
    if fd.abs() > 1e-8 {
        (ad - fd).abs() <= 1e-5 * fd.abs()
    } else {
        (ad - fd).abs() <= 1e-7
    }
}

/// Central differences of the Euler step in double-double arithmetic.
pub fn step_jacobians_fd(model: &RigidBodyModel, x: &[f64], u: &[f64], h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n2 = x.len();
    let m = u.len();
    let eps = DD::new(FD_STEP);
    let inv = DD::new(1.0) / (eps + eps);
    let (xd, ud) = (dd::lift(x), dd::lift(u));
    let eval = |x: &[DD], u: &[DD]| step_euler(model, x, u, h).expect("valid step");
    let mut fx = DMatrix::zeros(n2, n2);
    let mut fu = DMatrix::zeros(n2, m);
    for j in 0..n2 + m {
        let (mut xp, mut xm, mut up, mut um) = (xd.clone(), xd.clone(), ud.clone(), ud.clone());
        if j < n2 {
            xp[j] += eps;
            xm[j] -= eps;
        } else {
            up[j - n2] += eps;
            um[j - n2] -= eps;
        }
        let (fp, fm) = (eval(&xp, &up), eval(&xm, &um));
        for i in 0..n2 {
            let d = ((fp[i] - fm[i]) * inv).hi;
            if j < n2 {
                fx[(i, j)] = d;
            } else {
                fu[(i, j - n2)] = d;
            }
        }
    }
    (fx, fu)
}

/// Random kinematic tree with `n` bodies, arbitrary joint axes, offsets and
/// inertias, all joints actuated.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> RigidBodyModel {
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0f64..1.0)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 0.2 {
            break [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    };
    let bodies = (0..n)
        .map(|i| {
            let parent = if i == 0 { None } else { Some(rng.random_range(0..i)) };
            let axis = unit(rng);
            let turn = SpatialTransform::rotation(&Vec3::from_f64(unit(rng)), rng.random_range(-3.0..3.0));
            let shift = SpatialTransform::translation(Vec3::from_f64([
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.5..0.0),
            ]));
            let l = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let ic = l * l.transpose() + Matrix3::identity() * 0.01;
            let ic = std::array::from_fn(|r| std::array::from_fn(|c| ic[(r, c)]));
            let com = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.0)];
            Body {
                parent,
                axis,
                offset: turn.compose(&shift),
                inertia: SpatialInertia::from_com(rng.random_range(0.5..2.0), Vec3::from_f64(com), Mat3::from_f64(ic)),
            }
        })
        .collect();
    RigidBodyModel::new(bodies, DEFAULT_GRAVITY, (0..n).collect()).expect("valid random tree")
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}
