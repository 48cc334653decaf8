mod common;

use common::{fd_match, step_jacobians_fd};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfddp::derivs::{compute, first_order_aba, first_order_rnea, Backend, DynDerivs};
use tfddp::rbmodel::{build_pendubot, build_serial_arm, build_serial_arm7, ArmParams, RigidBodyModel};

const H: f64 = 0.01;

fn sample(rng: &mut ChaCha8Rng, model: &RigidBodyModel) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = model.n_bodies();
    let x = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let u = (0..model.n_controls()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let lambda = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (x, u, lambda)
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

#[test]
fn first_order_backends_match_each_other_and_finite_differences() {
    let model = build_serial_arm7(&ArmParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let (x, u, _) = sample(&mut rng, &model);
        let (fxa, fua) = first_order_aba(&model, &x, &u, H).unwrap();
        let (fxr, fur) = first_order_rnea(&model, &x, &u, H, false).unwrap();
        let (fxd, fud) = first_order_rnea(&model, &x, &u, H, true).unwrap();
        assert!((&fxa - &fxr).amax() < 1e-10);
        assert!((&fua - &fur).amax() < 1e-10);
        assert!((&fxa - &fxd).amax() < 1e-10);
        assert!((&fua - &fud).amax() < 1e-10);
        let (fx_fd, fu_fd) = step_jacobians_fd(&model, &x, &u, H);
        for (a, b) in fxa.iter().zip(fx_fd.iter()).chain(fua.iter().zip(fu_fd.iter())) {
            assert!(fd_match(*a, *b), "ad {a} fd {b}");
        }
    }
}

#[test]
fn inverse_mass_columns() {
    let model = build_pendubot(5, 1.0, 0.5).unwrap();
    let x = [0.3, -0.4, 0.2, 0.9, -1.1, 0.0, 0.0, 0.0, 0.0, 0.0];
    let (_, fu) = first_order_rnea(&model, &x, &[0.0; 4], 1.0, false).unwrap();
    let minv = tfddp::dynamics::mass_matrix(&model, &x[..5]).unwrap().try_inverse().unwrap();
    for j in 0..4 {
        for i in 0..5 {
            assert!((fu[(5 + i, j)] - minv[(i, j)]).abs() < 1e-10);
        }
    }
}

/// Hessian of `λᵀ f(x, u)` by central differences of the AD Jacobians.
fn hamiltonian_hessian_fd(model: &RigidBodyModel, x: &[f64], u: &[f64], lambda: &[f64]) -> DMatrix<f64> {
    let eps = 1e-6;
    let n2 = x.len();
    let m = u.len();
    let lam = DVector::from_column_slice(lambda);
    let grad = |x: &[f64], u: &[f64]| -> DVector<f64> {
        let (fx, fu) = first_order_aba(model, x, u, H).unwrap();
        let gx = fx.tr_mul(&lam);
        let gu = fu.tr_mul(&lam);
        DVector::from_iterator(n2 + m, gx.iter().chain(gu.iter()).copied())
    };
    let mut hess = DMatrix::zeros(n2 + m, n2 + m);
    for j in 0..n2 + m {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        if j < n2 {
            xp[j] += eps;
            xm[j] -= eps;
        } else {
            up[j - n2] += eps;
            um[j - n2] -= eps;
        }
        let col = (grad(&xp, &up) - grad(&xm, &um)) / (2.0 * eps);
        hess.set_column(j, &col);
    }
    hess
}

fn full_hessian(d: &DynDerivs) -> DMatrix<f64> {
    let b = d.blocks();
    let fxx = b.lambda_fxx();
    let fux = b.lambda_fux();
    let fuu = b.lambda_fuu();
    let n2 = fxx.nrows();
    let m = fuu.nrows();
    let mut out = DMatrix::zeros(n2 + m, n2 + m);
    out.view_mut((0, 0), (n2, n2)).copy_from(&fxx);
    out.view_mut((n2, 0), (m, n2)).copy_from(&fux);
    out.view_mut((0, n2), (n2, m)).copy_from(&fux.transpose());
    out.view_mut((n2, n2), (m, m)).copy_from(&fuu);
    out
}

#[test]
fn second_order_backends_agree_with_tensor_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let models = [
        build_pendubot(2, 1.0, 0.5).unwrap(),
        build_pendubot(4, 1.0, 0.5).unwrap(),
        build_serial_arm7(&ArmParams::default()).unwrap(),
    ];
    for model in &models {
        for _ in 0..3 {
            let (x, u, lambda) = sample(&mut rng, model);
            let tensor = compute(Backend::Tensor, model, &x, &u, &lambda, H).unwrap();
            let reference = full_hessian(&tensor);
            for b in [Backend::Aba2, Backend::Rnea2, Backend::ModRnea2] {
                let d = compute(b, model, &x, &u, &lambda, H).unwrap();
                let e = rel_err(&full_hessian(&d), &reference);
                assert!(e < 1e-8, "{b} vs tensor: {e}");
            }
            let fd = hamiltonian_hessian_fd(model, &x, &u, &lambda);
            let e = rel_err(&reference, &fd);
            assert!(e < 1e-4, "tensor vs fd: {e}");
        }
    }
}

#[test]
fn second_order_blocks_are_symmetric_and_control_blocks_vanish() {
    let model = build_serial_arm(6, &ArmParams {
        masses: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
        lengths: vec![0.3; 6],
        radius: 0.04,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let (x, u, lambda) = sample(&mut rng, &model);
        for b in Backend::ALL {
            let d = compute(b, &model, &x, &u, &lambda, H).unwrap();
            assert!((&d.hqq - d.hqq.transpose()).amax() < 1e-12);
            assert!((&d.hvv - d.hvv.transpose()).amax() < 1e-12);
        }
        let t = compute(Backend::Tensor, &model, &x, &u, &lambda, H).unwrap();
        assert!(t.huu.amax() < 1e-10, "huu {}", t.huu.amax());
        assert!(t.hvu.amax() < 1e-10, "hvu {}", t.hvu.amax());
    }
}

#[test]
fn double_double_oracle_is_accurate() {
    use common::dd::DD;
    use tfddp::Scalar;
    for &v in &[0.0, 0.3, -1.7, 2.9, 7.5, -12.0] {
        let (s, c) = DD::new(v).sin_cos();
        assert!((s.value() - v.sin()).abs() < 1e-15);
        assert!((c.value() - v.cos()).abs() < 1e-15);
        // sin² + cos² = 1 far beyond f64 precision
        let one = s * s + c * c - DD::new(1.0);
        assert!(one.value().abs() < 1e-28);
    }
    let r = DD::new(2.0).sqrt();
    assert!((r * r - DD::new(2.0)).value().abs() < 1e-30);
    let third = DD::new(1.0) / DD::new(3.0);
    assert!((third * DD::new(3.0) - DD::new(1.0)).value().abs() < 1e-30);
}
