//! Timing of the derivative backends.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfddp::derivs::{compute, Backend};
use tfddp::dynamics::DynError;
use tfddp::rbmodel::{build_pendubot, RigidBodyModel};

/// Integration step used for all benchmark evaluations.
pub const BENCH_H: f64 = 0.01;

/// Target duration of one timing sample; fast calls are batched up to it.
const SAMPLE_SECS: f64 = 2e-3;

/// The n-link pendubot used by the derivative benchmarks and the DoF sweep.
pub fn bench_model(n: usize) -> RigidBodyModel {
    build_pendubot(n, 1.0, 0.5).expect("pendubot with n >= 1 links")
}

/// A random evaluation point `(x, u, λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Draws the evaluation point for `model` from `(seed, n)`, so the same
/// seed always yields the same point at each n.
pub fn sample_point(model: &RigidBodyModel, seed: u64) -> Sample {
    let n = model.n_bodies();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ n as u64);
    let pi = std::f64::consts::PI;
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-pi..pi)).collect();
    x.extend((0..n).map(|_| rng.random_range(-1.0..1.0)));
    let u = (0..model.n_controls()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lambda = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Sample { x, u, lambda }
}

/// Median seconds per call of `f` over `reps` samples, after one warmup.
pub fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    f();
    let single = start.elapsed().as_secs_f64().max(1e-9);
    let batch = ((SAMPLE_SECS / single) as usize).clamp(1, 1_000_000);
    let mut samples: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..batch {
                f();
            }
            t.elapsed().as_secs_f64() / batch as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len().is_multiple_of(2) {
        0.5 * (samples[mid - 1] + samples[mid])
    } else {
        samples[mid]
    }
}

/// Median seconds for one full derivative evaluation with `backend`.
pub fn time_backend(backend: Backend, model: &RigidBodyModel, p: &Sample, reps: usize) -> Result<f64, DynError> {
    compute(backend, model, &p.x, &p.u, &p.lambda, BENCH_H)?;
    Ok(median_time(reps, || {
        black_box(compute(backend, model, black_box(&p.x), &p.u, &p.lambda, BENCH_H).unwrap());
    }))
}

/// Least-squares slope of `ln t` against `ln n`; `None` with fewer than two
/// distinct sizes.
pub fn loglog_slope(ns: &[usize], ts: &[f64]) -> Option<f64> {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if xs.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Median times in seconds, indexed `[backend][n]`.
pub struct TimingTable {
    pub ns: Vec<usize>,
    pub backends: Vec<Backend>,
    pub seconds: Vec<Vec<f64>>,
}

impl TimingTable {
    pub fn slope(&self, backend: Backend) -> Option<f64> {
        let i = self.backends.iter().position(|&b| b == backend)?;
        loglog_slope(&self.ns, &self.seconds[i])
    }

    pub fn time(&self, backend: Backend, n: usize) -> Option<f64> {
        let i = self.backends.iter().position(|&b| b == backend)?;
        let j = self.ns.iter().position(|&m| m == n)?;
        Some(self.seconds[i][j])
    }
}

/// Times every backend at every n on the calling thread, pinned to one CPU.
/// Backends are interleaved per n so drifts in machine load hit all of them.
pub fn measure(ns: &[usize], backends: &[Backend], reps: usize, seed: u64) -> Result<TimingTable, DynError> {
    let _pin = crate::pin::PinGuard::current_cpu();
    let mut seconds = vec![Vec::with_capacity(ns.len()); backends.len()];
    for &n in ns {
        let model = bench_model(n);
        let p = sample_point(&model, seed);
        for (i, &b) in backends.iter().enumerate() {
            seconds[i].push(time_backend(b, &model, &p, reps)?);
        }
    }
    Ok(TimingTable {
        ns: ns.to_vec(),
        backends: backends.to_vec(),
        seconds,
    })
}
