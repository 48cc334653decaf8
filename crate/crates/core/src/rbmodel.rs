//! Kinematic-tree model description, benchmark systems, and experiment
//! initial conditions.
//!
//! Bodies are numbered `0..n` internally with every parent index strictly
//! smaller than its child, so a single forward loop visits parents first.
//! Each body hangs off its parent through a 1-DoF revolute joint.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::spatial::{Mat3, SpatialInertia, SpatialTransform, Vec3};

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("body {body}: parent {parent} must precede it")]
    BadParent { body: usize, parent: usize },
    #[error("body {0}: joint axis must have unit norm")]
    AxisNotUnit(usize),
    #[error("body {0}: mass must be positive")]
    NonPositiveMass(usize),
    #[error("body {0}: rotational inertia must be symmetric positive semidefinite")]
    BadInertia(usize),
    #[error("body {0}: offset rotation is not a proper rotation")]
    BadRotation(usize),
    #[error("actuated joint {0} does not exist")]
    BadActuator(usize),
    #[error("joint {0} is listed as actuated twice")]
    DuplicateActuator(usize),
    #[error("model needs at least {min} links, got {got}")]
    TooFewLinks { min: usize, got: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub parent: Option<usize>,
    /// Unit rotation axis of the joint, in the joint frame.
    pub axis: [f64; 3],
    /// Transform from the parent's body frame to this joint's frame at q = 0.
    pub offset: SpatialTransform<f64>,
    pub inertia: SpatialInertia<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidBodyModel {
    bodies: Vec<Body>,
    gravity: [f64; 3],
    actuated: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl JointState {
    pub fn rest(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            qd: vec![0.0; n],
        }
    }

    /// Stacked state `[q; q̇]`.
    pub fn to_state(&self) -> Vec<f64> {
        self.q.iter().chain(&self.qd).copied().collect()
    }
}

fn unit_norm(a: &[f64; 3]) -> bool {
    ((a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt() - 1.0).abs() < 1e-9
}

fn check_rotation(r: &Mat3<f64>) -> bool {
    let e = nalgebra::Matrix3::from_fn(|i, j| r.m[i][j]);
    (e * e.transpose() - nalgebra::Matrix3::identity()).amax() < 1e-10
        && (e.determinant() - 1.0).abs() < 1e-10
}

impl RigidBodyModel {
    /// Validates and assembles a model. `actuated` lists the joints driven by
    /// the control inputs, in control order.
    pub fn new(bodies: Vec<Body>, gravity: [f64; 3], actuated: Vec<usize>) -> Result<Self, ModelError> {
        for (i, b) in bodies.iter().enumerate() {
            if let Some(p) = b.parent {
                if p >= i {
                    return Err(ModelError::BadParent { body: i, parent: p });
                }
            }
            if !unit_norm(&b.axis) {
                return Err(ModelError::AxisNotUnit(i));
            }
            if b.inertia.mass.is_nan() || b.inertia.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass(i));
            }
            let ic = b.inertia.inertia_com();
            let ic = nalgebra::Matrix3::from_fn(|r, c| ic.m[r][c]);
            let scale = ic.amax().max(1.0);
            if (ic - ic.transpose()).amax() > 1e-9 * scale
                || ic.symmetric_eigenvalues().min() < -1e-9 * scale
            {
                return Err(ModelError::BadInertia(i));
            }
            if !check_rotation(&b.offset.rot) {
                return Err(ModelError::BadRotation(i));
            }
        }
        let mut seen = vec![false; bodies.len()];
        for &j in &actuated {
            if j >= bodies.len() {
                return Err(ModelError::BadActuator(j));
            }
            if seen[j] {
                return Err(ModelError::DuplicateActuator(j));
            }
            seen[j] = true;
        }
        Ok(Self {
            bodies,
            gravity,
            actuated,
        })
    }

    pub fn n_bodies(&self) -> usize {
        self.bodies.len()
    }

    /// Number of control inputs.
    pub fn n_controls(&self) -> usize {
        self.actuated.len()
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.bodies[i].parent
    }

    pub fn gravity(&self) -> [f64; 3] {
        self.gravity
    }

    pub fn with_gravity(mut self, gravity: [f64; 3]) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn actuated(&self) -> &[usize] {
        &self.actuated
    }

    /// Actuation selector `B` (n×m) with `τ = B u`.
    pub fn actuation_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_bodies(), self.n_controls());
        for (k, &j) in self.actuated.iter().enumerate() {
            b[(j, k)] = 1.0;
        }
        b
    }

    /// `τ = B u` for any scalar type.
    pub fn apply_actuation<S: crate::Scalar>(&self, u: &[S]) -> Vec<S> {
        let mut tau = vec![S::zero(); self.n_bodies()];
        for (k, &j) in self.actuated.iter().enumerate() {
            tau[j] = u[k];
        }
        tau
    }

    /// `Bᵀ τ`
    pub fn project_to_controls(&self, tau: &[f64]) -> Vec<f64> {
        self.actuated.iter().map(|&j| tau[j]).collect()
    }

    /// Serializes to the line-oriented model file format.
    pub fn to_model_file(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "gravity={}", join(&self.gravity));
        let act: Vec<String> = self.actuated.iter().map(|j| (j + 1).to_string()).collect();
        let _ = writeln!(out, "actuated={}", act.join(","));
        for (i, b) in self.bodies.iter().enumerate() {
            let ic = b.inertia.inertia_com().m;
            let upper = [ic[0][0], ic[0][1], ic[0][2], ic[1][1], ic[1][2], ic[2][2]];
            let rot: Vec<f64> = b.offset.rot.m.iter().flatten().copied().collect();
            let _ = writeln!(
                out,
                "body {} parent={} axis={} mass={} com={} inertia={} offset_rot={} offset_trans={}",
                i + 1,
                b.parent.map_or(0, |p| p + 1),
                join(&b.axis),
                b.inertia.mass,
                join(&b.inertia.com().to_f64()),
                join(&upper),
                join(&rot),
                join(&b.offset.trans.to_f64()),
            );
        }
        out
    }
}

fn parse_list(line: usize, s: &str, len: Option<usize>) -> Result<Vec<f64>, ModelError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| ModelError::Parse {
        line,
        msg: format!("bad number list `{s}`: {e}"),
    })?;
    if let Some(n) = len {
        if vals.len() != n {
            return Err(ModelError::Parse {
                line,
                msg: format!("expected {n} values, got {}", vals.len()),
            });
        }
    }
    Ok(vals)
}

impl FromStr for RigidBodyModel {
    type Err = ModelError;

    /// Parses the model file format: one directive per line, `#` comments,
    /// `gravity=x,y,z`, `actuated=i,j,...` and `body` lines with 1-based
    /// indices (`parent=0` is the fixed base).
    fn from_str(text: &str) -> Result<Self, ModelError> {
        let mut gravity = DEFAULT_GRAVITY;
        let mut actuated = None;
        let mut bodies: Vec<Body> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ModelError::Parse { line, msg };
            if let Some(v) = content.strip_prefix("gravity=") {
                let g = parse_list(line, v, Some(3))?;
                gravity = [g[0], g[1], g[2]];
            } else if let Some(v) = content.strip_prefix("actuated=") {
                let idx: Result<Vec<usize>, _> = v
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| t.trim().parse::<usize>())
                    .collect();
                let idx = idx.map_err(|e| err(format!("bad joint list: {e}")))?;
                if idx.contains(&0) {
                    return Err(err("joint indices are 1-based".into()));
                }
                actuated = Some(idx.into_iter().map(|j| j - 1).collect::<Vec<_>>());
            } else if let Some(rest) = content.strip_prefix("body ") {
                let mut fields = rest.split_whitespace();
                let idx: usize = fields
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("missing body index".into()))?;
                if idx != bodies.len() + 1 {
                    return Err(err(format!(
                        "bodies must be listed in order; expected {}, got {idx}",
                        bodies.len() + 1
                    )));
                }
                let mut parent = None;
                let mut axis = None;
                let mut mass = None;
                let mut com = None;
                let mut inertia = None;
                let mut rot = None;
                let mut trans = None;
                for field in fields {
                    let (key, val) = field
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key=value, got `{field}`")))?;
                    match key {
                        "parent" => {
                            parent = Some(
                                val.parse::<usize>()
                                    .map_err(|e| err(format!("bad parent: {e}")))?,
                            )
                        }
                        "axis" => axis = Some(parse_list(line, val, Some(3))?),
                        "mass" => {
                            mass = Some(
                                val.parse::<f64>()
                                    .map_err(|e| err(format!("bad mass: {e}")))?,
                            )
                        }
                        "com" => com = Some(parse_list(line, val, Some(3))?),
                        "inertia" => inertia = Some(parse_list(line, val, Some(6))?),
                        "offset_rot" => rot = Some(parse_list(line, val, Some(9))?),
                        "offset_trans" => trans = Some(parse_list(line, val, Some(3))?),
                        other => return Err(err(format!("unknown key `{other}`"))),
                    }
                }
                let missing = |name: &str| err(format!("missing `{name}`"));
                let parent = parent.ok_or_else(|| missing("parent"))?;
                let axis = axis.ok_or_else(|| missing("axis"))?;
                let mass = mass.ok_or_else(|| missing("mass"))?;
                let com = com.ok_or_else(|| missing("com"))?;
                let ii = inertia.ok_or_else(|| missing("inertia"))?;
                let rot = rot.unwrap_or_else(|| vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
                let trans = trans.unwrap_or_else(|| vec![0.0; 3]);
                let ic = [[ii[0], ii[1], ii[2]], [ii[1], ii[3], ii[4]], [ii[2], ii[4], ii[5]]];
                bodies.push(Body {
                    parent: if parent == 0 { None } else { Some(parent - 1) },
                    axis: [axis[0], axis[1], axis[2]],
                    offset: SpatialTransform::from_f64(
                        [[rot[0], rot[1], rot[2]], [rot[3], rot[4], rot[5]], [rot[6], rot[7], rot[8]]],
                        [trans[0], trans[1], trans[2]],
                    ),
                    inertia: SpatialInertia::from_com(
                        mass,
                        Vec3::from_f64([com[0], com[1], com[2]]),
                        Mat3::from_f64(ic),
                    ),
                });
            } else {
                return Err(err(format!("unknown directive `{content}`")));
            }
        }
        if bodies.is_empty() {
            return Err(ModelError::TooFewLinks { min: 1, got: 0 });
        }
        let actuated = actuated.unwrap_or_else(|| (0..bodies.len()).collect());
        Self::new(bodies, gravity, actuated)
    }
}

/// Uniform thin rod hanging along −z from its joint.
fn rod_link(mass: f64, length: f64, radius: f64) -> SpatialInertia<f64> {
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    let axial = 0.5 * mass * radius * radius;
    SpatialInertia::from_com(
        mass,
        Vec3::from_f64([0.0, 0.0, -0.5 * length]),
        Mat3::from_f64([
            [transverse, 0.0, 0.0],
            [0.0, transverse, 0.0],
            [0.0, 0.0, axial],
        ]),
    )
}

fn serial_chain(axes: &[[f64; 3]], links: &[SpatialInertia<f64>], lengths: &[f64]) -> Vec<Body> {
    (0..axes.len())
        .map(|i| Body {
            parent: i.checked_sub(1),
            axis: axes[i],
            offset: if i == 0 {
                SpatialTransform::identity()
            } else {
                SpatialTransform::translation(Vec3::from_f64([0.0, 0.0, -lengths[i - 1]]))
            },
            inertia: links[i],
        })
        .collect()
}

/// Planar n-link pendubot: identical uniform rods rotating about y, hanging
/// along −z at q = 0, with every joint but the last actuated.
pub fn build_pendubot(n: usize, link_mass: f64, link_length: f64) -> Result<RigidBodyModel, ModelError> {
    if n < 2 {
        return Err(ModelError::TooFewLinks { min: 2, got: n });
    }
    let link = rod_link(link_mass, link_length, 0.0);
    let bodies = serial_chain(&vec![[0.0, 1.0, 0.0]; n], &vec![link; n], &vec![link_length; n]);
    RigidBodyModel::new(bodies, DEFAULT_GRAVITY, (0..n - 1).collect())
}

/// Single actuated point-mass pendulum about y (handy for closed-form checks).
pub fn build_point_pendulum(mass: f64, length: f64) -> RigidBodyModel {
    let inertia = SpatialInertia::from_com(
        mass,
        Vec3::from_f64([0.0, 0.0, -length]),
        Mat3::zeros(),
    );
    let bodies = serial_chain(&[[0.0, 1.0, 0.0]], &[inertia], &[length]);
    RigidBodyModel::new(bodies, DEFAULT_GRAVITY, vec![0]).expect("valid pendulum")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmParams {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    /// Link radius; gives every link a nonzero axial inertia.
    pub radius: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            masses: vec![1.0; 7],
            lengths: vec![0.3; 7],
            radius: 0.05,
        }
    }
}

/// Fully actuated 7-DoF serial arm with joint axes alternating between y and
/// x, so every joint can lift the links beyond it.
pub fn build_serial_arm7(params: &ArmParams) -> Result<RigidBodyModel, ModelError> {
    build_serial_arm(7, params)
}

/// Same construction as [`build_serial_arm7`] for an arbitrary number of links.
pub fn build_serial_arm(n: usize, params: &ArmParams) -> Result<RigidBodyModel, ModelError> {
    for len in [params.masses.len(), params.lengths.len()] {
        if len != n {
            return Err(ModelError::DimensionMismatch { expected: n, got: len });
        }
    }
    if n == 0 {
        return Err(ModelError::TooFewLinks { min: 1, got: 0 });
    }
    let axes: Vec<[f64; 3]> = (0..n)
        .map(|i| if i % 2 == 0 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] })
        .collect();
    let links: Vec<_> = params
        .masses
        .iter()
        .zip(&params.lengths)
        .map(|(&m, &l)| rod_link(m, l, params.radius))
        .collect();
    let bodies = serial_chain(&axes, &links, &params.lengths);
    RigidBodyModel::new(bodies, DEFAULT_GRAVITY, (0..n).collect())
}

/// Damping feedback `u = −d·Bᵀq̇`.
pub fn dissipative_controller(model: &RigidBodyModel, state: &JointState, gain: f64) -> Vec<f64> {
    model
        .actuated()
        .iter()
        .map(|&j| -gain * state.qd[j])
        .collect()
}

/// Euler–Maruyama samples of an Ornstein–Uhlenbeck process per control
/// channel, starting from zero: `u_{k+1} = u_k − θ u_k dt + σ √dt ξ_k`.
pub fn ou_control_sequence(
    horizon: usize,
    m: usize,
    theta: f64,
    sigma: f64,
    dt: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; m];
    let mut seq = Vec::with_capacity(horizon);
    let noise = sigma * dt.sqrt();
    for _ in 0..horizon {
        seq.push(u.clone());
        for ui in u.iter_mut() {
            let xi: f64 = rng.sample(StandardNormal);
            *ui += -theta * *ui * dt + noise * xi;
        }
    }
    seq
}

/// Downward rest configuration (q = 0) perturbed uniformly in
/// `[−spread, spread]` on every position and velocity.
pub fn sample_initial_state(model: &RigidBodyModel, spread: f64, seed: u64) -> JointState {
    let n = model.n_bodies();
    if spread == 0.0 {
        return JointState::rest(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| rng.random_range(-spread..=spread);
    let q = (0..n).map(&mut draw).collect();
    let qd = (0..n).map(&mut draw).collect();
    JointState { q, qd }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendubot_shape() {
        let m = build_pendubot(2, 1.0, 0.5).unwrap();
        assert_eq!(m.n_bodies(), 2);
        assert_eq!(m.actuated(), &[0]);
        let m = build_pendubot(7, 1.0, 0.5).unwrap();
        assert_eq!((m.n_bodies(), m.n_controls()), (7, 6));
        assert_eq!(
            build_pendubot(1, 1.0, 0.5).unwrap_err(),
            ModelError::TooFewLinks { min: 2, got: 1 }
        );
        // last joint torque is identically zero
        let tau = m.apply_actuation(&[1.0, -2.0, 3.0, 0.5, 7.0, 1e3]);
        assert_eq!(tau[6], 0.0);
        for i in 1..7 {
            assert_eq!(m.parent(i), Some(i - 1));
        }
        assert_eq!(m.parent(0), None);
    }

    #[test]
    fn arm_is_fully_actuated() {
        let m = build_serial_arm7(&ArmParams::default()).unwrap();
        assert_eq!((m.n_bodies(), m.n_controls()), (7, 7));
        assert_eq!(m.actuation_matrix(), DMatrix::identity(7, 7));
        let bad = ArmParams {
            masses: vec![1.0; 6],
            ..ArmParams::default()
        };
        assert_eq!(
            build_serial_arm7(&bad).unwrap_err(),
            ModelError::DimensionMismatch { expected: 7, got: 6 }
        );
    }

    #[test]
    fn dissipative_examples() {
        let m = build_pendubot(2, 1.0, 0.5).unwrap();
        let rest = JointState::rest(2);
        assert_eq!(dissipative_controller(&m, &rest, 0.1), vec![0.0]);
        let moving = JointState {
            q: vec![0.0, 0.0],
            qd: vec![1.0, 1.0],
        };
        assert_eq!(dissipative_controller(&m, &moving, 0.1), vec![-0.1]);
    }

    #[test]
    fn ou_sequence_properties() {
        assert!(ou_control_sequence(100, 3, 1.0, 0.0, 0.01, 7)
            .iter()
            .flatten()
            .all(|&u| u == 0.0));
        let a = ou_control_sequence(50, 2, 1.0, 0.5, 0.01, 11);
        let b = ou_control_sequence(50, 2, 1.0, 0.5, 0.01, 11);
        assert_eq!(a, b);
        assert_ne!(a, ou_control_sequence(50, 2, 1.0, 0.5, 0.01, 12));
        assert_eq!(a[0], vec![0.0, 0.0]);
    }

    #[test]
    fn ou_stationary_variance() {
        let (theta, sigma, dt) = (2.0, 0.8, 0.01);
        // channels are independent, so pooling them tightens the estimate
        let seq = ou_control_sequence(100_000, 16, theta, sigma, dt, 3);
        let burn = 2_000;
        let samples: Vec<f64> = seq[burn..].iter().flatten().copied().collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let expected = sigma * sigma / (2.0 * theta);
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn initial_state_sampling() {
        let m = build_pendubot(4, 1.0, 0.5).unwrap();
        assert_eq!(sample_initial_state(&m, 0.0, 5), JointState::rest(4));
        assert_eq!(sample_initial_state(&m, 0.3, 5), sample_initial_state(&m, 0.3, 5));
        for seed in 0..10_000 {
            let s = sample_initial_state(&m, 0.3, seed);
            assert!(s.q.iter().chain(&s.qd).all(|v| v.abs() <= 0.3));
        }
    }

    #[test]
    fn model_file_round_trip() {
        let m = build_serial_arm7(&ArmParams::default()).unwrap();
        let text = m.to_model_file();
        let back: RigidBodyModel = text.parse().unwrap();
        assert_eq!(back.n_bodies(), 7);
        assert_eq!(back.actuated(), m.actuated());
        for (a, b) in back.bodies().iter().zip(m.bodies()) {
            assert_eq!(a.parent, b.parent);
            assert_eq!(a.axis, b.axis);
            let (ia, ib) = (a.inertia.to_mat6(), b.inertia.to_mat6());
            for r in 0..6 {
                for c in 0..6 {
                    assert!((ia.m[r][c] - ib.m[r][c]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn model_file_errors() {
        let ok = "# pendulum\ngravity=0,0,-9.81\nbody 1 parent=0 axis=0,1,0 mass=1 com=0,0,-1 inertia=0,0,0,0,0,0\n";
        let m: RigidBodyModel = ok.parse().unwrap();
        assert_eq!(m.actuated(), &[0]);
        let cases = [
            ("body 1 parent=0 axis=0,2,0 mass=1 com=0,0,-1 inertia=0,0,0,0,0,0", ModelError::AxisNotUnit(0)),
            ("body 1 parent=1 axis=0,1,0 mass=1 com=0,0,-1 inertia=0,0,0,0,0,0", ModelError::BadParent { body: 0, parent: 0 }),
            ("body 1 parent=0 axis=0,1,0 mass=0 com=0,0,-1 inertia=0,0,0,0,0,0", ModelError::NonPositiveMass(0)),
            ("body 1 parent=0 axis=0,1,0 mass=1 com=0,0,-1 inertia=-1,0,0,0,0,0", ModelError::BadInertia(0)),
        ];
        for (text, expect) in cases {
            assert_eq!(text.parse::<RigidBodyModel>().unwrap_err(), expect);
        }
        assert!(matches!(
            "body 1 parent=0 axis=0,1 mass=1 com=0,0,-1 inertia=0,0,0,0,0,0".parse::<RigidBodyModel>(),
            Err(ModelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            "wobble=3".parse::<RigidBodyModel>(),
            Err(ModelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            format!("{ok}actuated=2").parse::<RigidBodyModel>(),
            Err(ModelError::BadActuator(1))
        ));
    }
}
