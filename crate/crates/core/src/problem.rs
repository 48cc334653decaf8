//! Problem description files: one `key = value` per line, `#` starts a
//! comment. Lists are comma separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ddp::{
    dissipative_controls, swing_up_cost, upright_state, Contraction, Dynamics, LinearDynamics, Linearization, Mode,
    OcpProblem, QuadraticCost, RobotDynamics, SolveError, SolveOptions, SwingUpWeights,
};
use crate::derivs::Backend;
use crate::rbmodel::{
    build_pendubot, build_serial_arm7, ou_control_sequence, sample_initial_state, ArmParams, ModelError,
    RigidBodyModel,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Pendubot,
    Arm7,
    Linear,
    File,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Pendubot => "pendubot",
            ModelKind::Arm7 => "arm7",
            ModelKind::Linear => "linear",
            ModelKind::File => "file",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pendubot" => Ok(ModelKind::Pendubot),
            "arm7" => Ok(ModelKind::Arm7),
            "linear" => Ok(ModelKind::Linear),
            "file" => Ok(ModelKind::File),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// How the initial control sequence is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Dissipative,
    Ou,
    Zero,
}

impl InitKind {
    fn name(self) -> &'static str {
        match self {
            InitKind::Dissipative => "dissipative",
            InitKind::Ou => "ou",
            InitKind::Zero => "zero",
        }
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dissipative" => Ok(InitKind::Dissipative),
            "ou" => Ok(InitKind::Ou),
            "zero" => Ok(InitKind::Zero),
            other => Err(format!("unknown init `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub model: ModelKind,
    /// Pendubot link count.
    pub links: usize,
    pub link_mass: f64,
    pub link_length: f64,
    pub arm: ArmParams,
    pub model_file: Option<PathBuf>,
    /// Row-major `A` and `B` for the linear model.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub x0: Option<Vec<f64>>,
    pub x_ref: Option<Vec<f64>>,
    pub horizon: usize,
    pub h: f64,
    pub weights: SwingUpWeights,
    pub seed: u64,
    pub mode: Mode,
    pub backend: Backend,
    pub init: InitKind,
    pub damping: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub state_spread: f64,
    pub solver: SolveOptions,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Pendubot,
            links: 2,
            link_mass: 1.0,
            link_length: 0.5,
            arm: ArmParams::default(),
            model_file: None,
            a: Vec::new(),
            b: Vec::new(),
            x0: None,
            x_ref: None,
            horizon: 500,
            h: 0.01,
            weights: SwingUpWeights::default(),
            seed: 0,
            mode: Mode::Ddp,
            backend: Backend::ModRnea2,
            init: InitKind::Dissipative,
            damping: 0.1,
            ou_theta: 1.0,
            ou_sigma: 0.1,
            state_spread: 0.0,
            solver: SolveOptions::default(),
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|t| parse_num(t.trim())).collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ProblemConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "model" => self.model = v.parse()?,
            "links" => self.links = parse_num(v)?,
            "link_mass" => self.link_mass = parse_num(v)?,
            "link_length" => self.link_length = parse_num(v)?,
            "arm_masses" => self.arm.masses = parse_list(v)?,
            "arm_lengths" => self.arm.lengths = parse_list(v)?,
            "arm_radius" => self.arm.radius = parse_num(v)?,
            "model_file" => self.model_file = Some(PathBuf::from(v)),
            "a" => self.a = parse_list(v)?,
            "b" => self.b = parse_list(v)?,
            "x0" => self.x0 = Some(parse_list(v)?),
            "x_ref" => self.x_ref = Some(parse_list(v)?),
            "horizon" => self.horizon = parse_num(v)?,
            "h" => self.h = parse_num(v)?,
            "q_weight" => self.weights.q = parse_num(v)?,
            "qd_weight" => self.weights.qd = parse_num(v)?,
            "r_weight" => self.weights.r = parse_num(v)?,
            "terminal_weight" => self.weights.terminal = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "mode" => self.mode = v.parse()?,
            "backend" => self.backend = v.parse()?,
            "init" => self.init = v.parse()?,
            "damping" => self.damping = parse_num(v)?,
            "ou_theta" => self.ou_theta = parse_num(v)?,
            "ou_sigma" => self.ou_sigma = parse_num(v)?,
            "state_spread" => self.state_spread = parse_num(v)?,
            "max_iter" => self.solver.max_iter = parse_num(v)?,
            "tol" => self.solver.tol = parse_num(v)?,
            "grad_tol" => self.solver.grad_tol = parse_num(v)?,
            "rho_min" => self.solver.rho_min = parse_num(v)?,
            "rho_max" => self.solver.rho_max = parse_num(v)?,
            "rho_increase" => self.solver.rho_increase = parse_num(v)?,
            "rho_decrease" => self.solver.rho_decrease = parse_num(v)?,
            "line_search_halvings" => self.solver.max_halvings = parse_num(v)?,
            "armijo" => {
                self.solver.armijo = match v {
                    "off" => None,
                    _ => Some(parse_num(v)?),
                }
            }
            "gauss_newton_fallback" => self.solver.gauss_newton_fallback = parse_bool(v)?,
            "parallel" => self.solver.parallel = parse_bool(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Reads a config file; a relative `model_file` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ProblemConfig = text.parse()?;
        if let (Some(file), Some(dir)) = (&cfg.model_file, path.parent()) {
            if file.is_relative() {
                cfg.model_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("model", self.model.name().into());
        kv("links", self.links.to_string());
        kv("link_mass", format!("{:?}", self.link_mass));
        kv("link_length", format!("{:?}", self.link_length));
        kv("arm_masses", join(&self.arm.masses));
        kv("arm_lengths", join(&self.arm.lengths));
        kv("arm_radius", format!("{:?}", self.arm.radius));
        if let Some(f) = &self.model_file {
            kv("model_file", f.display().to_string());
        }
        if !self.a.is_empty() {
            kv("a", join(&self.a));
        }
        if !self.b.is_empty() {
            kv("b", join(&self.b));
        }
        if let Some(x0) = &self.x0 {
            kv("x0", join(x0));
        }
        if let Some(x) = &self.x_ref {
            kv("x_ref", join(x));
        }
        kv("horizon", self.horizon.to_string());
        kv("h", format!("{:?}", self.h));
        kv("q_weight", format!("{:?}", self.weights.q));
        kv("qd_weight", format!("{:?}", self.weights.qd));
        kv("r_weight", format!("{:?}", self.weights.r));
        kv("terminal_weight", format!("{:?}", self.weights.terminal));
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.to_string());
        kv("backend", self.backend.to_string());
        kv("init", self.init.name().into());
        kv("damping", format!("{:?}", self.damping));
        kv("ou_theta", format!("{:?}", self.ou_theta));
        kv("ou_sigma", format!("{:?}", self.ou_sigma));
        kv("state_spread", format!("{:?}", self.state_spread));
        let s = &self.solver;
        kv("max_iter", s.max_iter.to_string());
        kv("tol", format!("{:?}", s.tol));
        kv("grad_tol", format!("{:?}", s.grad_tol));
        kv("rho_min", format!("{:?}", s.rho_min));
        kv("rho_max", format!("{:?}", s.rho_max));
        kv("rho_increase", format!("{:?}", s.rho_increase));
        kv("rho_decrease", format!("{:?}", s.rho_decrease));
        kv("line_search_halvings", s.max_halvings.to_string());
        kv("armijo", s.armijo.map_or("off".into(), |c| format!("{c:?}")));
        kv("gauss_newton_fallback", s.gauss_newton_fallback.to_string());
        kv("parallel", s.parallel.to_string());
        out
    }

    pub fn robot_model(&self) -> Result<Option<RigidBodyModel>, ConfigError> {
        Ok(match self.model {
            ModelKind::Pendubot => Some(build_pendubot(self.links, self.link_mass, self.link_length)?),
            ModelKind::Arm7 => Some(build_serial_arm7(&self.arm)?),
            ModelKind::File => {
                let path = self
                    .model_file
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("model = file needs model_file".into()))?;
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(text.parse()?)
            }
            ModelKind::Linear => None,
        })
    }

    /// Problem for this config, with the initial state drawn from `seed`
    /// when `state_spread > 0`.
    pub fn build(&self, seed: u64) -> Result<OcpProblem<SystemDynamics>, ConfigError> {
        let invalid = |msg: String| ConfigError::Invalid(msg);
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1".into()));
        }
        if self.h.is_nan() || self.h <= 0.0 {
            return Err(invalid("h must be positive".into()));
        }
        let (dynamics, default_x0, default_ref, cost_fn): (SystemDynamics, DVector<f64>, DVector<f64>, _) =
            match self.robot_model()? {
                Some(model) => {
                    let n = model.n_bodies();
                    let x0 = if self.state_spread > 0.0 {
                        DVector::from_vec(sample_initial_state(&model, self.state_spread, seed).to_state())
                    } else {
                        DVector::zeros(2 * n)
                    };
                    let cost = swing_up_cost(n, model.n_controls(), &self.weights);
                    let dyn_ = SystemDynamics::Robot(RobotDynamics {
                        model,
                        h: self.h,
                        backend: self.backend,
                    });
                    (dyn_, x0, upright_state(n), cost)
                }
                None => {
                    let nx = (self.a.len() as f64).sqrt().round() as usize;
                    if nx == 0 || nx * nx != self.a.len() || self.b.is_empty() || !self.b.len().is_multiple_of(nx) {
                        return Err(invalid(format!(
                            "linear model needs a square `a` and a `b` with {nx} rows (got {} and {} values)",
                            self.a.len(),
                            self.b.len()
                        )));
                    }
                    let m = self.b.len() / nx;
                    let a = DMatrix::from_row_slice(nx, nx, &self.a);
                    let b = DMatrix::from_row_slice(nx, m, &self.b);
                    let w = &self.weights;
                    let cost = QuadraticCost {
                        q: DMatrix::identity(nx, nx) * w.q,
                        r: DMatrix::identity(m, m) * w.r,
                        qf: DMatrix::identity(nx, nx) * w.terminal,
                        x_ref: DVector::zeros(nx),
                    };
                    let zero = DVector::zeros(nx);
                    (SystemDynamics::Linear(LinearDynamics::new(a, b)?), zero.clone(), zero, cost)
                }
            };
        let nx = dynamics.state_dim();
        let pick = |v: &Option<Vec<f64>>, default: DVector<f64>, what: &str| match v {
            Some(v) if v.len() == nx => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(invalid(format!("{what} has {} values, expected {nx}", v.len()))),
            None => Ok(default),
        };
        let mut cost = cost_fn;
        cost.x_ref = pick(&self.x_ref, default_ref, "x_ref")?;
        let x0 = pick(&self.x0, default_x0, "x0")?;
        let problem = OcpProblem {
            dynamics,
            horizon: self.horizon,
            cost,
            x0,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Initial control sequence for `problem`; OU noise is drawn from `seed`.
    pub fn initial_controls(
        &self,
        problem: &OcpProblem<SystemDynamics>,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>, ConfigError> {
        let m = problem.dynamics.control_dim();
        Ok(match (self.init, &problem.dynamics) {
            (InitKind::Dissipative, SystemDynamics::Robot(r)) => {
                dissipative_controls(&r.model, &problem.x0, self.horizon, self.h, self.damping)?
            }
            (InitKind::Ou, _) => ou_control_sequence(self.horizon, m, self.ou_theta, self.ou_sigma, self.h, seed)
                .into_iter()
                .map(DVector::from_vec)
                .collect(),
            // no velocities to damp in a generic linear system
            (InitKind::Dissipative, SystemDynamics::Linear(_)) | (InitKind::Zero, _) => {
                vec![DVector::zeros(m); self.horizon]
            }
        })
    }
}

impl FromStr for ProblemConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ProblemConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Line { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }
}

/// Dynamics selectable from a config file.
#[derive(Clone, Debug)]
pub enum SystemDynamics {
    Robot(RobotDynamics),
    Linear(LinearDynamics),
}

impl SystemDynamics {
    pub fn robot(&self) -> Option<&RobotDynamics> {
        match self {
            SystemDynamics::Robot(r) => Some(r),
            SystemDynamics::Linear(_) => None,
        }
    }

    pub fn set_backend(&mut self, backend: Backend) {
        if let SystemDynamics::Robot(r) = self {
            r.backend = backend;
        }
    }
}

impl Dynamics for SystemDynamics {
    fn state_dim(&self) -> usize {
        match self {
            SystemDynamics::Robot(d) => d.state_dim(),
            SystemDynamics::Linear(d) => d.state_dim(),
        }
    }

    fn control_dim(&self) -> usize {
        match self {
            SystemDynamics::Robot(d) => d.control_dim(),
            SystemDynamics::Linear(d) => d.control_dim(),
        }
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, SolveError> {
        match self {
            SystemDynamics::Robot(d) => d.step(x, u),
            SystemDynamics::Linear(d) => d.step(x, u),
        }
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<Linearization, SolveError> {
        match self {
            SystemDynamics::Robot(d) => d.linearize(x, u),
            SystemDynamics::Linear(d) => d.linearize(x, u),
        }
    }

    fn contract(&self, x: &[f64], u: &[f64], lin: &Linearization, lambda: &[f64]) -> Result<Contraction, SolveError> {
        match self {
            SystemDynamics::Robot(d) => d.contract(x, u, lin, lambda),
            SystemDynamics::Linear(d) => d.contract(x, u, lin, lambda),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ProblemConfig::default();
        let back: ProblemConfig = cfg.to_config_string().parse().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parses_keys_and_comments() {
        let cfg: ProblemConfig = "# swing-up\nmodel = arm7\nhorizon=120 # short\nmode = ilqr\nbackend = rnea1\narmijo = 0.1\n\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.model, ModelKind::Arm7);
        assert_eq!(cfg.horizon, 120);
        assert_eq!(cfg.mode, Mode::Ilqr);
        assert_eq!(cfg.backend, Backend::Rnea1);
        assert_eq!(cfg.solver.armijo, Some(0.1));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let e = "horizon = 10\nnot a pair\n".parse::<ProblemConfig>().unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 2, .. }));
        let e = "horizon = ten".parse::<ProblemConfig>().unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 1, .. }));
        assert!("colour = red".parse::<ProblemConfig>().is_err());
        assert!("mode = newton".parse::<ProblemConfig>().is_err());
    }

    #[test]
    fn builds_linear_problem() {
        let cfg: ProblemConfig = "model = linear\na = 1,0.1,0,1\nb = 0,0.1\nhorizon = 4\nx0 = 1,0".parse().unwrap();
        let p = cfg.build(0).unwrap();
        assert_eq!((p.dynamics.state_dim(), p.dynamics.control_dim()), (2, 1));
        assert_eq!(p.x0.as_slice(), &[1.0, 0.0]);
        assert_eq!(cfg.initial_controls(&p, 0).unwrap().len(), 4);
        let bad: ProblemConfig = "model = linear\na = 1,2,3\nb = 1".parse().unwrap();
        assert!(matches!(bad.build(0), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn builds_swing_up_with_upright_target() {
        let cfg: ProblemConfig = "links = 3\nhorizon = 10".parse().unwrap();
        let p = cfg.build(0).unwrap();
        assert_eq!(p.cost.x_ref, upright_state(3));
        assert_eq!(p.x0, DVector::zeros(6));
        let us = cfg.initial_controls(&p, 0).unwrap();
        assert!(us.iter().all(|u| u.len() == 2 && u.amax() == 0.0));
    }

    #[test]
    fn spread_draws_reproducible_initial_states() {
        let cfg: ProblemConfig = "model = arm7\nstate_spread = 0.1\nhorizon = 5".parse().unwrap();
        let a = cfg.build(4).unwrap();
        let b = cfg.build(4).unwrap();
        let c = cfg.build(5).unwrap();
        assert_eq!(a.x0, b.x0);
        assert_ne!(a.x0, c.x0);
        assert!(a.x0.amax() <= 0.1);
    }

    #[test]
    fn model_file_is_read() {
        let dir = std::env::temp_dir().join(format!("tfddp-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let model = build_pendubot(3, 1.0, 0.5).unwrap();
        std::fs::write(dir.join("chain.model"), model.to_model_file()).unwrap();
        std::fs::write(dir.join("p.cfg"), "model = file\nmodel_file = chain.model\nhorizon = 3\n").unwrap();
        let cfg = ProblemConfig::load(&dir.join("p.cfg")).unwrap();
        let p = cfg.build(0).unwrap();
        assert_eq!(p.dynamics.state_dim(), 6);
        assert!(matches!(
            ProblemConfig::load(&dir.join("missing.cfg")),
            Err(ConfigError::Io { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
