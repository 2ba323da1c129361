//! Control-affine discrete-time systems, box constraint sets, quadratic
//! stage costs, rollouts and numeric linearization.
//!
//! Dynamics have the form `x+ = f_a(x) + g_a(x) u` with the origin as a
//! cost-free fixed point. The built-in benchmarks (orbital rendezvous, a
//! generic linear system, a one-state contraction) live here as well.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmt::f64_repr;

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type InputMatrixFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Discrete-time control-affine system `x+ = f_a(x) + g_a(x) u`.
///
/// Immutable after construction; evaluation is a pure function of the
/// inputs, so a system may be shared freely across threads.
pub struct ControlAffineSystem {
    n: usize,
    m: usize,
    drift: Box<DriftFn>,
    input_matrix: Box<InputMatrixFn>,
}

impl ControlAffineSystem {
    /// Builds a system and checks that the drift vanishes at the origin
    /// (within 1e-12) and that both evaluators have consistent shapes.
    pub fn new<F, G>(n: usize, m: usize, drift: F, input_matrix: G) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let origin = DVector::zeros(n);
        let f0 = drift(&origin);
        if f0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "drift returns length {}, expected {}",
                f0.len(),
                n
            )));
        }
        if f0.amax() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "drift does not vanish at the origin (|f_a(0)|_max = {:e})",
                f0.amax()
            )));
        }
        let g0 = input_matrix(&origin);
        if g0.nrows() != n || g0.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "input matrix is {}x{}, expected {}x{}",
                g0.nrows(),
                g0.ncols(),
                n,
                m
            )));
        }
        Ok(Self {
            n,
            m,
            drift: Box::new(drift),
            input_matrix: Box::new(input_matrix),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_matrix)(x)
    }

    /// One step of the dynamics, `f_a(x) + g_a(x) u`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n || u.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "step called with x of length {} and u of length {} on a {}-state/{}-input system",
                x.len(),
                u.len(),
                self.n,
                self.m
            )));
        }
        let next = self.drift(x) + self.input_matrix(x) * u;
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(Error::EvaluationDomain {
                step: 0,
                detail: format!("non-finite successor state from x = {:?}", x.as_slice()),
            })
        }
    }
}

impl std::fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

/// Axis-aligned box with the origin strictly in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(
                "box bounds have different lengths".into(),
            ));
        }
        for j in 0..lower.len() {
            if !(lower[j] < 0.0 && 0.0 < upper[j]) {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {} must satisfy lower < 0 < upper, got [{}, {}]",
                    j, lower[j], upper[j]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half, half]^d`.
    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, -half),
            DVector::from_element(dim, half),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|j| self.lower[j] <= x[j] && x[j] <= self.upper[j])
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| x[j].clamp(self.lower[j], self.upper[j]))
    }

    /// Largest componentwise excess over the box (0 when inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// True when `self` is contained in `other`, componentwise.
    pub fn subset_of(&self, other: &BoxSet) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|j| other.lower[j] <= self.lower[j] && self.upper[j] <= other.upper[j])
    }
}

/// Quadratic stage cost `l(x, u) = x'Qx + u'Ru` with symmetric
/// positive-definite `Q` and `R`.
#[derive(Debug, Clone)]
pub struct StageCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_eig_min: f64,
    q_eig_max: f64,
}

impl StageCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let q_eig = check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        Ok(Self {
            q,
            r,
            q_eig_min: q_eig.0,
            q_eig_max: q_eig.1,
        })
    }

    pub fn state_weight(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn input_weight(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `l(x, u) = x'Qx + u'Ru`.
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    /// `l*(x) = min_u l(x, u) = x'Qx` (the minimum over inputs is at u = 0).
    pub fn lstar(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)]
    }

    pub fn grad_x(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * &self.q * x
    }

    pub fn grad_u(&self, u: &DVector<f64>) -> DVector<f64> {
        2.0 * &self.r * u
    }

    /// Lower K-bound of the stage cost: `alpha_lower(s) = lambda_min(Q) s^2`.
    pub fn alpha_lower(&self, s: f64) -> f64 {
        self.q_eig_min * s * s
    }

    /// Upper K-bound of the stage cost: `alpha_upper(s) = lambda_max(Q) s^2`.
    pub fn alpha_upper(&self, s: f64) -> f64 {
        self.q_eig_max * s * s
    }

    pub fn q_eig_min(&self) -> f64 {
        self.q_eig_min
    }

    pub fn q_eig_max(&self) -> f64 {
        self.q_eig_max
    }
}

fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<(f64, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!("{name} must be square")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * (1.0 + m.amax()) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be symmetric (asymmetry {asym:e})"
        )));
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let min = eig.min();
    let max = eig.max();
    if min <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive-definite (min eigenvalue {min:e})"
        )));
    }
    Ok((min, max))
}

/// State feedback policy used in rollouts and closed loops.
pub trait Policy {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> Policy for F
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self(x))
    }
}

/// Linear state feedback `u = -K x`.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    pub gain: DMatrix<f64>,
}

impl Policy for LinearFeedback {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-(&self.gain * x))
    }
}

/// Simulated state/input/cost record. `states` has one more entry than
/// `inputs` and `stage_costs`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    /// CSV export with header `k,x1..xn,u1..um,l`; the final row carries the
    /// terminal state with empty input/cost fields.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        write_csv_header(w, n, m, &[])?;
        for k in 0..self.states.len() {
            write_csv_row(
                w,
                k,
                &self.states[k],
                self.inputs.get(k),
                m,
                self.stage_costs.get(k),
                &[],
            )?;
        }
        Ok(())
    }
}

pub(crate) fn write_csv_header<W: Write>(
    w: &mut W,
    n: usize,
    m: usize,
    extra: &[&str],
) -> Result<()> {
    write!(w, "k")?;
    for j in 1..=n {
        write!(w, ",x{j}")?;
    }
    for j in 1..=m {
        write!(w, ",u{j}")?;
    }
    write!(w, ",l")?;
    for name in extra {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub(crate) fn write_csv_row<W: Write>(
    w: &mut W,
    k: usize,
    x: &DVector<f64>,
    u: Option<&DVector<f64>>,
    input_width: usize,
    l: Option<&f64>,
    extra: &[Option<f64>],
) -> Result<()> {
    write!(w, "{k}")?;
    for v in x.iter() {
        write!(w, ",{}", f64_repr(*v))?;
    }
    match u {
        Some(u) => {
            for v in u.iter() {
                write!(w, ",{}", f64_repr(*v))?;
            }
        }
        None => {
            for _ in 0..input_width {
                write!(w, ",")?;
            }
        }
    }
    match l {
        Some(l) => write!(w, ",{}", f64_repr(*l))?,
        None => write!(w, ",")?,
    }
    for v in extra {
        match v {
            Some(v) => write!(w, ",{}", f64_repr(*v))?,
            None => write!(w, ",")?,
        }
    }
    writeln!(w)?;
    Ok(())
}

/// Rollout outcome: the trajectory plus the first index (if any) at which
/// the state or the input left its box. Leaving a box is reported rather
/// than fatal so that certificate estimation can observe violations.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub first_state_exit: Option<usize>,
    pub first_input_exit: Option<usize>,
}

impl Rollout {
    pub fn stayed_inside(&self) -> bool {
        self.first_state_exit.is_none() && self.first_input_exit.is_none()
    }
}

/// Simulates `steps` closed-loop steps of `policy` from `x0`.
pub fn rollout<P: Policy + ?Sized>(
    sys: &ControlAffineSystem,
    cost: &StageCost,
    policy: &P,
    x0: &DVector<f64>,
    steps: usize,
    state_box: &BoxSet,
    input_box: &BoxSet,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut stage_costs = Vec::with_capacity(steps);
    let mut first_state_exit = None;
    let mut first_input_exit = None;

    let mut x = x0.clone();
    for k in 0..steps {
        if first_state_exit.is_none() && !state_box.contains(&x) {
            first_state_exit = Some(k);
        }
        let u = policy.act(&x)?;
        if first_input_exit.is_none() && !input_box.contains(&u) {
            first_input_exit = Some(k);
        }
        stage_costs.push(cost.eval(&x, &u));
        let next = sys.step(&x, &u).map_err(|e| match e {
            Error::EvaluationDomain { detail, .. } => Error::EvaluationDomain { step: k, detail },
            other => other,
        })?;
        states.push(x);
        inputs.push(u);
        x = next;
    }
    if first_state_exit.is_none() && !state_box.contains(&x) {
        first_state_exit = Some(steps);
    }
    states.push(x);

    Ok(Rollout {
        trajectory: Trajectory {
            states,
            inputs,
            stage_costs,
        },
        first_state_exit,
        first_input_exit,
    })
}

/// Central-difference Jacobians of `f(x, u) = f_a(x) + g_a(x) u` with
/// relative-scaled step `h = 1e-5 * max(1, |coordinate|)`.
pub fn linearize(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (sys.step(&xp, u)? - sys.step(&xm, u)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    for j in 0..m {
        let h = 1e-5 * u[j].abs().max(1.0);
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        let col = (sys.step(x, &up)? - sys.step(x, &um)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// A system together with its constraint boxes and stage cost.
#[derive(Debug)]
pub struct Benchmark {
    pub system: ControlAffineSystem,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    pub cost: StageCost,
}

/// Two-dimensional orbital rendezvous benchmark, Euler-discretized with
/// step `dt`. State (X, Y, X_t, Y_t): in-plane position of the spacecraft
/// and its time derivative. Defaults: X = [-0.5, 0.5]^4, U = [-2, 2]^2,
/// Q = diag(5,5,5,5), R = diag(1,1).
pub fn rendezvous_system(dt: f64) -> Result<Benchmark> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let drift = move |x: &DVector<f64>| -> DVector<f64> {
        let (px, py, vx, vy) = (x[0], x[1], x[2], x[3]);
        let r = ((1.0 + px).powi(2) + py * py).sqrt();
        // The r = 0 singularity (X = -1, far outside the state box) yields
        // non-finite values that `step` turns into an evaluation-domain error.
        let inv_r3 = 1.0 / (r * r * r);
        DVector::from_vec(vec![
            px + dt * vx,
            py + dt * vy,
            vx + dt * (2.0 * vy - (1.0 + px) * (inv_r3 - 1.0)),
            vy + dt * (-2.0 * vx - py * (inv_r3 - 1.0)),
        ])
    };
    let input_matrix = move |_x: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, dt, 0.0, 0.0, dt])
    };
    let system = ControlAffineSystem::new(4, 2, drift, input_matrix)?;
    Ok(Benchmark {
        system,
        state_box: BoxSet::symmetric(4, 0.5)?,
        input_box: BoxSet::symmetric(2, 2.0)?,
        cost: StageCost::new(
            DMatrix::from_diagonal(&DVector::from_element(4, 5.0)),
            DMatrix::identity(2, 2),
        )?,
    })
}

/// Linear system `x+ = Ax + Bu` as a control-affine pair.
pub fn linear_system(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<ControlAffineSystem> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(
            "A must be n x n and B must be n x m".into(),
        ));
    }
    ControlAffineSystem::new(
        n,
        m,
        move |x: &DVector<f64>| &a * x,
        move |_x: &DVector<f64>| b.clone(),
    )
}

/// One-state contraction benchmark `x+ = a x + b u` with unit cost weights.
/// Defaults: X = [-1, 1], U = [-1, 1], q = r = 1.
pub fn toy1d_system(a: f64, b: f64) -> Result<Benchmark> {
    let system = ControlAffineSystem::new(
        1,
        1,
        move |x: &DVector<f64>| DVector::from_vec(vec![a * x[0]]),
        move |_x: &DVector<f64>| DMatrix::from_element(1, 1, b),
    )?;
    Ok(Benchmark {
        system,
        state_box: BoxSet::symmetric(1, 1.0)?,
        input_box: BoxSet::symmetric(1, 1.0)?,
        cost: StageCost::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?,
    })
}
