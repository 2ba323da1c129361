//! Stabilizing value iteration with approximation errors.
//!
//! The iteration starts from a stabilizing policy (usually the LQR of the
//! origin linearization), fits an initial cost, then alternates greedy
//! policy solves with least-squares cost updates. Every fit is only a
//! relaxed solution; the per-iteration residuals on an independent test
//! sample set give the error margins c_i whose maximum c drives all
//! downstream certificates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::approximator::{lstsq_fit, FitReport, MonomialBasis, ValueApproximant};
use crate::error::{Error, Result};
use crate::fmt::f64_repr;
use crate::system::{BoxSet, ControlAffineSystem, LinearFeedback, Policy, StageCost};

/// LQR initialization: gain K (u = -Kx) and the associated cost matrix P.
#[derive(Debug, Clone)]
pub struct LqrInit {
    pub gain: DMatrix<f64>,
    pub cost_matrix: DMatrix<f64>,
}

impl LqrInit {
    pub fn policy(&self) -> LinearFeedback {
        LinearFeedback {
            gain: self.gain.clone(),
        }
    }
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// `P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA` from `P0 = Q` until the
/// max-norm change drops below 1e-12 (at most 1e5 iterations). The
/// closed-loop spectral radius and the DARE residual are verified before
/// the result is returned.
pub fn dare_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrInit> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch("DARE operand shapes".into()));
    }
    let m = b.ncols();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch("R must be m x m".into()));
    }

    let riccati_map = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let btpb = r + b.transpose() * p * b;
        let chol = btpb.clone().cholesky().ok_or_else(|| {
            Error::NotStabilizable("R + B'PB lost positive definiteness".into())
        })?;
        let gain = chol.solve(&(b.transpose() * p * a));
        Ok(q + a.transpose() * p * a - a.transpose() * p * b * gain)
    };

    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..100_000 {
        let next = riccati_map(&p)?;
        let change = (&next - &p).amax();
        p = next;
        if change < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable(
            "Riccati fixed-point iteration did not converge".into(),
        ));
    }

    let residual = (&riccati_map(&p)? - &p).amax();
    if residual > 1e-9 {
        return Err(Error::NotStabilizable(format!(
            "DARE residual {residual:e} exceeds 1e-9"
        )));
    }

    let chol = (r + b.transpose() * &p * b)
        .cholesky()
        .ok_or_else(|| Error::NotStabilizable("R + B'PB not positive definite".into()))?;
    let gain = chol.solve(&(b.transpose() * &p * a));

    let closed_loop = a - b * &gain;
    let rho = closed_loop
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if rho >= 1.0 {
        return Err(Error::NotStabilizable(format!(
            "closed-loop spectral radius {rho} >= 1"
        )));
    }

    Ok(LqrInit {
        gain,
        cost_matrix: p,
    })
}

/// Uniform i.i.d. samples over a box, drawn coordinate by coordinate.
pub fn sample_box(set: &BoxSet, count: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            DVector::from_fn(set.dim(), |j, _| {
                rng.random_range(set.lower()[j]..set.upper()[j])
            })
        })
        .collect()
}

/// The training and test sample sets of a configuration, in the exact
/// draw order used by [`run_avi`]. Downstream stages (controllability
/// estimation, constraint checks) re-derive the same sets from the seed.
pub fn draw_sample_sets(config: &AviConfig) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train = sample_box(&config.training_box, config.train_samples, &mut rng);
    let test = sample_box(&config.training_box, config.test_samples, &mut rng);
    (train, test)
}

/// Feature matrix with one basis-evaluation row per sample.
pub fn basis_features(basis: &MonomialBasis, samples: &[DVector<f64>]) -> DMatrix<f64> {
    let mut features = DMatrix::zeros(samples.len(), basis.len());
    for (s, x) in samples.iter().enumerate() {
        features.row_mut(s).copy_from(&basis.eval(x).transpose());
    }
    features
}

const GREEDY_DAMPING: f64 = 0.5;
const GREEDY_STEP_TOL: f64 = 1e-10;
const GREEDY_MAX_ITER: usize = 200;
const GREEDY_RESIDUAL_TOL: f64 = 1e-8;
const GREEDY_GRID_PER_AXIS: usize = 9;

/// Solves the greedy input `arginf_u { l(x,u) + V(f_a(x) + g_a(x) u) }`
/// through its first-order condition `2Ru + g_a(x)' grad V(...) = 0`:
/// a damped fixed point from u = 0, and on non-convergence a coarse grid
/// over the input box refined by the same fixed-point map.
pub fn greedy_policy_solve(
    value: &ValueApproximant,
    sys: &ControlAffineSystem,
    cost: &StageCost,
    input_box: &BoxSet,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("greedy solve at non-finite state".into()));
    }
    let drift = sys.drift(x);
    let g = sys.input_matrix(x);
    let gt = g.transpose();
    let r_chol = cost
        .input_weight()
        .clone()
        .cholesky()
        .expect("R is positive-definite by StageCost construction");

    // -1/2 R^-1 g' grad V(f_a + g u): the first-order condition as a map.
    let target = |u: &DVector<f64>| -> DVector<f64> {
        let z = &drift + &g * u;
        -0.5 * r_chol.solve(&(&gt * value.gradient(&z)))
    };
    let residual = |u: &DVector<f64>| -> f64 {
        let z = &drift + &g * u;
        (cost.grad_u(u) + &gt * value.gradient(&z)).norm()
    };
    let damped = |start: DVector<f64>| -> DVector<f64> {
        let mut u = start;
        for _ in 0..GREEDY_MAX_ITER {
            let u_new = (1.0 - GREEDY_DAMPING) * &u + GREEDY_DAMPING * target(&u);
            if !u_new.iter().all(|v| v.is_finite()) {
                return u;
            }
            let step = (&u_new - &u).norm();
            u = u_new;
            if step < GREEDY_STEP_TOL {
                break;
            }
        }
        u
    };

    let u = damped(DVector::zeros(sys.input_dim()));
    let res = residual(&u);
    if res.is_finite() && res < GREEDY_RESIDUAL_TOL {
        return Ok(u);
    }

    // Grid fallback: best coarse grid point over U, refined by the map.
    let objective = |u: &DVector<f64>| -> f64 {
        let z = &drift + &g * u;
        cost.eval(x, u) + value.eval(&z)
    };
    let m = sys.input_dim();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut index = vec![0usize; m];
    loop {
        let u = DVector::from_fn(m, |j, _| {
            let t = index[j] as f64 / (GREEDY_GRID_PER_AXIS - 1) as f64;
            input_box.lower()[j] + t * (input_box.upper()[j] - input_box.lower()[j])
        });
        let val = objective(&u);
        if val.is_finite() && best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, u));
        }
        // Odometer over the grid axes.
        let mut axis = 0;
        loop {
            if axis == m {
                break;
            }
            index[axis] += 1;
            if index[axis] < GREEDY_GRID_PER_AXIS {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        if axis == m {
            break;
        }
    }
    let start = best
        .map(|(_, u)| u)
        .ok_or_else(|| Error::PolicySolve {
            state: x.iter().copied().collect(),
            residual: res,
        })?;
    let u = damped(start);
    let res = residual(&u);
    if res.is_finite() && res < GREEDY_RESIDUAL_TOL {
        Ok(u)
    } else {
        Err(Error::PolicySolve {
            state: x.iter().copied().collect(),
            residual: res,
        })
    }
}

/// Greedy policy induced by a fixed value approximant.
pub struct GreedyPolicy<'a> {
    pub value: &'a ValueApproximant,
    pub sys: &'a ControlAffineSystem,
    pub cost: &'a StageCost,
    pub input_box: &'a BoxSet,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        greedy_policy_solve(self.value, self.sys, self.cost, self.input_box, x)
    }
}

/// Residual-margin estimate on a sample set: the uniform residual bound
/// and the ratio margin c_i = sup |eps(x)| / l*(x), with samples below
/// the exclusion radius reported rather than silently dropped.
#[derive(Debug, Clone)]
pub struct MarginEstimate {
    pub sup_eps: f64,
    pub c: f64,
    pub excluded: usize,
    /// Residual per sample, in sample order.
    pub eps: Vec<f64>,
}

/// Evaluates `eps(x) = V_next(x) - l(x, mu(x)) - V_cur(f(x, mu(x)))` per
/// sample and reduces it to (sup |eps|, c_i). The initial-cost form of the
/// residual is the same expression with `V_next = V_cur = V_0` and
/// `mu = mu_{-1}`.
pub fn residual_margin<P: Policy + ?Sized>(
    value_next: &ValueApproximant,
    value_cur: &ValueApproximant,
    policy: &P,
    sys: &ControlAffineSystem,
    cost: &StageCost,
    samples: &[DVector<f64>],
    delta_lstar: f64,
) -> Result<MarginEstimate> {
    if delta_lstar <= 0.0 {
        return Err(Error::InvalidArgument("delta_lstar must be positive".into()));
    }
    let mut eps = Vec::with_capacity(samples.len());
    let mut sup_eps: f64 = 0.0;
    let mut c: f64 = 0.0;
    let mut excluded = 0usize;
    let mut retained = 0usize;
    for x in samples {
        let u = policy.act(x)?;
        let next = sys.step(x, &u)?;
        let e = value_next.eval(x) - cost.eval(x, &u) - value_cur.eval(&next);
        sup_eps = sup_eps.max(e.abs());
        let lstar = cost.lstar(x);
        if lstar >= delta_lstar {
            c = c.max(e.abs() / lstar);
            retained += 1;
        } else {
            excluded += 1;
        }
        eps.push(e);
    }
    if retained == 0 {
        return Err(Error::MarginEstimation(
            "every test sample fell below the l* exclusion radius; enlarge the sample set or \
             shrink delta_lstar"
                .into(),
        ));
    }
    Ok(MarginEstimate {
        sup_eps,
        c,
        excluded,
        eps,
    })
}

/// Bound `gamma0` with `V_0(x) <= gamma0 l*(x)` on the training domain,
/// using `V_0 <= V_hat_0 / (1 - c_{-1})`. Purely quadratic approximants
/// get the exact generalized-eigenvalue bound; otherwise the sampled
/// maximum of the ratio is used.
pub fn gamma0_estimate(
    value0: &ValueApproximant,
    cost: &StageCost,
    c_minus1: f64,
    samples: &[DVector<f64>],
    delta_lstar: f64,
) -> Result<f64> {
    if c_minus1 >= 1.0 {
        return Err(Error::MarginTooLarge { c: c_minus1 });
    }
    if let Some(p) = value0.as_quadratic() {
        let chol = cost
            .state_weight()
            .clone()
            .cholesky()
            .expect("Q is positive-definite by StageCost construction");
        let l = chol.l();
        // M = L^-1 P L^-T shares its spectrum with the (P, Q) pencil.
        let li_p = l
            .solve_lower_triangular(&p)
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
        let m = l
            .solve_lower_triangular(&li_p.transpose())
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?
            .transpose();
        let sym = 0.5 * (&m + m.transpose());
        let lambda_max = sym.symmetric_eigen().eigenvalues.max();
        return Ok(lambda_max / (1.0 - c_minus1));
    }
    let mut ratio: f64 = 0.0;
    let mut retained = 0usize;
    for x in samples {
        let lstar = cost.lstar(x);
        if lstar >= delta_lstar {
            ratio = ratio.max(value0.eval(x) / lstar);
            retained += 1;
        }
    }
    if retained == 0 {
        return Err(Error::MarginEstimation(
            "no sample above the l* exclusion radius for the gamma0 estimate".into(),
        ));
    }
    Ok(ratio / (1.0 - c_minus1))
}

/// Error-margin stability test for the iterated controller itself:
/// `c < 1 + 2 gamma0 - sqrt(4 gamma0^2 + 4 gamma0)` (strict).
pub fn stability_margin_check(c: f64, gamma0: f64) -> bool {
    c < stability_margin_bound(gamma0)
}

/// The right-hand side of the margin test above.
pub fn stability_margin_bound(gamma0: f64) -> f64 {
    1.0 + 2.0 * gamma0 - (4.0 * gamma0 * gamma0 + 4.0 * gamma0).sqrt()
}

/// Cost update: fits `w(i+1)` to the targets
/// `t(x) = l(x, mu_i(x)) + V_i(f(x, mu_i(x)))` over the training samples.
/// `features` is the precomputed basis matrix of the same samples.
pub fn cost_update(
    value: &ValueApproximant,
    sys: &ControlAffineSystem,
    cost: &StageCost,
    input_box: &BoxSet,
    samples: &[DVector<f64>],
    features: &DMatrix<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, FitReport)> {
    if features.nrows() != samples.len() {
        return Err(Error::DimensionMismatch(
            "feature rows do not match the sample count".into(),
        ));
    }
    let mut targets = DVector::zeros(samples.len());
    for (s, x) in samples.iter().enumerate() {
        let u = greedy_policy_solve(value, sys, cost, input_box, x)?;
        let next = sys.step(x, &u)?;
        targets[s] = cost.eval(x, &u) + value.eval(&next);
    }
    lstsq_fit(features, &targets, ridge)
}

/// How the initial cost approximation is produced.
pub enum InitCost<'a> {
    /// Least-squares solve of the initial-cost equation along `mu_{-1}`.
    Fit(&'a dyn Policy),
    /// Skip the fit: encode `x' P_lqr x` directly in the degree-2 block.
    LqrShortcut(&'a LqrInit),
}

/// Initial cost approximation: either the least-squares solve of
/// `w'(Phi(x) - Phi(f(x, mu(x)))) = l(x, mu(x))` over the training
/// samples, or the LQR shortcut. The returned margin is the residual of
/// the initial-cost equation on the test samples.
#[allow(clippy::too_many_arguments)]
pub fn init_cost(
    sys: &ControlAffineSystem,
    cost: &StageCost,
    basis: &MonomialBasis,
    train: &[DVector<f64>],
    test: &[DVector<f64>],
    delta_lstar: f64,
    ridge: f64,
    init: &InitCost<'_>,
) -> Result<(DVector<f64>, MarginEstimate)> {
    let w0 = match init {
        InitCost::Fit(policy) => {
            let mut rows = DMatrix::zeros(train.len(), basis.len());
            let mut targets = DVector::zeros(train.len());
            for (s, x) in train.iter().enumerate() {
                let u = policy.act(x)?;
                let next = sys.step(x, &u)?;
                let row = basis.eval(x) - basis.eval(&next);
                rows.row_mut(s).copy_from(&row.transpose());
                targets[s] = cost.eval(x, &u);
            }
            lstsq_fit(&rows, &targets, ridge)?.0
        }
        InitCost::LqrShortcut(lqr) => {
            ValueApproximant::from_quadratic(basis.clone(), &lqr.cost_matrix)?
                .weights()
                .clone()
        }
    };
    let lqr_policy;
    let mu_init: &dyn Policy = match init {
        InitCost::Fit(policy) => *policy,
        InitCost::LqrShortcut(lqr) => {
            lqr_policy = lqr.policy();
            &lqr_policy
        }
    };
    let v0 = ValueApproximant::new(basis.clone(), w0.clone())?;
    let margin = residual_margin(&v0, &v0, mu_init, sys, cost, test, delta_lstar)?;
    Ok((w0, margin))
}

/// Training configuration. `training_box` is the domain Omega; samples are
/// drawn uniformly i.i.d. with the seeded generator, training set first,
/// test set second.
#[derive(Debug, Clone)]
pub struct AviConfig {
    pub training_box: BoxSet,
    pub train_samples: usize,
    pub test_samples: usize,
    pub max_iterations: usize,
    pub weight_tolerance: f64,
    pub lstar_exclusion: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl AviConfig {
    pub fn new(training_box: BoxSet, seed: u64) -> Self {
        let train_samples = 500;
        Self {
            training_box,
            train_samples,
            test_samples: 4 * train_samples,
            max_iterations: 60,
            weight_tolerance: 1e-3,
            lstar_exclusion: 1e-4,
            ridge: 0.0,
            seed,
        }
    }

    pub fn validate(&self, basis: &MonomialBasis, state_box: &BoxSet) -> Result<()> {
        if self.training_box.dim() != state_box.dim() {
            return Err(Error::DimensionMismatch(
                "training box dimension differs from the state box".into(),
            ));
        }
        if !self.training_box.subset_of(state_box) {
            return Err(Error::InvalidArgument(
                "training box must be contained in the state box".into(),
            ));
        }
        if self.train_samples < basis.len() {
            return Err(Error::InvalidArgument(format!(
                "need at least as many training samples as basis functions ({} < {})",
                self.train_samples,
                basis.len()
            )));
        }
        if self.test_samples == 0 {
            return Err(Error::InvalidArgument("need at least one test sample".into()));
        }
        if self.lstar_exclusion <= 0.0 {
            return Err(Error::InvalidArgument("lstar_exclusion must be positive".into()));
        }
        Ok(())
    }
}

/// Complete record of one training run.
#[derive(Debug, Clone)]
pub struct AviRun {
    pub basis: MonomialBasis,
    /// w(0) ..= w(I+1) in iteration order.
    pub weights: Vec<DVector<f64>>,
    /// Margin history; index 0 belongs to iteration -1 (the initial fit).
    pub c_per_iter: Vec<f64>,
    pub sup_eps_per_iter: Vec<f64>,
    pub excluded_per_iter: Vec<usize>,
    /// Per-iteration residuals on the test samples, same indexing as above.
    pub eps_history: Vec<Vec<f64>>,
    /// Overall margin, max over the recorded c_i.
    pub c: f64,
    pub gamma0: f64,
    pub converged_at: Option<usize>,
    /// Set when any c_i reached 1; certification must refuse such a run.
    pub margin_flagged: bool,
    /// Present when the iteration had to stop early after the margin flag.
    pub aborted: Option<String>,
    pub train_samples: Vec<DVector<f64>>,
    pub test_samples: Vec<DVector<f64>>,
}

impl AviRun {
    /// Terminal cost approximant `V_hat = V_{I+1}` (the last recorded fit).
    pub fn terminal_value(&self) -> ValueApproximant {
        ValueApproximant::new(
            self.basis.clone(),
            self.weights.last().expect("run records w(0)").clone(),
        )
        .expect("recorded weights match the basis")
    }

    /// Value approximant `V_I` under which the stored greedy policy acts.
    pub fn policy_value(&self) -> ValueApproximant {
        let idx = self.weights.len().saturating_sub(2);
        ValueApproximant::new(self.basis.clone(), self.weights[idx].clone())
            .expect("recorded weights match the basis")
    }

    pub fn iterations(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }
}

/// Runs the full stabilizing value iteration.
pub fn run_avi(
    sys: &ControlAffineSystem,
    cost: &StageCost,
    basis: &MonomialBasis,
    state_box: &BoxSet,
    input_box: &BoxSet,
    config: &AviConfig,
    init: InitCost<'_>,
) -> Result<AviRun> {
    config.validate(basis, state_box)?;
    if basis.dim() != sys.state_dim() {
        return Err(Error::DimensionMismatch(
            "basis dimension differs from the state dimension".into(),
        ));
    }

    let (train, test) = draw_sample_sets(config);
    let features = basis_features(basis, &train);

    let (w0, init_margin) = init_cost(
        sys,
        cost,
        basis,
        &train,
        &test,
        config.lstar_exclusion,
        config.ridge,
        &init,
    )?;
    let v0 = ValueApproximant::new(basis.clone(), w0.clone())?;
    // c_{-1} >= 1 leaves gamma0 undefined; the run continues so the
    // evidence can be written, but it carries the refusal flag and the
    // degenerate bound.
    let gamma0 = if init_margin.c < 1.0 {
        gamma0_estimate(&v0, cost, init_margin.c, &test, config.lstar_exclusion)?
    } else {
        f64::INFINITY
    };

    let mut weights = vec![w0];
    let mut c_per_iter = vec![init_margin.c];
    let mut sup_eps_per_iter = vec![init_margin.sup_eps];
    let mut excluded_per_iter = vec![init_margin.excluded];
    let mut eps_history = vec![init_margin.eps];
    let mut margin_flagged = init_margin.c >= 1.0;
    let mut converged_at = None;
    let mut aborted = None;

    for i in 0..config.max_iterations {
        let value = ValueApproximant::new(basis.clone(), weights[i].clone())?;
        let outcome = (|| -> Result<(DVector<f64>, MarginEstimate)> {
            let (w_next, _report) = cost_update(
                &value,
                sys,
                cost,
                input_box,
                &train,
                &features,
                config.ridge,
            )?;
            let v_next = ValueApproximant::new(basis.clone(), w_next.clone())?;
            let greedy = GreedyPolicy {
                value: &value,
                sys,
                cost,
                input_box,
            };
            let margin = residual_margin(
                &v_next,
                &value,
                &greedy,
                sys,
                cost,
                &test,
                config.lstar_exclusion,
            )?;
            Ok((w_next, margin))
        })();

        let (w_next, margin) = match outcome {
            Ok(pair) => pair,
            Err(err) if margin_flagged => {
                // The adjust-Omega branch was already signalled; keep the
                // evidence gathered so far instead of discarding the run.
                aborted = Some(format!("iteration {i}: {err}"));
                break;
            }
            Err(err) => return Err(err),
        };

        let rel_change = (0..w_next.len())
            .map(|j| (w_next[j] - weights[i][j]).abs() / weights[i][j].abs().max(1.0))
            .fold(0.0, f64::max);

        margin_flagged |= margin.c >= 1.0;
        weights.push(w_next);
        c_per_iter.push(margin.c);
        sup_eps_per_iter.push(margin.sup_eps);
        excluded_per_iter.push(margin.excluded);
        eps_history.push(margin.eps);

        if rel_change < config.weight_tolerance {
            converged_at = Some(i);
            break;
        }
    }

    let c = c_per_iter.iter().copied().fold(0.0, f64::max);
    Ok(AviRun {
        basis: basis.clone(),
        weights,
        c_per_iter,
        sup_eps_per_iter,
        excluded_per_iter,
        eps_history,
        c,
        gamma0,
        converged_at,
        margin_flagged,
        aborted,
        train_samples: train,
        test_samples: test,
    })
}

/// Input-constraint verdict for the stored greedy policy on a sample set.
#[derive(Debug, Clone)]
pub struct InputCheck {
    pub pass: bool,
    pub worst_violation: f64,
}

pub fn input_constraint_check<P: Policy + ?Sized>(
    policy: &P,
    input_box: &BoxSet,
    samples: &[DVector<f64>],
) -> Result<InputCheck> {
    let mut worst: f64 = 0.0;
    for x in samples {
        let u = policy.act(x)?;
        worst = worst.max(input_box.violation(&u));
    }
    Ok(InputCheck {
        pass: worst == 0.0,
        worst_violation: worst,
    })
}

/// Per-iteration tally of the sandwich bounds
/// `(1 - c) l*(x) <= V_i(x) <= 2 gamma0 l*(x)` on the test samples, with
/// tolerance `1e-9 + 1e-6 l*(x)` per sample.
#[derive(Debug, Clone)]
pub struct Theorem1Row {
    pub iter: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Extremes of V_i(x)/l*(x) over samples above the exclusion radius.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub rows: Vec<Theorem1Row>,
    pub total_violations: usize,
}

pub fn theorem1_bounds_check(
    run: &AviRun,
    cost: &StageCost,
    samples: &[DVector<f64>],
    delta_lstar: f64,
) -> Theorem1Report {
    let mut rows = Vec::with_capacity(run.weights.len());
    let mut total = 0usize;
    for (i, w) in run.weights.iter().enumerate() {
        let value = ValueApproximant::new(run.basis.clone(), w.clone())
            .expect("recorded weights match the basis");
        let mut lower_violations = 0usize;
        let mut upper_violations = 0usize;
        let mut min_ratio = f64::INFINITY;
        let mut max_ratio = f64::NEG_INFINITY;
        for x in samples {
            let lstar = cost.lstar(x);
            let v = value.eval(x);
            let tol = 1e-9 + 1e-6 * lstar;
            if v < (1.0 - run.c) * lstar - tol {
                lower_violations += 1;
            }
            if v > 2.0 * run.gamma0 * lstar + tol {
                upper_violations += 1;
            }
            if lstar >= delta_lstar {
                let ratio = v / lstar;
                min_ratio = min_ratio.min(ratio);
                max_ratio = max_ratio.max(ratio);
            }
        }
        total += lower_violations + upper_violations;
        rows.push(Theorem1Row {
            iter: i,
            lower_violations,
            upper_violations,
            min_ratio,
            max_ratio,
        });
    }
    Theorem1Report {
        rows,
        total_violations: total,
    }
}

/// errors.csv: `iter,sup_eps,c` with iteration -1 as the initial fit.
pub fn write_errors_csv<W: Write>(w: &mut W, run: &AviRun) -> Result<()> {
    writeln!(w, "iter,sup_eps,c")?;
    for (idx, (sup, c)) in run
        .sup_eps_per_iter
        .iter()
        .zip(run.c_per_iter.iter())
        .enumerate()
    {
        writeln!(w, "{},{},{}", idx as i64 - 1, f64_repr(*sup), f64_repr(*c))?;
    }
    Ok(())
}

/// theorem1.csv: per-iteration violation counts and ratio extremes.
pub fn write_theorem1_csv<W: Write>(w: &mut W, report: &Theorem1Report) -> Result<()> {
    writeln!(w, "iter,lower_violations,upper_violations,min_ratio,max_ratio")?;
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.iter,
            row.lower_violations,
            row.upper_violations,
            f64_repr(row.min_ratio),
            f64_repr(row.max_ratio)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{linear_system, rendezvous_system, toy1d_system};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn dare_with_zero_dynamics() {
        let lqr = dare_solve(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert_relative_eq!(lqr.cost_matrix[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(lqr.gain[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        // p^2 - p - 1 = 0 for a = b = q = r = 1.
        let lqr = dare_solve(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert_relative_eq!(lqr.cost_matrix[(0, 0)], phi, epsilon = 1e-10);
        assert_relative_eq!(lqr.gain[(0, 0)], phi / (1.0 + phi), epsilon = 1e-10);
    }

    #[test]
    fn dare_rendezvous_linearization() {
        let bench = rendezvous_system(0.05).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(4),
            &DVector::zeros(2),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        // Self-check: residual of the fixed-point equation.
        let p = &lqr.cost_matrix;
        let btpb = bench.cost.input_weight() + b.transpose() * p * &b;
        let gain = btpb.cholesky().unwrap().solve(&(b.transpose() * p * &a));
        let residual = (bench.cost.state_weight() + a.transpose() * p * &a
            - a.transpose() * p * &b * gain
            - p)
            .amax();
        assert!(residual < 1e-9, "DARE residual {residual:e}");
    }

    #[test]
    fn greedy_at_origin_is_zero() {
        let bench = rendezvous_system(0.05).unwrap();
        let basis = MonomialBasis::new(4, &[2, 3]).unwrap();
        let p = DMatrix::identity(4, 4) * 3.0;
        let v = ValueApproximant::from_quadratic(basis, &p).unwrap();
        let u = greedy_policy_solve(
            &v,
            &bench.system,
            &bench.cost,
            &bench.input_box,
            &DVector::zeros(4),
        )
        .unwrap();
        assert!(u.amax() < 1e-12);
    }

    #[test]
    fn greedy_matches_closed_form_on_linear_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.2]);
        let sys = linear_system(a.clone(), b.clone()).unwrap();
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let cost = StageCost::new(q.clone(), r.clone()).unwrap();
        let input_box = BoxSet::symmetric(1, 10.0).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]);
        let basis = MonomialBasis::new(2, &[2]).unwrap();
        let v = ValueApproximant::from_quadratic(basis, &p).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let u = greedy_policy_solve(&v, &sys, &cost, &input_box, &x).unwrap();
        // u* = -(R + B'PB)^-1 B'PA x
        let gain = (&r + b.transpose() * &p * &b)
            .try_inverse()
            .unwrap()
            * b.transpose()
            * &p
            * &a;
        let expected = -(&gain * &x);
        assert!((u - expected).amax() < 1e-8);
    }

    #[test]
    fn greedy_beats_fine_grid_on_rendezvous() {
        use rand::Rng;
        let bench = rendezvous_system(0.05).unwrap();
        let lqr = {
            let (a, b) = crate::system::linearize(
                &bench.system,
                &DVector::zeros(4),
                &DVector::zeros(2),
            )
            .unwrap();
            dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight()).unwrap()
        };
        let basis = MonomialBasis::new(4, &[2, 3]).unwrap();
        let v = ValueApproximant::from_quadratic(basis, &lqr.cost_matrix).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-0.2..0.2));
            let u = greedy_policy_solve(&v, &bench.system, &bench.cost, &bench.input_box, &x)
                .unwrap();
            let objective = |u: &DVector<f64>| {
                bench.cost.eval(&x, u) + v.eval(&bench.system.step(&x, u).unwrap())
            };
            let solver_obj = objective(&u);
            let mut grid_best = f64::INFINITY;
            for i in 0..41 {
                for j in 0..41 {
                    let cand = DVector::from_vec(vec![
                        -2.0 + 4.0 * i as f64 / 40.0,
                        -2.0 + 4.0 * j as f64 / 40.0,
                    ]);
                    grid_best = grid_best.min(objective(&cand));
                }
            }
            assert!(solver_obj <= grid_best + 1e-9);
        }
    }

    #[test]
    fn init_fit_recovers_lqr_lyapunov_cost() {
        // For the DARE-optimal policy, the policy's own Lyapunov cost is the
        // DARE solution itself, so the initial fit must reproduce P_lqr.
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.05, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.3]);
        let sys = linear_system(a.clone(), b.clone()).unwrap();
        let cost = StageCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let lqr = dare_solve(&a, &b, cost.state_weight(), cost.input_weight()).unwrap();
        let basis = MonomialBasis::new(2, &[2]).unwrap();
        let state_box = BoxSet::symmetric(2, 5.0).unwrap();
        let input_box = BoxSet::symmetric(1, 20.0).unwrap();
        let mut config = AviConfig::new(BoxSet::symmetric(2, 1.0).unwrap(), 99);
        config.train_samples = 80;
        config.test_samples = 200;
        config.validate(&basis, &state_box).unwrap();

        let run = run_avi(
            &sys,
            &cost,
            &basis,
            &state_box,
            &input_box,
            &config,
            InitCost::Fit(&lqr.policy()),
        )
        .unwrap();
        let v0 = ValueApproximant::new(basis, run.weights[0].clone()).unwrap();
        let p0 = v0.as_quadratic().unwrap();
        assert!((p0 - &lqr.cost_matrix).amax() < 1e-6);
        assert!(run.c_per_iter[0] < 1e-8, "c_-1 = {}", run.c_per_iter[0]);
        assert!(run.c < 1e-6, "exact representation should give c ~ 0, got {}", run.c);
    }

    #[test]
    fn lqr_shortcut_leaves_cubic_weights_zero() {
        let bench = rendezvous_system(0.05).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(4),
            &DVector::zeros(2),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        let basis = MonomialBasis::new(4, &[2, 3]).unwrap();
        let v0 = ValueApproximant::from_quadratic(basis, &lqr.cost_matrix).unwrap();
        for (e, w) in v0.basis().exponents().iter().zip(v0.weights().iter()) {
            if e.iter().sum::<u32>() == 3 {
                assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn gamma0_exact_quadratic_cases() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let cost = StageCost::new(q.clone(), DMatrix::identity(1, 1)).unwrap();
        let basis = MonomialBasis::new(2, &[2]).unwrap();
        let v_same = ValueApproximant::from_quadratic(basis.clone(), &q).unwrap();
        let g = gamma0_estimate(&v_same, &cost, 0.0, &[], 1e-4).unwrap();
        assert_relative_eq!(g, 1.0, epsilon = 1e-12);

        let v_double = ValueApproximant::from_quadratic(basis, &(2.0 * &q)).unwrap();
        let g = gamma0_estimate(&v_double, &cost, 0.5, &[], 1e-4).unwrap();
        assert_relative_eq!(g, 4.0, epsilon = 1e-12);
        assert!(matches!(
            gamma0_estimate(&v_double, &cost, 1.0, &[], 1e-4),
            Err(Error::MarginTooLarge { .. })
        ));
    }

    #[test]
    fn gamma0_exact_matches_sampled_max() {
        use rand::Rng;
        let bench = rendezvous_system(0.05).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(4),
            &DVector::zeros(2),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        let basis = MonomialBasis::new(4, &[2]).unwrap();
        let v0 = ValueApproximant::from_quadratic(basis, &lqr.cost_matrix).unwrap();
        let exact = gamma0_estimate(&v0, &bench.cost, 0.0, &[], 1e-4).unwrap();
        // Sampled-ratio oracle, maximized along the dominant direction by
        // scanning many random directions.
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        let mut sampled: f64 = 0.0;
        for _ in 0..20000 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-0.2..0.2));
            let l = bench.cost.lstar(&x);
            if l >= 1e-4 {
                sampled = sampled.max(v0.eval(&x) / l);
            }
        }
        assert!(sampled <= exact * (1.0 + 1e-9));
        assert!(
            sampled > exact * 0.99,
            "sampled {sampled} should come within 1% of the exact bound {exact}"
        );
    }

    #[test]
    fn stability_margin_examples() {
        assert!((stability_margin_bound(1.0) - (3.0 - 8.0_f64.sqrt())).abs() < 1e-12);
        assert!(stability_margin_check(0.1, 1.0));
        assert!(!stability_margin_check(0.2, 1.0));
        // gamma0 -> 0 pushes the bound to 1.
        assert!((stability_margin_bound(1e-12) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn run_avi_with_infinite_tolerance_stops_immediately() {
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(1),
            &DVector::zeros(1),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        let mut config = AviConfig::new(BoxSet::symmetric(1, 0.5).unwrap(), 4);
        config.train_samples = 20;
        config.test_samples = 50;
        config.weight_tolerance = f64::INFINITY;
        let run = run_avi(
            &bench.system,
            &bench.cost,
            &basis,
            &bench.state_box,
            &bench.input_box,
            &config,
            InitCost::LqrShortcut(&lqr),
        )
        .unwrap();
        assert_eq!(run.weights.len(), 2);
        assert_eq!(run.converged_at, Some(0));
    }

    #[test]
    fn run_avi_is_deterministic() {
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(1),
            &DVector::zeros(1),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        let mut config = AviConfig::new(BoxSet::symmetric(1, 0.5).unwrap(), 42);
        config.train_samples = 30;
        config.test_samples = 60;
        let run_twice = || {
            run_avi(
                &bench.system,
                &bench.cost,
                &basis,
                &bench.state_box,
                &bench.input_box,
                &config,
                InitCost::LqrShortcut(&lqr),
            )
            .unwrap()
        };
        let r1 = run_twice();
        let r2 = run_twice();
        assert_eq!(r1.weights, r2.weights);
        assert_eq!(r1.c_per_iter, r2.c_per_iter);
        assert_eq!(r1.c.to_bits(), r2.c.to_bits());
        assert_eq!(r1.gamma0.to_bits(), r2.gamma0.to_bits());
    }

    #[test]
    fn residual_margin_identity_recomputes_bit_identically() {
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let (a, b) = crate::system::linearize(
            &bench.system,
            &DVector::zeros(1),
            &DVector::zeros(1),
        )
        .unwrap();
        let lqr = dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())
            .unwrap();
        let mut config = AviConfig::new(BoxSet::symmetric(1, 0.5).unwrap(), 8);
        config.train_samples = 30;
        config.test_samples = 40;
        config.max_iterations = 3;
        config.weight_tolerance = 0.0;
        let run = run_avi(
            &bench.system,
            &bench.cost,
            &basis,
            &bench.state_box,
            &bench.input_box,
            &config,
            InitCost::LqrShortcut(&lqr),
        )
        .unwrap();
        // Recompute eps_i for iteration i = 0 from the stored weights.
        let v_cur = ValueApproximant::new(basis.clone(), run.weights[0].clone()).unwrap();
        let v_next = ValueApproximant::new(basis.clone(), run.weights[1].clone()).unwrap();
        let greedy = GreedyPolicy {
            value: &v_cur,
            sys: &bench.system,
            cost: &bench.cost,
            input_box: &bench.input_box,
        };
        let again = residual_margin(
            &v_next,
            &v_cur,
            &greedy,
            &bench.system,
            &bench.cost,
            &run.test_samples,
            config.lstar_exclusion,
        )
        .unwrap();
        for (stored, recomputed) in run.eps_history[1].iter().zip(again.eps.iter()) {
            assert_eq!(stored.to_bits(), recomputed.to_bits());
        }
    }

    #[test]
    fn residual_margin_rejects_empty_ratio_set() {
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let v = ValueApproximant::from_quadratic(basis, &DMatrix::identity(1, 1)).unwrap();
        let zero = |_: &DVector<f64>| DVector::zeros(1);
        let samples = vec![DVector::from_vec(vec![1e-6])];
        // Every sample sits below the exclusion radius.
        let err = residual_margin(&v, &v, &zero, &bench.system, &bench.cost, &samples, 1e-4);
        assert!(matches!(err, Err(Error::MarginEstimation(_))));
    }

    #[test]
    fn greedy_fails_cleanly_on_concave_value() {
        // A negative-definite "value" makes the objective unbounded below in
        // the input; both the fixed point and the grid refinement must give
        // up with a policy-solve error rather than a bogus input.
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let v = ValueApproximant::new(basis, DVector::from_vec(vec![-3.0])).unwrap();
        let err = greedy_policy_solve(
            &v,
            &bench.system,
            &bench.cost,
            &bench.input_box,
            &DVector::from_vec(vec![0.3]),
        );
        assert!(matches!(err, Err(Error::PolicySolve { .. })));
    }

    #[test]
    fn config_rejects_training_box_outside_state_box() {
        let bench = toy1d_system(0.5, 1.0).unwrap();
        let basis = MonomialBasis::new(1, &[2]).unwrap();
        let config = AviConfig::new(BoxSet::symmetric(1, 2.0).unwrap(), 1);
        assert!(config.validate(&basis, &bench.state_box).is_err());
    }

    #[test]
    fn gamma0_sampled_path_for_non_quadratic_values() {
        use rand::Rng;
        let cost = StageCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let basis = MonomialBasis::new(2, &[2, 3]).unwrap();
        let mut w = ValueApproximant::from_quadratic(basis.clone(), &(2.0 * DMatrix::identity(2, 2)))
            .unwrap()
            .weights()
            .clone();
        // A cubic term forces the sampled path.
        let cubic_idx = basis.position(&[3, 0]).unwrap();
        w[cubic_idx] = 0.5;
        let v = ValueApproximant::new(basis, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<DVector<f64>> =
            (0..500).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5))).collect();
        let g = gamma0_estimate(&v, &cost, 0.25, &samples, 1e-4).unwrap();
        let mut manual: f64 = 0.0;
        for x in &samples {
            let l = cost.lstar(x);
            if l >= 1e-4 {
                manual = manual.max(v.eval(x) / l);
            }
        }
        assert!((g - manual / 0.75).abs() < 1e-12);
    }

    #[test]
    fn policy_approximant_matches_greedy_on_held_out_samples() {
        use crate::approximator::PolicyApproximant;
        use rand::Rng;
        // Exactly representable case: the greedy policy of a quadratic value
        // on a linear system is linear, which the feature map contains.
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.2]);
        let sys = linear_system(a, b).unwrap();
        let cost = StageCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let input_box = BoxSet::symmetric(1, 10.0).unwrap();
        let basis = MonomialBasis::new(2, &[2]).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let v = ValueApproximant::from_quadratic(basis, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut draw = |count: usize| -> Vec<DVector<f64>> {
            (0..count)
                .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
                .collect()
        };
        let train = draw(60);
        let held_out = draw(40);
        let targets: Vec<DVector<f64>> = train
            .iter()
            .map(|x| greedy_policy_solve(&v, &sys, &cost, &input_box, x).unwrap())
            .collect();
        let (fitted, _) = PolicyApproximant::fit(&train, &targets, 0.0).unwrap();
        let max_dev = held_out
            .iter()
            .map(|x| {
                let exact = greedy_policy_solve(&v, &sys, &cost, &input_box, x).unwrap();
                (fitted.eval(x) - exact).amax()
            })
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-6, "held-out deviation {max_dev}");
    }

    #[test]
    fn input_check_reports_excess() {
        let input_box = BoxSet::symmetric(2, 2.0).unwrap();
        let samples = vec![DVector::from_vec(vec![0.1, 0.1])];
        let zero = |_: &DVector<f64>| DVector::zeros(2);
        let ok = input_constraint_check(&zero, &input_box, &samples).unwrap();
        assert!(ok.pass);
        assert_eq!(ok.worst_violation, 0.0);

        let constant = |_: &DVector<f64>| DVector::from_vec(vec![3.0, 0.0]);
        let bad = input_constraint_check(&constant, &input_box, &samples).unwrap();
        assert!(!bad.pass);
        assert_relative_eq!(bad.worst_violation, 1.0, epsilon = 1e-14);
    }
}
