//! Stability and performance certificates.
//!
//! Everything here is scalar arithmetic on quantities estimated from the
//! training run: the exponential-controllability constants (C, sigma) of
//! the initializing policy, the terminal-set scalar d, the local bound
//! coefficient gamma_V, the minimal stabilizing horizons, and the
//! performance coefficients alpha1(N, c) and alpha2(N).

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fmt::{f64_repr, Json};
use crate::system::{rollout, BoxSet, ControlAffineSystem, Policy, StageCost};

/// Positivity guard that also rejects NaN and infinities.
fn require_positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::CertificateDomain(format!("{what} must be positive, got {x}")))
    }
}

/// Scalars that the sigma-grid selection needs from the training run:
/// the horizon bound is the quantity being minimized, and it depends on
/// all of them.
#[derive(Debug, Clone, Copy)]
pub struct HorizonContext {
    pub gamma0: f64,
    /// Overall error margin c of the run, in [0, 1).
    pub c: f64,
    /// Level-set bound beta > 0 selected by the user.
    pub beta: f64,
    /// Terminal-set scalar from [`terminal_set_d`].
    pub d: f64,
}

impl HorizonContext {
    fn validate(&self) -> Result<()> {
        require_positive(self.gamma0, "gamma0")?;
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::MarginTooLarge { c: self.c });
        }
        require_positive(self.beta, "beta")?;
        require_positive(self.d, "d")
    }
}

/// Candidate decay rates for the controllability fit.
#[derive(Debug, Clone)]
pub struct SigmaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        Self {
            start: 0.80,
            stop: 0.999,
            step: 0.001,
        }
    }
}

impl SigmaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.start > 0.0 && self.start <= self.stop && self.stop < 1.0 && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma grid must satisfy 0 < start <= stop < 1 with positive step, got \
                 [{}, {}] step {}",
                self.start, self.stop, self.step
            )));
        }
        let mut values = Vec::new();
        let mut k = 0usize;
        loop {
            let sigma = self.start + k as f64 * self.step;
            if sigma > self.stop + self.step / 2.0 || sigma >= 1.0 {
                break;
            }
            values.push(sigma);
            k += 1;
        }
        Ok(values)
    }
}

/// Exponential-controllability fit `l(x(k), mu(x(k))) <= C sigma^k l*(x(0))`.
#[derive(Debug, Clone)]
pub struct ControllabilityFit {
    pub c_envelope: f64,
    pub sigma: f64,
    /// Number of rollout stages used (ratios exist for k = 0..=rollout_len).
    pub rollout_len: usize,
    /// Max cost ratio over the retained samples, per stage k.
    pub max_ratio_per_stage: Vec<f64>,
    pub retained_samples: usize,
    /// Samples skipped because l*(x(0)) fell below the exclusion radius.
    pub excluded_small_lstar: usize,
    /// Samples skipped because the rollout left the state or input box.
    pub excluded_box_violation: usize,
}

impl ControllabilityFit {
    /// Selects (sigma, C) from precomputed per-sample cost-ratio rows by
    /// minimizing the resulting minimal stabilizing horizon over the grid
    /// (ties resolved toward smaller C). Each row holds
    /// `r_k = l(x(k), mu(x(k))) / l*(x(0))` for k = 0..=rollout_len.
    pub fn from_ratio_rows(
        rows: &[Vec<f64>],
        rollout_len: usize,
        grid: &SigmaGrid,
        ctx: &HorizonContext,
    ) -> Result<Self> {
        ctx.validate()?;
        if rows.is_empty() {
            return Err(Error::Controllability(
                "no retained samples; the training domain is too large for the policy".into(),
            ));
        }
        let mut envelope = vec![0.0f64; rollout_len + 1];
        for row in rows {
            if row.len() != rollout_len + 1 {
                return Err(Error::DimensionMismatch(
                    "ratio row length does not match the rollout length".into(),
                ));
            }
            for (k, &r) in row.iter().enumerate() {
                envelope[k] = envelope[k].max(r);
            }
        }

        let mut best: Option<(f64, f64, f64)> = None; // (n1, C, sigma)
        for sigma in grid.values()? {
            let mut c_sigma = 1.0f64;
            let mut decay = 1.0f64;
            for &env in &envelope {
                c_sigma = c_sigma.max(env / decay);
                decay *= sigma;
            }
            let gamma_v = gamma_v(c_sigma, sigma, ctx.gamma0)?;
            let epsilon = ctx.d / (2.0 * ctx.gamma0 * c_sigma);
            let n1 = horizon_n1(ctx.c, ctx.beta, gamma_v, ctx.gamma0, epsilon)?.n1_lower;
            let better = match &best {
                None => true,
                Some((best_n1, best_c, _)) => {
                    n1 < *best_n1 || (n1 == *best_n1 && c_sigma < *best_c)
                }
            };
            if better {
                best = Some((n1, c_sigma, sigma));
            }
        }
        let (_, c_envelope, sigma) =
            best.ok_or_else(|| Error::Controllability("empty sigma grid".into()))?;
        Ok(Self {
            c_envelope,
            sigma,
            rollout_len,
            max_ratio_per_stage: envelope,
            retained_samples: rows.len(),
            excluded_small_lstar: 0,
            excluded_box_violation: 0,
        })
    }

    /// Exact post-condition of the fit on its own data.
    pub fn envelope_holds(&self) -> bool {
        let mut decay = 1.0f64;
        for &env in &self.max_ratio_per_stage {
            if env / decay > self.c_envelope {
                return false;
            }
            decay *= self.sigma;
        }
        true
    }
}

/// Simulates closed-loop rollouts under `policy` from the given samples and
/// fits (C, sigma). Samples whose initial stage cost lies below the
/// exclusion radius, or whose rollouts leave the state/input boxes, are
/// excluded and counted.
#[allow(clippy::too_many_arguments)]
pub fn estimate_controllability<P: Policy + ?Sized>(
    sys: &ControlAffineSystem,
    cost: &StageCost,
    policy: &P,
    samples: &[DVector<f64>],
    rollout_len: usize,
    state_box: &BoxSet,
    input_box: &BoxSet,
    delta_lstar: f64,
    grid: &SigmaGrid,
    ctx: &HorizonContext,
) -> Result<ControllabilityFit> {
    if rollout_len < 2 {
        return Err(Error::InvalidArgument("rollout length must be at least 2".into()));
    }
    let mut rows = Vec::new();
    let mut excluded_small = 0usize;
    let mut excluded_box = 0usize;
    for x0 in samples {
        let lstar0 = cost.lstar(x0);
        if lstar0 < delta_lstar {
            excluded_small += 1;
            continue;
        }
        // Stage costs are needed for k = 0..=rollout_len, hence one extra step.
        let roll = rollout(sys, cost, policy, x0, rollout_len + 1, state_box, input_box)?;
        let exit_before_m = roll
            .first_state_exit
            .into_iter()
            .chain(roll.first_input_exit)
            .any(|k| k <= rollout_len);
        if exit_before_m {
            excluded_box += 1;
            continue;
        }
        rows.push(
            roll.trajectory.stage_costs[..=rollout_len]
                .iter()
                .map(|l| l / lstar0)
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(Error::Controllability(format!(
            "all {} samples were excluded ({} below the l* radius, {} box violations)",
            samples.len(),
            excluded_small,
            excluded_box
        )));
    }
    let mut fit = ControllabilityFit::from_ratio_rows(&rows, rollout_len, grid, ctx)?;
    fit.excluded_small_lstar = excluded_small;
    fit.excluded_box_violation = excluded_box;
    Ok(fit)
}

/// Default rollout length for the controllability estimate: the smallest
/// stage after which every pilot rollout's stage cost stays below the
/// exclusion radius, clamped to [2, 500].
pub fn default_rollout_length<P: Policy + ?Sized>(
    sys: &ControlAffineSystem,
    cost: &StageCost,
    policy: &P,
    samples: &[DVector<f64>],
    state_box: &BoxSet,
    input_box: &BoxSet,
    delta_lstar: f64,
) -> Result<usize> {
    const CAP: usize = 500;
    let mut needed = 2usize;
    for x0 in samples {
        if cost.lstar(x0) < delta_lstar {
            continue;
        }
        let roll = rollout(sys, cost, policy, x0, CAP + 1, state_box, input_box)?;
        let last_above = roll
            .trajectory
            .stage_costs
            .iter()
            .rposition(|&l| l >= delta_lstar);
        if let Some(k) = last_above {
            needed = needed.max((k + 1).min(CAP));
        }
    }
    Ok(needed)
}

/// Largest `d` such that the stage-cost sublevel set
/// `{x : x'Qx <= d / (2 gamma0)}` stays inside the box Omega. The extreme
/// of |x_j| over `{x'Qx <= r}` is `sqrt(r (Q^-1)_jj)`, which gives the
/// bound coordinate by coordinate.
pub fn terminal_set_d(cost: &StageCost, gamma0: f64, omega: &BoxSet) -> Result<f64> {
    require_positive(gamma0, "gamma0")?;
    let q = cost.state_weight();
    if q.nrows() != omega.dim() {
        return Err(Error::DimensionMismatch(
            "stage-cost dimension differs from the box".into(),
        ));
    }
    let q_inv = q
        .clone()
        .cholesky()
        .expect("Q is positive-definite by StageCost construction")
        .inverse();
    let mut level = f64::INFINITY;
    for j in 0..omega.dim() {
        let reach = omega.lower()[j].powi(2).min(omega.upper()[j].powi(2));
        level = level.min(reach / q_inv[(j, j)]);
    }
    Ok(2.0 * gamma0 * level)
}

/// Local value-bound coefficient `gamma_V = C (1/(1 - sigma) + 2 gamma0)`.
pub fn gamma_v(c_envelope: f64, sigma: f64, gamma0: f64) -> Result<f64> {
    if c_envelope < 1.0 {
        return Err(Error::CertificateDomain("C must be at least 1".into()));
    }
    if !(0.0 < sigma && sigma < 1.0) {
        return Err(Error::CertificateDomain("sigma must lie in (0, 1)".into()));
    }
    if gamma0 < 0.0 {
        return Err(Error::CertificateDomain("gamma0 must be nonnegative".into()));
    }
    Ok(c_envelope * (1.0 / (1.0 - sigma) + 2.0 * gamma0))
}

/// Output of [`horizon_n1`].
#[derive(Debug, Clone, Copy)]
pub struct HorizonN1 {
    /// Smallest integer N' >= max{0, (beta - gamma_V eps)/eps}.
    pub n_prime: usize,
    /// min{gamma_V, beta/eps}.
    pub gamma_c_lower: f64,
    /// max{gamma_V, beta/eps}.
    pub gamma_c_upper: f64,
    /// Horizon beyond which the terminal predicted state enters the
    /// terminal set.
    pub n_lower_prime: f64,
    /// Minimal stabilizing horizon; stability for integer N > n1_lower.
    pub n1_lower: f64,
}

/// Minimal-horizon bound for the decrease coefficient alpha1. Nonpositive
/// logarithm arguments contribute -inf and are dropped by the max, which
/// matches the c = 0 limit of the derivation.
pub fn horizon_n1(
    c: f64,
    beta: f64,
    gamma_v: f64,
    gamma0: f64,
    epsilon: f64,
) -> Result<HorizonN1> {
    if gamma_v <= 1.0 {
        return Err(Error::CertificateDomain(format!(
            "gamma_V = {gamma_v} must exceed 1"
        )));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(Error::MarginTooLarge { c });
    }
    require_positive(beta, "beta")?;
    require_positive(epsilon, "epsilon")?;
    let n_prime_real = ((beta - gamma_v * epsilon) / epsilon).max(0.0);
    let n_prime = n_prime_real.ceil() as usize;
    let ratio = beta / epsilon;
    let gamma_c_lower = gamma_v.min(ratio);
    let gamma_c_upper = gamma_v.max(ratio);
    let denom = gamma_v.ln() - (gamma_v - 1.0).ln();
    let term_terminal = gamma_c_lower.ln() - (1.0 - c).ln();
    let term_alpha = ((c * (1.0 - c) + 4.0 * c * gamma0) / (1.0 - c).powi(2) * gamma_v).ln();
    let n_lower_prime = n_prime as f64 + term_terminal.max(0.0) / denom;
    let n1_lower = n_prime as f64 + term_terminal.max(term_alpha).max(0.0) / denom;
    Ok(HorizonN1 {
        n_prime,
        gamma_c_lower,
        gamma_c_upper,
        n_lower_prime,
        n1_lower,
    })
}

/// Decrease coefficient
/// `alpha1(N, c) = 1 - rho^(N - N') (c(1-c) + 4 c gamma0)/(1-c)^2 gamma_V`
/// with `rho = (gamma_V - 1)/gamma_V`.
pub fn alpha1(n: usize, c: f64, gamma_v: f64, gamma0: f64, n_prime: usize) -> f64 {
    let rho = (gamma_v - 1.0) / gamma_v;
    let penalty = (c * (1.0 - c) + 4.0 * c * gamma0) / (1.0 - c).powi(2) * gamma_v;
    1.0 - rho.powi(n as i32 - n_prime as i32) * penalty
}

/// Which rule produces N'' for the value-relation horizon. `Beta` is the
/// construction parallel to the alpha1 proof; `LiteralC` follows the
/// appendix text verbatim. Both variants are emitted in the artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NDoublePrimeRule {
    Beta,
    LiteralC,
}

/// Output of [`horizon_n2`].
#[derive(Debug, Clone, Copy)]
pub struct HorizonN2 {
    pub n_dprime: usize,
    /// min{gamma, beta/eps}.
    pub gamma_lower: f64,
    pub n_lower_dprime: f64,
    /// Real-valued N2 bound, max{n_lower_prime, n_lower_dprime}; the
    /// relation holds for all integers N >= ceil of it.
    pub n2_lower: f64,
}

/// Horizon bound for the alpha2 relation between the finite-horizon value
/// and the infinite-horizon optimal cost.
pub fn horizon_n2(
    beta: f64,
    gamma: f64,
    c: f64,
    epsilon: f64,
    n_lower_prime: f64,
    rule: NDoublePrimeRule,
) -> Result<HorizonN2> {
    if gamma <= 1.0 {
        return Err(Error::CertificateDomain(format!(
            "gamma = {gamma} must exceed 1"
        )));
    }
    require_positive(beta, "beta")?;
    require_positive(epsilon, "epsilon")?;
    let numerator = match rule {
        NDoublePrimeRule::Beta => beta,
        NDoublePrimeRule::LiteralC => c,
    };
    let n_dprime_real = ((numerator - gamma * epsilon) / epsilon).max(0.0);
    let n_dprime = n_dprime_real.ceil() as usize;
    let gamma_lower = gamma.min(beta / epsilon);
    let denom = gamma.ln() - (gamma - 1.0).ln();
    let n_lower_dprime = n_dprime as f64 + gamma_lower.ln().max(0.0) / denom;
    Ok(HorizonN2 {
        n_dprime,
        gamma_lower,
        n_lower_dprime,
        n2_lower: n_lower_prime.max(n_lower_dprime),
    })
}

/// Value-relation coefficient
/// `alpha2(N) = 1 + 2 gamma0 ((gamma - 1)/gamma)^(N - N'')`.
pub fn alpha2(n: usize, gamma0: f64, gamma: f64, n_dprime: usize) -> f64 {
    1.0 + 2.0 * gamma0 * ((gamma - 1.0) / gamma).powi(n as i32 - n_dprime as i32)
}

/// Every certificate scalar and horizon bound for one trained controller.
#[derive(Debug, Clone)]
pub struct CertificateBundle {
    pub c_envelope: f64,
    pub sigma: f64,
    pub rollout_len: usize,
    pub gamma0: f64,
    /// Error margin c of the training run.
    pub c: f64,
    pub d: f64,
    /// Terminal-set level eps = d / (2 gamma0 C).
    pub epsilon: f64,
    pub gamma_v: f64,
    /// gamma = C / (1 - sigma).
    pub gamma: f64,
    pub beta: f64,
    pub n_prime: usize,
    pub gamma_c_lower: f64,
    pub gamma_c_upper: f64,
    /// Real value of the terminal-set horizon bound.
    pub n_lower_prime_real: f64,
    /// Smallest admissible integer for the terminal-set horizon bound.
    pub n_lower_prime: usize,
    /// Real minimal stabilizing horizon; stability for integer N > this.
    pub n1_lower: f64,
    pub n_dprime: usize,
    pub gamma_lower: f64,
    pub n_lower_dprime: f64,
    /// Smallest admissible integer for the value-relation bound.
    pub n2_lower: usize,
    pub n2_lower_real: f64,
    /// Literal-c variant of the N'' chain, emitted for comparison.
    pub n_dprime_literal: usize,
    pub n_lower_dprime_literal: f64,
    pub n2_lower_literal: usize,
    /// N_lower = max{smallest integer > n1_lower, n2_lower}.
    pub n_lower: usize,
    /// Outcome of the iterated-controller margin test (recorded, not fatal:
    /// the predictive wrapper only needs c < 1).
    pub eq13_ok: bool,
    pub n_user: Option<usize>,
    pub alpha1_at_n: Option<f64>,
    pub alpha2_at_n: Option<f64>,
    /// Whether the user horizon meets n_lower.
    pub n_user_ok: Option<bool>,
}

impl CertificateBundle {
    /// rho_gamma = (gamma_V - 1)/gamma_V.
    pub fn rho_gamma(&self) -> f64 {
        (self.gamma_v - 1.0) / self.gamma_v
    }

    pub fn alpha1(&self, n: usize) -> f64 {
        alpha1(n, self.c, self.gamma_v, self.gamma0, self.n_prime)
    }

    pub fn alpha2(&self, n: usize) -> f64 {
        alpha2(n, self.gamma0, self.gamma, self.n_dprime)
    }
}

/// Assembles the certificate bundle from the training scalars and the
/// controllability fit. Refuses when c >= 1.
pub fn build_bundle(
    gamma0: f64,
    c: f64,
    fit: &ControllabilityFit,
    cost: &StageCost,
    omega: &BoxSet,
    beta: f64,
    n_user: Option<usize>,
) -> Result<CertificateBundle> {
    if c >= 1.0 {
        return Err(Error::MarginTooLarge { c });
    }
    let d = terminal_set_d(cost, gamma0, omega)?;
    let gamma_v = gamma_v(fit.c_envelope, fit.sigma, gamma0)?;
    let gamma = fit.c_envelope / (1.0 - fit.sigma);
    let epsilon = d / (2.0 * gamma0 * fit.c_envelope);
    let h1 = horizon_n1(c, beta, gamma_v, gamma0, epsilon)?;
    let h2 = horizon_n2(beta, gamma, c, epsilon, h1.n_lower_prime, NDoublePrimeRule::Beta)?;
    let h2_lit = horizon_n2(
        beta,
        gamma,
        c,
        epsilon,
        h1.n_lower_prime,
        NDoublePrimeRule::LiteralC,
    )?;
    let n2_lower = h2.n2_lower.ceil().max(0.0) as usize;
    let n2_lower_literal = h2_lit.n2_lower.ceil().max(0.0) as usize;
    // Strict: stability needs N > n1_lower.
    let n_above_n1 = (h1.n1_lower.floor() as i64 + 1).max(0) as usize;
    let n_lower = n_above_n1.max(n2_lower);
    let eq13_ok = crate::avi::stability_margin_check(c, gamma0);
    let (alpha1_at_n, alpha2_at_n, n_user_ok) = match n_user {
        Some(n) => (
            Some(alpha1(n, c, gamma_v, gamma0, h1.n_prime)),
            Some(alpha2(n, gamma0, gamma, h2.n_dprime)),
            Some(n >= n_lower),
        ),
        None => (None, None, None),
    };
    Ok(CertificateBundle {
        c_envelope: fit.c_envelope,
        sigma: fit.sigma,
        rollout_len: fit.rollout_len,
        gamma0,
        c,
        d,
        epsilon,
        gamma_v,
        gamma,
        beta,
        n_prime: h1.n_prime,
        gamma_c_lower: h1.gamma_c_lower,
        gamma_c_upper: h1.gamma_c_upper,
        n_lower_prime_real: h1.n_lower_prime,
        n_lower_prime: h1.n_lower_prime.ceil().max(0.0) as usize,
        n1_lower: h1.n1_lower,
        n_dprime: h2.n_dprime,
        gamma_lower: h2.gamma_lower,
        n_lower_dprime: h2.n_lower_dprime,
        n2_lower,
        n2_lower_real: h2.n2_lower,
        n_dprime_literal: h2_lit.n_dprime,
        n_lower_dprime_literal: h2_lit.n_lower_dprime,
        n2_lower_literal,
        n_lower,
        eq13_ok,
        n_user,
        alpha1_at_n,
        alpha2_at_n,
        n_user_ok,
    })
}

/// Computable upper bound on the closed-loop infinite-horizon cost:
/// `V_N(x0) / alpha1(N, c)`. Fails when alpha1 <= 0 (horizon too short).
pub fn performance_bound(bundle: &CertificateBundle, v_n_x0: f64, n: usize) -> Result<f64> {
    let a1 = bundle.alpha1(n);
    if a1 <= 0.0 {
        return Err(Error::BoundInvalid { alpha1: a1 });
    }
    Ok(v_n_x0 / a1)
}

/// certificates.json: flat object with every bundle field, floats written
/// with 17 significant digits.
pub fn certificates_json(bundle: &CertificateBundle) -> Json {
    let mut fields: Vec<(String, Json)> = vec![
        ("C".into(), Json::Float(bundle.c_envelope)),
        ("sigma".into(), Json::Float(bundle.sigma)),
        ("M".into(), Json::Int(bundle.rollout_len as i64)),
        ("gamma0".into(), Json::Float(bundle.gamma0)),
        ("c".into(), Json::Float(bundle.c)),
        ("d".into(), Json::Float(bundle.d)),
        ("epsilon".into(), Json::Float(bundle.epsilon)),
        ("gamma_V".into(), Json::Float(bundle.gamma_v)),
        ("gamma".into(), Json::Float(bundle.gamma)),
        ("beta".into(), Json::Float(bundle.beta)),
        ("rho_gamma".into(), Json::Float(bundle.rho_gamma())),
        ("N_prime".into(), Json::Int(bundle.n_prime as i64)),
        ("gamma_c_lower".into(), Json::Float(bundle.gamma_c_lower)),
        ("gamma_c_upper".into(), Json::Float(bundle.gamma_c_upper)),
        (
            "N_lower_prime_real".into(),
            Json::Float(bundle.n_lower_prime_real),
        ),
        ("N_lower_prime".into(), Json::Int(bundle.n_lower_prime as i64)),
        ("N1_lower".into(), Json::Float(bundle.n1_lower)),
        ("N_dprime".into(), Json::Int(bundle.n_dprime as i64)),
        ("gamma_lower".into(), Json::Float(bundle.gamma_lower)),
        ("N_lower_dprime".into(), Json::Float(bundle.n_lower_dprime)),
        ("N2_lower".into(), Json::Int(bundle.n2_lower as i64)),
        ("N2_lower_real".into(), Json::Float(bundle.n2_lower_real)),
        (
            "N_dprime_literal_c".into(),
            Json::Int(bundle.n_dprime_literal as i64),
        ),
        (
            "N_lower_dprime_literal_c".into(),
            Json::Float(bundle.n_lower_dprime_literal),
        ),
        (
            "N2_lower_literal_c".into(),
            Json::Int(bundle.n2_lower_literal as i64),
        ),
        ("N_lower".into(), Json::Int(bundle.n_lower as i64)),
        ("eq13_ok".into(), Json::Bool(bundle.eq13_ok)),
    ];
    fields.push((
        "N_user".into(),
        bundle.n_user.map_or(Json::Null, |n| Json::Int(n as i64)),
    ));
    fields.push((
        "alpha1_at_N".into(),
        bundle.alpha1_at_n.map_or(Json::Null, Json::Float),
    ));
    fields.push((
        "alpha2_at_N".into(),
        bundle.alpha2_at_n.map_or(Json::Null, Json::Float),
    ));
    fields.push((
        "N_user_ok".into(),
        bundle.n_user_ok.map_or(Json::Null, Json::Bool),
    ));
    Json::Object(fields)
}

pub fn write_certificates_json<W: Write>(w: &mut W, bundle: &CertificateBundle) -> Result<()> {
    certificates_json(bundle).write(w)?;
    Ok(())
}

/// Controllability envelope CSV: stage index against the max sample ratio
/// and the fitted bound C sigma^k.
pub fn write_envelope_csv<W: Write>(w: &mut W, fit: &ControllabilityFit) -> Result<()> {
    writeln!(w, "k,max_ratio,bound")?;
    let mut decay = 1.0f64;
    for (k, &r) in fit.max_ratio_per_stage.iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            k,
            f64_repr(r),
            f64_repr(fit.c_envelope * decay)
        )?;
        decay *= fit.sigma;
    }
    Ok(())
}
