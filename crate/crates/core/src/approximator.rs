//! Monomial bases, weighted value approximants with analytic gradients,
//! regularized least-squares fitting, and the explicit policy approximant.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmt::f64_repr;
use crate::system::Policy;

/// Ridge floor applied when a fit turns out rank-deficient (or has fewer
/// samples than unknowns); recorded in the [`FitReport`].
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Multivariate monomial basis over the state, restricted to a set of
/// total degrees. The minimum admitted degree is 2, so every basis
/// function and its gradient vanish at the origin.
///
/// Exponent tuples are stored in graded-lexicographic order (degree
/// ascending, then lexicographic with x1 major); the order is part of the
/// artifact contract since weight CSVs are indexed by it.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    dim: usize,
    degrees: Vec<u32>,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(dim: usize, degrees: &[u32]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("basis needs dim >= 1".into()));
        }
        let mut degrees: Vec<u32> = degrees.to_vec();
        degrees.sort_unstable();
        degrees.dedup();
        if degrees.is_empty() {
            return Err(Error::InvalidArgument("basis needs at least one degree".into()));
        }
        if degrees[0] < 2 {
            return Err(Error::InvalidArgument(
                "basis degrees must all be >= 2 so that the approximant vanishes at the origin"
                    .into(),
            ));
        }
        let mut exponents = Vec::new();
        for &d in &degrees {
            push_degree_block(&mut exponents, dim, d);
        }
        Ok(Self {
            dim,
            degrees,
            exponents,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Evaluates all basis monomials at `x`, in canonical order.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim);
        DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|e| monomial_value(e, x)),
        )
    }

    /// Index of the monomial with the given exponent tuple, if present.
    pub fn position(&self, exponent: &[u32]) -> Option<usize> {
        self.exponents.iter().position(|e| e == exponent)
    }

    /// True when the basis contains every degree-2 monomial, i.e. a full
    /// quadratic block that can encode an arbitrary symmetric matrix.
    pub fn has_full_quadratic_block(&self) -> bool {
        self.degrees.contains(&2)
    }
}

fn push_degree_block(out: &mut Vec<Vec<u32>>, dim: usize, degree: u32) {
    let mut current = vec![0u32; dim];
    fill(out, &mut current, 0, degree, dim);
}

fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32, dim: usize) {
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        fill(out, current, pos + 1, remaining - e, dim);
        current[pos] = 0;
    }
}

fn monomial_value(exponent: &[u32], x: &DVector<f64>) -> f64 {
    exponent
        .iter()
        .zip(x.iter())
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

/// Partial derivative of a single monomial with respect to coordinate `j`.
fn monomial_partial(exponent: &[u32], x: &DVector<f64>, j: usize) -> f64 {
    let ej = exponent[j];
    if ej == 0 {
        return 0.0;
    }
    let mut value = ej as f64 * x[j].powi(ej as i32 - 1);
    for (i, (&e, &v)) in exponent.iter().zip(x.iter()).enumerate() {
        if i != j {
            value *= v.powi(e as i32);
        }
    }
    value
}

/// Weighted monomial approximant `V(x) = w' Phi(x)`; vanishes at the
/// origin by construction of the basis.
#[derive(Debug, Clone)]
pub struct ValueApproximant {
    basis: MonomialBasis,
    weights: DVector<f64>,
}

impl ValueApproximant {
    pub fn new(basis: MonomialBasis, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a basis of {} monomials",
                weights.len(),
                basis.len()
            )));
        }
        Ok(Self { basis, weights })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.basis
            .exponents
            .iter()
            .zip(self.weights.iter())
            .map(|(e, &w)| w * monomial_value(e, x))
            .sum()
    }

    /// Analytic gradient via the exponent rule, term by term.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(self.basis.dim);
        for (e, &w) in self.basis.exponents.iter().zip(self.weights.iter()) {
            if w == 0.0 {
                continue;
            }
            for j in 0..self.basis.dim {
                if e[j] > 0 {
                    grad[j] += w * monomial_partial(e, x, j);
                }
            }
        }
        grad
    }

    /// Encodes `x' P x` exactly in the degree-2 block (higher-degree
    /// weights zero). Requires the basis to contain the full block.
    pub fn from_quadratic(basis: MonomialBasis, p: &DMatrix<f64>) -> Result<Self> {
        if !basis.has_full_quadratic_block() {
            return Err(Error::InvalidArgument(
                "basis has no degree-2 block to encode a quadratic form".into(),
            ));
        }
        let n = basis.dim;
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::DimensionMismatch("quadratic matrix size".into()));
        }
        let mut w = DVector::zeros(basis.len());
        for i in 0..n {
            for j in i..n {
                let mut exp = vec![0u32; n];
                exp[i] += 1;
                exp[j] += 1;
                let idx = basis
                    .position(&exp)
                    .expect("degree-2 block present by the check above");
                w[idx] = if i == j { p[(i, i)] } else { p[(i, j)] + p[(j, i)] };
            }
        }
        Self::new(basis, w)
    }

    /// Reads the quadratic form back out of the degree-2 block, provided
    /// every weight outside that block is exactly zero.
    pub fn as_quadratic(&self) -> Option<DMatrix<f64>> {
        let n = self.basis.dim;
        let mut p = DMatrix::zeros(n, n);
        for (e, &w) in self.basis.exponents.iter().zip(self.weights.iter()) {
            let total: u32 = e.iter().sum();
            if total != 2 {
                if w != 0.0 {
                    return None;
                }
                continue;
            }
            let mut idx = e
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize));
            let i = idx.next().unwrap();
            let j = idx.next().unwrap();
            if i == j {
                p[(i, i)] = w;
            } else {
                p[(i, j)] = w / 2.0;
                p[(j, i)] = w / 2.0;
            }
        }
        Some(p)
    }
}

/// Diagnostics from a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub residual_rms: f64,
    pub residual_max: f64,
    pub condition_estimate: f64,
    pub regularization_used: f64,
}

/// Minimizes `||A w - b||^2 + ridge ||w||^2` through an SVD (rank-revealing
/// orthogonal factorization). A rank-deficient system with ridge = 0 falls
/// back to the ridge floor, recorded in the report; fewer rows than columns
/// likewise forces the floor.
pub fn lstsq_fit(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, FitReport)> {
    let (p, l) = (features.nrows(), features.ncols());
    if targets.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} feature rows",
            targets.len(),
            p
        )));
    }
    if ridge < 0.0 {
        return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
    }
    let mut effective_ridge = ridge;
    if p < l && effective_ridge == 0.0 {
        effective_ridge = RIDGE_FLOOR;
    }

    let (weights, condition) = loop {
        match solve_ridge(features, targets, effective_ridge)? {
            Some(result) => break result,
            None => {
                // Rank deficiency at ridge = 0: retry once with the floor.
                effective_ridge = RIDGE_FLOOR;
            }
        }
    };

    let residual = features * &weights - targets;
    let residual_max = residual.amax();
    let residual_rms = (residual.norm_squared() / p.max(1) as f64).sqrt();
    Ok((
        weights,
        FitReport {
            residual_rms,
            residual_max,
            condition_estimate: condition,
            regularization_used: effective_ridge,
        },
    ))
}

/// One ridge solve; `None` signals rank deficiency at ridge = 0.
fn solve_ridge(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<Option<(DVector<f64>, f64)>> {
    let (p, l) = (a.nrows(), a.ncols());
    let (mat, rhs) = if ridge > 0.0 {
        let mut aug = DMatrix::zeros(p + l, l);
        aug.view_mut((0, 0), (p, l)).copy_from(a);
        let s = ridge.sqrt();
        for j in 0..l {
            aug[(p + j, j)] = s;
        }
        let mut rb = DVector::zeros(p + l);
        rb.rows_mut(0, p).copy_from(b);
        (aug, rb)
    } else {
        (a.clone(), b.clone())
    };

    let svd = mat.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_eps = smax * (p.max(l) as f64) * f64::EPSILON;
    if ridge == 0.0 && (smin <= rank_eps || smax == 0.0) {
        return Ok(None);
    }
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let w = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    Ok(Some((w, condition)))
}

/// Explicit policy approximant `mu(x) = W' Phi_a(x)` with the feature map
/// `Phi_a(x) = [x; x (x) x]` (the Kronecker square keeps its symmetric
/// duplicates; the redundancy is absorbed by the least-squares fit).
#[derive(Debug, Clone)]
pub struct PolicyApproximant {
    state_dim: usize,
    input_dim: usize,
    /// (n + n^2) x m weight matrix.
    weights: DMatrix<f64>,
}

impl PolicyApproximant {
    pub fn feature_len(state_dim: usize) -> usize {
        state_dim + state_dim * state_dim
    }

    pub fn features(state_dim: usize, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), state_dim);
        let mut phi = DVector::zeros(Self::feature_len(state_dim));
        phi.rows_mut(0, state_dim).copy_from(x);
        let mut idx = state_dim;
        for i in 0..state_dim {
            for j in 0..state_dim {
                phi[idx] = x[i] * x[j];
                idx += 1;
            }
        }
        phi
    }

    pub fn new(state_dim: usize, input_dim: usize, weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != Self::feature_len(state_dim) || weights.ncols() != input_dim {
            return Err(Error::DimensionMismatch(format!(
                "policy weights must be {}x{}",
                Self::feature_len(state_dim),
                input_dim
            )));
        }
        Ok(Self {
            state_dim,
            input_dim,
            weights,
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let phi = Self::features(self.state_dim, x);
        self.weights.transpose() * phi
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Least-squares fit of the approximant to sampled policy evaluations
    /// (one fit per input coordinate; reports the worst of the columns).
    pub fn fit(
        samples: &[DVector<f64>],
        targets: &[DVector<f64>],
        ridge: f64,
    ) -> Result<(Self, FitReport)> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("policy fit needs samples".into()))?;
        let state_dim = first.len();
        let input_dim = targets
            .first()
            .ok_or_else(|| Error::InvalidArgument("policy fit needs targets".into()))?
            .len();
        if samples.len() != targets.len() {
            return Err(Error::DimensionMismatch(
                "sample/target count mismatch in policy fit".into(),
            ));
        }
        let rows = samples.len();
        let cols = Self::feature_len(state_dim);
        let mut features = DMatrix::zeros(rows, cols);
        for (s, x) in samples.iter().enumerate() {
            features.row_mut(s).copy_from(&Self::features(state_dim, x).transpose());
        }
        let mut weights = DMatrix::zeros(cols, input_dim);
        let mut worst = FitReport {
            residual_rms: 0.0,
            residual_max: 0.0,
            condition_estimate: 0.0,
            regularization_used: 0.0,
        };
        for j in 0..input_dim {
            let b = DVector::from_iterator(rows, targets.iter().map(|t| t[j]));
            let (w, report) = lstsq_fit(&features, &b, ridge)?;
            weights.set_column(j, &w);
            worst.residual_rms = worst.residual_rms.max(report.residual_rms);
            worst.residual_max = worst.residual_max.max(report.residual_max);
            worst.condition_estimate = worst.condition_estimate.max(report.condition_estimate);
            worst.regularization_used = worst.regularization_used.max(report.regularization_used);
        }
        Ok((Self::new(state_dim, input_dim, weights)?, worst))
    }
}

impl Policy for PolicyApproximant {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.eval(x))
    }
}

/// Writes the weight-history CSV `iter,w1..wl`, one row per recorded
/// iteration starting at 0.
pub fn write_weight_history_csv<W: Write>(w: &mut W, history: &[DVector<f64>]) -> Result<()> {
    let l = history.first().map_or(0, |row| row.len());
    write!(w, "iter")?;
    for j in 1..=l {
        write!(w, ",w{j}")?;
    }
    writeln!(w)?;
    for (i, row) in history.iter().enumerate() {
        write!(w, "{i}")?;
        for v in row.iter() {
            write!(w, ",{}", f64_repr(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
