//! Chart-level differential geometry: Jacobians, kernels of constraint
//! matrices, exterior derivatives of one-forms and Lie brackets.
//!
//! Everything here works in one global chart. Angles are carried as
//! unwrapped reals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonholo::ConstraintDistribution;

/// Point of the configuration manifold in chart coordinates.
pub type ChartPoint = DVector<f64>;
/// Generalized velocity at a point.
pub type TangentVec = DVector<f64>;
/// Generalized momentum at a point.
pub type Covector = DVector<f64>;

/// Default relative step for central differences, `cbrt(f64::EPSILON)`.
pub const DEFAULT_FD_STEP_SCALE: f64 = 6.055_454_452_393_343e-6;
/// Default relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// Use the analytic derivative when the map carries one, central
    /// differences otherwise.
    Analytic,
    /// Always use central differences.
    CentralDifference,
}

/// How derivatives of chart maps are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifferentiationStrategy {
    pub mode: DiffMode,
    pub fd_step_scale: f64,
}

impl DifferentiationStrategy {
    pub fn new(mode: DiffMode, fd_step_scale: f64) -> Result<Self> {
        if !(fd_step_scale > 0.0 && fd_step_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fd_step_scale must be positive, got {fd_step_scale}"
            )));
        }
        Ok(Self { mode, fd_step_scale })
    }

    pub fn analytic() -> Self {
        Self { mode: DiffMode::Analytic, fd_step_scale: DEFAULT_FD_STEP_SCALE }
    }

    pub fn finite_difference() -> Self {
        Self { mode: DiffMode::CentralDifference, fd_step_scale: DEFAULT_FD_STEP_SCALE }
    }

    /// Step used for coordinate `x`: `fd_step_scale · max(1, |x|)`.
    pub fn step_for(&self, x: f64) -> f64 {
        self.fd_step_scale * x.abs().max(1.0)
    }
}

impl Default for DifferentiationStrategy {
    fn default() -> Self {
        Self::analytic()
    }
}

pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;

/// A smooth map `R^n → R^m` on the chart with an optional analytic Jacobian.
///
/// Used both for vector fields on `Q` and for the component maps of
/// one-forms.
#[derive(Clone)]
pub struct SmoothMap {
    eval: EvalFn,
    jac: Option<JacobianFn>,
}

/// Vector field on the configuration chart.
pub type VectorField = SmoothMap;

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap").field("analytic_jacobian", &self.jac.is_some()).finish()
    }
}

impl SmoothMap {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self { eval: Arc::new(eval), jac: None }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Constant map `q ↦ value`.
    pub fn constant(value: DVector<f64>) -> Self {
        let rows = value.len();
        Self::new(move |_| Ok(value.clone())).with_jacobian(move |q| Ok(DMatrix::zeros(rows, q.len())))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Evaluates the map, rejecting non-finite output.
    pub fn eval(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let v = (self.eval)(q)?;
        ensure_finite(&v, "map value")?;
        Ok(v)
    }

    pub fn jacobian(&self, q: &DVector<f64>, strat: &DifferentiationStrategy) -> Result<DMatrix<f64>> {
        match (&self.jac, strat.mode) {
            (Some(jac), DiffMode::Analytic) => {
                let j = jac(q)?;
                if j.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain("non-finite analytic Jacobian".into()));
                }
                Ok(j)
            }
            _ => jacobian(|x| self.eval(x), q, strat),
        }
    }

    /// Lie bracket `[self, other]` as a new field. Its Jacobian is always
    /// taken by central differences.
    pub fn bracket(&self, other: &SmoothMap, strat: DifferentiationStrategy) -> SmoothMap {
        let x = self.clone();
        let y = other.clone();
        SmoothMap::new(move |q| lie_bracket(&x, &y, q, &strat))
    }
}

pub(crate) fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite {what}")))
    }
}

/// Central-difference Jacobian `∂f_i/∂q^j` with per-coordinate step
/// `h_j = fd_step_scale · max(1, |q_j|)`.
pub fn jacobian<F>(f: F, q: &DVector<f64>, strat: &DifferentiationStrategy) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = q.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut work = q.clone();
    for j in 0..n {
        let h = strat.step_for(q[j]);
        work[j] = q[j] + h;
        let plus = f(&work)?;
        work[j] = q[j] - h;
        let minus = f(&work)?;
        work[j] = q[j];
        if plus.len() != minus.len() {
            return Err(Error::Dimension { expected: plus.len(), got: minus.len() });
        }
        // The actual spacing after rounding of q ± h.
        let span = (q[j] + h) - (q[j] - h);
        let col = (plus - minus) / span;
        ensure_finite(&col, "finite-difference column")?;
        cols.push(col);
    }
    let m = cols.first().map_or_else(|| f(q).map(|v| v.len()), |c| Ok(c.len()))?;
    Ok(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
}

/// Number of singular values above `rank_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * smax).count()
}

/// Orthonormal basis of `ker A` for a `k × n` matrix of full row rank.
///
/// The kernel comes from the right singular vectors of `A` padded with zero
/// rows to a square matrix, so the basis is orthonormal to working
/// precision.
pub fn nullspace_basis(a: &DMatrix<f64>, rank_tol: f64) -> Result<Vec<DVector<f64>>> {
    let (k, n) = a.shape();
    if k > n {
        return Err(Error::DegenerateConstraints { expected: k, found: n });
    }
    if k == 0 {
        return Ok((0..n).map(|i| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 })).collect());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite constraint matrix".into()));
    }
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (k, n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let threshold = rank_tol * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > threshold).count();
    if smax <= 0.0 || rank < k {
        return Err(Error::DegenerateConstraints { expected: k, found: rank });
    }
    let basis: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= threshold)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    debug_assert_eq!(basis.len(), n - k);
    Ok(basis)
}

/// `dγ(v, w) = Σ_{i,j} ∂_j γ_i (v^j w^i − w^j v^i)`.
pub fn d_oneform_pair(
    gamma: &SmoothMap,
    q: &ChartPoint,
    v: &TangentVec,
    w: &TangentVec,
    strat: &DifferentiationStrategy,
) -> Result<f64> {
    let jac = gamma.jacobian(q, strat)?;
    Ok(w.dot(&(&jac * v)) - v.dot(&(&jac * w)))
}

/// `[X, Y](q) = J_Y(q) X(q) − J_X(q) Y(q)`.
pub fn lie_bracket(
    x: &VectorField,
    y: &VectorField,
    q: &ChartPoint,
    strat: &DifferentiationStrategy,
) -> Result<TangentVec> {
    let xv = x.eval(q)?;
    let yv = y.eval(q)?;
    let jx = x.jacobian(q, strat)?;
    let jy = y.jacobian(q, strat)?;
    Ok(jy * xv - jx * yv)
}

/// Rank reached by the bracket flag of a distribution at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketRank {
    pub rank: usize,
    /// Smallest bracket depth at which `rank` was first attained.
    pub depth: usize,
}

/// Pointwise bracket-generating test.
///
/// Starts from a smooth local frame of `D` near `q` and repeatedly adds the
/// brackets of the frame with the previous layer, `D_{d+1} = D_d + [D, D_d]`,
/// until the span is all of `T_qQ` or `max_depth` is exhausted. A result
/// with `rank == n` certifies the distribution is bracket generating at `q`
/// only.
pub fn bracket_generating_rank(
    dist: &ConstraintDistribution,
    q: &ChartPoint,
    max_depth: usize,
    rank_tol: f64,
    strat: &DifferentiationStrategy,
) -> Result<BracketRank> {
    let n = dist.dim();
    let frame = dist.local_frame(q, rank_tol, *strat)?;
    let mut values: Vec<DVector<f64>> = frame.iter().map(|f| f.eval(q)).collect::<Result<_>>()?;
    let rank_of = |vals: &[DVector<f64>]| {
        if vals.is_empty() {
            0
        } else {
            numerical_rank(&DMatrix::from_columns(vals), rank_tol)
        }
    };
    let mut best = BracketRank { rank: rank_of(&values), depth: 0 };
    let mut layer = frame.clone();
    for depth in 1..=max_depth {
        if best.rank == n || layer.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for (i, x) in frame.iter().enumerate() {
            for (j, y) in layer.iter().enumerate() {
                if depth == 1 && j <= i {
                    continue;
                }
                let field = x.bracket(y, *strat);
                values.push(field.eval(q)?);
                next.push(field);
            }
        }
        let r = rank_of(&values);
        if r > best.rank {
            best = BracketRank { rank: r, depth };
        }
        layer = next;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn fd() -> DifferentiationStrategy {
        DifferentiationStrategy::finite_difference()
    }

    #[test]
    fn default_step_is_cube_root_of_epsilon() {
        assert_abs_diff_eq!(DEFAULT_FD_STEP_SCALE, f64::EPSILON.cbrt(), epsilon = 1e-20);
        assert!(DifferentiationStrategy::new(DiffMode::Analytic, 0.0).is_err());
        assert!(DifferentiationStrategy::new(DiffMode::Analytic, -1.0).is_err());
    }

    #[test]
    fn jacobian_of_identity() {
        let j = jacobian(|q| Ok(q.clone()), &dvector![0.3, -2.0, 7.5], &fd()).unwrap();
        assert_abs_diff_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-9);
    }

    #[test]
    fn jacobian_of_product() {
        let j = jacobian(|q| Ok(dvector![q[0] * q[1]]), &dvector![2.0, 3.0], &fd()).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[(0, 1)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn jacobian_reports_non_finite_values() {
        let err = jacobian(|q| Ok(dvector![q[0].sqrt()]), &dvector![0.0], &fd()).unwrap_err();
        assert!(err.is_domain(), "{err}");
    }

    #[test]
    fn analytic_mode_delegates() {
        let map = SmoothMap::new(|q| Ok(dvector![q[0] * q[0]])).with_jacobian(|_| Ok(DMatrix::from_element(1, 1, 42.0)));
        let q = dvector![1.0];
        assert_eq!(map.jacobian(&q, &DifferentiationStrategy::analytic()).unwrap()[(0, 0)], 42.0);
        assert_abs_diff_eq!(map.jacobian(&q, &fd()).unwrap()[(0, 0)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn nullspace_of_coordinate_row() {
        let basis = nullspace_basis(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.len(), 1);
        assert_abs_diff_eq!(basis[0][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(basis[0][1].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nullspace_of_rolling_disk_constraints() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0]);
        let basis = nullspace_basis(&a, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.len(), 2);
        let v = DMatrix::from_columns(&basis);
        assert_abs_diff_eq!(&a * &v, DMatrix::zeros(2, 2), epsilon = 1e-14);
        assert_abs_diff_eq!(v.transpose() * &v, DMatrix::identity(2, 2), epsilon = 1e-14);
        // Same span as {e_phi, (e_x + e_psi)/√2}: projecting those onto the
        // basis loses nothing.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for target in [dvector![0.0, 0.0, 1.0, 0.0], dvector![s, 0.0, 0.0, s]] {
            let proj = &v * (v.transpose() * &target);
            assert_abs_diff_eq!(proj, target, epsilon = 1e-14);
        }
    }

    #[test]
    fn nullspace_rejects_rank_deficient_rows() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(
            nullspace_basis(&a, DEFAULT_RANK_TOL),
            Err(Error::DegenerateConstraints { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn nullspace_without_constraints_is_the_standard_basis() {
        let basis = nullspace_basis(&DMatrix::zeros(0, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(DMatrix::from_columns(&basis), DMatrix::identity(3, 3));
    }

    #[test]
    fn exterior_derivative_of_exact_form_vanishes() {
        // γ = dW with W = q1².
        let gamma = SmoothMap::new(|q| Ok(dvector![2.0 * q[0], 0.0]));
        let q = dvector![0.7, -1.3];
        let v = dvector![1.0, 2.0];
        let w = dvector![-0.5, 3.0];
        assert_abs_diff_eq!(d_oneform_pair(&gamma, &q, &v, &w, &fd()).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn exterior_derivative_of_area_form() {
        // γ = q1 dq2, dγ = dq1 ∧ dq2.
        let gamma = SmoothMap::new(|q| Ok(dvector![0.0, q[0]]));
        let q = dvector![0.2, 0.4];
        let val = d_oneform_pair(&gamma, &q, &dvector![1.0, 0.0], &dvector![0.0, 1.0], &fd()).unwrap();
        assert_abs_diff_eq!(val, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn brackets_of_constant_fields_vanish() {
        let x = SmoothMap::constant(dvector![1.0, 2.0]);
        let y = SmoothMap::constant(dvector![-3.0, 0.5]);
        let b = lie_bracket(&x, &y, &dvector![0.1, 0.2], &fd()).unwrap();
        assert_eq!(b, dvector![0.0, 0.0]);
    }

    #[test]
    fn bracket_of_dx_and_x_dy() {
        let x = SmoothMap::constant(dvector![1.0, 0.0]);
        let y = SmoothMap::new(|q| Ok(dvector![0.0, q[0]]));
        let b = lie_bracket(&x, &y, &dvector![0.6, -0.1], &fd()).unwrap();
        assert_abs_diff_eq!(b, dvector![0.0, 1.0], epsilon = 1e-9);
    }
}
