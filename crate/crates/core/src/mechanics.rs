//! Kinetic-minus-potential mechanical systems `L = ½ g(v, v) − V(q)` and
//! their Hamiltonian `H = ½ pᵀ g⁻¹ p + V`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::{jacobian, ChartPoint, Covector, DiffMode, DifferentiationStrategy, TangentVec};

pub type MetricFn = Arc<dyn Fn(&ChartPoint) -> Result<DMatrix<f64>> + Send + Sync>;
/// Returns `[∂g/∂q^1, …, ∂g/∂q^n]`.
pub type MetricDerivativeFn = Arc<dyn Fn(&ChartPoint) -> Result<Vec<DMatrix<f64>>> + Send + Sync>;
pub type PotentialFn = Arc<dyn Fn(&ChartPoint) -> Result<f64> + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&ChartPoint) -> Result<DVector<f64>> + Send + Sync>;

/// Largest accepted condition number of the metric.
pub const MAX_METRIC_CONDITION: f64 = 1e12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Point `(q, p)` of the cotangent bundle at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: ChartPoint,
    pub p: Covector,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: ChartPoint, p: Covector, t: f64) -> Self {
        Self { q, p, t }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.p[i - n] })
    }

    pub fn from_stacked(z: &DVector<f64>, t: f64) -> Self {
        let n = z.len() / 2;
        Self { q: z.rows(0, n).into_owned(), p: z.rows(n, n).into_owned(), t }
    }
}

/// First and second derivatives of the Hamiltonian at one phase point.
///
/// `h_pq[(i, j)] = ∂²H / ∂p_i ∂q^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianDerivs {
    pub h_q: DVector<f64>,
    pub h_p: DVector<f64>,
    pub h_pp: DMatrix<f64>,
    pub h_pq: DMatrix<f64>,
}

/// A metric `g(q)` and potential `V(q)` on an `n`-dimensional chart.
#[derive(Clone)]
pub struct MechanicalSystem {
    coords: Vec<String>,
    metric: MetricFn,
    metric_derivative: Option<MetricDerivativeFn>,
    potential: PotentialFn,
    potential_gradient: Option<GradientFn>,
    params: BTreeMap<String, f64>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("coords", &self.coords)
            .field("params", &self.params)
            .field("analytic_metric_derivative", &self.metric_derivative.is_some())
            .field("analytic_potential_gradient", &self.potential_gradient.is_some())
            .finish()
    }
}

impl MechanicalSystem {
    /// Free motion (`V ≡ 0`) with the given metric.
    pub fn new<G>(coords: Vec<String>, metric: G) -> Self
    where
        G: Fn(&ChartPoint) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        let n = coords.len();
        Self {
            coords,
            metric: Arc::new(metric),
            metric_derivative: None,
            potential: Arc::new(|_| Ok(0.0)),
            potential_gradient: Some(Arc::new(move |_| Ok(DVector::zeros(n)))),
            params: BTreeMap::new(),
        }
    }

    /// Constant metric, optionally with a linear potential `V = b·q`.
    pub fn constant(coords: Vec<String>, metric: DMatrix<f64>, linear_potential: Option<DVector<f64>>) -> Self {
        let n = coords.len();
        let g = metric.clone();
        let sys = Self::new(coords, move |_| Ok(g.clone()))
            .with_metric_derivative(move |_| Ok(vec![DMatrix::zeros(n, n); n]));
        match linear_potential {
            Some(b) => {
                let grad = b.clone();
                sys.with_potential(move |q| Ok(b.dot(q)), Some(move |_: &ChartPoint| Ok(grad.clone())))
            }
            None => sys,
        }
    }

    pub fn with_metric_derivative<D>(mut self, d: D) -> Self
    where
        D: Fn(&ChartPoint) -> Result<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    {
        self.metric_derivative = Some(Arc::new(d));
        self
    }

    pub fn with_potential<V, G>(mut self, potential: V, gradient: Option<G>) -> Self
    where
        V: Fn(&ChartPoint) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&ChartPoint) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.potential = Arc::new(potential);
        self.potential_gradient = gradient.map(|g| Arc::new(g) as GradientFn);
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.metric_derivative.is_some() && self.potential_gradient.is_some()
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    /// `g(q)`, checked for shape, finiteness and symmetry.
    pub fn metric(&self, q: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_len(q)?;
        let g = (self.metric)(q)?;
        let n = self.dim();
        if g.shape() != (n, n) {
            return Err(Error::MetricDegenerate(format!("metric has shape {:?}, expected ({n}, {n})", g.shape())));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite metric".into()));
        }
        let scale = g.amax().max(1.0);
        if (&g - g.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::MetricDegenerate("metric is not symmetric".into()));
        }
        Ok(g)
    }

    /// Cholesky factor of `g(q)`; fails when `g` is not positive definite or
    /// its condition number exceeds [`MAX_METRIC_CONDITION`].
    pub fn metric_factor(&self, q: &ChartPoint) -> Result<Cholesky<f64, Dyn>> {
        let g = self.metric(q)?;
        let chol = Cholesky::new(g).ok_or_else(|| Error::MetricDegenerate("metric is not positive definite".into()))?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if self.dim() > 0 && (lo <= 0.0 || (hi / lo).powi(2) > MAX_METRIC_CONDITION) {
            return Err(Error::MetricDegenerate(format!("metric condition estimate {:e}", (hi / lo).powi(2))));
        }
        Ok(chol)
    }

    pub fn inverse_metric(&self, q: &ChartPoint) -> Result<DMatrix<f64>> {
        let g_inv = self.metric_factor(q)?.inverse();
        // Symmetrize away rounding so H_pp is exactly symmetric.
        Ok((&g_inv + g_inv.transpose()) * 0.5)
    }

    /// `[∂g/∂q^1, …, ∂g/∂q^n]`, analytic when available and allowed.
    pub fn metric_derivative(&self, q: &ChartPoint, strat: &DifferentiationStrategy) -> Result<Vec<DMatrix<f64>>> {
        self.check_len(q)?;
        let n = self.dim();
        if let (Some(d), DiffMode::Analytic) = (&self.metric_derivative, strat.mode) {
            let ds = d(q)?;
            if ds.len() != n || ds.iter().any(|m| m.shape() != (n, n)) {
                return Err(Error::Dimension { expected: n, got: ds.len() });
            }
            return Ok(ds);
        }
        let flat = jacobian(|x| self.metric(x).map(|g| DVector::from_column_slice(g.as_slice())), q, strat)?;
        Ok((0..n).map(|j| DMatrix::from_column_slice(n, n, flat.column(j).as_slice())).collect())
    }

    pub fn potential(&self, q: &ChartPoint) -> Result<f64> {
        self.check_len(q)?;
        let v = (self.potential)(q)?;
        if !v.is_finite() {
            return Err(Error::Domain("non-finite potential".into()));
        }
        Ok(v)
    }

    pub fn potential_gradient(&self, q: &ChartPoint, strat: &DifferentiationStrategy) -> Result<DVector<f64>> {
        self.check_len(q)?;
        if let (Some(g), DiffMode::Analytic) = (&self.potential_gradient, strat.mode) {
            return g(q);
        }
        let j = jacobian(|x| self.potential(x).map(|v| DVector::from_element(1, v)), q, strat)?;
        Ok(j.row(0).transpose())
    }

    /// `p = g(q) v`.
    pub fn legendre(&self, q: &ChartPoint, v: &TangentVec) -> Result<Covector> {
        self.check_len(v)?;
        Ok(self.metric(q)? * v)
    }

    /// `v = g(q)⁻¹ p`.
    pub fn legendre_inv(&self, q: &ChartPoint, p: &Covector) -> Result<TangentVec> {
        self.check_len(p)?;
        Ok(self.metric_factor(q)?.solve(p))
    }

    pub fn kinetic_energy(&self, q: &ChartPoint, p: &Covector) -> Result<f64> {
        let v = self.legendre_inv(q, p)?;
        Ok(0.5 * p.dot(&v))
    }

    /// `H(q, p) = ½ pᵀ g(q)⁻¹ p + V(q)`.
    pub fn hamiltonian(&self, q: &ChartPoint, p: &Covector) -> Result<f64> {
        Ok(self.kinetic_energy(q, p)? + self.potential(q)?)
    }

    pub fn hamiltonian_derivs(
        &self,
        q: &ChartPoint,
        p: &Covector,
        strat: &DifferentiationStrategy,
    ) -> Result<HamiltonianDerivs> {
        self.check_len(p)?;
        let h_pp = self.inverse_metric(q)?;
        let h_p = &h_pp * p;
        let n = self.dim();
        let (h_q, h_pq) = match strat.mode {
            DiffMode::Analytic => {
                let dg = self.metric_derivative(q, strat)?;
                let grad_v = self.potential_gradient(q, strat)?;
                let mut h_q = grad_v;
                let mut h_pq = DMatrix::zeros(n, n);
                for (j, dgj) in dg.iter().enumerate() {
                    let dgv = dgj * &h_p;
                    h_q[j] -= 0.5 * h_p.dot(&dgv);
                    h_pq.set_column(j, &(-(&h_pp * dgv)));
                }
                (h_q, h_pq)
            }
            DiffMode::CentralDifference => {
                let jq = jacobian(|x| self.hamiltonian(x, p).map(|h| DVector::from_element(1, h)), q, strat)?;
                let h_pq = jacobian(|x| self.legendre_inv(x, p), q, strat)?;
                (jq.row(0).transpose(), h_pq)
            }
        };
        Ok(HamiltonianDerivs { h_q, h_p, h_pp, h_pq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i}")).collect()
    }

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(d))
    }

    #[test]
    fn legendre_of_zero_velocity() {
        let sys = MechanicalSystem::constant(names(4), diag(&[1.0, 1.0, 1.0, 1.0]), None);
        let q = DVector::zeros(4);
        assert_eq!(sys.legendre(&q, &DVector::zeros(4)).unwrap(), DVector::zeros(4));
        assert_eq!(sys.legendre_inv(&q, &DVector::zeros(4)).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn legendre_with_unit_disk_metric() {
        let sys = MechanicalSystem::constant(names(4), diag(&[1.0, 1.0, 1.0, 1.0]), None);
        let p = sys.legendre(&DVector::zeros(4), &dvector![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(p, dvector![1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn scalar_metric_inverse() {
        let sys = MechanicalSystem::constant(names(2), diag(&[2.0, 2.0]), None);
        let v = sys.legendre_inv(&DVector::zeros(2), &dvector![4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(v, dvector![2.0, 3.0], epsilon = 1e-15);
    }

    #[test]
    fn degenerate_metrics_are_rejected() {
        let singular = MechanicalSystem::constant(names(2), diag(&[1.0, 0.0]), None);
        assert!(matches!(singular.legendre_inv(&DVector::zeros(2), &dvector![1.0, 1.0]), Err(Error::MetricDegenerate(_))));
        let ill = MechanicalSystem::constant(names(2), diag(&[1.0, 1e-14]), None);
        assert!(matches!(ill.hamiltonian(&DVector::zeros(2), &dvector![1.0, 1.0]), Err(Error::MetricDegenerate(_))));
        let asym = MechanicalSystem::constant(names(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]), None);
        assert!(matches!(asym.metric(&DVector::zeros(2)), Err(Error::MetricDegenerate(_))));
    }

    #[test]
    fn hamiltonian_at_rest_without_potential() {
        let sys = MechanicalSystem::constant(names(3), diag(&[1.0, 2.0, 3.0]), None);
        assert_eq!(sys.hamiltonian(&dvector![1.0, 2.0, 3.0], &DVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn constant_metric_has_no_mixed_derivative() {
        let sys = MechanicalSystem::constant(names(3), diag(&[1.0, 2.0, 3.0]), Some(dvector![0.5, 0.0, -1.0]));
        let d = sys
            .hamiltonian_derivs(&dvector![0.1, 0.2, 0.3], &dvector![1.0, -1.0, 2.0], &DifferentiationStrategy::analytic())
            .unwrap();
        assert_eq!(d.h_pq, DMatrix::zeros(3, 3));
        assert_eq!(d.h_q, dvector![0.5, 0.0, -1.0]);
        assert_abs_diff_eq!(d.h_pp, d.h_pp.transpose(), epsilon = 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = MechanicalSystem::constant(names(2), diag(&[1.0, 1.0]), None);
        assert!(matches!(sys.hamiltonian(&DVector::zeros(3), &DVector::zeros(2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn phase_state_stacking() {
        let z = PhaseState::new(dvector![1.0, 2.0], dvector![3.0, 4.0], 0.5);
        let s = z.stacked();
        assert_eq!(s, dvector![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(PhaseState::from_stacked(&s, 0.5), z);
    }
}
