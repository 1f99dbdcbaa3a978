//! Linear velocity constraints `ω^s = A^s_i dq^i` and the nonholonomic
//! Hamiltonian vector field on the constrained momentum space `M = FL(D)`.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{jacobian, nullspace_basis, ChartPoint, Covector, DiffMode, DifferentiationStrategy, SmoothMap, TangentVec};
use crate::mechanics::MechanicalSystem;

pub type ConstraintFn = Arc<dyn Fn(&ChartPoint) -> Result<DMatrix<f64>> + Send + Sync>;
/// Returns `[∂A/∂q^1, …, ∂A/∂q^n]`, each `k × n`.
pub type ConstraintDerivativeFn = Arc<dyn Fn(&ChartPoint) -> Result<Vec<DMatrix<f64>>> + Send + Sync>;

/// The distribution `D = ker A(q)` given by its `k × n` constraint matrix.
#[derive(Clone)]
pub struct ConstraintDistribution {
    n: usize,
    k: usize,
    a: ConstraintFn,
    derivative: Option<ConstraintDerivativeFn>,
}

impl fmt::Debug for ConstraintDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintDistribution")
            .field("n", &self.n)
            .field("k", &self.k)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl ConstraintDistribution {
    pub fn new<F>(n: usize, k: usize, a: F) -> Self
    where
        F: Fn(&ChartPoint) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self { n, k, a: Arc::new(a), derivative: None }
    }

    pub fn with_derivative<F>(mut self, d: F) -> Self
    where
        F: Fn(&ChartPoint) -> Result<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(d));
        self
    }

    /// `D = TQ`.
    pub fn unconstrained(n: usize) -> Self {
        Self::constant(DMatrix::zeros(0, n))
    }

    pub fn constant(a: DMatrix<f64>) -> Self {
        let (k, n) = a.shape();
        Self::new(n, k, move |_| Ok(a.clone())).with_derivative(move |_| Ok(vec![DMatrix::zeros(k, n); n]))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.k
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn matrix(&self, q: &ChartPoint) -> Result<DMatrix<f64>> {
        if q.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: q.len() });
        }
        let a = (self.a)(q)?;
        if a.shape() != (self.k, self.n) {
            return Err(Error::Dimension { expected: self.k * self.n, got: a.len() });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite constraint matrix".into()));
        }
        Ok(a)
    }

    pub fn derivative(&self, q: &ChartPoint, strat: &DifferentiationStrategy) -> Result<Vec<DMatrix<f64>>> {
        let (k, n) = (self.k, self.n);
        if let (Some(d), DiffMode::Analytic) = (&self.derivative, strat.mode) {
            self.matrix(q)?;
            let ds = d(q)?;
            if ds.len() != n || ds.iter().any(|m| m.shape() != (k, n)) {
                return Err(Error::Dimension { expected: n, got: ds.len() });
            }
            return Ok(ds);
        }
        let flat = jacobian(|x| self.matrix(x).map(|a| DVector::from_column_slice(a.as_slice())), q, strat)?;
        Ok((0..n).map(|j| DMatrix::from_column_slice(k, n, flat.column(j).as_slice())).collect())
    }

    /// Orthonormal basis of `D_q`.
    pub fn basis(&self, q: &ChartPoint, rank_tol: f64) -> Result<Vec<TangentVec>> {
        nullspace_basis(&self.matrix(q)?, rank_tol)
    }

    /// Smooth frame of `D` near `anchor`: the fields `q ↦ P(q) u_i`, where
    /// `P(q) = I − Aᵀ(AAᵀ)⁻¹A` projects onto `D_q` and `u_i` is an orthonormal
    /// basis of `D_anchor`. Jacobians are computed from `∂A/∂q`.
    pub fn local_frame(&self, anchor: &ChartPoint, rank_tol: f64, strat: DifferentiationStrategy) -> Result<Vec<SmoothMap>> {
        let basis = self.basis(anchor, rank_tol)?;
        let frame = basis
            .into_iter()
            .map(|u| {
                let dist = self.clone();
                let dist_j = self.clone();
                let u_j = u.clone();
                SmoothMap::new(move |q| {
                    let a = dist.matrix(q)?;
                    Ok(&u - a.transpose() * solve_gram(&a, &(&a * &u))?)
                })
                .with_jacobian(move |q| {
                    let a = dist_j.matrix(q)?;
                    let da = dist_j.derivative(q, &strat)?;
                    let y = solve_gram(&a, &(&a * &u_j))?;
                    let mut jac = DMatrix::zeros(q.len(), q.len());
                    for (j, daj) in da.iter().enumerate() {
                        let dc = daj * a.transpose() + &a * daj.transpose();
                        let dy = solve_gram(&a, &(daj * &u_j - dc * &y))?;
                        jac.set_column(j, &(-(daj.transpose() * &y) - a.transpose() * dy));
                    }
                    Ok(jac)
                })
            })
            .collect();
        Ok(frame)
    }
}

fn solve_gram(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = Cholesky::new(a * a.transpose())
        .ok_or(Error::DegenerateConstraints { expected: a.nrows(), found: a.nrows() - 1 })?;
    Ok(chol.solve(rhs))
}

/// What `multipliers` does when the momentum is off `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipPolicy {
    Ignore,
    Warn { tol: f64 },
    Error { tol: f64 },
}

impl Default for MembershipPolicy {
    fn default() -> Self {
        MembershipPolicy::Warn { tol: 1e-6 }
    }
}

/// A mechanical system together with its constraint distribution.
#[derive(Debug, Clone)]
pub struct NonholonomicSystem {
    pub mech: MechanicalSystem,
    pub dist: ConstraintDistribution,
    pub membership: MembershipPolicy,
}

impl NonholonomicSystem {
    pub fn new(mech: MechanicalSystem, dist: ConstraintDistribution) -> Result<Self> {
        if mech.dim() != dist.dim() {
            return Err(Error::Dimension { expected: mech.dim(), got: dist.dim() });
        }
        if dist.num_constraints() > dist.dim() {
            return Err(Error::DegenerateConstraints { expected: dist.num_constraints(), found: dist.dim() });
        }
        Ok(Self { mech, dist, membership: MembershipPolicy::default() })
    }

    pub fn with_membership_policy(mut self, policy: MembershipPolicy) -> Self {
        self.membership = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.mech.dim()
    }

    pub fn num_constraints(&self) -> usize {
        self.dist.num_constraints()
    }

    pub fn coords(&self) -> &[String] {
        self.mech.coords()
    }

    pub fn energy(&self, q: &ChartPoint, p: &Covector) -> Result<f64> {
        self.mech.hamiltonian(q, p)
    }

    /// `A(q) g(q)⁻¹ p`, the constraint forms applied to the velocity.
    pub fn constraint_residual(&self, q: &ChartPoint, p: &Covector) -> Result<DVector<f64>> {
        let v = self.mech.legendre_inv(q, p)?;
        Ok(self.dist.matrix(q)? * v)
    }

    /// Membership `p ∈ M_q` with its residual vector.
    pub fn in_constrained_momentum_space(&self, q: &ChartPoint, p: &Covector, tol: f64) -> Result<(bool, DVector<f64>)> {
        let r = self.constraint_residual(q, p)?;
        let ok = r.iter().all(|x| x.abs() <= tol);
        Ok((ok, r))
    }

    /// `C = A H_pp Aᵀ = A g⁻¹ Aᵀ`. Independent of `p` for mechanical systems.
    pub fn regularity_matrix(&self, q: &ChartPoint, _p: &Covector) -> Result<DMatrix<f64>> {
        let a = self.dist.matrix(q)?;
        let c = &a * self.mech.inverse_metric(q)? * a.transpose();
        Ok((&c + c.transpose()) * 0.5)
    }

    /// Smallest eigenvalue of the regularity matrix, `+∞` when `k = 0`.
    pub fn regularity_min_eigenvalue(&self, q: &ChartPoint) -> Result<f64> {
        let c = self.regularity_matrix(q, &DVector::zeros(self.dim()))?;
        if c.nrows() == 0 {
            return Ok(f64::INFINITY);
        }
        Ok(c.symmetric_eigenvalues().min())
    }

    /// Least-squares correction onto `M_q` in the `g⁻¹` inner product:
    /// `p ← p − Aᵀ C⁻¹ A g⁻¹ p`.
    pub fn project_onto_m(&self, q: &ChartPoint, p: &Covector) -> Result<Covector> {
        if self.num_constraints() == 0 {
            return Ok(p.clone());
        }
        let a = self.dist.matrix(q)?;
        let chol = Cholesky::new(self.regularity_matrix(q, p)?).ok_or(Error::RegularityFailure)?;
        let r = &a * self.mech.legendre_inv(q, p)?;
        Ok(p - a.transpose() * chol.solve(&r))
    }

    /// Multipliers `λ` solving `C λ = b`, chosen so that `d/dt (A H_p) = 0`
    /// along the flow:
    ///
    /// `b^s = A^s_i H_{p_i p_j} H_{q_j} − ∂_j A^s_i H_{p_j} H_{p_i} − A^s_i H_{p_i q_j} H_{p_j}`.
    pub fn multipliers(&self, q: &ChartPoint, p: &Covector, strat: &DifferentiationStrategy) -> Result<DVector<f64>> {
        let k = self.num_constraints();
        if k == 0 {
            return Ok(DVector::zeros(0));
        }
        let a = self.dist.matrix(q)?;
        let d = self.mech.hamiltonian_derivs(q, p, strat)?;
        self.check_membership(&(&a * &d.h_p))?;
        let da = self.dist.derivative(q, strat)?;
        let mut b = &a * (&d.h_pp * &d.h_q) - &a * (&d.h_pq * &d.h_p);
        for (j, daj) in da.iter().enumerate() {
            b -= (daj * &d.h_p) * d.h_p[j];
        }
        let c = &a * &d.h_pp * a.transpose();
        let chol = Cholesky::new((&c + c.transpose()) * 0.5).ok_or(Error::RegularityFailure)?;
        Ok(chol.solve(&b))
    }

    fn check_membership(&self, residual: &DVector<f64>) -> Result<()> {
        let r = residual.amax();
        match self.membership {
            MembershipPolicy::Ignore => Ok(()),
            MembershipPolicy::Warn { tol } => {
                if r > tol {
                    warn!("momentum off the constrained momentum space: residual {r:e}");
                }
                Ok(())
            }
            MembershipPolicy::Error { tol } if r > tol => Err(Error::ConstraintViolation { residual: r, tol }),
            MembershipPolicy::Error { .. } => Ok(()),
        }
    }

    /// The nonholonomic Hamiltonian vector field
    /// `q̇ = H_p`, `ṗ = −H_q + Aᵀ λ`.
    pub fn xh_nh(&self, q: &ChartPoint, p: &Covector, strat: &DifferentiationStrategy) -> Result<(TangentVec, Covector)> {
        let d = self.mech.hamiltonian_derivs(q, p, strat)?;
        let mut p_dot = -d.h_q;
        if self.num_constraints() > 0 {
            let lambda = self.multipliers(q, p, strat)?;
            p_dot += self.dist.matrix(q)?.transpose() * lambda;
        }
        Ok((d.h_p, p_dot))
    }

    /// `xh_nh` on the stacked state `(q, p)`.
    pub fn xh_nh_stacked(&self, z: &DVector<f64>, strat: &DifferentiationStrategy) -> Result<DVector<f64>> {
        let n = self.dim();
        if z.len() != 2 * n {
            return Err(Error::Dimension { expected: 2 * n, got: z.len() });
        }
        let q = z.rows(0, n).into_owned();
        let p = z.rows(n, n).into_owned();
        let (qd, pd) = self.xh_nh(&q, &p, strat)?;
        Ok(DVector::from_fn(2 * n, |i, _| if i < n { qd[i] } else { pd[i - n] }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn knife(m: f64, j: f64, slope: f64) -> NonholonomicSystem {
        let coords = vec!["x".into(), "y".into(), "phi".into()];
        let g = DMatrix::from_diagonal(&dvector![m, m, j]);
        let mech = MechanicalSystem::constant(coords, g, Some(dvector![-slope, 0.0, 0.0]));
        let dist = ConstraintDistribution::new(3, 1, |q| Ok(DMatrix::from_row_slice(1, 3, &[q[2].sin(), -q[2].cos(), 0.0])))
            .with_derivative(|q| {
                Ok(vec![
                    DMatrix::zeros(1, 3),
                    DMatrix::zeros(1, 3),
                    DMatrix::from_row_slice(1, 3, &[q[2].cos(), q[2].sin(), 0.0]),
                ])
            });
        NonholonomicSystem::new(mech, dist).unwrap()
    }

    #[test]
    fn zero_momentum_is_in_m() {
        let sys = knife(2.0, 1.0, 0.0);
        let (ok, r) = sys.in_constrained_momentum_space(&dvector![1.0, 2.0, 0.4], &DVector::zeros(3), 1e-12).unwrap();
        assert!(ok);
        assert_eq!(r.amax(), 0.0);
    }

    #[test]
    fn knife_edge_regularity_matrix_is_inverse_mass() {
        let sys = knife(2.5, 1.0, 0.0);
        for phi in [0.0, 0.3, 1.2, -2.0] {
            let c = sys.regularity_matrix(&dvector![0.0, 0.0, phi], &DVector::zeros(3)).unwrap();
            assert_abs_diff_eq!(c[(0, 0)], 1.0 / 2.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn unconstrained_regularity_matrix_is_empty() {
        let mech = MechanicalSystem::constant(vec!["a".into(), "b".into()], DMatrix::identity(2, 2), None);
        let sys = NonholonomicSystem::new(mech, ConstraintDistribution::unconstrained(2)).unwrap();
        let c = sys.regularity_matrix(&DVector::zeros(2), &DVector::zeros(2)).unwrap();
        assert_eq!(c.shape(), (0, 0));
        assert!(sys.multipliers(&DVector::zeros(2), &dvector![1.0, 1.0], &Default::default()).unwrap().is_empty());
        assert_eq!(sys.regularity_min_eigenvalue(&DVector::zeros(2)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn straight_motion_on_flat_knife_edge_needs_no_force() {
        let sys = knife(1.0, 1.0, 0.0);
        let phi: f64 = 0.7;
        let q = dvector![0.3, -0.2, phi];
        let p = dvector![phi.cos(), phi.sin(), 0.0];
        let lambda = sys.multipliers(&q, &p, &Default::default()).unwrap();
        assert_abs_diff_eq!(lambda[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_lands_on_m() {
        let sys = knife(1.5, 0.7, 0.0);
        let q = dvector![0.0, 0.0, 0.9];
        let p = sys.project_onto_m(&q, &dvector![1.0, 2.0, 3.0]).unwrap();
        let (ok, r) = sys.in_constrained_momentum_space(&q, &p, 1e-14).unwrap();
        assert!(ok, "{r}");
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn strict_membership_policy_rejects_off_m_momenta() {
        let sys = knife(1.0, 1.0, 0.0).with_membership_policy(MembershipPolicy::Error { tol: 1e-8 });
        let err = sys.multipliers(&dvector![0.0, 0.0, 0.0], &dvector![0.0, 1.0, 0.0], &Default::default()).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation { .. }));
    }

    #[test]
    fn energy_rate_vanishes_on_m() {
        let sys = knife(1.0, 0.5, 0.4);
        let strat = DifferentiationStrategy::analytic();
        for (phi, speed, spin) in [(0.2, 1.0, 0.3), (-1.1, 0.4, -2.0), (2.5, -0.7, 1.0)] {
            let q = dvector![0.5, 0.1, phi];
            let p = dvector![speed * f64::cos(phi), speed * f64::sin(phi), spin];
            let (qd, pd) = sys.xh_nh(&q, &p, &strat).unwrap();
            let d = sys.mech.hamiltonian_derivs(&q, &p, &strat).unwrap();
            assert_abs_diff_eq!(d.h_q.dot(&qd) + d.h_p.dot(&pd), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn local_frame_jacobian_matches_finite_differences() {
        let sys = knife(1.0, 1.0, 0.0);
        let q = dvector![0.1, 0.2, 0.8];
        let frame = sys.dist.local_frame(&q, 1e-8, DifferentiationStrategy::analytic()).unwrap();
        assert_eq!(frame.len(), 2);
        for f in &frame {
            let a = sys.dist.matrix(&q).unwrap();
            assert!((a * f.eval(&q).unwrap()).amax() < 1e-14);
            let qq = dvector![0.1, 0.2, 1.1];
            let an = f.jacobian(&qq, &DifferentiationStrategy::analytic()).unwrap();
            let fd = f.jacobian(&qq, &DifferentiationStrategy::finite_difference()).unwrap();
            assert_abs_diff_eq!(an, fd, epsilon = 1e-9);
        }
    }
}
