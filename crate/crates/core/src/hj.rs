//! Candidate solutions `γ: Q → T*Q` of the nonholonomic Hamilton–Jacobi
//! equation `H ∘ γ = E`.
//!
//! A candidate must satisfy two side conditions before the equation means
//! anything: `γ(q) ∈ M_q` and `dγ(v, w) = 0` for all `v, w ∈ D_q`. When it
//! does, curves of the reduced field `q̇ = ∂H/∂p(q, γ(q))` lift through `γ`
//! to integral curves of the nonholonomic Hamiltonian vector field. All
//! checks here are pointwise over a finite sample; a passing report says
//! "verified at N samples", nothing more.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bracket_generating_rank, d_oneform_pair, ChartPoint, Covector, DifferentiationStrategy, SmoothMap, VectorField,
};
use crate::integrate::{phase_monitor_names, phase_monitors, solve_ode, IntegratorConfig, MonitorChannel, Termination, Trajectory};
use crate::nonholo::NonholonomicSystem;

/// A one-form on `Q` given by its component map, plus the constants that
/// select it from a family.
#[derive(Clone)]
pub struct OneFormCandidate {
    pub name: String,
    map: SmoothMap,
    pub params: BTreeMap<String, f64>,
}

impl fmt::Debug for OneFormCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneFormCandidate")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("analytic_jacobian", &self.map.has_analytic_jacobian())
            .finish()
    }
}

impl OneFormCandidate {
    pub fn new(name: impl Into<String>, map: SmoothMap) -> Self {
        Self { name: name.into(), map, params: BTreeMap::new() }
    }

    pub fn with_params<I, K>(mut self, params: I) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        self.params.extend(params.into_iter().map(|(k, v)| (k.into(), v)));
        self
    }

    /// The zero one-form on an `n`-dimensional chart.
    pub fn zero(n: usize) -> Self {
        Self::new("zero", SmoothMap::constant(DVector::zeros(n)))
    }

    pub fn eval(&self, q: &ChartPoint) -> Result<Covector> {
        self.map.eval(q)
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }
}

/// Thresholds for the pointwise checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub membership: f64,
    pub dgamma: f64,
    pub hj_spread: f64,
    /// Required lower bound on the smallest eigenvalue of the regularity
    /// matrix.
    pub regularity_margin: f64,
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { membership: 1e-10, dgamma: 1e-8, hj_spread: 1e-8, regularity_margin: 1e-10, rank_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `value ≤ threshold`.
    AtMost,
    /// Passes when `value ≥ threshold`.
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
}

impl ConditionVerdict {
    pub fn at_most(value: f64, threshold: f64) -> Self {
        Self { passed: value <= threshold, value, threshold, comparison: Comparison::AtMost }
    }

    pub fn at_least(value: f64, threshold: f64) -> Self {
        Self { passed: value >= threshold, value, threshold, comparison: Comparison::AtLeast }
    }
}

fn require_points(points: &[ChartPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("at least one sample point is required".into()));
    }
    Ok(())
}

/// `max_q ‖A(q) g(q)⁻¹ γ(q)‖_∞` against `tol`.
pub fn verify_membership(
    sys: &NonholonomicSystem,
    gamma: &OneFormCandidate,
    points: &[ChartPoint],
    tol: f64,
) -> Result<ConditionVerdict> {
    require_points(points)?;
    let mut worst = 0.0_f64;
    for q in points {
        let r = sys.constraint_residual(q, &gamma.eval(q)?)?;
        worst = worst.max(r.amax());
    }
    Ok(ConditionVerdict::at_most(worst, tol))
}

/// `max_q max_{i<j} |dγ(v_i, v_j)|` over an orthonormal basis `{v_i}` of `D_q`.
pub fn verify_dgamma(
    sys: &NonholonomicSystem,
    gamma: &OneFormCandidate,
    points: &[ChartPoint],
    tol: f64,
    rank_tol: f64,
    strat: &DifferentiationStrategy,
) -> Result<ConditionVerdict> {
    require_points(points)?;
    let mut worst = 0.0_f64;
    for q in points {
        let basis = sys.dist.basis(q, rank_tol)?;
        for i in 0..basis.len() {
            for j in i + 1..basis.len() {
                let val = d_oneform_pair(gamma.map(), q, &basis[i], &basis[j], strat)?;
                worst = worst.max(val.abs());
            }
        }
    }
    Ok(ConditionVerdict::at_most(worst, tol))
}

/// Values of `H ∘ γ` over a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjResidual {
    /// `E`, taken from the first point unless pinned.
    pub energy: f64,
    /// `max |H(q, γ(q)) − E|`.
    pub spread: f64,
    pub values: Vec<f64>,
}

impl HjResidual {
    pub fn verdict(&self, tol: f64) -> ConditionVerdict {
        ConditionVerdict::at_most(self.spread, tol)
    }
}

pub fn hj_residual(
    sys: &NonholonomicSystem,
    gamma: &OneFormCandidate,
    points: &[ChartPoint],
    pinned_energy: Option<f64>,
) -> Result<HjResidual> {
    require_points(points)?;
    let values: Vec<f64> = points.iter().map(|q| sys.energy(q, &gamma.eval(q)?)).collect::<Result<_>>()?;
    let energy = pinned_energy.unwrap_or(values[0]);
    let spread = values.iter().map(|v| (v - energy).abs()).fold(0.0, f64::max);
    Ok(HjResidual { energy, spread, values })
}

/// The reduced field `q ↦ ∂H/∂p(q, γ(q)) = g(q)⁻¹ γ(q)`.
pub fn reduced_field(sys: &NonholonomicSystem, gamma: &OneFormCandidate) -> VectorField {
    let mech = sys.mech.clone();
    let gamma = gamma.clone();
    VectorField::new(move |q| mech.legendre_inv(q, &gamma.eval(q)?))
}

/// Full set of checks at a sample of points.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub system: String,
    pub candidate: String,
    pub candidate_params: BTreeMap<String, f64>,
    pub dimension: usize,
    pub sample_count: usize,
    pub sample_points: Vec<Vec<f64>>,
    pub m_residual_max: f64,
    pub dgamma_residual_max: f64,
    pub hj_energy_values: Vec<f64>,
    pub energy_estimate: f64,
    pub energy_spread: f64,
    /// Smallest bracket rank over the sample.
    pub bracket_rank: usize,
    /// Largest depth needed to reach the rank at any sample point.
    pub bracket_depth: usize,
    pub regularity_min_eig: f64,
    pub membership: ConditionVerdict,
    pub dgamma: ConditionVerdict,
    pub hj_equation: ConditionVerdict,
    pub bracket_generating: ConditionVerdict,
    pub regularity: ConditionVerdict,
    pub scope: String,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        [self.membership, self.dgamma, self.hj_equation, self.bracket_generating, self.regularity]
            .iter()
            .all(|v| v.passed)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn verify(
    system_name: &str,
    sys: &NonholonomicSystem,
    gamma: &OneFormCandidate,
    points: &[ChartPoint],
    tol: &Tolerances,
    max_depth: usize,
    strat: &DifferentiationStrategy,
) -> Result<VerificationReport> {
    require_points(points)?;
    let membership = verify_membership(sys, gamma, points, tol.membership)?;
    let dgamma = verify_dgamma(sys, gamma, points, tol.dgamma, tol.rank_tol, strat)?;
    let hj = hj_residual(sys, gamma, points, None)?;
    let n = sys.dim();
    let mut min_rank = n;
    let mut max_depth_seen = 0;
    let mut min_eig = f64::INFINITY;
    for q in points {
        let r = bracket_generating_rank(&sys.dist, q, max_depth, tol.rank_tol, strat)?;
        min_rank = min_rank.min(r.rank);
        max_depth_seen = max_depth_seen.max(r.depth);
        min_eig = min_eig.min(sys.regularity_min_eigenvalue(q)?);
    }
    Ok(VerificationReport {
        system: system_name.to_string(),
        candidate: gamma.name.clone(),
        candidate_params: gamma.params.clone(),
        dimension: n,
        sample_count: points.len(),
        sample_points: points.iter().map(|q| q.iter().copied().collect()).collect(),
        m_residual_max: membership.value,
        dgamma_residual_max: dgamma.value,
        energy_estimate: hj.energy,
        energy_spread: hj.spread,
        hj_equation: hj.verdict(tol.hj_spread),
        hj_energy_values: hj.values,
        bracket_rank: min_rank,
        bracket_depth: max_depth_seen,
        regularity_min_eig: min_eig,
        membership,
        dgamma,
        bracket_generating: ConditionVerdict::at_least(min_rank as f64, n as f64),
        regularity: ConditionVerdict::at_least(min_eig, tol.regularity_margin),
        scope: format!("verified at {} samples", points.len()),
    })
}

/// Side-by-side integration of the reduced flow and the full flow.
#[derive(Debug, Clone)]
pub struct EquivalenceOutcome {
    /// Reduced curve `c(t)` with its lift `γ(c(t))` as momenta. Monitors
    /// hold the energy and constraint residuals of the lift.
    pub lifted: Trajectory,
    /// Solution of the nonholonomic Hamiltonian field from `(q0, γ(q0))`.
    pub full: Trajectory,
    /// `max(‖c − q‖_∞, ‖γ(c) − p‖_∞)` at each recorded time.
    pub gap: Vec<f64>,
    pub max_gap: f64,
    pub termination: Termination,
}

impl EquivalenceOutcome {
    pub fn truncated(&self) -> bool {
        self.termination != Termination::Completed
    }
}

/// Integrates `ċ = g⁻¹ γ(c)` from `q0` and the nonholonomic Hamiltonian
/// field from `(q0, γ(q0))` as one coupled system, so both share a step
/// sequence, and measures the phase-space gap between `γ ∘ c` and the full
/// solution.
pub fn theorem_equivalence_check(
    sys: &NonholonomicSystem,
    gamma: &OneFormCandidate,
    q0: &ChartPoint,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    strat: &DifferentiationStrategy,
) -> Result<EquivalenceOutcome> {
    let n = sys.dim();
    if q0.len() != n {
        return Err(Error::Dimension { expected: n, got: q0.len() });
    }
    let p0 = gamma.eval(q0)?;
    let field = reduced_field(sys, gamma);
    let y0 = DVector::from_fn(3 * n, |i, _| if i < 2 * n { q0[i % n] } else { p0[i - 2 * n] });
    let rhs = |_: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let c = y.rows(0, n).into_owned();
        let z = y.rows(n, 2 * n).into_owned();
        let c_dot = field.eval(&c)?;
        let z_dot = sys.xh_nh_stacked(&z, strat)?;
        Ok(DVector::from_fn(3 * n, |i, _| if i < n { c_dot[i] } else { z_dot[i - n] }))
    };
    let sol = solve_ode(rhs, t_span.0, y0, t_span.1, cfg)?;

    let names = phase_monitor_names(sys);
    let channels = || -> Vec<MonitorChannel> {
        names.iter().map(|name| MonitorChannel { name: name.clone(), values: Vec::with_capacity(sol.times.len()) }).collect()
    };
    let (mut lift_mon, mut full_mon) = (channels(), channels());
    let mut c_pts = Vec::with_capacity(sol.times.len());
    let mut lift_p = Vec::with_capacity(sol.times.len());
    let mut full_q = Vec::with_capacity(sol.times.len());
    let mut full_p = Vec::with_capacity(sol.times.len());
    let mut gap = Vec::with_capacity(sol.times.len());
    for y in &sol.states {
        let c = y.rows(0, n).into_owned();
        let q = y.rows(n, n).into_owned();
        let p = y.rows(2 * n, n).into_owned();
        let pc = gamma.eval(&c)?;
        gap.push((&c - &q).amax().max((&pc - &p).amax()));
        for (ch, v) in lift_mon.iter_mut().zip(phase_monitors(sys, &c, &pc)?) {
            ch.values.push(v);
        }
        for (ch, v) in full_mon.iter_mut().zip(phase_monitors(sys, &q, &p)?) {
            ch.values.push(v);
        }
        c_pts.push(c);
        lift_p.push(pc);
        full_q.push(q);
        full_p.push(p);
    }
    let max_gap = gap.iter().copied().fold(0.0, f64::max);
    let coords = sys.coords().to_vec();
    let make = |q, p, monitors| Trajectory {
        coords: coords.clone(),
        times: sol.times.clone(),
        q,
        p: Some(p),
        monitors,
        termination: sol.termination,
        stats: sol.stats,
    };
    Ok(EquivalenceOutcome {
        lifted: make(c_pts, lift_p, lift_mon),
        full: make(full_q, full_p, full_mon),
        gap,
        max_gap,
        termination: sol.termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::MechanicalSystem;
    use crate::nonholo::ConstraintDistribution;
    use nalgebra::{dvector, DMatrix};

    fn free_particle(n: usize) -> NonholonomicSystem {
        let coords = (0..n).map(|i| format!("q{i}")).collect();
        NonholonomicSystem::new(
            MechanicalSystem::constant(coords, DMatrix::identity(n, n), None),
            ConstraintDistribution::unconstrained(n),
        )
        .unwrap()
    }

    #[test]
    fn zero_form_passes_trivially() {
        let sys = free_particle(3);
        let gamma = OneFormCandidate::zero(3);
        let pts = vec![dvector![0.1, 0.2, 0.3], dvector![-1.0, 4.0, 2.0]];
        assert!(verify_membership(&sys, &gamma, &pts, 1e-12).unwrap().passed);
        let hj = hj_residual(&sys, &gamma, &pts, None).unwrap();
        assert_eq!((hj.energy, hj.spread), (0.0, 0.0));
        let field = reduced_field(&sys, &gamma);
        assert_eq!(field.eval(&pts[1]).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn exact_forms_are_closed() {
        // γ = dW with W = q0² q1 + q2³.
        let sys = free_particle(3);
        let gamma = OneFormCandidate::new(
            "exact",
            SmoothMap::new(|q| Ok(dvector![2.0 * q[0] * q[1], q[0] * q[0], 3.0 * q[2] * q[2]])),
        );
        let pts = vec![dvector![0.3, -0.7, 1.1], dvector![2.0, 0.5, -0.4]];
        let v = verify_dgamma(&sys, &gamma, &pts, 1e-8, 1e-8, &DifferentiationStrategy::default()).unwrap();
        assert!(v.passed, "{v:?}");
        assert!(v.value < 1e-6);
    }

    #[test]
    fn empty_samples_are_rejected() {
        let sys = free_particle(2);
        let gamma = OneFormCandidate::zero(2);
        assert!(verify_membership(&sys, &gamma, &[], 1e-10).is_err());
        assert!(hj_residual(&sys, &gamma, &[], None).is_err());
    }

    #[test]
    fn pinned_energy_is_respected() {
        let sys = free_particle(2);
        let gamma = OneFormCandidate::new("const", SmoothMap::constant(dvector![1.0, 1.0]));
        let hj = hj_residual(&sys, &gamma, &[dvector![0.0, 0.0]], Some(0.5)).unwrap();
        assert_eq!(hj.energy, 0.5);
        assert!((hj.spread - 0.5).abs() < 1e-15);
        assert!(!hj.verdict(1e-8).passed);
    }

    #[test]
    fn verdicts_follow_their_comparison() {
        assert!(ConditionVerdict::at_most(1e-9, 1e-8).passed);
        assert!(!ConditionVerdict::at_most(1e-7, 1e-8).passed);
        assert!(ConditionVerdict::at_least(3.0, 3.0).passed);
        assert!(!ConditionVerdict::at_least(2.0, 3.0).passed);
    }
}
