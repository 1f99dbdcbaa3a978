//! The four worked examples: vertical rolling disk, knife edge on an inclined
//! plane, snakeboard and Chaplygin sleigh.
//!
//! Each example bundles the nonholonomic system, a family of one-forms `γ`
//! solving the Hamilton–Jacobi equation, a sampling box that avoids the
//! singular set of the chart or the ansatz, a default initial state and, where
//! one is known, a closed-form solution.
//!
//! Physical parameters and integration constants are passed as name → value
//! maps. Missing keys take the documented defaults; unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, SmoothMap};
use crate::hj::OneFormCandidate;
use crate::mechanics::{MechanicalSystem, PhaseState};
use crate::nonholo::{ConstraintDistribution, NonholonomicSystem};
use crate::sampling::DomainBox;

/// Below this `|sin φ|` the snakeboard chart is treated as singular.
pub const SNAKEBOARD_SIN_PHI_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleName {
    VerticalRollingDisk,
    KnifeEdge,
    Snakeboard,
    ChaplyginSleigh,
}

impl ExampleName {
    pub const ALL: [ExampleName; 4] =
        [Self::VerticalRollingDisk, Self::KnifeEdge, Self::Snakeboard, Self::ChaplyginSleigh];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VerticalRollingDisk => "vertical_rolling_disk",
            Self::KnifeEdge => "knife_edge",
            Self::Snakeboard => "snakeboard",
            Self::ChaplyginSleigh => "chaplygin_sleigh",
        }
    }

    /// Physical parameters with their defaults.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::VerticalRollingDisk => &[("m", 1.0), ("I", 1.0), ("J", 1.0), ("R", 1.0)],
            Self::KnifeEdge => &[("m", 1.0), ("J", 1.0), ("g", 1.0), ("alpha", FRAC_PI_6)],
            Self::Snakeboard => &[("m", 1.0), ("r", 1.0), ("J0", 0.5), ("J1", 0.125)],
            Self::ChaplyginSleigh => &[("M", 1.0), ("J", 1.0), ("a", 1.0)],
        }
    }

    /// Constants selecting a member of the `γ` family and the initial state.
    pub fn default_constants(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::VerticalRollingDisk => &[
                ("gamma_phi0", 1.0),
                ("gamma_psi0", 1.0),
                ("c1", 0.0),
                ("c2", 0.0),
                ("phi0", 0.0),
                ("psi0", 0.0),
                ("psi_x_slope", 0.0),
            ],
            Self::KnifeEdge => &[("omega", 1.0), ("v0", 0.0), ("branch", 1.0)],
            Self::Snakeboard => &[("gamma_psi0", 0.5), ("gamma_phi0", 0.025), ("E", 1.0), ("phi_init", FRAC_PI_3)],
            Self::ChaplyginSleigh => &[("omega", 1.0)],
        }
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExampleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown system '{s}'")))
    }
}

/// Fills defaults and rejects unknown or non-finite entries.
pub fn resolve_values(
    what: &str,
    given: &BTreeMap<String, f64>,
    defaults: &[(&str, f64)],
) -> Result<BTreeMap<String, f64>> {
    for (k, v) in given {
        if !defaults.iter().any(|(d, _)| d == k) {
            let known: Vec<&str> = defaults.iter().map(|(d, _)| *d).collect();
            return Err(Error::InvalidParameter(format!("unknown {what} '{k}' (expected one of {known:?})")));
        }
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{what} '{k}' must be finite")));
        }
    }
    Ok(defaults.iter().map(|(k, d)| (k.to_string(), given.get(*k).copied().unwrap_or(*d))).collect())
}

fn positive(map: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    let v = map[key];
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("parameter '{key}' must be positive, got {v}")))
    }
}

/// Coordinates and momenta of a closed-form solution. Components the
/// solution does not determine are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormState {
    pub t: f64,
    pub q: Vec<Option<f64>>,
    pub p: Vec<Option<f64>>,
}

impl ClosedFormState {
    pub fn full_q(&self) -> Option<ChartPoint> {
        self.q.iter().copied().collect::<Option<Vec<_>>>().map(DVector::from_vec)
    }

    pub fn full_p(&self) -> Option<DVector<f64>> {
        self.p.iter().copied().collect::<Option<Vec<_>>>().map(DVector::from_vec)
    }
}

type ClosedFormFn = Arc<dyn Fn(f64) -> Option<ClosedFormState> + Send + Sync>;

#[derive(Clone)]
pub struct ExampleSpec {
    pub name: ExampleName,
    pub system: NonholonomicSystem,
    pub gamma: OneFormCandidate,
    pub domain_box: DomainBox,
    pub params: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub initial: PhaseState,
    closed_form: Option<ClosedFormFn>,
}

impl fmt::Debug for ExampleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExampleSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("constants", &self.constants)
            .field("domain_box", &self.domain_box)
            .field("initial", &self.initial)
            .field("has_closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl ExampleSpec {
    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// `None` when the example has no closed form, or `t` lies outside the
    /// range where it holds.
    pub fn closed_form(&self, t: f64) -> Option<ClosedFormState> {
        self.closed_form.as_ref().and_then(|f| f(t))
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }
}

/// Builds an example by name from parameter and constant maps.
pub fn build_example(
    name: ExampleName,
    params: &BTreeMap<String, f64>,
    constants: &BTreeMap<String, f64>,
) -> Result<ExampleSpec> {
    match name {
        ExampleName::VerticalRollingDisk => vertical_rolling_disk(params, constants),
        ExampleName::KnifeEdge => knife_edge(params, constants),
        ExampleName::Snakeboard => snakeboard(params, constants),
        ExampleName::ChaplyginSleigh => chaplygin_sleigh(params, constants),
    }
}

/// Builds an example with all defaults.
pub fn default_example(name: ExampleName) -> ExampleSpec {
    build_example(name, &BTreeMap::new(), &BTreeMap::new()).expect("default fixtures are valid")
}

fn coords(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn zeros(n: usize, count: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::zeros(n, n); count]
}

/// Vertical rolling disk on `(x, y, φ, ψ)`: metric `diag(m, m, J, I)`, no
/// potential, rolling without slipping `ẋ = R cos φ ψ̇`, `ẏ = R sin φ ψ̇`.
///
/// The one-form has constant `γ_φ = γ_φ⁰` and `γ_ψ = γ_ψ⁰`; `p_x, p_y` follow
/// from the constraint. A nonzero `psi_x_slope = s` replaces `γ_ψ⁰` by
/// `γ_ψ⁰(1 + s x)`, which keeps `γ` in `M` but breaks `H ∘ γ = E`.
pub fn vertical_rolling_disk(params: &BTreeMap<String, f64>, constants: &BTreeMap<String, f64>) -> Result<ExampleSpec> {
    let name = ExampleName::VerticalRollingDisk;
    let params = resolve_values("parameter", params, name.default_params())?;
    let constants = resolve_values("constant", constants, name.default_constants())?;
    let (m, i, j, r) = (positive(&params, "m")?, positive(&params, "I")?, positive(&params, "J")?, positive(&params, "R")?);
    let (gphi, gpsi) = (constants["gamma_phi0"], constants["gamma_psi0"]);
    let (c1, c2, phi0, psi0) = (constants["c1"], constants["c2"], constants["phi0"], constants["psi0"]);
    let slope = constants["psi_x_slope"];

    let mech = MechanicalSystem::constant(coords(&["x", "y", "phi", "psi"]), DMatrix::from_diagonal(&dvector![m, m, j, i]), None)
        .with_params(params.clone());
    let dist = ConstraintDistribution::new(4, 2, move |q| {
        let (s, c) = q[2].sin_cos();
        Ok(dmatrix![1.0, 0.0, 0.0, -r * c; 0.0, 1.0, 0.0, -r * s])
    })
    .with_derivative(move |q| {
        let (s, c) = q[2].sin_cos();
        let mut d = vec![DMatrix::zeros(2, 4); 4];
        d[2] = dmatrix![0.0, 0.0, 0.0, r * s; 0.0, 0.0, 0.0, -r * c];
        Ok(d)
    });
    let system = NonholonomicSystem::new(mech, dist)?;

    let k = m * r / i;
    let gamma = OneFormCandidate::new(
        "vertical_rolling_disk",
        SmoothMap::new(move |q| {
            let (s, c) = q[2].sin_cos();
            let g = gpsi * (1.0 + slope * q[0]);
            Ok(dvector![k * c * g, k * s * g, gphi, g])
        })
        .with_jacobian(move |q| {
            let (s, c) = q[2].sin_cos();
            let g = gpsi * (1.0 + slope * q[0]);
            let dg = gpsi * slope;
            let mut jac = DMatrix::zeros(4, 4);
            jac[(0, 0)] = k * c * dg;
            jac[(0, 2)] = -k * s * g;
            jac[(1, 0)] = k * s * dg;
            jac[(1, 2)] = k * c * g;
            jac[(3, 0)] = dg;
            Ok(jac)
        }),
    )
    .with_params(constants.iter().map(|(k, v)| (k.clone(), *v)));

    let closed_form: Option<ClosedFormFn> = (slope == 0.0).then(|| {
        Arc::new(move |t: f64| {
            let phi = gphi * t / j + phi0;
            let psi = gpsi * t / i + psi0;
            let (x, y) = if gphi != 0.0 {
                let amp = j * r * gpsi / (i * gphi);
                (c1 + amp * phi.sin(), c2 - amp * phi.cos())
            } else {
                let speed = r * gpsi / i;
                (c1 + speed * phi0.cos() * t, c2 + speed * phi0.sin() * t)
            };
            Some(ClosedFormState {
                t,
                q: vec![Some(x), Some(y), Some(phi), Some(psi)],
                p: vec![Some(k * phi.cos() * gpsi), Some(k * phi.sin() * gpsi), Some(gphi), Some(gpsi)],
            })
        }) as ClosedFormFn
    });

    let q0 = match &closed_form {
        Some(f) => f(0.0).and_then(|s| s.full_q()).expect("closed form is total"),
        None => dvector![c1, c2, phi0, psi0],
    };
    let p0 = gamma.eval(&q0)?;
    Ok(ExampleSpec {
        name,
        system,
        gamma,
        domain_box: DomainBox::new(vec![(-2.0, 2.0), (-2.0, 2.0), (-PI, PI), (-PI, PI)])?,
        params,
        constants,
        initial: PhaseState::new(q0, p0, 0.0),
        closed_form,
    })
}

/// Knife edge on `(x, y, φ)` sliding on a plane inclined at angle `α`:
/// metric `diag(m, m, J)`, potential `V = −m g x sin α`, constraint
/// `sin φ ẋ − cos φ ẏ = 0`.
///
/// The one-form is `γ = f cos φ dx + f sin φ dy + γ_φ⁰ dφ` with
/// `f = ±sqrt(m(2E − γ_φ⁰²/J) + 2m² g sin α x)`. The constants are the spin
/// rate `ω` (so `γ_φ⁰ = Jω`), the initial speed `v0` along the blade, and the
/// branch sign; `E = ½ m v0² + ½ J ω²`. With `v0 = 0` the initial state is
/// the one at rest at the origin.
pub fn knife_edge(params: &BTreeMap<String, f64>, constants: &BTreeMap<String, f64>) -> Result<ExampleSpec> {
    let name = ExampleName::KnifeEdge;
    let params = resolve_values("parameter", params, name.default_params())?;
    let mut constants = resolve_values("constant", constants, name.default_constants())?;
    let (m, j, grav) = (positive(&params, "m")?, positive(&params, "J")?, positive(&params, "g")?);
    let alpha = params["alpha"];
    let (omega, v0) = (constants["omega"], constants["v0"]);
    let branch = constants["branch"];
    if branch != 1.0 && branch != -1.0 {
        return Err(Error::InvalidParameter(format!("constant 'branch' must be 1 or -1, got {branch}")));
    }
    let gphi = j * omega;
    let energy = 0.5 * m * v0 * v0 + 0.5 * j * omega * omega;
    constants.insert("gamma_phi0".into(), gphi);
    constants.insert("E".into(), energy);

    let force = m * grav * alpha.sin();
    let mech = MechanicalSystem::constant(
        coords(&["x", "y", "phi"]),
        DMatrix::from_diagonal(&dvector![m, m, j]),
        Some(dvector![-force, 0.0, 0.0]),
    )
    .with_params(params.clone());
    let dist = ConstraintDistribution::new(3, 1, |q| {
        let (s, c) = q[2].sin_cos();
        Ok(dmatrix![s, -c, 0.0])
    })
    .with_derivative(|q| {
        let (s, c) = q[2].sin_cos();
        let mut d = vec![DMatrix::zeros(1, 3); 3];
        d[2] = dmatrix![c, s, 0.0];
        Ok(d)
    });
    let system = NonholonomicSystem::new(mech, dist)?;

    // f² = m(2E − γ_φ⁰²/J) + 2m² g sin α x
    let base = m * (2.0 * energy - gphi * gphi / j);
    let slope = 2.0 * m * force;
    let f = move |x: f64| -> Result<f64> {
        let disc = base + slope * x;
        if disc < 0.0 {
            return Err(Error::Domain(format!("knife-edge ansatz undefined at x = {x}: negative discriminant {disc}")));
        }
        Ok(branch * disc.sqrt())
    };
    let gamma = OneFormCandidate::new(
        "knife_edge",
        SmoothMap::new(move |q| {
            let fx = f(q[0])?;
            let (s, c) = q[2].sin_cos();
            Ok(dvector![fx * c, fx * s, gphi])
        })
        .with_jacobian(move |q| {
            let fx = f(q[0])?;
            let df = if slope == 0.0 {
                0.0
            } else if fx == 0.0 {
                return Err(Error::Domain(format!("knife-edge ansatz not differentiable at x = {}", q[0])));
            } else {
                0.5 * slope / fx
            };
            let (s, c) = q[2].sin_cos();
            let mut jac = DMatrix::zeros(3, 3);
            jac[(0, 0)] = df * c;
            jac[(0, 2)] = -fx * s;
            jac[(1, 0)] = df * s;
            jac[(1, 2)] = fx * c;
            Ok(jac)
        }),
    )
    .with_params(constants.iter().map(|(k, v)| (k.clone(), *v)));

    let accel = grav * alpha.sin();
    let closed_form: ClosedFormFn = Arc::new(move |t: f64| {
        let phi = omega * t;
        let (x, y, v) = if omega != 0.0 {
            let (s, c) = phi.sin_cos();
            let k = accel / (2.0 * omega * omega);
            (
                v0 / omega * s + k * s * s,
                v0 / omega * (1.0 - c) + k * (phi - 0.5 * (2.0 * phi).sin()),
                v0 + accel / omega * s,
            )
        } else {
            (v0 * t + 0.5 * accel * t * t, 0.0, v0 + accel * t)
        };
        let (s, c) = phi.sin_cos();
        Some(ClosedFormState {
            t,
            q: vec![Some(x), Some(y), Some(phi)],
            p: vec![Some(m * v * c), Some(m * v * s), Some(gphi)],
        })
    });

    let q0 = DVector::zeros(3);
    let p0 = dvector![m * v0, 0.0, gphi];
    // Sampling stays where f² ≥ f²(0) + slope·0.1 > 0 for the default branch
    // data; for v0 = 0 this keeps clear of the branch point at x = 0.
    let x_lo = if slope > 0.0 { 0.1 } else { -3.0 };
    let x_hi = if slope < 0.0 { -0.1 } else { 3.0 };
    Ok(ExampleSpec {
        name,
        system,
        gamma,
        domain_box: DomainBox::new(vec![(x_lo, x_hi), (-3.0, 3.0), (-PI, PI)])?,
        params,
        constants,
        initial: PhaseState::new(q0, p0, 0.0),
        closed_form: Some(closed_form),
    })
}

/// Snakeboard on `(x, y, θ, ψ, φ)`.
///
/// The Hamiltonian
/// `H = (p_x² + p_y²)/2m + p_ψ²/2J₀ + (p_θ − p_ψ)²/2(mr² − J₀) + p_φ²/4J₁`
/// has constant metric `g = diag(m, m, B, 2J₁)` in which `B` is the `(θ, ψ)`
/// block `[[mr², J₀], [J₀, J₀]]`. The constraints are
/// `ẋ + r cot φ cos θ θ̇ = 0` and `ẏ + r cot φ sin θ θ̇ = 0`, singular where
/// `sin φ = 0`.
///
/// The one-form has `γ_ψ = γ_ψ⁰`, `γ_φ = γ_φ⁰`,
/// `γ_θ = γ_ψ⁰ + (mr² − J₀) C sin φ / g(φ)` with
/// `C = sqrt(E − γ_ψ⁰²/2J₀ − γ_φ⁰²/4J₁)` and
/// `g(φ) = sqrt((mr² − J₀ sin² φ)/2)`; `γ_x, γ_y` follow from the constraint.
/// There is no closed form; the reduced field is the reference.
pub fn snakeboard(params: &BTreeMap<String, f64>, constants: &BTreeMap<String, f64>) -> Result<ExampleSpec> {
    let name = ExampleName::Snakeboard;
    let params = resolve_values("parameter", params, name.default_params())?;
    let mut constants = resolve_values("constant", constants, name.default_constants())?;
    let (m, r, j0, j1) = (positive(&params, "m")?, positive(&params, "r")?, positive(&params, "J0")?, positive(&params, "J1")?);
    let kk = m * r * r - j0;
    if kk <= 0.0 {
        return Err(Error::InvalidParameter(format!("snakeboard requires m r² − J0 > 0, got {kk}")));
    }
    let (gpsi, gphi, energy) = (constants["gamma_psi0"], constants["gamma_phi0"], constants["E"]);
    let c2 = energy - gpsi * gpsi / (2.0 * j0) - gphi * gphi / (4.0 * j1);
    if c2 < 0.0 {
        return Err(Error::InvalidParameter(format!("snakeboard constants give E − γψ⁰²/2J0 − γφ⁰²/4J1 = {c2} < 0")));
    }
    let cc = c2.sqrt();
    constants.insert("C".into(), cc);

    let mut metric = DMatrix::zeros(5, 5);
    metric[(0, 0)] = m;
    metric[(1, 1)] = m;
    metric[(2, 2)] = m * r * r;
    metric[(2, 3)] = j0;
    metric[(3, 2)] = j0;
    metric[(3, 3)] = j0;
    metric[(4, 4)] = 2.0 * j1;
    let mech = MechanicalSystem::constant(coords(&["x", "y", "theta", "psi", "phi"]), metric, None).with_params(params.clone());

    let guard = |phi: f64| -> Result<f64> {
        let s = phi.sin();
        if s.abs() <= SNAKEBOARD_SIN_PHI_MIN {
            Err(Error::Domain(format!("snakeboard chart singular at phi = {phi}")))
        } else {
            Ok(s)
        }
    };
    let dist = ConstraintDistribution::new(5, 2, move |q| {
        let s = guard(q[4])?;
        let cot = q[4].cos() / s;
        let (st, ct) = q[2].sin_cos();
        Ok(dmatrix![1.0, 0.0, r * cot * ct, 0.0, 0.0; 0.0, 1.0, r * cot * st, 0.0, 0.0])
    })
    .with_derivative(move |q| {
        let s = guard(q[4])?;
        let cot = q[4].cos() / s;
        let csc2 = 1.0 / (s * s);
        let (st, ct) = q[2].sin_cos();
        let mut d = vec![DMatrix::zeros(2, 5); 5];
        d[2][(0, 2)] = -r * cot * st;
        d[2][(1, 2)] = r * cot * ct;
        d[4][(0, 2)] = -r * csc2 * ct;
        d[4][(1, 2)] = -r * csc2 * st;
        Ok(d)
    });
    let system = NonholonomicSystem::new(mech, dist)?;

    let mr2 = m * r * r;
    // sin φ / g(φ), cos φ / g(φ) and their φ-derivatives.
    let profile = move |phi: f64| -> Result<(f64, f64, f64, f64)> {
        let s = guard(phi)?;
        let c = phi.cos();
        let g = ((mr2 - j0 * s * s) / 2.0).sqrt();
        let g3 = g * g * g;
        let sg = s / g;
        let cg = c / g;
        let dsg = c / g + j0 * s * s * c / (2.0 * g3);
        let dcg = -s / g + j0 * s * c * c / (2.0 * g3);
        Ok((sg, cg, dsg, dcg))
    };
    let mrc = m * r * cc;
    let gamma = OneFormCandidate::new(
        "snakeboard",
        SmoothMap::new(move |q| {
            let (sg, cg, _, _) = profile(q[4])?;
            let (st, ct) = q[2].sin_cos();
            Ok(dvector![-mrc * cg * ct, -mrc * cg * st, gpsi + kk * cc * sg, gpsi, gphi])
        })
        .with_jacobian(move |q| {
            let (_, cg, dsg, dcg) = profile(q[4])?;
            let (st, ct) = q[2].sin_cos();
            let mut jac = DMatrix::zeros(5, 5);
            jac[(0, 2)] = mrc * cg * st;
            jac[(0, 4)] = -mrc * dcg * ct;
            jac[(1, 2)] = -mrc * cg * ct;
            jac[(1, 4)] = -mrc * dcg * st;
            jac[(2, 4)] = kk * cc * dsg;
            Ok(jac)
        }),
    )
    .with_params(constants.iter().map(|(k, v)| (k.clone(), *v)));

    let q0 = dvector![0.0, 0.0, 0.0, 0.0, constants["phi_init"]];
    let p0 = gamma.eval(&q0)?;
    Ok(ExampleSpec {
        name,
        system,
        gamma,
        domain_box: DomainBox::new(vec![(-2.0, 2.0), (-2.0, 2.0), (-PI, PI), (-PI, PI), (0.2, PI - 0.2)])?,
        params,
        constants,
        initial: PhaseState::new(q0, p0, 0.0),
        closed_form: None,
    })
}

/// The sleigh metric in coordinates `(x, y, θ)` of the contact point.
///
/// Inverting the Hamiltonian's quadratic form gives
/// `g = [[M, 0, −Ma sin θ], [0, M, Ma cos θ], [−Ma sin θ, Ma cos θ, J + Ma²]]`.
pub fn sleigh_metric(mass: f64, inertia: f64, a: f64, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let ma = mass * a;
    dmatrix![
        mass, 0.0, -ma * s;
        0.0, mass, ma * c;
        -ma * s, ma * c, inertia + ma * a
    ]
}

/// Chaplygin sleigh on `(x, y, θ)`: no potential, knife-edge constraint
/// `sin θ ẋ − cos θ ẏ = 0` at the contact point.
///
/// With `b = sqrt(a²M/(J + a²M))` the one-form has
/// `γ_θ = (J + a²M) ω cos(bθ)`, angular velocity `θ̇ = ω cos(bθ)`, and
/// forward speed `v = ω sqrt((J + a²M)/M) sin(bθ)` solving `H ∘ γ = E` with
/// `E = (J + a²M) ω²/2`. The ansatz is built on the chart `|θ| < π/2` and
/// reports a domain error outside it.
///
/// The closed form gives `θ(t) = (2/b) arctan(tanh(bωt/2))` and the momenta
/// `γ(θ(t))` from the initial state `(0, 0, 0)` with `θ̇(0) = ω`; the position
/// of the contact point is left undetermined.
pub fn chaplygin_sleigh(params: &BTreeMap<String, f64>, constants: &BTreeMap<String, f64>) -> Result<ExampleSpec> {
    let name = ExampleName::ChaplyginSleigh;
    let params = resolve_values("parameter", params, name.default_params())?;
    let mut constants = resolve_values("constant", constants, name.default_constants())?;
    let (mass, inertia, a) = (positive(&params, "M")?, positive(&params, "J")?, positive(&params, "a")?);
    let omega = constants["omega"];
    let big = inertia + a * a * mass;
    let b = (a * a * mass / big).sqrt();
    constants.insert("b".into(), b);
    constants.insert("E".into(), 0.5 * big * omega * omega);

    let mech = MechanicalSystem::new(coords(&["x", "y", "theta"]), move |q| Ok(sleigh_metric(mass, inertia, a, q[2])))
        .with_metric_derivative(move |q| {
            let (s, c) = q[2].sin_cos();
            let ma = mass * a;
            let mut d = zeros(3, 3);
            d[2] = dmatrix![0.0, 0.0, -ma * c; 0.0, 0.0, -ma * s; -ma * c, -ma * s, 0.0];
            Ok(d)
        })
        .with_params(params.clone());
    let dist = ConstraintDistribution::new(3, 1, |q| {
        let (s, c) = q[2].sin_cos();
        Ok(dmatrix![s, -c, 0.0])
    })
    .with_derivative(|q| {
        let (s, c) = q[2].sin_cos();
        let mut d = vec![DMatrix::zeros(1, 3); 3];
        d[2] = dmatrix![c, s, 0.0];
        Ok(d)
    });
    let system = NonholonomicSystem::new(mech, dist)?;

    let speed = omega * (big / mass).sqrt();
    let ma = mass * a;
    let guard = |theta: f64| -> Result<()> {
        if theta.abs() >= FRAC_PI_2 {
            Err(Error::Domain(format!("sleigh ansatz requires |theta| < pi/2, got {theta}")))
        } else {
            Ok(())
        }
    };
    let momenta = move |theta: f64| -> DVector<f64> {
        let (s, c) = theta.sin_cos();
        let cb = (b * theta).cos();
        let v = speed * (b * theta).sin();
        let rate = omega * cb;
        dvector![mass * v * c - ma * s * rate, mass * v * s + ma * c * rate, big * rate]
    };
    let gamma = OneFormCandidate::new(
        "chaplygin_sleigh",
        SmoothMap::new(move |q| {
            guard(q[2])?;
            Ok(momenta(q[2]))
        })
        .with_jacobian(move |q| {
            let theta = q[2];
            guard(theta)?;
            let (s, c) = theta.sin_cos();
            let (sb, cb) = (b * theta).sin_cos();
            let v = speed * sb;
            let dv = speed * b * cb;
            let rate = omega * cb;
            let drate = -omega * b * sb;
            let mut jac = DMatrix::zeros(3, 3);
            jac[(0, 2)] = mass * (dv * c - v * s) - ma * (c * rate + s * drate);
            jac[(1, 2)] = mass * (dv * s + v * c) + ma * (-s * rate + c * drate);
            jac[(2, 2)] = big * drate;
            Ok(jac)
        }),
    )
    .with_params(constants.iter().map(|(k, v)| (k.clone(), *v)));

    let closed_form: ClosedFormFn = Arc::new(move |t: f64| {
        let theta = if b * omega == 0.0 { 0.0 } else { 2.0 / b * (b * omega * t / 2.0).tanh().atan() };
        let p_theta = big * omega / (b * omega * t).cosh();
        let lift = (theta.abs() < FRAC_PI_2).then(|| momenta(theta));
        Some(ClosedFormState {
            t,
            q: vec![None, None, Some(theta)],
            p: vec![lift.as_ref().map(|p| p[0]), lift.as_ref().map(|p| p[1]), Some(p_theta)],
        })
    });

    let q0 = DVector::zeros(3);
    let p0 = momenta(0.0);
    Ok(ExampleSpec {
        name,
        system,
        gamma,
        domain_box: DomainBox::new(vec![(-2.0, 2.0), (-2.0, 2.0), (-1.4, 1.4)])?,
        params,
        constants,
        initial: PhaseState::new(q0, p0, 0.0),
        closed_form: Some(closed_form),
    })
}

/// A system with constant metric, constant constraint rows and linear
/// potential `V = b·q`.
pub fn constant_coefficient_system(
    coord_names: Vec<String>,
    metric: DMatrix<f64>,
    constraints: DMatrix<f64>,
    potential_gradient: Option<DVector<f64>>,
) -> Result<NonholonomicSystem> {
    let n = coord_names.len();
    if metric.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: metric.nrows() });
    }
    if constraints.ncols() != n {
        return Err(Error::Dimension { expected: n, got: constraints.ncols() });
    }
    if let Some(b) = &potential_gradient {
        if b.len() != n {
            return Err(Error::Dimension { expected: n, got: b.len() });
        }
    }
    let mech = MechanicalSystem::constant(coord_names, metric, potential_gradient);
    let sys = NonholonomicSystem::new(mech, ConstraintDistribution::constant(constraints))?;
    // Surfaces non-symmetric or indefinite metrics at construction.
    sys.mech.metric_factor(&DVector::zeros(n))?;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn names_round_trip() {
        for e in ExampleName::ALL {
            assert_eq!(e.as_str().parse::<ExampleName>().unwrap(), e);
        }
        assert!("unicycle".parse::<ExampleName>().is_err());
    }

    #[test]
    fn unknown_and_nonpositive_params_are_rejected() {
        let empty = BTreeMap::new();
        assert!(vertical_rolling_disk(&map(&[("mass", 1.0)]), &empty).is_err());
        assert!(vertical_rolling_disk(&map(&[("R", 0.0)]), &empty).is_err());
        assert!(knife_edge(&map(&[("m", -1.0)]), &empty).is_err());
        assert!(snakeboard(&map(&[("J0", 2.0)]), &empty).is_err());
        assert!(chaplygin_sleigh(&map(&[("a", 0.0)]), &empty).is_err());
        assert!(knife_edge(&empty, &map(&[("branch", 0.5)])).is_err());
    }

    #[test]
    fn disk_closed_form_at_zero_and_quarter_turn() {
        let disk = default_example(ExampleName::VerticalRollingDisk);
        let s0 = disk.closed_form(0.0).unwrap().full_q().unwrap();
        assert_eq!(s0, dvector![0.0, -1.0, 0.0, 0.0]);
        let s = disk.closed_form(FRAC_PI_2).unwrap().full_q().unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(disk.initial.p, dvector![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn disk_at_rest_in_psi_spins_in_place() {
        let disk = vertical_rolling_disk(&BTreeMap::new(), &map(&[("gamma_psi0", 0.0), ("c1", 0.3), ("c2", 0.4)])).unwrap();
        for t in [0.0, 1.0, 7.5] {
            let q = disk.closed_form(t).unwrap().full_q().unwrap();
            assert_abs_diff_eq!(q[0], 0.3, epsilon = 1e-15);
            assert_abs_diff_eq!(q[1], 0.4, epsilon = 1e-15);
            assert_abs_diff_eq!(q[2], t, epsilon = 1e-15);
        }
    }

    #[test]
    fn knife_closed_form_values() {
        let knife = default_example(ExampleName::KnifeEdge);
        let s = knife.closed_form(PI).unwrap().full_q().unwrap();
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.25 * PI, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], PI, epsilon = 1e-15);

        let flat = knife_edge(&map(&[("alpha", 0.0)]), &BTreeMap::new()).unwrap();
        for t in [0.5, 3.0, 9.0] {
            let q = flat.closed_form(t).unwrap().full_q().unwrap();
            assert_eq!((q[0], q[1]), (0.0, 0.0));
            assert_abs_diff_eq!(q[2], t, epsilon = 1e-15);
        }
    }

    #[test]
    fn knife_ansatz_rejects_negative_discriminant() {
        let knife = default_example(ExampleName::KnifeEdge);
        let err = knife.gamma.eval(&dvector![-0.5, 0.0, 0.0]).unwrap_err();
        assert!(err.is_domain());
    }

    #[test]
    fn snakeboard_guard_and_reduced_rates() {
        let sb = default_example(ExampleName::Snakeboard);
        assert!(sb.gamma.eval(&dvector![0.0, 0.0, 0.0, 0.0, 0.0]).unwrap_err().is_domain());
        assert!(sb.system.dist.matrix(&dvector![0.0, 0.0, 0.0, 0.0, PI]).unwrap_err().is_domain());
        let q = dvector![0.3, -0.2, 0.7, 0.1, FRAC_PI_2];
        let v = sb.system.mech.legendre_inv(&q, &sb.gamma.eval(&q).unwrap()).unwrap();
        let cc = sb.constants["C"];
        let g = ((1.0_f64 - 0.5) / 2.0).sqrt();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], cc / g, epsilon = 1e-14);
        assert_abs_diff_eq!(v[4], 0.025 / 0.25, epsilon = 1e-15);
    }

    #[test]
    fn sleigh_closed_form_limits() {
        let sl = default_example(ExampleName::ChaplyginSleigh);
        let b = sl.constants["b"];
        let s0 = sl.closed_form(0.0).unwrap();
        assert_eq!(s0.q[2], Some(0.0));
        assert_abs_diff_eq!(s0.p[2].unwrap(), 2.0, epsilon = 1e-15);
        let late = sl.closed_form(60.0).unwrap();
        assert_abs_diff_eq!(late.q[2].unwrap(), FRAC_PI_2 / b, epsilon = 1e-12);
        assert_eq!(late.p[0], None);
        assert!(sl.gamma.eval(&dvector![0.0, 0.0, 1.6]).unwrap_err().is_domain());

        let still = chaplygin_sleigh(&BTreeMap::new(), &map(&[("omega", 0.0)])).unwrap();
        let s = still.closed_form(5.0).unwrap();
        assert_eq!(s.q[2], Some(0.0));
        assert_eq!(s.p[2], Some(0.0));
        assert_eq!(still.initial.p, DVector::zeros(3));
    }

    #[test]
    fn custom_system_checks_shapes() {
        let names = coords(&["x", "y", "z"]);
        assert!(constant_coefficient_system(names.clone(), DMatrix::identity(3, 3), dmatrix![1.0, 0.0, 0.0], None).is_ok());
        assert!(constant_coefficient_system(names.clone(), DMatrix::identity(2, 2), dmatrix![1.0, 0.0, 0.0], None).is_err());
        assert!(constant_coefficient_system(names.clone(), DMatrix::identity(3, 3), dmatrix![1.0, 0.0], None).is_err());
        assert!(constant_coefficient_system(names, -DMatrix::identity(3, 3), DMatrix::zeros(0, 3), None).is_err());
    }
}
