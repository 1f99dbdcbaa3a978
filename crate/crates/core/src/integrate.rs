//! Explicit Runge–Kutta integration with trajectory recording.
//!
//! Two methods are provided: the classical fixed-step RK4 and the adaptive
//! Dormand–Prince 5(4) pair (seven stages, first-same-as-last, fifth-order
//! solution propagated). No projection onto the constraint manifold happens
//! while stepping; drift shows up in the monitor channels.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, Covector, DifferentiationStrategy, VectorField};
use crate::mechanics::PhaseState;
use crate::nonholo::NonholonomicSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Adaptive45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step for RK4, initial step guess for the adaptive method.
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Record every `record_stride`-th accepted step (the endpoint is
    /// always recorded).
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::Rk4, h: 1e-3, rel_tol: 1e-10, abs_tol: 1e-12, max_steps: 10_000_000, record_stride: 1 }
    }
}

impl IntegratorConfig {
    pub fn rk4(h: f64) -> Self {
        Self { method: Method::Rk4, h, ..Self::default() }
    }

    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        Self { method: Method::Adaptive45, h: 1e-2, rel_tol, abs_tol, ..Self::default() }
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.h) {
            return Err(Error::InvalidParameter(format!("step h must be positive, got {}", self.h)));
        }
        if self.method == Method::Adaptive45 && !(positive(self.rel_tol) && positive(self.abs_tol)) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_steps == 0 || self.record_stride == 0 {
            return Err(Error::InvalidParameter("max_steps and record_stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// A right-hand-side evaluation left the domain of the system; the
    /// trajectory ends at the last accepted state.
    DomainExit,
    StepLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest `err / tol` over accepted adaptive steps.
    pub max_error_ratio: f64,
}

/// Raw output of [`solve_ode`].
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub termination: Termination,
    pub stats: StepStats,
}

/// `h · clamp(0.9 (tol/err)^{1/5}, 0.2, 5)`; `err = 0` grows by the full 5×.
pub fn adaptive_step_control(err_est: f64, tol: f64, h: f64) -> f64 {
    if err_est <= 0.0 {
        return 5.0 * h;
    }
    h * (0.9 * (tol / err_est).powf(0.2)).clamp(0.2, 5.0)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// Fifth-order weights; also row 7 of the tableau (FSAL).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order minus fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

enum Eval {
    Ok(DVector<f64>),
    Exit,
}

fn call<F>(f: &mut F, t: f64, y: &DVector<f64>) -> Result<Eval>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    match f(t, y) {
        Ok(v) => Ok(Eval::Ok(v)),
        Err(e) if e.is_domain() => Ok(Eval::Exit),
        Err(e) => Err(e),
    }
}

macro_rules! eval_or_exit {
    ($f:expr, $t:expr, $y:expr) => {
        match call($f, $t, $y)? {
            Eval::Ok(v) => v,
            Eval::Exit => break Termination::DomainExit,
        }
    };
}

/// Integrates `y' = f(t, y)` from `t0` to `t1`.
///
/// The last step is clipped so the final time stamp is exactly `t1`.
/// Domain errors from `f` end the run with [`Termination::DomainExit`];
/// a non-finite state is an error.
pub fn solve_ode<F>(mut f: F, t0: f64, y0: DVector<f64>, t1: f64, cfg: &IntegratorConfig) -> Result<OdeSolution>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::InvalidParameter(format!("invalid time span [{t0}, {t1}]")));
    }
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { t: t0 });
    }
    let mut sol = OdeSolution {
        times: vec![t0],
        states: vec![y0.clone()],
        termination: Termination::Completed,
        stats: StepStats::default(),
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let stride = cfg.record_stride;
    let mut y = y0;
    let mut t = t0;
    let termination = match cfg.method {
        Method::Rk4 => {
            let span = t1 - t0;
            let n_steps = ((span / cfg.h) - 1e-9).ceil().max(1.0) as usize;
            let mut i = 0usize;
            loop {
                if i == n_steps {
                    break Termination::Completed;
                }
                if i >= cfg.max_steps {
                    break Termination::StepLimit;
                }
                let t_next = if i + 1 == n_steps { t1 } else { t0 + (i + 1) as f64 * cfg.h };
                let h = t_next - t;
                let k1 = eval_or_exit!(&mut f, t, &y);
                let k2 = eval_or_exit!(&mut f, t + 0.5 * h, &(&y + &k1 * (0.5 * h)));
                let k3 = eval_or_exit!(&mut f, t + 0.5 * h, &(&y + &k2 * (0.5 * h)));
                let k4 = eval_or_exit!(&mut f, t_next, &(&y + &k3 * h));
                let y_next = &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                if y_next.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { t: t_next });
                }
                y = y_next;
                t = t_next;
                i += 1;
                sol.stats.accepted += 1;
                if i.is_multiple_of(stride) || i == n_steps {
                    sol.times.push(t);
                    sol.states.push(y.clone());
                }
            }
        }
        Method::Adaptive45 => {
            let mut h = cfg.h.min(t1 - t0);
            let mut k1 = match call(&mut f, t, &y)? {
                Eval::Ok(v) => v,
                Eval::Exit => {
                    sol.termination = Termination::DomainExit;
                    return Ok(sol);
                }
            };
            let mut since_record = 0usize;
            loop {
                if t >= t1 {
                    break Termination::Completed;
                }
                if sol.stats.accepted + sol.stats.rejected >= cfg.max_steps {
                    break Termination::StepLimit;
                }
                let last = t + h >= t1;
                if last {
                    h = t1 - t;
                }
                let k2 = eval_or_exit!(&mut f, t + C2 * h, &(&y + &k1 * (h * A21)));
                let k3 = eval_or_exit!(&mut f, t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h));
                let k4 = eval_or_exit!(&mut f, t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
                let k5 = eval_or_exit!(
                    &mut f,
                    t + C5 * h,
                    &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h)
                );
                let k6 = eval_or_exit!(
                    &mut f,
                    t + h,
                    &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h)
                );
                let y_next = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
                let t_next = if last { t1 } else { t + h };
                if y_next.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { t: t_next });
                }
                let k7 = eval_or_exit!(&mut f, t_next, &y_next);
                let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
                let err = err_vec.amax();
                let tol = (cfg.rel_tol * y.amax().max(y_next.amax())).max(cfg.abs_tol);
                if err <= tol {
                    t = t_next;
                    y = y_next;
                    k1 = k7;
                    sol.stats.accepted += 1;
                    sol.stats.max_error_ratio = sol.stats.max_error_ratio.max(err / tol);
                    since_record += 1;
                    if since_record == stride || t >= t1 {
                        since_record = 0;
                        sol.times.push(t);
                        sol.states.push(y.clone());
                    }
                } else {
                    sol.stats.rejected += 1;
                }
                h = adaptive_step_control(err, tol, h);
                if t < t1 && h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
    };
    // Make sure the last accepted state is recorded even when the run stops
    // between strides.
    if sol.times.last() != Some(&t) {
        sol.times.push(t);
        sol.states.push(y);
    }
    sol.termination = termination;
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorChannel {
    pub name: String,
    pub values: Vec<f64>,
}

/// Recorded solution of a phase-space or configuration-space flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub coords: Vec<String>,
    pub times: Vec<f64>,
    pub q: Vec<ChartPoint>,
    /// Present for phase-space flows.
    pub p: Option<Vec<Covector>>,
    /// Channels aligned with `times`.
    pub monitors: Vec<MonitorChannel>,
    pub termination: Termination,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitors.iter().find(|m| m.name == name).map(|m| m.values.as_slice())
    }

    pub fn phase_state(&self, i: usize) -> Option<PhaseState> {
        let p = self.p.as_ref()?;
        Some(PhaseState::new(self.q[i].clone(), p[i].clone(), self.times[i]))
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories hold at least the initial state")
    }

    /// `max |E(t) − E(t0)|` over the energy channel.
    pub fn energy_drift(&self) -> Option<f64> {
        let e = self.monitor("energy")?;
        let e0 = *e.first()?;
        Some(e.iter().map(|x| (x - e0).abs()).fold(0.0, f64::max))
    }

    /// Largest absolute value over all constraint-residual channels.
    pub fn max_constraint_residual(&self) -> f64 {
        self.monitors
            .iter()
            .filter(|m| m.name.starts_with("c_res_"))
            .flat_map(|m| m.values.iter())
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }
}

/// Energy and constraint-residual channels for a phase state.
pub fn phase_monitors(sys: &NonholonomicSystem, q: &ChartPoint, p: &Covector) -> Result<Vec<f64>> {
    let mut out = vec![sys.energy(q, p)?];
    out.extend(sys.constraint_residual(q, p)?.iter());
    Ok(out)
}

pub fn phase_monitor_names(sys: &NonholonomicSystem) -> Vec<String> {
    std::iter::once("energy".to_string())
        .chain((1..=sys.num_constraints()).map(|s| format!("c_res_{s}")))
        .collect()
}

/// Integrates the nonholonomic Hamiltonian vector field from `z0` to `t_end`.
pub fn integrate_phase(
    sys: &NonholonomicSystem,
    z0: &PhaseState,
    t_end: f64,
    cfg: &IntegratorConfig,
    strat: &DifferentiationStrategy,
) -> Result<Trajectory> {
    let n = sys.dim();
    if z0.q.len() != n || z0.p.len() != n {
        return Err(Error::Dimension { expected: n, got: z0.q.len().max(z0.p.len()) });
    }
    let sol = solve_ode(|_, z| sys.xh_nh_stacked(z, strat), z0.t, z0.stacked(), t_end, cfg)?;
    let names = phase_monitor_names(sys);
    let mut monitors: Vec<MonitorChannel> =
        names.into_iter().map(|name| MonitorChannel { name, values: Vec::with_capacity(sol.times.len()) }).collect();
    let mut qs = Vec::with_capacity(sol.times.len());
    let mut ps = Vec::with_capacity(sol.times.len());
    for z in &sol.states {
        let q = z.rows(0, n).into_owned();
        let p = z.rows(n, n).into_owned();
        for (ch, v) in monitors.iter_mut().zip(phase_monitors(sys, &q, &p)?) {
            ch.values.push(v);
        }
        qs.push(q);
        ps.push(p);
    }
    Ok(Trajectory {
        coords: sys.coords().to_vec(),
        times: sol.times,
        q: qs,
        p: Some(ps),
        monitors,
        termination: sol.termination,
        stats: sol.stats,
    })
}

/// Integrates a first-order flow `q̇ = X(q)` on the configuration chart.
pub fn integrate_config(
    field: &VectorField,
    coords: &[String],
    q0: &ChartPoint,
    t0: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let sol = solve_ode(|_, q| field.eval(q), t0, q0.clone(), t_end, cfg)?;
    Ok(Trajectory {
        coords: coords.to_vec(),
        times: sol.times,
        q: sol.states,
        p: None,
        monitors: Vec::new(),
        termination: sol.termination,
        stats: sol.stats,
    })
}
