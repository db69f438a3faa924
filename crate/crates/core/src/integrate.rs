//! Numerical integral curves with dense output.
//!
//! [`integrate`] runs the Dormand–Prince 5(4) pair with a proportional-integral
//! step controller and keeps the 4th-order continuous extension of every
//! accepted step, so a [`Trajectory`] can be sampled at any time in its span.
//!
//! Integration stops at the first of:
//! - the horizon `T_max`,
//! - `|x| >= R_blow` (blow-up; evidence that the field is not complete),
//! - a step that cannot be taken without leaving the open domain while the
//!   current state is already within `ε_dom` of the boundary (domain exit),
//! - step size underflow.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::DomainFault;
use crate::system::{SmoothMapSpec, VectorFieldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Automatic when `None`.
    pub initial_step: Option<f64>,
    /// `horizon / 100` when `None`.
    pub max_step: Option<f64>,
    pub horizon: f64,
    pub blowup_norm: f64,
    pub domain_margin: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-9,
            atol: 1e-12,
            initial_step: None,
            max_step: None,
            horizon: 100.0,
            blowup_norm: 1e8,
            domain_margin: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(IntegrateError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("horizon", self.horizon)?;
        positive("blowup_norm", self.blowup_norm)?;
        positive("domain_margin", self.domain_margin)?;
        if let Some(h) = self.initial_step {
            positive("initial_step", h)?;
        }
        if let Some(h) = self.max_step {
            positive("max_step", h)?;
        }
        Ok(())
    }

    fn max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.horizon / 100.0).min(self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("initial condition {x0:?} is not inside the domain of `{system}`")]
    InitialOutsideDomain { system: String, x0: Vec<f64> },
    #[error("initial condition has dimension {got}, system `{system}` has {expected}")]
    DimensionMismatch {
        system: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("vector field cannot be evaluated at the initial condition: {0}")]
    Fault(#[from] DomainFault),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("time {t} outside recorded span [0, {t_end}]")]
    OutOfSpan { t: f64, t_end: f64 },
    #[error(transparent)]
    Fault(#[from] DomainFault),
}

/// Why a trajectory ends where it does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    ReachedHorizon,
    BlowUp { t: f64 },
    DomainExit { t: f64 },
    StepUnderflow { t: f64 },
}

impl Termination {
    pub fn reached_horizon(&self) -> bool {
        matches!(self, Termination::ReachedHorizon)
    }

    pub fn is_blow_up(&self) -> bool {
        matches!(self, Termination::BlowUp { .. })
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Origin {
    Integrated,
    Pushforward {
        map: Arc<SmoothMapSpec>,
        source: Arc<Trajectory>,
    },
}

/// An integral curve `φ(t)` for `t` in `[0, t_end]`.
///
/// Stored nodes are the accepted steps; between nodes the dense output is
/// used. A pushforward trajectory has no interpolant of its own and samples
/// `f(φ(t))` through its source.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    system: String,
    x0: Vec<f64>,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    segments: Vec<Segment>,
    termination: Termination,
    origin: Origin,
}

impl Trajectory {
    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("a trajectory has at least one node")
    }

    pub fn is_pushforward(&self) -> bool {
        matches!(self.origin, Origin::Pushforward { .. })
    }

    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// State at time `t`. Stored nodes are returned exactly.
    pub fn sample(&self, t: f64) -> Result<Vec<f64>, SampleError> {
        let t_end = self.t_end();
        if !(0.0..=t_end).contains(&t) {
            return Err(SampleError::OutOfSpan { t, t_end });
        }
        let idx = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => return Ok(self.states[i].clone()),
            Err(i) => i - 1,
        };
        match &self.origin {
            Origin::Integrated => {
                let mut out = vec![0.0; self.dim()];
                self.segments[idx].eval(t, &mut out);
                Ok(out)
            }
            Origin::Pushforward { map, source } => Ok(map.apply(&source.sample(t)?)?),
        }
    }

    /// Nodes plus `per_step` evenly spaced interior points in every step.
    pub fn dense_samples(&self, per_step: usize) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.times.len() * (per_step + 1));
        for i in 0..self.times.len() {
            out.push((self.times[i], self.states[i].clone()));
            if i + 1 == self.times.len() {
                break;
            }
            let (a, b) = (self.times[i], self.times[i + 1]);
            for k in 1..=per_step {
                let t = a + (b - a) * k as f64 / (per_step + 1) as f64;
                if let Ok(x) = self.sample(t) {
                    out.push((t, x));
                }
            }
        }
        out
    }

    /// CSV with header `t,x1,...,xn`, one row per node, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.dim() {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(w, "{header}")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// `f ∘ φ` at the source's dense samples (`per_step` interior points per
    /// step). Stops before the first sample where `f` faults or leaves `f`'s
    /// domain; that case is reported as a domain exit at the sample's time.
    pub(crate) fn pushforward(source: &Arc<Trajectory>, map: &Arc<SmoothMapSpec>, per_step: usize) -> Trajectory {
        let dense = source.dense_samples(per_step);
        let mut times = Vec::with_capacity(dense.len());
        let mut states = Vec::with_capacity(dense.len());
        let mut termination = source.termination;
        for (t, x) in dense {
            match map.apply(&x) {
                Ok(y) if map.domain().contains(&x) => {
                    times.push(t);
                    states.push(y);
                }
                _ => {
                    termination = Termination::DomainExit { t };
                    break;
                }
            }
        }
        let x0 = states.first().cloned().unwrap_or_default();
        Trajectory {
            system: format!("{}_*({})", map.name(), source.system),
            x0,
            times,
            states,
            segments: Vec::new(),
            termination,
            origin: Origin::Pushforward {
                map: Arc::clone(map),
                source: Arc::clone(source),
            },
        }
    }
}

// Dormand–Prince 5(4) coefficients. Fields are autonomous, so the nodes
// c_i are not needed.
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// step control
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn combo(y: &[f64], h: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn initial_step(system: &VectorFieldSpec, y0: &[f64], f0: &[f64], cfg: &IntegratorConfig, hmax: f64) -> f64 {
    let n = y0.len() as f64;
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let dnf = (f0.iter().zip(&sk).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n).sqrt();
    let dny = (y0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let mut h = if dnf <= 1e-5 || dny <= 1e-5 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(hmax);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h * f).collect();
    let Ok(f1) = system.eval(&y1) else {
        return h;
    };
    let der2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h;
    let der12 = der2.max(dnf);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}

/// Integrate `ẋ = X(x)` forward from `x0` on `[0, T_max]`.
pub fn integrate(system: &VectorFieldSpec, x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    let n = system.dim();
    if x0.len() != n {
        return Err(IntegrateError::DimensionMismatch {
            system: system.name().to_string(),
            expected: n,
            got: x0.len(),
        });
    }
    let domain = system.domain();
    if !domain.contains(x0) {
        return Err(IntegrateError::InitialOutsideDomain {
            system: system.name().to_string(),
            x0: x0.to_vec(),
        });
    }

    let horizon = cfg.horizon;
    let hmax = cfg.max_step();
    let mut y = x0.to_vec();
    let mut k1 = system.eval(&y)?;
    let mut h = cfg
        .initial_step
        .unwrap_or_else(|| initial_step(system, &y, &k1, cfg, hmax))
        .min(hmax);

    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut segments = Vec::new();

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ys = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut facold: f64 = 1e-4;
    let mut rejected_last = false;

    let termination = 'outer: loop {
        if t >= horizon {
            break Termination::ReachedHorizon;
        }
        if norm2(&y) >= cfg.blowup_norm {
            break Termination::BlowUp { t };
        }
        // land exactly on the horizon rather than leave a sliver
        if t + 1.01 * h >= horizon {
            h = horizon - t;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            break Termination::StepUnderflow { t };
        }

        // Err when some stage cannot be evaluated or the step leaves the domain
        let stages: Result<(), ()> = (|| {
            let f = |x: &[f64], out: &mut [f64]| system.eval_into(x, out).map_err(|_| ());
            combo(&y, h, &[(A21, &k1)], &mut ys);
            f(&ys, &mut k2)?;
            combo(&y, h, &[(A31, &k1), (A32, &k2)], &mut ys);
            f(&ys, &mut k3)?;
            combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut ys);
            f(&ys, &mut k4)?;
            combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut ys);
            f(&ys, &mut k5)?;
            combo(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                &mut ys,
            );
            f(&ys, &mut k6)?;
            combo(
                &y,
                h,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
                &mut y1,
            );
            if !domain.contains(&y1) {
                return Err(());
            }
            f(&y1, &mut k7)
        })();

        if stages.is_err() {
            // the step leaves the region where the field is defined
            if domain.boundary_distance(&y) <= cfg.domain_margin {
                break Termination::DomainExit { t };
            }
            h *= 0.5;
            rejected_last = true;
            continue;
        }

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = cfg.atol + cfg.rtol * y[i].abs().max(y1[i].abs());
            err = err.max((e / sk).abs());
        }
        if !err.is_finite() {
            h *= 0.5;
            rejected_last = true;
            continue;
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let mut r5 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            let mut r3 = vec![0.0; n];
            let mut r4 = vec![0.0; n];
            for i in 0..n {
                r2[i] = y1[i] - y[i];
                r3[i] = h * k1[i] - r2[i];
                r4[i] = r2[i] - h * k7[i] - r3[i];
                r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            segments.push(Segment {
                t0: t,
                h,
                r: [y.clone(), r2, r3, r4, r5],
            });
            t = if (horizon - (t + h)).abs() <= 1e-12 * horizon {
                horizon
            } else {
                t + h
            };
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            times.push(t);
            states.push(y.clone());

            let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            facold = err.max(1e-4);
            let mut hnew = h / fac;
            if rejected_last {
                hnew = hnew.min(h);
            }
            rejected_last = false;
            h = hnew.min(hmax);
            continue 'outer;
        }
        h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
        rejected_last = true;
    };

    Ok(Trajectory {
        system: system.name().to_string(),
        x0: x0.to_vec(),
        times,
        states,
        segments,
        termination,
        origin: Origin::Integrated,
    })
}

/// Independent integrations over many initial conditions, in parallel.
/// Results come back in input order.
pub fn integrate_many(
    system: &VectorFieldSpec,
    initial: &[Vec<f64>],
    cfg: &IntegratorConfig,
) -> Vec<Result<Trajectory, IntegrateError>> {
    initial.par_iter().map(|x0| integrate(system, x0, cfg)).collect()
}

/// `max_i |X_i(x)| <= tol`. Points where the field cannot be evaluated are
/// not equilibria.
pub fn is_equilibrium(system: &VectorFieldSpec, x: &[f64], tol: f64) -> bool {
    system
        .eval(x)
        .map(|v| v.iter().all(|c| c.abs() <= tol))
        .unwrap_or(false)
}
