//! Morphisms of dynamical systems and the stability transfer.
//!
//! A smooth `f: M → N` is a morphism from `(M, X)` to `(N, Y)` when
//! `Df(x)·X(x) = Y(f(x))`. Morphisms send solutions to solutions. If `f` is
//! also open and `x0` is a bounded stable point of `X`, then `f(x0)` is a
//! stable point of `Y`. Openness is checked here through the submersion
//! criterion on an explicit region, so a certificate is scoped to that region.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprAst};
use crate::integrate::{integrate, IntegrateError, IntegratorConfig, Trajectory};
use crate::metric::{directions, is_bounded, shell, BoundednessReport};
use crate::stability::{check_stability, Overall, StabilityError, StabilityQuery, StabilityVerdict};
use crate::system::{DomainSpec, MetricSpec, MorphismDecl, Region, SmoothMapSpec, SystemError, VectorFieldSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum MorphismError {
    #[error("region {region:?} is not inside the domain of `{name}`")]
    RegionOutsideDomain { region: Region, name: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("grid density must be positive")]
    EmptyGrid,
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

fn require_inside(region: &Region, domain: &DomainSpec, name: &str) -> Result<(), MorphismError> {
    if region.is_inside(domain) {
        Ok(())
    } else {
        Err(MorphismError::RegionOutsideDomain {
            region: region.clone(),
            name: name.to_string(),
        })
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub point: Vec<f64>,
    /// `max_i |(Df·X)_i − Y_i(f)|`, or `None` where something faulted.
    pub residual: Option<f64>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceCheck {
    pub point: Vec<f64>,
    /// Largest entrywise `|J_fd − J| / max(1, |J|)`.
    pub discrepancy: f64,
}

/// Agreement required between symbolic and finite-difference Jacobians.
pub const FD_AGREEMENT: f64 = 1e-6;
const FD_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessReport {
    pub region: Region,
    pub grid_density: usize,
    pub points: Vec<PointResidual>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub faulted: usize,
    pub pass: bool,
    pub fd_checks: Vec<FiniteDifferenceCheck>,
    pub fd_agreement: bool,
}

fn residual_at(decl: &MorphismDecl, x: &[f64]) -> Result<f64, String> {
    let j = decl.map.jacobian(x).map_err(|e| e.to_string())?;
    let vx = decl.source.eval(x).map_err(|e| e.to_string())?;
    let fx = decl.map.apply(x).map_err(|e| e.to_string())?;
    if !decl.target.domain().contains(&fx) {
        return Err(format!("image {fx:?} is outside the target domain"));
    }
    let vy = decl.target.eval(&fx).map_err(|e| e.to_string())?;
    let pushed = &j * nalgebra::DVector::from_vec(vx);
    Ok(max_abs(pushed.iter().zip(&vy).map(|(a, b)| a - b)))
}

/// Central differences of `f` at `x`, steps shrunk to stay inside the domain.
fn fd_jacobian(map: &SmoothMapSpec, x: &[f64]) -> Option<DMatrix<f64>> {
    let (m, n) = (map.target_dim(), map.source_dim());
    let mut out = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut h = f64::EPSILON.cbrt() * x[j].abs().max(1e-8);
        let room = map.domain().boundary_distance(x);
        if room.is_finite() {
            h = h.min(0.5 * room);
        }
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let (fp, fm) = (map.apply(&plus).ok()?, map.apply(&minus).ok()?);
        let step = plus[j] - minus[j];
        for i in 0..m {
            out[(i, j)] = (fp[i] - fm[i]) / step;
        }
    }
    Some(out)
}

/// Check `Df·X = Y∘f` on a grid over `region`.
pub fn check_related(
    decl: &MorphismDecl,
    region: &Region,
    grid_density: usize,
    tol: f64,
    seed: u64,
) -> Result<RelatednessReport, MorphismError> {
    if grid_density == 0 {
        return Err(MorphismError::EmptyGrid);
    }
    require_inside(region, decl.source.domain(), decl.source.name())?;
    require_inside(region, decl.map.domain(), decl.map.name())?;
    let points: Vec<PointResidual> = region
        .grid(grid_density)
        .into_par_iter()
        .map(|x| match residual_at(decl, &x) {
            Ok(r) => PointResidual {
                point: x,
                residual: Some(r),
                fault: None,
            },
            Err(e) => PointResidual {
                point: x,
                residual: None,
                fault: Some(e),
            },
        })
        .collect();
    let faulted = points.iter().filter(|p| p.residual.is_none()).count();
    for p in points.iter().filter(|p| p.fault.is_some()) {
        warn!(
            "relatedness of `{}`: excluded {:?}: {}",
            decl.map.name(),
            p.point,
            p.fault.as_deref().unwrap_or_default()
        );
    }
    let max_residual = points.iter().filter_map(|p| p.residual).fold(0.0, f64::max);
    let evaluated = points.len() - faulted;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fd_checks = Vec::with_capacity(FD_POINTS);
    for _ in 0..FD_POINTS {
        let x: Vec<f64> = region
            .lo
            .iter()
            .zip(&region.hi)
            .map(|(&a, &b)| if a < b { rng.random_range(a..=b) } else { a })
            .collect();
        let (Ok(j), Some(fd)) = (decl.map.jacobian(&x), fd_jacobian(&decl.map, &x)) else {
            continue;
        };
        let discrepancy = j
            .iter()
            .zip(fd.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        fd_checks.push(FiniteDifferenceCheck { point: x, discrepancy });
    }
    let fd_agreement = fd_checks.iter().all(|c| c.discrepancy <= FD_AGREEMENT);
    if !fd_agreement {
        warn!(
            "symbolic and finite-difference Jacobians of `{}` disagree",
            decl.map.name()
        );
    }
    Ok(RelatednessReport {
        region: region.clone(),
        grid_density,
        points,
        max_residual,
        tolerance: tol,
        faulted,
        pass: evaluated > 0 && max_residual <= tol,
        fd_checks,
        fd_agreement,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpenVerdict {
    SubmersionOnRegion,
    DegeneratePoints {
        points: Vec<Vec<f64>>,
    },
    /// `m > n`: no submersion is possible.
    TargetTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValueAt {
    pub point: Vec<f64>,
    /// Smallest singular value of `Df`; `None` where the Jacobian faulted.
    pub sigma_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessReport {
    pub region: Region,
    pub grid_density: usize,
    pub margin: f64,
    pub points: Vec<SingularValueAt>,
    pub min_singular_value: f64,
    pub verdict: OpenVerdict,
}

impl OpennessReport {
    pub fn is_submersion(&self) -> bool {
        self.verdict == OpenVerdict::SubmersionOnRegion
    }
}

pub const DEFAULT_OPEN_MARGIN: f64 = 1e-6;

/// Sufficient test for openness of `f` restricted to `region`: `Df` has full
/// row rank (smallest singular value `>= margin`) at every grid point.
pub fn check_open(
    map: &SmoothMapSpec,
    region: &Region,
    grid_density: usize,
    margin: f64,
) -> Result<OpennessReport, MorphismError> {
    if grid_density == 0 {
        return Err(MorphismError::EmptyGrid);
    }
    require_inside(region, map.domain(), map.name())?;
    if map.target_dim() > map.source_dim() {
        return Ok(OpennessReport {
            region: region.clone(),
            grid_density,
            margin,
            points: Vec::new(),
            min_singular_value: 0.0,
            verdict: OpenVerdict::TargetTooLarge,
        });
    }
    let points: Vec<SingularValueAt> = region
        .grid(grid_density)
        .into_par_iter()
        .map(|x| {
            let sigma_min = map
                .jacobian(&x)
                .ok()
                .filter(|j| j.iter().all(|v| v.is_finite()))
                .map(|j| j.svd(false, false).singular_values.min());
            SingularValueAt { point: x, sigma_min }
        })
        .collect();
    let degenerate: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| !p.sigma_min.is_some_and(|s| s >= margin))
        .map(|p| p.point.clone())
        .collect();
    let min_singular_value = points
        .iter()
        .map(|p| p.sigma_min.unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    Ok(OpennessReport {
        region: region.clone(),
        grid_density,
        margin,
        points,
        min_singular_value,
        verdict: if degenerate.is_empty() {
            OpenVerdict::SubmersionOnRegion
        } else {
            OpenVerdict::DegeneratePoints { points: degenerate }
        },
    })
}

/// Interior samples per step when pushing a trajectory forward.
pub const PUSHFORWARD_SAMPLES_PER_STEP: usize = 10;

/// `f ∘ φ`, tagged as a pushforward and sampled through `φ`.
pub fn pushforward(traj: &Arc<Trajectory>, map: &Arc<SmoothMapSpec>) -> Result<Trajectory, MorphismError> {
    if traj.dim() != map.source_dim() {
        return Err(MorphismError::Dimension(format!(
            "trajectory has dimension {}, map `{}` expects {}",
            traj.dim(),
            map.name(),
            map.source_dim()
        )));
    }
    if !map.domain().contains(traj.x0()) || map.apply(traj.x0()).is_err() {
        return Err(MorphismError::Precondition(format!(
            "initial state {:?} is outside the domain of `{}`",
            traj.x0(),
            map.name()
        )));
    }
    // a pushforward's nodes are already dense
    let per_step = if traj.is_pushforward() {
        0
    } else {
        PUSHFORWARD_SAMPLES_PER_STEP
    };
    Ok(Trajectory::pushforward(traj, map, per_step))
}

/// Sampled modulus of continuity `δ_ε` on a grid, interpolated multilinearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusField {
    pub eps: f64,
    pub region: Region,
    pub grid_density: usize,
    /// Grid values in the order of [`Region::grid`].
    pub values: Vec<f64>,
    pub safety: f64,
    pub shrink: f64,
    pub source_metric: MetricSpec,
    pub target_metric: MetricSpec,
    pub degenerate: Vec<Vec<f64>>,
    pub seed: u64,
}

pub const MODULUS_SAFETY: f64 = 0.1;
pub const MODULUS_SHRINK: f64 = 0.5;
pub const MODULUS_FLOOR: f64 = 1e-12;
const MODULUS_BISECTIONS: usize = 40;
/// Radii tried on each candidate shell, as fractions of δ.
const SHELL_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

impl ModulusField {
    fn axis(&self, k: usize) -> Vec<f64> {
        let (a, b) = (self.region.lo[k], self.region.hi[k]);
        let n = self.grid_density;
        if n == 1 {
            return vec![0.5 * (a + b)];
        }
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Multilinear interpolation; `None` outside the region.
    pub fn at(&self, x: &[f64]) -> Option<f64> {
        if !self.region.contains(x) {
            return None;
        }
        let n = self.grid_density;
        let dim = self.region.dim();
        // per axis: lower index and weight of the upper neighbour
        let mut cells = Vec::with_capacity(dim);
        for (k, &xk) in x.iter().enumerate() {
            let axis = self.axis(k);
            if n == 1 {
                cells.push((0, 0.0));
                continue;
            }
            let i = axis.partition_point(|v| *v <= xk).clamp(1, n - 1) - 1;
            let w = if axis[i + 1] > axis[i] {
                (xk - axis[i]) / (axis[i + 1] - axis[i])
            } else {
                0.0
            };
            cells.push((i, w.clamp(0.0, 1.0)));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut index = 0;
            for (k, &(i, w)) in cells.iter().enumerate() {
                let up = corner >> k & 1 == 1;
                if up && n == 1 {
                    weight = 0.0;
                }
                weight *= if up { w } else { 1.0 - w };
                index = index * n + if up { (i + 1).min(n - 1) } else { i };
            }
            if weight > 0.0 {
                total += weight * self.values[index];
            }
        }
        Some(total)
    }
}

fn modulus_at(
    map: &SmoothMapSpec,
    x: &[f64],
    eps: f64,
    source: &MetricSpec,
    target: &MetricSpec,
    dirs: &[Vec<f64>],
) -> f64 {
    let Ok(fx) = map.apply(x) else {
        return MODULUS_FLOOR;
    };
    let bound = eps * (1.0 - MODULUS_SAFETY);
    let ok = |delta: f64| {
        SHELL_FRACTIONS.iter().all(|frac| {
            let sh = shell(source, map.domain(), x, delta * frac, dirs);
            sh.points.iter().all(|p| match map.apply(p) {
                Ok(fp) => target.distance(&fx, &fp) <= bound,
                Err(_) => false,
            })
        })
    };
    let (mut lo, mut hi);
    if ok(eps) {
        lo = eps;
        hi = 2.0 * eps;
        let mut grow = 0;
        while ok(hi) {
            lo = hi;
            hi *= 2.0;
            grow += 1;
            if grow == 60 {
                return lo;
            }
        }
    } else {
        hi = eps;
        lo = 0.5 * eps;
        while !ok(lo) {
            hi = lo;
            lo *= 0.5;
            if lo < MODULUS_FLOOR {
                return MODULUS_FLOOR;
            }
        }
    }
    for _ in 0..MODULUS_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Estimate `δ_ε(x)` at every grid point of `region` by bisection over
/// shells of sampled probes, then apply the safety factors.
#[allow(clippy::too_many_arguments)]
pub fn estimate_modulus(
    map: &SmoothMapSpec,
    eps: f64,
    region: &Region,
    grid_density: usize,
    probes: usize,
    source_metric: &MetricSpec,
    target_metric: &MetricSpec,
    seed: u64,
) -> Result<ModulusField, MorphismError> {
    if grid_density == 0 || probes == 0 {
        return Err(MorphismError::EmptyGrid);
    }
    if !(eps > 0.0) {
        return Err(MorphismError::Precondition("ε must be positive".into()));
    }
    require_inside(region, map.domain(), map.name())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = directions(map.source_dim(), probes, &mut rng);
    let raw: Vec<f64> = region
        .grid(grid_density)
        .par_iter()
        .map(|x| modulus_at(map, x, eps, source_metric, target_metric, &dirs))
        .collect();
    let degenerate: Vec<Vec<f64>> = region
        .grid(grid_density)
        .into_iter()
        .zip(&raw)
        .filter(|(_, v)| **v <= MODULUS_FLOOR)
        .map(|(p, _)| p)
        .collect();
    if !degenerate.is_empty() {
        warn!(
            "modulus of `{}` hit the floor at {} grid points",
            map.name(),
            degenerate.len()
        );
    }
    Ok(ModulusField {
        eps,
        region: region.clone(),
        grid_density,
        values: raw.iter().map(|v| v * MODULUS_SHRINK).collect(),
        safety: MODULUS_SAFETY,
        shrink: MODULUS_SHRINK,
        source_metric: source_metric.clone(),
        target_metric: target_metric.clone(),
        degenerate,
        seed,
    })
}

/// Does `f` send the equilibrium `x_e` of the source to one of the target?
/// Tolerance on the target side is `tol·(1 + ‖Df(x_e)‖₂)`.
pub fn check_equilibria_preserved(decl: &MorphismDecl, x_e: &[f64], tol: f64) -> Result<bool, MorphismError> {
    if !decl.source.domain().contains(x_e) {
        return Err(MorphismError::Precondition(format!(
            "{x_e:?} is outside the source domain"
        )));
    }
    if !crate::integrate::is_equilibrium(&decl.source, x_e, tol) {
        return Err(MorphismError::Precondition(format!(
            "{x_e:?} is not an equilibrium of `{}`",
            decl.source.name()
        )));
    }
    let j = decl.map.jacobian(x_e)?;
    let tol_prime = tol * (1.0 + j.svd(false, false).singular_values.max());
    let y = decl.map.apply(x_e).map_err(SystemError::from)?;
    Ok(match decl.target.eval(&y) {
        Ok(v) => max_abs(v) <= tol_prime,
        Err(_) => false,
    })
}

/// The field `Y = φ_* X`, i.e. `Y(y) = Dφ(x)·X(x)` with `x = φ⁻¹(y)`, built
/// symbolically. `phi_inv` supplies the inverse and the target domain.
pub fn conjugate_field(
    name: &str,
    field: &VectorFieldSpec,
    phi: &SmoothMapSpec,
    phi_inv: &SmoothMapSpec,
) -> Result<VectorFieldSpec, MorphismError> {
    let n = field.dim();
    if phi.source_dim() != n || phi.target_dim() != n || phi_inv.source_dim() != n || phi_inv.target_dim() != n {
        return Err(MorphismError::Dimension(
            "conjugation needs square maps of the field's dimension".into(),
        ));
    }
    let comps = phi
        .partials()
        .iter()
        .map(|row| {
            let sum = row
                .iter()
                .zip(field.components())
                .map(|(d, x)| Expr::mul(d.root().clone(), x.root().clone()))
                .fold(Expr::constant(0.0), Expr::add);
            ExprAst::from_expr(sum, n)
                .and_then(|e| e.substitute(phi_inv.components()))
                .map_err(|e| MorphismError::Precondition(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VectorFieldSpec::new(name, comps, phi_inv.domain().clone())?)
}

/// Everything `transfer` needs besides the morphism and the base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Ladder, probes, metric, seed; `x0` is ignored.
    pub stability: StabilityQuery,
    pub grid_density: usize,
    pub related_tol: f64,
    pub open_margin: f64,
    pub corroborate: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            stability: StabilityQuery::default(),
            grid_density: 41,
            related_tol: 1e-8,
            open_margin: DEFAULT_OPEN_MARGIN,
            corroborate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    SourceStable,
    Bounded,
    Related,
    Open,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::SourceStable => "source point not certified stable",
            Hypothesis::Bounded => "base trajectory not bounded",
            Hypothesis::Related => "vector fields not f-related on the tube",
            Hypothesis::Open => "map not a submersion on the tube",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub source_stability: StabilityVerdict,
    pub boundedness: BoundednessReport,
    pub relatedness: Option<RelatednessReport>,
    pub openness: Option<OpennessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Conclusion {
    TransferredStable {
        image: Vec<f64>,
    },
    NotTransferable {
        image: Vec<f64>,
        failed: Vec<Hypothesis>,
        reason: String,
    },
}

impl Conclusion {
    pub fn is_transferred(&self) -> bool {
        matches!(self, Conclusion::TransferredStable { .. })
    }
}

fn source_holds(v: &StabilityVerdict) -> bool {
    v.overall == Overall::Certified
        && v.base_blow_up.is_none()
        && !v.entries.is_empty()
        && v.entries.iter().all(|e| {
            e.outcome == Overall::Certified
                && e.delta.is_some_and(|d| d > 0.0)
                && e.counterexample.is_none()
                && e.probes.len() >= v.probes.min(2)
                && e.probes.iter().all(|p| p.sampled_sup <= e.eps * (1.0 + v.slack))
        })
}

fn bounded_holds(b: &BoundednessReport) -> bool {
    b.bounded && b.termination.reached_horizon() && b.hull_radius <= b.radius_cap
}

fn related_holds(r: Option<&RelatednessReport>) -> bool {
    r.is_some_and(|r| {
        r.pass
            && r.fd_agreement
            && r.faulted < r.points.len()
            && r.max_residual <= r.tolerance
            && r.points.iter().filter_map(|p| p.residual).all(|x| x <= r.tolerance)
    })
}

fn open_holds(o: Option<&OpennessReport>) -> bool {
    o.is_some_and(|o| {
        o.is_submersion()
            && !o.points.is_empty()
            && o.min_singular_value >= o.margin
            && o.points.iter().all(|p| p.sigma_min.is_some_and(|s| s >= o.margin))
    })
}

/// Decide the conclusion from the hypothesis reports alone, re-checking each
/// report's internal consistency rather than trusting its flag.
pub fn conclude(h: &Hypotheses, image: Vec<f64>) -> Conclusion {
    let mut failed = Vec::new();
    if !source_holds(&h.source_stability) {
        failed.push(Hypothesis::SourceStable);
    }
    if !bounded_holds(&h.boundedness) {
        failed.push(Hypothesis::Bounded);
    }
    if !related_holds(h.relatedness.as_ref()) {
        failed.push(Hypothesis::Related);
    }
    if !open_holds(h.openness.as_ref()) {
        failed.push(Hypothesis::Open);
    }
    if failed.is_empty() {
        Conclusion::TransferredStable { image }
    } else {
        let reason = failed.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ");
        Conclusion::NotTransferable { image, failed, reason }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corroboration {
    pub target_verdict: StabilityVerdict,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCertificate {
    pub tool_version: String,
    pub map: String,
    pub map_components: Vec<String>,
    pub source: String,
    pub source_components: Vec<String>,
    pub target: String,
    pub target_components: Vec<String>,
    pub x0: Vec<f64>,
    pub image: Vec<f64>,
    /// Region on which relatedness and openness were verified.
    pub tube: Region,
    pub tube_rule: String,
    pub openness_criterion: String,
    pub integrator: IntegratorConfig,
    pub config: TransferConfig,
    pub hypotheses: Hypotheses,
    pub conclusion: Conclusion,
    pub corroboration: Option<Corroboration>,
}

fn sources(e: &[ExprAst]) -> Vec<String> {
    e.iter().map(|c| c.to_source()).collect()
}

/// Hull of the base trajectory, inflated by `delta` and kept strictly inside
/// both domains: a finite open side `b` caps the tube halfway between `b` and
/// the hull.
fn tube(hull: &Region, delta: f64, domains: &[&DomainSpec]) -> Region {
    let mut lo = hull.lo.clone();
    let mut hi = hull.hi.clone();
    for k in 0..lo.len() {
        let (h_lo, h_hi) = (hull.lo[k], hull.hi[k]);
        lo[k] = h_lo - delta;
        hi[k] = h_hi + delta;
        for d in domains {
            let iv = d.intervals()[k];
            if iv.lo.is_finite() {
                lo[k] = lo[k].max(iv.lo + 0.5 * (h_lo - iv.lo));
            }
            if iv.hi.is_finite() {
                hi[k] = hi[k].min(iv.hi - 0.5 * (iv.hi - h_hi));
            }
        }
    }
    Region { lo, hi }
}

pub const TUBE_RULE: &str = "hull of the base trajectory (dense samples) inflated by the largest certified delta, \
capped halfway to any finite boundary of the source or map domain";

/// Run the four hypothesis checks and conclude.
pub fn transfer(
    decl: &MorphismDecl,
    x0: &[f64],
    cfg: &TransferConfig,
    integrator: &IntegratorConfig,
) -> Result<TransferCertificate, MorphismError> {
    if !decl.source.domain().contains(x0) || !decl.map.domain().contains(x0) {
        return Err(MorphismError::Precondition(format!(
            "{x0:?} must lie in the source and map domains"
        )));
    }
    let image = decl.map.apply(x0).map_err(SystemError::from)?;
    let query = StabilityQuery {
        x0: x0.to_vec(),
        ..cfg.stability.clone()
    };

    // (1) stability at x0
    let verdict = check_stability(&decl.source, &query, integrator)?;
    // (2) boundedness of the base trajectory
    let base = integrate(&decl.source, x0, integrator)?;
    let boundedness = is_bounded(&base, query.radius_cap);

    // (3), (4) on the tube
    let delta = verdict.entries.iter().filter_map(|e| e.delta).fold(0.0, f64::max).max(
        if verdict.overall == Overall::Certified {
            0.0
        } else {
            query.delta_min
        },
    );
    let hull = if base.termination().reached_horizon() {
        boundedness.hull.clone()
    } else {
        // the hull of a runaway orbit is meaningless; check near x0 only
        Region {
            lo: x0.to_vec(),
            hi: x0.to_vec(),
        }
    };
    let tube = tube(&hull, delta, &[decl.source.domain(), decl.map.domain()]);
    let relatedness = check_related(decl, &tube, cfg.grid_density, cfg.related_tol, query.seed)
        .map_err(|e| warn!("relatedness check skipped: {e}"))
        .ok();
    let openness = check_open(&decl.map, &tube, cfg.grid_density, cfg.open_margin)
        .map_err(|e| warn!("openness check skipped: {e}"))
        .ok();

    let hypotheses = Hypotheses {
        source_stability: verdict,
        boundedness,
        relatedness,
        openness,
    };
    let conclusion = conclude(&hypotheses, image.clone());

    let corroboration = if cfg.corroborate && decl.target.domain().contains(&image) {
        let target_verdict = check_stability(
            &decl.target,
            &StabilityQuery {
                x0: image.clone(),
                ..cfg.stability.clone()
            },
            integrator,
        )?;
        // a transferred certificate should meet a certified target; a refused
        // transfer makes no prediction
        let agrees = !conclusion.is_transferred() || target_verdict.overall == Overall::Certified;
        Some(Corroboration { target_verdict, agrees })
    } else {
        None
    };

    Ok(TransferCertificate {
        tool_version: TOOL_VERSION.to_string(),
        map: decl.map.name().to_string(),
        map_components: sources(decl.map.components()),
        source: decl.source.name().to_string(),
        source_components: sources(decl.source.components()),
        target: decl.target.name().to_string(),
        target_components: sources(decl.target.components()),
        x0: x0.to_vec(),
        image,
        tube,
        tube_rule: TUBE_RULE.to_string(),
        openness_criterion: "submersion-on-region".to_string(),
        integrator: integrator.clone(),
        config: cfg.clone(),
        hypotheses,
        conclusion,
        corroboration,
    })
}
