//! Sup-over-time distance between trajectories and boundedness of orbits.
//!
//! For two solutions of the same system the distance is
//! `sup_{t>=0} d(φ(t), ψ(t))` in a chosen state-space metric. Only `[0, T]`
//! can be sampled, so every value carries a status:
//!
//! - `converged`: the sup was attained before the last tenth of the window
//!   and the tail adds nothing (within the refinement tolerance);
//! - `lower_bound_only`: the tail still holds the largest values, so the
//!   true sup may be bigger;
//! - `divergent`: a trajectory blew up, or the distance keeps growing
//!   through the second half of the window. The value is the infinity
//!   marker, never a float infinity.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{integrate, IntegrateError, IntegratorConfig, Termination, Trajectory};
use crate::system::{DomainSpec, MetricSpec, Region, VectorFieldSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("trajectories belong to different systems (`{a}` vs `{b}`)")]
    MismatchedSystems { a: String, b: String },
    #[error("trajectories have no common time span")]
    NoCommonSpan,
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("{0}")]
    Invalid(String),
}

/// How the time axis is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPlan {
    /// Uniform points on `[0, T]`, merged with both trajectories' nodes.
    pub initial_points: usize,
    /// Local maxima refined per round.
    pub candidates: usize,
    /// Upper bound on refinement rounds.
    pub max_rounds: usize,
    /// Stop refining once the running max changes by less than this, relatively.
    pub rel_tol: f64,
    /// Fraction of the window treated as the tail.
    pub tail_fraction: f64,
    /// `d(T) >= growth_factor * sup_{[0, T/2]} d` marks unsaturated growth.
    pub growth_factor: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            initial_points: 1025,
            candidates: 3,
            max_rounds: 8,
            rel_tol: 1e-3,
            tail_fraction: 0.1,
            growth_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceValue {
    Finite(f64),
    Infinite,
}

impl DistanceValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            DistanceValue::Finite(v) => Some(v),
            DistanceValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, DistanceValue::Infinite)
    }

    /// `self > eps`, with the marker above every real.
    pub fn exceeds(self, eps: f64) -> bool {
        match self {
            DistanceValue::Finite(v) => v > eps,
            DistanceValue::Infinite => true,
        }
    }
}

impl fmt::Display for DistanceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceValue::Finite(v) => write!(f, "{v}"),
            DistanceValue::Infinite => f.write_str("infinite"),
        }
    }
}

impl Serialize for DistanceValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DistanceValue::Finite(v) => s.serialize_f64(*v),
            DistanceValue::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for DistanceValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(DistanceValue::Finite(v)),
            Raw::Text(t) if t == "infinite" => Ok(DistanceValue::Infinite),
            Raw::Text(t) => Err(de::Error::custom(format!("unexpected distance `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceStatus {
    Converged,
    LowerBoundOnly,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistance {
    pub value: DistanceValue,
    pub achieved_at: f64,
    pub status: DistanceStatus,
    pub metric: MetricSpec,
    /// Largest sampled distance; finite even when `value` is the marker.
    pub sampled_sup: f64,
    /// End of the common window `[0, T]`.
    pub window: f64,
}

impl TrajectoryDistance {
    pub fn is_converged(&self) -> bool {
        self.status == DistanceStatus::Converged
    }
}

struct Samples {
    t: Vec<f64>,
    d: Vec<f64>,
}

impl Samples {
    fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.d.len() {
            if self.d[i] > self.d[best] {
                best = i;
            }
        }
        best
    }

    fn max_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        self.t
            .iter()
            .zip(&self.d)
            .filter(|(t, _)| keep(**t))
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }

    fn insert(&mut self, t: f64, d: f64) {
        let i = self.t.partition_point(|s| *s < t);
        if self.t.get(i) != Some(&t) {
            self.t.insert(i, t);
            self.d.insert(i, d);
        }
    }
}

fn distance_at(a: &Trajectory, b: &Trajectory, metric: &MetricSpec, t: f64) -> Option<f64> {
    let x = a.sample(t).ok()?;
    let y = b.sample(t).ok()?;
    Some(metric.distance(&x, &y))
}

/// Golden-section search for a local max of `d` inside `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> Option<f64>, mut lo: f64, mut hi: f64, out: &mut Vec<(f64, f64)>) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let width0 = hi - lo;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (Some(mut f1), Some(mut f2)) = (f(x1), f(x2)) else {
        return;
    };
    out.push((x1, f1));
    out.push((x2, f2));
    while hi - lo > 1e-10 * width0.max(1e-300) && hi - lo > 4.0 * f64::EPSILON * hi.abs() {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            let Some(v) = f(x2) else { return };
            f2 = v;
            out.push((x2, f2));
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            let Some(v) = f(x1) else { return };
            f1 = v;
            out.push((x1, f1));
        }
    }
}

fn collect_samples(a: &Trajectory, b: &Trajectory, metric: &MetricSpec, window: f64, plan: &SamplingPlan) -> Samples {
    let n = plan.initial_points.max(2);
    let mut grid: Vec<f64> = (0..n)
        .map(|k| window * k as f64 / (n - 1) as f64)
        .chain(a.times().iter().copied())
        .chain(b.times().iter().copied())
        .filter(|t| *t <= window)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut s = Samples {
        t: Vec::with_capacity(grid.len()),
        d: Vec::with_capacity(grid.len()),
    };
    for t in grid {
        if let Some(d) = distance_at(a, b, metric, t) {
            s.t.push(t);
            s.d.push(d);
        }
    }
    s
}

fn refine(a: &Trajectory, b: &Trajectory, metric: &MetricSpec, plan: &SamplingPlan, s: &mut Samples) {
    let f = |t: f64| distance_at(a, b, metric, t);
    for _ in 0..plan.max_rounds {
        let before = s.d[s.argmax()];
        // local maxima, best first
        let mut peaks: Vec<usize> = (0..s.d.len())
            .filter(|&i| (i == 0 || s.d[i] >= s.d[i - 1]) && (i + 1 == s.d.len() || s.d[i] >= s.d[i + 1]))
            .collect();
        peaks.sort_by(|&i, &j| s.d[j].total_cmp(&s.d[i]).then(i.cmp(&j)));
        peaks.truncate(plan.candidates.max(1));
        let mut found = Vec::new();
        for i in peaks {
            let lo = s.t[i.saturating_sub(1)];
            let hi = s.t[(i + 1).min(s.t.len() - 1)];
            if hi > lo {
                golden_max(f, lo, hi, &mut found);
            }
        }
        for (t, d) in found {
            s.insert(t, d);
        }
        let after = s.d[s.argmax()];
        if after - before <= plan.rel_tol * after {
            break;
        }
    }
}

/// `sup_t d(a(t), b(t))` over the common window.
pub fn trajectory_distance(
    a: &Trajectory,
    b: &Trajectory,
    metric: &MetricSpec,
    plan: &SamplingPlan,
) -> Result<TrajectoryDistance, MetricError> {
    if a.system() != b.system() || a.dim() != b.dim() {
        return Err(MetricError::MismatchedSystems {
            a: a.system().to_string(),
            b: b.system().to_string(),
        });
    }
    let window = a.t_end().min(b.t_end());
    let blew_up = a.termination().is_blow_up() || b.termination().is_blow_up();
    if window <= 0.0 && !blew_up {
        return Err(MetricError::NoCommonSpan);
    }

    let mut s = collect_samples(a, b, metric, window.max(0.0), plan);
    if s.t.is_empty() {
        return Err(MetricError::NoCommonSpan);
    }
    refine(a, b, metric, plan, &mut s);

    let best = s.argmax();
    let (achieved_at, sampled_sup) = (s.t[best], s.d[best]);
    let divergent = |s: &Samples| TrajectoryDistance {
        value: DistanceValue::Infinite,
        achieved_at,
        status: DistanceStatus::Divergent,
        metric: metric.clone(),
        sampled_sup: s.d[best],
        window,
    };
    if blew_up {
        return Ok(divergent(&s));
    }

    // rounding noise in the states should not read as growth
    let scale = a
        .states()
        .iter()
        .chain(b.states())
        .map(|x| x.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let floor = 1e-12 * (1.0 + scale);
    let tail_start = window * (1.0 - plan.tail_fraction);
    let head = s.max_where(|t| t < tail_start);
    let tail = s.max_where(|t| t >= tail_start);
    // a trajectory that stopped early says nothing about later times
    let truncated = !(a.termination().reached_horizon() && b.termination().reached_horizon());
    let status = if tail <= head * (1.0 + plan.rel_tol) + floor && !truncated {
        DistanceStatus::Converged
    } else {
        let first_half = s.max_where(|t| t <= 0.5 * window);
        let at_end = *s.d.last().expect("nonempty");
        let still_rising = at_end >= tail * (1.0 - plan.rel_tol);
        if still_rising && at_end >= plan.growth_factor * first_half + floor {
            return Ok(divergent(&s));
        }
        DistanceStatus::LowerBoundOnly
    };
    Ok(TrajectoryDistance {
        value: DistanceValue::Finite(sampled_sup),
        achieved_at,
        status,
        metric: metric.clone(),
        sampled_sup,
        window,
    })
}

/// Earliest sampled time at which `d(a(t), b(t)) > eps`, located to about
/// `1e-9` of the window by bisection.
pub fn first_exceedance(
    a: &Trajectory,
    b: &Trajectory,
    metric: &MetricSpec,
    eps: f64,
    plan: &SamplingPlan,
) -> Option<f64> {
    let window = a.t_end().min(b.t_end());
    let s = collect_samples(a, b, metric, window.max(0.0), plan);
    let k = s.d.iter().position(|d| *d > eps)?;
    if k == 0 {
        return Some(s.t[0]);
    }
    let (mut lo, mut hi) = (s.t[k - 1], s.t[k]);
    while hi - lo > 1e-9 * window.max(1.0) {
        let mid = 0.5 * (lo + hi);
        match distance_at(a, b, metric, mid) {
            Some(d) if d > eps => hi = mid,
            _ => lo = mid,
        }
    }
    Some(hi)
}

/// Evidence that an orbit stays in a bounded set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub bounded: bool,
    /// `sup |x(t)|` (Euclidean) over dense samples.
    pub hull_radius: f64,
    /// `sup max_i |x_i(t)|`.
    pub max_coordinate_excursion: f64,
    pub radius_cap: f64,
    /// Time span covered by the evidence.
    pub evidence_horizon: f64,
    pub termination: Termination,
    /// Coordinate-wise bounding box of the samples.
    pub hull: Region,
}

/// Interior samples per step used for hulls (at least 10× the step density).
pub const HULL_SAMPLES_PER_STEP: usize = 10;

/// Bounded means: the trajectory reached its horizon and never left the
/// ball of radius `radius_cap`.
pub fn is_bounded(traj: &Trajectory, radius_cap: f64) -> BoundednessReport {
    let samples = traj.dense_samples(HULL_SAMPLES_PER_STEP);
    let n = traj.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut radius: f64 = 0.0;
    let mut excursion: f64 = 0.0;
    for (_, x) in &samples {
        radius = radius.max(x.iter().map(|v| v * v).sum::<f64>().sqrt());
        for i in 0..n {
            excursion = excursion.max(x[i].abs());
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    let termination = traj.termination();
    BoundednessReport {
        bounded: termination.reached_horizon() && radius <= radius_cap,
        hull_radius: radius,
        max_coordinate_excursion: excursion,
        radius_cap,
        evidence_horizon: traj.t_end(),
        termination,
        hull: Region { lo, hi },
    }
}

/// Points on the metric sphere of a given radius, clipped to an open domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
    /// Probes pulled inward because the sphere left the domain.
    pub clipped: usize,
}

/// Unit directions: `±1` alternating in one dimension, Gaussian otherwise.
pub fn directions(dim: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            if dim == 1 {
                return vec![if k % 2 == 0 { 1.0 } else { -1.0 }];
            }
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    return v.into_iter().map(|c| c / norm).collect();
                }
            }
        })
        .collect()
}

/// Step `s` along `dir` with `metric(x0, x0 + s·dir) = radius`, or `None` if
/// the metric never reaches `radius` along this ray (it is bounded).
pub fn ray_to_sphere(metric: &MetricSpec, x0: &[f64], dir: &[f64], radius: f64) -> Option<f64> {
    match metric {
        MetricSpec::Euclidean => Some(radius),
        MetricSpec::WeightedEuclidean { weights } => {
            let q: f64 = weights.iter().zip(dir).map(|(w, u)| w * u * u).sum();
            Some(radius / q.sqrt())
        }
        MetricSpec::ArctanCompressed => {
            let at = |s: f64| {
                let y: Vec<f64> = x0.iter().zip(dir).map(|(x, u)| x + s * u).collect();
                metric.distance(x0, &y)
            };
            let mut hi = radius.max(1e-300);
            while at(hi) < radius {
                hi *= 2.0;
                if hi > 1e300 {
                    return None;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if at(mid) < radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            Some(hi)
        }
    }
}

/// Relative inset used when a probe is pulled back inside the domain.
const CLIP_INSET: f64 = 1e-6;

/// Place one probe per direction on the sphere of `radius` around `x0`.
/// Probes that would leave `domain` (or that lie beyond a bounded metric's
/// reach) are pulled back along their ray to just inside the boundary.
pub fn shell(metric: &MetricSpec, domain: &DomainSpec, x0: &[f64], radius: f64, dirs: &[Vec<f64>]) -> Shell {
    let mut clipped = 0;
    let points = dirs
        .iter()
        .map(|u| {
            let exit = domain.ray_exit(x0, u);
            let want = ray_to_sphere(metric, x0, u, radius).unwrap_or(f64::INFINITY);
            let s = if want < exit {
                want
            } else {
                clipped += 1;
                exit * (1.0 - CLIP_INSET)
            };
            x0.iter().zip(u).map(|(x, d)| x + s * d).collect()
        })
        .collect();
    Shell {
        radius,
        points,
        clipped,
    }
}

/// Outcome of checking that small balls of one trajectory metric sit inside
/// a given ball of another, around a bounded base trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedBallReport {
    pub eps: f64,
    /// Metric of the ball being contained (radius `delta_prime`).
    pub inner: MetricSpec,
    /// Metric of the `eps` ball.
    pub outer: MetricSpec,
    pub delta_prime: Option<f64>,
    /// Halvings tried, counting the successful one.
    pub steps: usize,
    pub probes_per_step: usize,
    pub base_bounded: bool,
}

/// Search `δ′ = eps, eps/2, …` for a radius such that every probe trajectory
/// within `δ′` of the base in the `inner` trajectory metric is within `eps` in
/// the `outer` one. Probe initial conditions are spread over the inner
/// metric's ball of radius `δ′` (a trajectory cannot be closer than its start).
#[allow(clippy::too_many_arguments)]
pub fn nested_ball_check(
    system: &VectorFieldSpec,
    x0: &[f64],
    inner: &MetricSpec,
    outer: &MetricSpec,
    eps: f64,
    cfg: &IntegratorConfig,
    plan: &SamplingPlan,
    probes: usize,
    max_steps: usize,
    rng: &mut impl Rng,
) -> Result<NestedBallReport, MetricError> {
    if !(eps > 0.0) || probes == 0 {
        return Err(MetricError::Invalid("need eps > 0 and at least one probe".into()));
    }
    let base = integrate(system, x0, cfg)?;
    let base_bounded = is_bounded(&base, cfg.blowup_norm).bounded;
    let dirs = directions(x0.len(), probes, rng);
    let mut delta = eps;
    for step in 1..=max_steps {
        let mut ok = true;
        for (k, u) in dirs.iter().enumerate() {
            let frac = (k + 1) as f64 / probes as f64;
            let sh = shell(inner, system.domain(), x0, delta * frac, std::slice::from_ref(u));
            let probe = integrate(system, &sh.points[0], cfg)?;
            let d_in = trajectory_distance(&base, &probe, inner, plan)?;
            let within = matches!(d_in.value, DistanceValue::Finite(v) if v < delta);
            if !within {
                continue;
            }
            let d_out = trajectory_distance(&base, &probe, outer, plan)?;
            if d_out.status != DistanceStatus::Converged
                || d_out.value.exceeds(eps)
                || d_in.status != DistanceStatus::Converged
            {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(NestedBallReport {
                eps,
                inner: inner.clone(),
                outer: outer.clone(),
                delta_prime: Some(delta),
                steps: step,
                probes_per_step: probes,
                base_bounded,
            });
        }
        delta *= 0.5;
    }
    Ok(NestedBallReport {
        eps,
        inner: inner.clone(),
        outer: outer.clone(),
        delta_prime: None,
        steps: max_steps,
        probes_per_step: probes,
        base_bounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Interval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(src: &[&str]) -> VectorFieldSpec {
        VectorFieldSpec::parse("t", src, DomainSpec::whole(src.len())).unwrap()
    }

    fn run(sys: &VectorFieldSpec, x0: &[f64]) -> Trajectory {
        integrate(sys, x0, &IntegratorConfig::default()).unwrap()
    }

    fn dist(a: &Trajectory, b: &Trajectory) -> TrajectoryDistance {
        trajectory_distance(a, b, &MetricSpec::Euclidean, &SamplingPlan::default()).unwrap()
    }

    #[test]
    fn decay_distance_sits_at_start() {
        let sys = field(&["-x"]);
        let d = dist(&run(&sys, &[1.0]), &run(&sys, &[2.0]));
        assert_eq!(d.value, DistanceValue::Finite(1.0));
        assert_eq!(d.achieved_at, 0.0);
        assert_eq!(d.status, DistanceStatus::Converged);
    }

    #[test]
    fn rotation_keeps_distance() {
        let sys = field(&["x2", "-x1"]);
        let d = dist(&run(&sys, &[1.0, 0.0]), &run(&sys, &[1.1, 0.0]));
        let v = d.value.finite().unwrap();
        assert!((v - 0.1).abs() < 1e-6, "{v}");
        assert_eq!(d.status, DistanceStatus::Converged);
    }

    #[test]
    fn expansion_diverges() {
        let sys = field(&["x"]);
        let d = dist(&run(&sys, &[0.0]), &run(&sys, &[0.1]));
        assert_eq!(d.value, DistanceValue::Infinite);
        assert_eq!(d.status, DistanceStatus::Divergent);
        assert!(d.sampled_sup > 1e7);
    }

    #[test]
    fn linear_growth_without_blow_up_diverges() {
        // x1' = x2, x2' = 0: offsets in x2 grow linearly
        let sys = field(&["x2", "0"]);
        let d = dist(&run(&sys, &[0.0, 0.0]), &run(&sys, &[0.0, 0.01]));
        assert_eq!(d.status, DistanceStatus::Divergent);
    }

    #[test]
    fn slow_saturation_is_only_a_lower_bound() {
        // distance 1 - e^{-t/50}: still rising at T = 100 but levelling off
        let sys = field(&["-x/50"]);
        let d = dist(&run(&sys, &[0.0]), &run(&sys, &[0.0]));
        assert_eq!(d.value, DistanceValue::Finite(0.0));
        let sys2 = VectorFieldSpec::parse("t", &["x2", "-x2/30"], DomainSpec::whole(2)).unwrap();
        let d = dist(&run(&sys2, &[0.0, 0.0]), &run(&sys2, &[0.0, 0.01]));
        assert_eq!(d.status, DistanceStatus::LowerBoundOnly, "{d:?}");
    }

    #[test]
    fn identical_trajectories_are_at_zero() {
        let sys = field(&["x2", "-sin(x1)"]);
        let a = run(&sys, &[0.5, 0.1]);
        let d = dist(&a, &a);
        assert_eq!(d.value, DistanceValue::Finite(0.0));
        assert!(d.is_converged());
    }

    #[test]
    fn mismatched_systems_rejected() {
        let a = run(&field(&["-x"]), &[1.0]);
        let other = VectorFieldSpec::parse("other", &["-x"], DomainSpec::whole(1)).unwrap();
        let b = run(&other, &[1.0]);
        assert!(matches!(
            trajectory_distance(&a, &b, &MetricSpec::Euclidean, &SamplingPlan::default()),
            Err(MetricError::MismatchedSystems { .. })
        ));
    }

    #[test]
    fn interior_peak_is_polished() {
        // distance 0.1·|cos t + 3 sin t|·e^{-t/5}-like bump; compare against a
        // brute-force scan on a very fine grid
        let sys = field(&["x2", "-x1 - 0.4*x2"]);
        let a = run(&sys, &[0.0, 0.0]);
        let b = run(&sys, &[0.0, 0.1]);
        let d = dist(&a, &b);
        let brute = (0..=200_000)
            .map(|k| {
                let t = 100.0 * k as f64 / 200_000.0;
                MetricSpec::Euclidean.distance(&a.sample(t).unwrap(), &b.sample(t).unwrap())
            })
            .fold(0.0, f64::max);
        let v = d.value.finite().unwrap();
        assert!(v >= brute - 1e-12, "{v} < {brute}");
        assert!(v - brute < 1e-9);
    }

    #[test]
    fn refinement_never_lowers_the_value() {
        let sys = field(&["x2", "-x1 - 0.3*x2 + 0.2*sin(x1)"]);
        let a = run(&sys, &[0.2, 0.0]);
        let b = run(&sys, &[0.0, 0.3]);
        let m = MetricSpec::Euclidean;
        let mut prev = 0.0;
        for rounds in 0..4 {
            let plan = SamplingPlan {
                initial_points: 65,
                max_rounds: rounds,
                rel_tol: 0.0,
                ..SamplingPlan::default()
            };
            let v = trajectory_distance(&a, &b, &m, &plan).unwrap().sampled_sup;
            assert!(v >= prev, "round {rounds}: {v} < {prev}");
            prev = v;
        }
        let mut prev = 0.0;
        for n in [17, 33, 65, 129, 257] {
            let plan = SamplingPlan {
                initial_points: n,
                max_rounds: 0,
                ..SamplingPlan::default()
            };
            let v = trajectory_distance(&a, &b, &m, &plan).unwrap().sampled_sup;
            assert!(v >= prev, "n={n}");
            prev = v;
        }
    }

    #[test]
    fn exceedance_time() {
        let sys = field(&["x"]);
        let a = run(&sys, &[0.0]);
        let b = run(&sys, &[1e-3]);
        let t = first_exceedance(&a, &b, &MetricSpec::Euclidean, 1.0, &SamplingPlan::default()).unwrap();
        assert!((t - 1000f64.ln()).abs() < 1e-6, "{t}");
        assert_eq!(
            first_exceedance(&a, &a, &MetricSpec::Euclidean, 1.0, &SamplingPlan::default()),
            None
        );
    }

    #[test]
    fn boundedness_examples() {
        let r = is_bounded(&run(&field(&["-x"]), &[5.0]), 1e6);
        assert!(r.bounded);
        assert_eq!(r.hull_radius, 5.0);
        let r = is_bounded(&run(&field(&["1"]), &[0.0]), 50.0);
        assert!(!r.bounded);
        assert!((r.hull_radius - 100.0).abs() < 1e-9);
        let r = is_bounded(&run(&field(&["x2", "-x1"]), &[1.0, 0.0]), 1e6);
        assert!(r.bounded);
        assert!((r.hull_radius - 1.0).abs() < 1e-9, "{}", r.hull_radius);
        let r = is_bounded(&run(&field(&["x"]), &[1.0]), 1e12);
        assert!(!r.bounded, "blow-up is never bounded");
    }

    #[test]
    fn hull_box_covers_orbit() {
        let r = is_bounded(&run(&field(&["x2", "-x1"]), &[1.0, 0.0]), 10.0);
        for i in 0..2 {
            assert!((r.hull.lo[i] + 1.0).abs() < 1e-6);
            assert!((r.hull.hi[i] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shells_sit_on_metric_spheres() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = [0.3, -2.0];
        let dirs = directions(2, 16, &mut rng);
        for m in [
            MetricSpec::Euclidean,
            MetricSpec::WeightedEuclidean {
                weights: vec![4.0, 0.25],
            },
            MetricSpec::ArctanCompressed,
        ] {
            let sh = shell(&m, &DomainSpec::whole(2), &x0, 0.05, &dirs);
            assert_eq!(sh.clipped, 0);
            for p in &sh.points {
                assert!((m.distance(&x0, p) - 0.05).abs() < 1e-12, "{m}");
            }
        }
        // arctan balls have radius < π/√2·… ; 2.0 is out of reach from the origin in 1-D
        let sh = shell(
            &MetricSpec::ArctanCompressed,
            &DomainSpec::whole(1),
            &[0.0],
            2.0,
            &[vec![1.0]],
        );
        assert_eq!(sh.clipped, 1);
    }

    #[test]
    fn shells_clip_to_the_domain() {
        let pos = DomainSpec::new(vec![Interval::positive()]).unwrap();
        let sh = shell(&MetricSpec::Euclidean, &pos, &[1.0], 1.0, &[vec![1.0], vec![-1.0]]);
        assert_eq!(sh.points[0], vec![2.0]);
        assert!(pos.contains(&sh.points[1]));
        assert!(sh.points[1][0] < 1e-5);
        assert_eq!(sh.clipped, 1);
    }

    #[test]
    fn serialized_shape() {
        let sys = field(&["x"]);
        let d = dist(&run(&sys, &[0.0]), &run(&sys, &[0.1]));
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        assert_eq!(v["value"], "infinite");
        assert_eq!(v["status"], "divergent");
        assert_eq!(v["metric"]["kind"], "euclidean");
        assert!(v["achieved_at"].is_number());
        let back: TrajectoryDistance = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn euclidean_and_arctan_balls_nest() {
        let cfg = IntegratorConfig::default().with_horizon(30.0);
        let plan = SamplingPlan::default();
        let (e, c) = (MetricSpec::Euclidean, MetricSpec::ArctanCompressed);
        let cases = [(field(&["-x"]), vec![1.0]), (field(&["x2", "-x1"]), vec![1.0, 0.0])];
        for (sys, x0) in &cases {
            for eps in [0.1, 0.01] {
                for (inner, outer) in [(&e, &c), (&c, &e)] {
                    let mut rng = ChaCha8Rng::seed_from_u64(3);
                    let r = nested_ball_check(sys, x0, inner, outer, eps, &cfg, &plan, 8, 8, &mut rng).unwrap();
                    assert!(r.base_bounded);
                    assert!(r.delta_prime.is_some_and(|d| d > 0.0), "{x0:?} {eps} {inner:?}");
                }
            }
        }
    }
}
