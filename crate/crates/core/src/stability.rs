//! Sampled δ-ε search for stability of a point, and the eigenvalue oracle
//! for linear systems.
//!
//! A point `x0` is stable when trajectories starting close to it stay close
//! for all `t >= 0` in the sup-over-time distance. For each `ε` of a ladder we
//! try `δ = start, start/2, …` down to `δ_min`, placing `K` probes on the
//! metric sphere of radius `δ`. A rung is accepted when every probe distance
//! is converged and `<= ε`. At the last rung, a probe whose sampled distance
//! already exceeds `ε` falsifies (the sampled sup is a lower bound).

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::expr::ExprAst;
use crate::integrate::{integrate, IntegrateError, IntegratorConfig, Trajectory};
use crate::metric::{
    directions, first_exceedance, is_bounded, shell, trajectory_distance, BoundednessReport, DistanceStatus,
    DistanceValue, MetricError, SamplingPlan,
};
use crate::system::{DomainSpec, MetricSpec, SystemError, VectorFieldSpec};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("invalid stability query: {0}")]
    InvalidQuery(String),
    #[error("base point {0:?} is not strictly inside the domain")]
    OutsideDomain(Vec<f64>),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
}

/// Default cap on the hull radius for calling a base trajectory bounded.
pub const DEFAULT_RADIUS_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityQuery {
    pub x0: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    pub delta_min: f64,
    /// Probes per shell.
    pub probes: usize,
    pub metric: MetricSpec,
    pub seed: u64,
    pub sampling: SamplingPlan,
    pub radius_cap: f64,
    /// Relative slack in `d <= ε`, absorbing rounding in `|x0 ± δ - x0|`.
    pub slack: f64,
}

impl Default for StabilityQuery {
    fn default() -> Self {
        StabilityQuery {
            x0: Vec::new(),
            eps_ladder: vec![1.0, 0.1, 0.01],
            delta_min: 1e-6,
            probes: 32,
            metric: MetricSpec::Euclidean,
            seed: 0,
            sampling: SamplingPlan::default(),
            radius_cap: DEFAULT_RADIUS_CAP,
            slack: 1e-9,
        }
    }
}

impl StabilityQuery {
    pub fn new(x0: Vec<f64>) -> Self {
        StabilityQuery {
            x0,
            ..StabilityQuery::default()
        }
    }

    pub fn with_ladder(mut self, eps: &[f64]) -> Self {
        self.eps_ladder = eps.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<(), StabilityError> {
        let bad = |m: &str| Err(StabilityError::InvalidQuery(m.into()));
        if self.x0.len() != dim {
            return bad(&format!("x0 has {} coordinates, system has {dim}", self.x0.len()));
        }
        if self.eps_ladder.is_empty()
            || self.eps_ladder.iter().any(|e| !(e.is_finite() && *e > 0.0))
            || self.eps_ladder.windows(2).any(|w| w[1] >= w[0])
        {
            return bad("ε ladder must be nonempty, positive and strictly decreasing");
        }
        if !(self.delta_min > 0.0 && self.delta_min.is_finite()) {
            return bad("δ_min must be positive");
        }
        if self.delta_min > self.eps_ladder[0] {
            return bad("δ_min exceeds the largest ε");
        }
        if self.probes < 8 {
            return bad("need at least 8 probes per shell");
        }
        if !(self.radius_cap > 0.0) || !(self.slack >= 0.0) {
            return bad("radius cap must be positive and slack nonnegative");
        }
        self.metric.validate(dim)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Certified,
    Falsified,
    Inconclusive,
}

impl fmt::Display for Overall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overall::Certified => "certified",
            Overall::Falsified => "falsified",
            Overall::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub initial: Vec<f64>,
    pub distance: DistanceValue,
    pub sampled_sup: f64,
    pub status: DistanceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub initial: Vec<f64>,
    pub delta: f64,
    /// Sampled distance; a lower bound for the true one.
    pub distance: f64,
    pub status: DistanceStatus,
    /// First time the distance exceeds ε.
    pub time: f64,
}

/// Summary of one δ rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub delta: f64,
    pub clipped: usize,
    pub evaluated: usize,
    pub accepted: bool,
    pub max_distance: f64,
    pub exceeded: usize,
    pub unconverged: usize,
    /// Latest first-exceedance time among the probes that exceeded ε.
    pub latest_exceedance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEntry {
    pub eps: f64,
    pub delta: Option<f64>,
    pub outcome: Overall,
    /// Probes of the accepted rung, or of the last rung tried.
    pub probes: Vec<ProbeRecord>,
    pub counterexample: Option<Counterexample>,
    pub rungs: Vec<Rung>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseBlowUp {
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub system: String,
    pub x0: Vec<f64>,
    pub overall: Overall,
    pub entries: Vec<EpsilonEntry>,
    pub base: BoundednessReport,
    pub base_blow_up: Option<BaseBlowUp>,
    pub metric: MetricSpec,
    pub seed: u64,
    pub probes: usize,
    pub delta_min: f64,
    pub slack: f64,
    pub horizon: f64,
}

impl StabilityVerdict {
    pub fn entry(&self, eps: f64) -> Option<&EpsilonEntry> {
        self.entries.iter().find(|e| e.eps == eps)
    }
}

struct Outcome {
    record: ProbeRecord,
    probe: Trajectory,
}

fn point_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Probes evaluated per batch before a failed rung is abandoned.
const BATCH: usize = 8;

struct Search<'a> {
    system: &'a VectorFieldSpec,
    query: &'a StabilityQuery,
    cfg: &'a IntegratorConfig,
    base: Trajectory,
    dirs: Vec<Vec<f64>>,
}

impl Search<'_> {
    fn run_probe(&self, x: &[f64]) -> Result<Outcome, StabilityError> {
        let probe = integrate(self.system, x, self.cfg)?;
        let d = trajectory_distance(&self.base, &probe, &self.query.metric, &self.query.sampling)?;
        Ok(Outcome {
            record: ProbeRecord {
                initial: x.to_vec(),
                distance: d.value,
                sampled_sup: d.sampled_sup,
                status: d.status,
            },
            probe,
        })
    }

    /// Evaluate a rung. With `exhaustive` false, stop after the first batch
    /// containing a failing probe.
    fn rung(&self, eps: f64, delta: f64, exhaustive: bool) -> Result<(Rung, Vec<Outcome>), StabilityError> {
        let q = self.query;
        let domain = self.system.domain();
        let mut sh = shell(&q.metric, domain, &q.x0, delta, &self.dirs);
        // mostly outside the domain: pull the whole shell in
        while 2 * sh.clipped > sh.points.len() && sh.radius * 0.5 >= q.delta_min {
            sh = shell(&q.metric, domain, &q.x0, sh.radius * 0.5, &self.dirs);
        }
        let bound = eps * (1.0 + q.slack);
        let fails = |r: &ProbeRecord| r.status != DistanceStatus::Converged || r.sampled_sup > bound;

        let mut done: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut outcomes: Vec<Outcome> = Vec::with_capacity(sh.points.len());
        let mut order: Vec<usize> = Vec::with_capacity(sh.points.len());
        for chunk in sh.points.chunks(BATCH) {
            // symmetric shells in one dimension repeat points
            let fresh: Vec<&Vec<f64>> = {
                let mut seen = Vec::new();
                for p in chunk {
                    let k = point_key(p);
                    if !done.contains_key(&k) && !seen.iter().any(|s: &&Vec<f64>| point_key(s) == k) {
                        seen.push(p);
                    }
                }
                seen
            };
            let results: Vec<Result<Outcome, StabilityError>> = fresh.par_iter().map(|p| self.run_probe(p)).collect();
            for r in results {
                let o = r?;
                done.insert(point_key(&o.record.initial), outcomes.len());
                outcomes.push(o);
            }
            for p in chunk {
                order.push(done[&point_key(p)]);
            }
            if !exhaustive && order.iter().any(|&i| fails(&outcomes[i].record)) {
                break;
            }
        }

        let records: Vec<&ProbeRecord> = order.iter().map(|&i| &outcomes[i].record).collect();
        let accepted = order.len() == sh.points.len() && !records.iter().any(|r| fails(r));
        let mut latest = None;
        let mut exceeded = 0;
        for &i in &order {
            let o = &outcomes[i];
            if o.record.sampled_sup > bound {
                exceeded += 1;
                let t = first_exceedance(&self.base, &o.probe, &q.metric, bound, &q.sampling);
                if let Some(t) = t {
                    latest = Some(latest.map_or(t, |l: f64| l.max(t)));
                }
            }
        }
        let rung = Rung {
            delta: sh.radius,
            clipped: sh.clipped,
            evaluated: order.len(),
            accepted,
            max_distance: records.iter().map(|r| r.sampled_sup).fold(0.0, f64::max),
            exceeded,
            unconverged: records.iter().filter(|r| r.status != DistanceStatus::Converged).count(),
            latest_exceedance: latest,
        };
        // expand back to one outcome per probe, in probe order
        let mut slots: Vec<Option<Outcome>> = outcomes.into_iter().map(Some).collect();
        let mut expanded = Vec::with_capacity(order.len());
        for (pos, &i) in order.iter().enumerate() {
            let last_use = order[pos + 1..].iter().all(|&j| j != i);
            let o = if last_use {
                slots[i].take().expect("used once")
            } else {
                let o = slots[i].as_ref().expect("present");
                Outcome {
                    record: o.record.clone(),
                    probe: o.probe.clone(),
                }
            };
            expanded.push(o);
        }
        Ok((rung, expanded))
    }

    fn entry(&self, eps: f64, start: f64, bottom_only: bool) -> Result<EpsilonEntry, StabilityError> {
        let q = self.query;
        let mut ladder = Vec::new();
        let mut d = start;
        while d >= q.delta_min {
            ladder.push(d);
            d *= 0.5;
        }
        // the bottom rung sits exactly at delta_min
        if ladder.last().is_none_or(|&l| l > q.delta_min) {
            ladder.push(q.delta_min);
        }
        if bottom_only {
            ladder.drain(..ladder.len() - 1);
        }
        let bound = eps * (1.0 + q.slack);
        let mut rungs = Vec::new();
        for (k, &delta) in ladder.iter().enumerate() {
            let last = k + 1 == ladder.len();
            let (rung, outcomes) = self.rung(eps, delta, last)?;
            let accepted = rung.accepted;
            let radius = rung.delta;
            rungs.push(rung);
            if accepted {
                return Ok(EpsilonEntry {
                    eps,
                    delta: Some(radius),
                    outcome: Overall::Certified,
                    probes: outcomes.into_iter().map(|o| o.record).collect(),
                    counterexample: None,
                    rungs,
                });
            }
            if last {
                let worst = outcomes
                    .iter()
                    .filter(|o| o.record.sampled_sup > bound)
                    .max_by(|a, b| a.record.sampled_sup.total_cmp(&b.record.sampled_sup));
                let counterexample = worst.map(|o| Counterexample {
                    initial: o.record.initial.clone(),
                    delta: radius,
                    distance: o.record.sampled_sup,
                    status: o.record.status,
                    time: first_exceedance(&self.base, &o.probe, &q.metric, bound, &q.sampling).unwrap_or(0.0),
                });
                let outcome = if counterexample.is_some() {
                    Overall::Falsified
                } else {
                    Overall::Inconclusive
                };
                return Ok(EpsilonEntry {
                    eps,
                    delta: None,
                    outcome,
                    probes: outcomes.into_iter().map(|o| o.record).collect(),
                    counterexample,
                    rungs,
                });
            }
        }
        unreachable!("ladder is nonempty")
    }
}

/// Certify or falsify stability of `query.x0` for `system`.
pub fn check_stability(
    system: &VectorFieldSpec,
    query: &StabilityQuery,
    cfg: &IntegratorConfig,
) -> Result<StabilityVerdict, StabilityError> {
    query.validate(system.dim())?;
    if !system.domain().contains(&query.x0) {
        return Err(StabilityError::OutsideDomain(query.x0.clone()));
    }
    let base = integrate(system, &query.x0, cfg)?;
    let bounded = is_bounded(&base, query.radius_cap);
    let mut verdict = StabilityVerdict {
        system: system.name().to_string(),
        x0: query.x0.clone(),
        overall: Overall::Inconclusive,
        entries: Vec::new(),
        base: bounded,
        base_blow_up: None,
        metric: query.metric.clone(),
        seed: query.seed,
        probes: query.probes,
        delta_min: query.delta_min,
        slack: query.slack,
        horizon: cfg.horizon,
    };
    if let crate::integrate::Termination::BlowUp { t } = base.termination() {
        verdict.overall = Overall::Falsified;
        verdict.base_blow_up = Some(BaseBlowUp { t });
        return Ok(verdict);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(query.seed);
    let search = Search {
        system,
        query,
        cfg,
        dirs: directions(system.dim(), query.probes, &mut rng),
        base,
    };
    let mut prev_delta: Option<f64> = None;
    let mut failed = false;
    for &eps in &query.eps_ladder {
        let start = prev_delta.map_or(eps, |d| d.min(eps));
        // once a larger ε has no δ, a smaller one will not have one either;
        // only the bottom rung can still decide between falsified and inconclusive
        let entry = search.entry(eps, start, failed)?;
        match entry.delta {
            Some(d) => prev_delta = Some(d),
            None => failed = true,
        }
        verdict.entries.push(entry);
    }
    let outcomes: Vec<Overall> = verdict.entries.iter().map(|e| e.outcome).collect();
    verdict.overall = if outcomes.contains(&Overall::Falsified) {
        Overall::Falsified
    } else if outcomes.iter().all(|o| *o == Overall::Certified) {
        Overall::Certified
    } else {
        Overall::Inconclusive
    };
    Ok(verdict)
}

/// `ẋ = A x` on ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>) -> Result<Self, StabilityError> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(StabilityError::InvalidQuery(format!(
                "matrix must be square and nonempty, got {}×{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(StabilityError::InvalidQuery("matrix entries must be finite".into()));
        }
        Ok(LinearSystem { a })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StabilityError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(StabilityError::InvalidQuery("matrix must be square".into()));
        }
        LinearSystem::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn to_field(&self, name: &str) -> VectorFieldSpec {
        let comps = (0..self.dim())
            .map(|i| {
                let row: Vec<f64> = self.a.row(i).iter().copied().collect();
                ExprAst::linear(&row).expect("dimension is positive")
            })
            .collect();
        VectorFieldSpec::new(name, comps, DomainSpec::whole(self.dim())).expect("linear fields are smooth")
    }
}

impl Serialize for LinearSystem {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| self.a.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearSystem {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        LinearSystem::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearClass {
    Stable,
    Unstable,
    MarginalStable,
    MarginalUnstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub class: LinearClass,
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    /// `sup_{t in [0, flow_horizon]} ‖e^{At}‖₂`.
    pub flow_norm_sup: f64,
    pub flow_horizon: f64,
}

pub const ORACLE_FLOW_HORIZON: f64 = 10.0;

fn complex_rank(m: DMatrix<Complex<f64>>, tol: f64) -> usize {
    let sv = m.svd(false, false).singular_values;
    sv.iter().filter(|s| **s > tol).count()
}

/// Eigenvalue classification of `ẋ = A x`.
pub fn linear_stability_oracle(sys: &LinearSystem) -> Result<OracleReport, StabilityError> {
    let a = &sys.a;
    let n = sys.dim();
    let scale = 1.0 + a.norm();
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| StabilityError::Eigen("Schur iteration did not converge".into()))?;
    let eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(StabilityError::Eigen("non-finite eigenvalue".into()));
    }
    let axis_tol = 1e-9 * scale;
    let cluster_tol = 1e-6 * scale;

    let class = if eig.iter().any(|z| z.re > axis_tol) {
        LinearClass::Unstable
    } else if eig.iter().all(|z| z.re < -axis_tol) {
        LinearClass::Stable
    } else {
        let on_axis: Vec<Complex<f64>> = eig.iter().copied().filter(|z| z.re.abs() <= axis_tol).collect();
        let ac = a.map(|v| Complex::new(v, 0.0));
        let semisimple = on_axis.iter().all(|&lam| {
            let alg = on_axis.iter().filter(|z| (**z - lam).norm() <= cluster_tol).count();
            let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * lam;
            let geo = n - complex_rank(shifted, cluster_tol);
            geo == alg
        });
        if semisimple {
            LinearClass::MarginalStable
        } else {
            LinearClass::MarginalUnstable
        }
    };

    let steps = 200;
    let flow_norm_sup = (0..=steps)
        .map(|k| {
            let t = ORACLE_FLOW_HORIZON * k as f64 / steps as f64;
            (a * t).exp().svd(false, false).singular_values.max()
        })
        .fold(0.0, f64::max);

    let mut eigenvalues: Vec<[f64; 2]> = eig.iter().map(|z| [z.re, z.im]).collect();
    eigenvalues.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    Ok(OracleReport {
        class,
        eigenvalues,
        flow_norm_sup,
        flow_horizon: ORACLE_FLOW_HORIZON,
    })
}

/// What the sampled check should say given the eigenvalue class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Certified,
    Falsified,
    /// Marginally unstable flows grow polynomially; anything but certified agrees.
    NotCertified,
}

impl Expected {
    fn from_class(c: LinearClass) -> Expected {
        match c {
            LinearClass::Stable | LinearClass::MarginalStable => Expected::Certified,
            LinearClass::Unstable => Expected::Falsified,
            LinearClass::MarginalUnstable => Expected::NotCertified,
        }
    }

    pub fn agrees(self, o: Overall) -> bool {
        match self {
            Expected::Certified => o == Overall::Certified,
            Expected::Falsified => o == Overall::Falsified,
            Expected::NotCertified => o != Overall::Certified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub x0: Vec<f64>,
    pub overall: Overall,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub oracle: OracleReport,
    pub expected: Expected,
    pub samples: Vec<SampleOutcome>,
    pub agreed: usize,
    pub certified: usize,
    pub falsified: usize,
    pub seed: u64,
}

/// Run the sampled check at `samples` points drawn uniformly from
/// `[-1, 1]ⁿ` and compare with the eigenvalue verdict. `template` supplies
/// everything but the base point; its seed also drives the point draw.
pub fn cross_validate(
    sys: &LinearSystem,
    samples: usize,
    template: &StabilityQuery,
    cfg: &IntegratorConfig,
) -> Result<CrossValidation, StabilityError> {
    let oracle = linear_stability_oracle(sys)?;
    let expected = Expected::from_class(oracle.class);
    let field = sys.to_field("linear");
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let x0: Vec<f64> = (0..sys.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let q = StabilityQuery {
            x0: x0.clone(),
            seed: template.seed.wrapping_add(k as u64),
            ..template.clone()
        };
        let v = check_stability(&field, &q, cfg)?;
        out.push(SampleOutcome {
            x0,
            overall: v.overall,
            agrees: expected.agrees(v.overall),
        });
    }
    Ok(CrossValidation {
        agreed: out.iter().filter(|s| s.agrees).count(),
        certified: out.iter().filter(|s| s.overall == Overall::Certified).count(),
        falsified: out.iter().filter(|s| s.overall == Overall::Falsified).count(),
        oracle,
        expected,
        samples: out,
        seed: template.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Interval;

    fn field(src: &[&str]) -> VectorFieldSpec {
        VectorFieldSpec::parse("t", src, DomainSpec::whole(src.len())).unwrap()
    }

    fn check(sys: &VectorFieldSpec, x0: &[f64], eps: &[f64]) -> StabilityVerdict {
        let q = StabilityQuery::new(x0.to_vec()).with_ladder(eps).with_seed(7);
        check_stability(sys, &q, &IntegratorConfig::default()).unwrap()
    }

    fn lin(rows: &[&[f64]]) -> LinearSystem {
        LinearSystem::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn decay_certified_with_delta_eps() {
        let v = check(&field(&["-x"]), &[3.0], &[0.1]);
        assert_eq!(v.overall, Overall::Certified);
        let e = &v.entries[0];
        assert_eq!(e.delta, Some(0.1));
        assert_eq!(e.probes.len(), 32);
        assert!(e.probes.iter().all(|p| p.sampled_sup <= 0.1 * (1.0 + 1e-9)));
        assert!(v.base.bounded);
    }

    #[test]
    fn expansion_falsified() {
        let v = check(&field(&["x"]), &[0.0], &[1.0]);
        assert_eq!(v.overall, Overall::Falsified);
        let c = v.entries[0].counterexample.as_ref().unwrap();
        assert!(c.distance > 1.0);
        assert!(c.time <= 25.0);
        assert!(v.entries[0].rungs.last().unwrap().delta >= 1e-6);
    }

    #[test]
    fn cubic_decay_certified() {
        let v = check(&field(&["-x^3"]), &[1.0], &[0.1]);
        assert_eq!(v.entries[0].delta, Some(0.1));
    }

    #[test]
    fn translation_certified() {
        let v = check(&field(&["1"]), &[0.0], &[0.01]);
        assert_eq!(v.overall, Overall::Certified);
        assert_eq!(v.entries[0].delta, Some(0.01));
    }

    #[test]
    fn base_blow_up_is_a_witness() {
        let v = check(&field(&["x^2"]), &[1.0], &[0.1]);
        assert_eq!(v.overall, Overall::Falsified);
        let t = v.base_blow_up.as_ref().unwrap().t;
        assert!(t > 0.99 && t < 1.0);
        assert!(!v.base.bounded);
    }

    #[test]
    fn counterexamples_replay() {
        let sys = field(&["x1 + x2", "0.5*x2"]);
        let v = check(&sys, &[0.0, 0.0], &[1.0, 0.1]);
        assert_eq!(v.overall, Overall::Falsified);
        let cfg = IntegratorConfig::default();
        let base = integrate(&sys, &v.x0, &cfg).unwrap();
        for e in &v.entries {
            if let Some(c) = &e.counterexample {
                let probe = integrate(&sys, &c.initial, &cfg).unwrap();
                let d = trajectory_distance(&base, &probe, &v.metric, &SamplingPlan::default()).unwrap();
                assert!(d.sampled_sup > e.eps);
                assert!((d.sampled_sup - c.distance).abs() <= 0.01 * c.distance);
            }
        }
    }

    #[test]
    fn certified_deltas_are_monotone() {
        let sys = field(&["x2", "-x1 - 0.5*x2"]);
        let v = check(&sys, &[0.5, 0.0], &[1.0, 0.1, 0.01]);
        assert_eq!(v.overall, Overall::Certified);
        for w in v.entries.windows(2) {
            assert!(w[1].delta.unwrap() <= w[0].delta.unwrap());
            // the smaller ε's probes are witnesses for the larger ε too
            assert!(w[1].probes.iter().all(|p| p.sampled_sup <= w[0].eps));
        }
    }

    #[test]
    fn equilibria_stay_put() {
        let sys = field(&["-x1 + x2^2", "-x2"]);
        let v = check(&sys, &[0.0, 0.0], &[0.1]);
        assert_eq!(v.overall, Overall::Certified);
        assert!(v.base.hull_radius <= IntegratorConfig::default().atol);
    }

    #[test]
    fn shells_shrink_near_the_boundary() {
        let dom = DomainSpec::new(vec![Interval::new(0.0, 10.0), Interval::new(0.0, 10.0)]).unwrap();
        let sys = VectorFieldSpec::parse("corner", &["-x1", "-x2"], dom).unwrap();
        let q = StabilityQuery::new(vec![0.01, 0.01]).with_ladder(&[1.0]);
        let v = check_stability(&sys, &q, &IntegratorConfig::default()).unwrap();
        let r = &v.entries[0].rungs[0];
        assert!(2 * r.clipped <= 32 && r.delta < 1.0, "{r:?}");
    }

    #[test]
    fn replay_is_deterministic() {
        let sys = field(&["x2", "-sin(x1)"]);
        let a = check(&sys, &[0.3, 0.0], &[0.1]);
        let b = check(&sys, &[0.3, 0.0], &[0.1]);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn bad_queries() {
        let sys = field(&["-x"]);
        let cfg = IntegratorConfig::default();
        for q in [
            StabilityQuery::new(vec![1.0]).with_ladder(&[0.1, 0.1]),
            StabilityQuery::new(vec![1.0]).with_ladder(&[]),
            StabilityQuery {
                probes: 4,
                ..StabilityQuery::new(vec![1.0])
            },
            StabilityQuery {
                delta_min: 0.0,
                ..StabilityQuery::new(vec![1.0])
            },
            StabilityQuery::new(vec![1.0, 2.0]),
        ] {
            assert!(matches!(
                check_stability(&sys, &q, &cfg),
                Err(StabilityError::InvalidQuery(_))
            ));
        }
        let pos = VectorFieldSpec::parse("p", &["-x"], DomainSpec::new(vec![Interval::positive()]).unwrap()).unwrap();
        assert!(matches!(
            check_stability(&pos, &StabilityQuery::new(vec![0.0]), &cfg),
            Err(StabilityError::OutsideDomain(_))
        ));
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(
            linear_stability_oracle(&lin(&[&[-1.0]])).unwrap().class,
            LinearClass::Stable
        );
        let rot = linear_stability_oracle(&lin(&[&[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(rot.class, LinearClass::MarginalStable);
        assert!((rot.flow_norm_sup - 1.0).abs() < 1e-9);
        let jordan = linear_stability_oracle(&lin(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(jordan.class, LinearClass::MarginalUnstable);
        // ‖[[1,t],[0,1]]‖₂ at t = 10
        let want = (10.0 + (104f64).sqrt()) / 2.0;
        assert!((jordan.flow_norm_sup - want).abs() < 1e-9, "{}", jordan.flow_norm_sup);
        assert_eq!(
            linear_stability_oracle(&lin(&[&[0.0]])).unwrap().class,
            LinearClass::MarginalStable
        );
        assert_eq!(
            linear_stability_oracle(&lin(&[&[0.0, 0.0], &[0.0, 0.0]]))
                .unwrap()
                .class,
            LinearClass::MarginalStable
        );
        assert_eq!(
            linear_stability_oracle(&lin(&[&[0.1, 0.0], &[0.0, -3.0]]))
                .unwrap()
                .class,
            LinearClass::Unstable
        );
        let double_rot = lin(&[
            &[0.0, 1.0, 1.0, 0.0],
            &[-1.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, -1.0, 0.0],
        ]);
        assert_eq!(
            linear_stability_oracle(&double_rot).unwrap().class,
            LinearClass::MarginalUnstable
        );
    }

    #[test]
    fn cross_validation_examples() {
        let cfg = IntegratorConfig::default();
        let t = StabilityQuery::default().with_seed(11);
        let r = cross_validate(&lin(&[&[-1.0, 0.0], &[0.0, -2.0]]), 10, &t, &cfg).unwrap();
        assert_eq!((r.agreed, r.certified), (10, 10));
        let r = cross_validate(&lin(&[&[1.0]]), 10, &t, &cfg).unwrap();
        assert_eq!((r.certified, r.falsified), (0, 10));
        let r = cross_validate(&lin(&[&[0.0]]), 10, &t, &cfg).unwrap();
        assert_eq!(r.certified, 10);
    }

    #[test]
    fn linear_json_is_rows() {
        let l = lin(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        assert_eq!(serde_json::from_str::<LinearSystem>(&s).unwrap(), l);
        assert!(serde_json::from_str::<LinearSystem>("[[1.0,2.0]]").is_err());
    }
}
