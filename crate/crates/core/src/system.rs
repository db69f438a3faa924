//! Dynamical systems, smooth maps between them, and metrics on state space.
//!
//! State spaces are open boxes in ℝⁿ (each side open, possibly infinite).

use std::fmt;

use nalgebra::DMatrix;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DomainFault, ExprAst, ExprError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("domain must have at least one coordinate")]
    EmptyDomain,
    #[error("coordinate {coord}: need lower < upper, got ({lo}, {hi})")]
    InvalidInterval { coord: usize, lo: f64, hi: f64 },
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("`{name}` component {component} is not smooth: {source}")]
    NonSmooth {
        name: String,
        component: usize,
        source: ExprError,
    },
    #[error("`{name}` component {component}: {source}")]
    Expr {
        name: String,
        component: usize,
        source: ExprError,
    },
    #[error("point {point:?} is not inside the open domain of `{name}`")]
    OutsideDomain { name: String, point: Vec<f64> },
    #[error(transparent)]
    Fault(#[from] DomainFault),
    #[error("metric weights must be strictly positive and finite")]
    InvalidWeights,
    #[error("region: need finite lo <= hi in every coordinate")]
    InvalidRegion,
}

/// One open side-pair `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn real_line() -> Self {
        Interval::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn positive() -> Self {
        Interval::new(0.0, f64::INFINITY)
    }
}

/// Bounds serialize as numbers, with `"inf"` / `"-inf"` for the infinite ends.
mod bound {
    use super::*;

    pub fn write<S: Serializer>(v: f64, s: S) -> Result<S::Ok, S::Error> {
        if v == f64::INFINITY {
            s.serialize_str("inf")
        } else if v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn read<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!(
                    "bound must be a number, \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
    }
}

struct BoundRef(f64);

impl Serialize for BoundRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        bound::write(self.0, s)
    }
}

struct BoundVal(f64);

impl<'de> Deserialize<'de> for BoundVal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        bound::read(d).map(BoundVal)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&BoundRef(self.lo))?;
        t.serialize_element(&BoundRef(self.hi))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (lo, hi) = <(BoundVal, BoundVal)>::deserialize(d)?;
        Ok(Interval::new(lo.0, hi.0))
    }
}

/// Open box `(lo_1, hi_1) × … × (lo_n, hi_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DomainSpec {
    intervals: Vec<Interval>,
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let intervals = Vec::<Interval>::deserialize(d)?;
        DomainSpec::new(intervals).map_err(de::Error::custom)
    }
}

impl DomainSpec {
    pub fn new(intervals: Vec<Interval>) -> Result<Self, SystemError> {
        if intervals.is_empty() {
            return Err(SystemError::EmptyDomain);
        }
        for (coord, iv) in intervals.iter().enumerate() {
            // NaN fails the comparison as well
            if !(iv.lo < iv.hi) || iv.lo == f64::INFINITY || iv.hi == f64::NEG_INFINITY {
                return Err(SystemError::InvalidInterval {
                    coord,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(DomainSpec { intervals })
    }

    /// All of ℝⁿ.
    pub fn whole(dim: usize) -> Self {
        DomainSpec {
            intervals: vec![Interval::real_line(); dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.intervals).all(|(&v, iv)| v > iv.lo && v < iv.hi)
    }

    /// Smallest coordinate distance to a finite side; `+inf` when every side
    /// is at infinity, negative when `x` lies outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.intervals)
            .map(|(&v, iv)| (v - iv.lo).min(iv.hi - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `r` such that `x + s·dir` stays inside for all `0 <= s < r`.
    pub fn ray_exit(&self, x: &[f64], dir: &[f64]) -> f64 {
        let mut r = f64::INFINITY;
        for ((&v, &d), iv) in x.iter().zip(dir).zip(&self.intervals) {
            if d > 0.0 && iv.hi.is_finite() {
                r = r.min((iv.hi - v) / d);
            } else if d < 0.0 && iv.lo.is_finite() {
                r = r.min((iv.lo - v) / d);
            }
        }
        r
    }
}

/// Closed, bounded box used for grids and verification regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SystemError> {
        if lo.is_empty()
            || lo.len() != hi.len()
            || lo
                .iter()
                .zip(&hi)
                .any(|(a, b)| !a.is_finite() || !b.is_finite() || a > b)
        {
            return Err(SystemError::InvalidRegion);
        }
        Ok(Region { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, SystemError> {
        Region::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| v >= a && v <= b)
    }

    pub fn is_inside(&self, domain: &DomainSpec) -> bool {
        self.dim() == domain.dim()
            && domain
                .intervals()
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(iv, (&a, &b))| a > iv.lo && b < iv.hi)
    }

    /// Tensor grid with `density` points per axis, endpoints included. A
    /// density of one gives the centre.
    pub fn grid(&self, density: usize) -> Vec<Vec<f64>> {
        if density == 0 {
            return Vec::new();
        }
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| {
                if density == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..density)
                        .map(|k| {
                            if k + 1 == density {
                                b
                            } else {
                                a + (b - a) * k as f64 / (density - 1) as f64
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let mut points = vec![Vec::with_capacity(self.dim())];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        points
    }
}

fn check_components(name: &str, components: &[ExprAst], dim: usize) -> Result<(), SystemError> {
    for (k, c) in components.iter().enumerate() {
        if c.dim() != dim {
            return Err(SystemError::DimensionMismatch {
                what: format!("`{name}` component {k}"),
                expected: dim,
                got: c.dim(),
            });
        }
    }
    Ok(())
}

fn parse_components(name: &str, sources: &[&str], dim: usize) -> Result<Vec<ExprAst>, SystemError> {
    sources
        .iter()
        .enumerate()
        .map(|(k, s)| {
            ExprAst::parse(s, dim).map_err(|source| SystemError::Expr {
                name: name.to_string(),
                component: k,
                source,
            })
        })
        .collect()
}

/// `ẋ = X(x)` on an open box.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSpec {
    name: String,
    components: Vec<ExprAst>,
    domain: DomainSpec,
}

impl VectorFieldSpec {
    pub fn new(name: impl Into<String>, components: Vec<ExprAst>, domain: DomainSpec) -> Result<Self, SystemError> {
        let name = name.into();
        let dim = domain.dim();
        if components.len() != dim {
            return Err(SystemError::DimensionMismatch {
                what: format!("`{name}` component count"),
                expected: dim,
                got: components.len(),
            });
        }
        check_components(&name, &components, dim)?;
        for (k, c) in components.iter().enumerate() {
            if !c.is_smooth() {
                // surface the differentiation error, which names the kink
                let source = (0..dim)
                    .find_map(|v| c.differentiate(v).err())
                    .unwrap_or(ExprError::ZeroDimension);
                return Err(SystemError::NonSmooth {
                    name,
                    component: k,
                    source,
                });
            }
        }
        Ok(VectorFieldSpec {
            name,
            components,
            domain,
        })
    }

    /// Parse one expression per coordinate.
    pub fn parse(name: impl Into<String>, sources: &[&str], domain: DomainSpec) -> Result<Self, SystemError> {
        let name = name.into();
        let components = parse_components(&name, sources, domain.dim())?;
        VectorFieldSpec::new(name, components, domain)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ExprAst] {
        &self.components
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), DomainFault> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, DomainFault> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

/// Smooth `f: U ⊂ ℝⁿ → ℝᵐ` with its symbolic Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothMapSpec {
    name: String,
    components: Vec<ExprAst>,
    domain: DomainSpec,
    /// `partials[i][j] = ∂f_i/∂x_j`
    partials: Vec<Vec<ExprAst>>,
}

impl SmoothMapSpec {
    pub fn new(name: impl Into<String>, components: Vec<ExprAst>, domain: DomainSpec) -> Result<Self, SystemError> {
        let name = name.into();
        if components.is_empty() {
            return Err(SystemError::DimensionMismatch {
                what: format!("`{name}` target dimension"),
                expected: 1,
                got: 0,
            });
        }
        let n = domain.dim();
        check_components(&name, &components, n)?;
        let partials = components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                (0..n)
                    .map(|j| c.differentiate(j))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| SystemError::NonSmooth {
                        name: name.clone(),
                        component: k,
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SmoothMapSpec {
            name,
            components,
            domain,
            partials,
        })
    }

    pub fn parse(name: impl Into<String>, sources: &[&str], domain: DomainSpec) -> Result<Self, SystemError> {
        let name = name.into();
        let components = parse_components(&name, sources, domain.dim())?;
        SmoothMapSpec::new(name, components, domain)
    }

    pub fn identity(domain: DomainSpec) -> Self {
        let n = domain.dim();
        let components = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                ExprAst::linear(&row).expect("positive dimension")
            })
            .collect();
        SmoothMapSpec::new("id", components, domain).expect("identity is smooth")
    }

    /// `x ↦ B x`.
    pub fn linear(name: impl Into<String>, b: &DMatrix<f64>, domain: DomainSpec) -> Result<Self, SystemError> {
        if b.ncols() != domain.dim() {
            return Err(SystemError::DimensionMismatch {
                what: "linear map columns".into(),
                expected: domain.dim(),
                got: b.ncols(),
            });
        }
        let components = (0..b.nrows())
            .map(|i| {
                let row: Vec<f64> = b.row(i).iter().copied().collect();
                ExprAst::linear(&row).expect("positive dimension")
            })
            .collect();
        SmoothMapSpec::new(name, components, domain)
    }

    /// `outer ∘ inner`, defined on `inner`'s domain.
    pub fn compose(outer: &SmoothMapSpec, inner: &SmoothMapSpec) -> Result<Self, SystemError> {
        if outer.source_dim() != inner.target_dim() {
            return Err(SystemError::DimensionMismatch {
                what: format!("composition `{}` ∘ `{}`", outer.name, inner.name),
                expected: outer.source_dim(),
                got: inner.target_dim(),
            });
        }
        let components = outer
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                c.substitute(&inner.components).map_err(|source| SystemError::Expr {
                    name: outer.name.clone(),
                    component: k,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        SmoothMapSpec::new(
            format!("{}∘{}", outer.name, inner.name),
            components,
            inner.domain.clone(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn target_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ExprAst] {
        &self.components
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn partials(&self) -> &[Vec<ExprAst>] {
        &self.partials
    }

    /// `f(x)`; evaluates the formulas wherever they are defined, including
    /// outside the declared domain.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, DomainFault> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Exact Jacobian `Df(x)` (m×n). `x` must lie strictly inside the domain.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, SystemError> {
        if !self.domain.contains(x) {
            return Err(SystemError::OutsideDomain {
                name: self.name.clone(),
                point: x.to_vec(),
            });
        }
        let (m, n) = (self.target_dim(), self.source_dim());
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                out[(i, j)] = self.partials[i][j].eval(x)?;
            }
        }
        Ok(out)
    }
}

/// A map together with the systems it claims to relate. Nothing here says
/// the fields are actually related; see [`crate::morphism::check_related`].
#[derive(Debug, Clone, PartialEq)]
pub struct MorphismDecl {
    pub map: SmoothMapSpec,
    pub source: VectorFieldSpec,
    pub target: VectorFieldSpec,
}

impl MorphismDecl {
    pub fn new(map: SmoothMapSpec, source: VectorFieldSpec, target: VectorFieldSpec) -> Result<Self, SystemError> {
        if map.source_dim() != source.dim() {
            return Err(SystemError::DimensionMismatch {
                what: format!("map `{}` source vs system `{}`", map.name(), source.name()),
                expected: source.dim(),
                got: map.source_dim(),
            });
        }
        if map.target_dim() != target.dim() {
            return Err(SystemError::DimensionMismatch {
                what: format!("map `{}` target vs system `{}`", map.name(), target.name()),
                expected: target.dim(),
                got: map.target_dim(),
            });
        }
        Ok(MorphismDecl { map, source, target })
    }
}

/// Metric on ℝⁿ. All variants induce the standard topology.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    #[default]
    Euclidean,
    WeightedEuclidean {
        weights: Vec<f64>,
    },
    /// Euclidean distance between coordinate-wise `atan` images. Bounded.
    ArctanCompressed,
}

impl MetricSpec {
    pub fn validate(&self, dim: usize) -> Result<(), SystemError> {
        match self {
            MetricSpec::WeightedEuclidean { weights } => {
                if weights.len() != dim {
                    return Err(SystemError::DimensionMismatch {
                        what: "metric weights".into(),
                        expected: dim,
                        got: weights.len(),
                    });
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(SystemError::InvalidWeights);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let sq: f64 = match self {
            MetricSpec::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            MetricSpec::WeightedEuclidean { weights } => a
                .iter()
                .zip(b)
                .zip(weights)
                .map(|((x, y), w)| w * (x - y) * (x - y))
                .sum(),
            MetricSpec::ArctanCompressed => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x.atan() - y.atan();
                    d * d
                })
                .sum(),
        };
        sq.sqrt()
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Euclidean => f.write_str("euclidean"),
            MetricSpec::WeightedEuclidean { weights } => write!(f, "weighted_euclidean{weights:?}"),
            MetricSpec::ArctanCompressed => f.write_str("arctan_compressed"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos() -> DomainSpec {
        DomainSpec::new(vec![Interval::positive()]).unwrap()
    }

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::new(vec![]).is_err());
        assert!(DomainSpec::new(vec![Interval::new(1.0, 1.0)]).is_err());
        assert!(DomainSpec::new(vec![Interval::new(f64::NAN, 1.0)]).is_err());
        assert!(DomainSpec::new(vec![Interval::new(f64::INFINITY, f64::INFINITY)]).is_err());
        let d = pos();
        assert!(d.contains(&[1e-300]));
        assert!(!d.contains(&[0.0]));
        assert_eq!(d.boundary_distance(&[2.5]), 2.5);
        assert_eq!(DomainSpec::whole(2).boundary_distance(&[1.0, 2.0]), f64::INFINITY);
        assert_eq!(d.ray_exit(&[2.0], &[-1.0]), 2.0);
        assert_eq!(d.ray_exit(&[2.0], &[1.0]), f64::INFINITY);
    }

    #[test]
    fn domain_json_uses_inf_literals() {
        let d: DomainSpec = serde_json::from_str(r#"[[0, "inf"], ["-inf", 3.5]]"#).unwrap();
        assert_eq!(d.intervals()[0], Interval::positive());
        assert_eq!(d.intervals()[1], Interval::new(f64::NEG_INFINITY, 3.5));
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"[[0.0,"inf"],["-inf",3.5]]"#);
        assert!(serde_json::from_str::<DomainSpec>(r#"[[1, 0]]"#).is_err());
        assert!(serde_json::from_str::<DomainSpec>(r#"[[0, "big"]]"#).is_err());
    }

    #[test]
    fn region_grid() {
        let r = Region::interval(0.5, 1.5).unwrap();
        let g = r.grid(41);
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], vec![0.5]);
        assert_eq!(g[40], vec![1.5]);
        assert!((g[20][0] - 1.0).abs() < 1e-15);
        let r2 = Region::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g2 = r2.grid(3);
        assert_eq!(g2.len(), 9);
        assert!(g2.contains(&vec![1.0, 2.0]));
        assert_eq!(r2.grid(1), vec![vec![0.5, 1.0]]);
        assert!(Region::new(vec![1.0], vec![0.0]).is_err());
        assert!(r.is_inside(&pos()));
        assert!(!Region::interval(0.0, 1.0).unwrap().is_inside(&pos()));
    }

    #[test]
    fn fields_reject_kinks_and_bad_dims() {
        assert!(matches!(
            VectorFieldSpec::parse("k", &["abs(x)"], DomainSpec::whole(1)),
            Err(SystemError::NonSmooth { .. })
        ));
        assert!(matches!(
            VectorFieldSpec::parse("k", &["x"], DomainSpec::whole(2)),
            Err(SystemError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            VectorFieldSpec::parse("k", &["x +"], DomainSpec::whole(1)),
            Err(SystemError::Expr { .. })
        ));
        let h = VectorFieldSpec::parse("osc", &["x2", "-x1"], DomainSpec::whole(2)).unwrap();
        assert_eq!(h.eval(&[1.0, 2.0]).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn jacobian_examples() {
        let f = SmoothMapSpec::parse("f", &["-log(x)"], pos()).unwrap();
        let j = f.jacobian(&[2.0]).unwrap();
        // central-difference oracle
        let h = 1e-6;
        let fd = (-(2.0f64 + h).ln() + (2.0f64 - h).ln()) / (2.0 * h);
        assert!((fd + 0.5).abs() < 1e-8);
        assert!((j[(0, 0)] + 0.5).abs() < 1e-15);

        let id = SmoothMapSpec::identity(DomainSpec::whole(2));
        assert_eq!(id.jacobian(&[3.0, -7.0]).unwrap(), DMatrix::identity(2, 2));

        let g = SmoothMapSpec::parse("g", &["1/sqrt(log(1/x^2)+1)"], pos()).unwrap();
        assert!((g.jacobian(&[1.0]).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);

        assert!(matches!(f.jacobian(&[-1.0]), Err(SystemError::OutsideDomain { .. })));
        // a partial that faults inside the domain
        let s = SmoothMapSpec::parse("s", &["sqrt(x1)"], DomainSpec::whole(1)).unwrap();
        assert!(matches!(s.jacobian(&[0.0]), Err(SystemError::Fault(_))));
    }

    #[test]
    fn maps_compose_by_substitution() {
        let f = SmoothMapSpec::parse("f", &["x1 + x2", "x1*x2"], DomainSpec::whole(2)).unwrap();
        let g = SmoothMapSpec::parse("g", &["sin(x1) - x2"], DomainSpec::whole(2)).unwrap();
        let gf = SmoothMapSpec::compose(&g, &f).unwrap();
        assert_eq!(gf.source_dim(), 2);
        assert_eq!(gf.target_dim(), 1);
        let p = [0.3, -1.2];
        let direct = g.apply(&f.apply(&p).unwrap()).unwrap();
        assert_eq!(gf.apply(&p).unwrap(), direct);
        assert!(SmoothMapSpec::compose(&f, &g).is_err());
    }

    #[test]
    fn morphism_dimensions_checked() {
        let x = VectorFieldSpec::parse("X", &["-x"], pos()).unwrap();
        let y2 = VectorFieldSpec::parse("Y", &["x1", "x2"], DomainSpec::whole(2)).unwrap();
        let f = SmoothMapSpec::parse("f", &["-log(x)"], pos()).unwrap();
        assert!(MorphismDecl::new(f.clone(), x.clone(), y2).is_err());
        let y = VectorFieldSpec::parse("Y", &["1"], DomainSpec::whole(1)).unwrap();
        assert!(MorphismDecl::new(f, x, y).is_ok());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(MetricSpec::Euclidean.distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        let w = MetricSpec::WeightedEuclidean { weights: vec![4.0] };
        assert_eq!(w.distance(&[0.0], &[1.0]), 2.0);
        let a = MetricSpec::ArctanCompressed;
        let far = a.distance(&[0.0], &[1e300]);
        assert!((far - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(a.distance(&[0.0], &[1e3]) < far);
        assert!(w.validate(2).is_err());
        assert!(MetricSpec::WeightedEuclidean { weights: vec![0.0] }
            .validate(1)
            .is_err());
    }

    #[test]
    fn metric_json_shape() {
        let m: MetricSpec = serde_json::from_str(r#"{"kind":"weighted_euclidean","weights":[1.0,2.0]}"#).unwrap();
        assert_eq!(
            m,
            MetricSpec::WeightedEuclidean {
                weights: vec![1.0, 2.0]
            }
        );
        assert_eq!(
            serde_json::to_string(&MetricSpec::ArctanCompressed).unwrap(),
            r#"{"kind":"arctan_compressed"}"#
        );
    }
}
