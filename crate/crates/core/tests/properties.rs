use std::sync::Arc;

use flowstab::expr::ExprAst;
use flowstab::integrate::{integrate, IntegratorConfig};
use flowstab::metric::{trajectory_distance, SamplingPlan};
use flowstab::morphism::{check_related, conjugate_field, pushforward};
use flowstab::stability::{check_stability, LinearSystem, Overall, StabilityQuery};
use flowstab::system::{DomainSpec, MetricSpec, MorphismDecl, Region, SmoothMapSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Expressions in `x1`, `x2` that are smooth on all of ℝ² and stay moderate
/// on [-2, 2]².
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("{c:.3}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (2 + sin({b}))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("atan({a})")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("log(2 + cos({a}))")),
            inner.clone().prop_map(|a| format!("-({a})^2")),
            inner.clone().prop_map(|a| format!("pow({a}, 3)")),
        ]
    })
}

/// Anything the grammar accepts, including partial functions and kinks.
fn any_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        (-5.0f64..5.0).prop_map(|c| format!("{c}")),
        Just("pi".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let bin = prop_oneof![Just("+"), Just("-"), Just("*"), Just("/"), Just("^")];
        let un = prop_oneof![
            Just("sin"),
            Just("cos"),
            Just("tan"),
            Just("atan"),
            Just("exp"),
            Just("log"),
            Just("sqrt"),
            Just("abs")
        ];
        prop_oneof![
            (inner.clone(), bin, inner.clone()).prop_map(|(a, op, b)| format!("{a} {op} {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - -({b})")),
            (un, inner.clone()).prop_map(|(f, a)| format!("{f}({a})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("min({a}, max({b}, 1))")),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 2)
}

fn stable_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, 4), -2.0f64..2.0).prop_map(|(m, w)| {
        let m = DMatrix::from_row_slice(2, 2, &m);
        let k = DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
        -(&m * m.transpose()) - DMatrix::identity(2, 2) * 0.1 + k
    })
}

/// Random 2×2 matrices whose eigenvalue real parts stay at least 0.1 from zero.
fn hyperbolic_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, 4)
        .prop_map(|v| DMatrix::from_row_slice(2, 2, &v))
        .prop_filter("eigenvalues near the axis", |a| {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                ((tr - disc.sqrt()) / 2.0).abs() >= 0.1 && ((tr + disc.sqrt()) / 2.0).abs() >= 0.1
            } else {
                (tr / 2.0).abs() >= 0.1
            }
        })
}

fn invertible_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-0.5f64..0.5, 4)
        .prop_map(|v| DMatrix::identity(2, 2) + DMatrix::from_row_slice(2, 2, &v))
        .prop_filter("near singular", |b| b.determinant().abs() > 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_expressions_reparse(src in any_expr(), pts in prop::collection::vec(point(), 100)) {
        let e = ExprAst::parse(&src, 2).unwrap();
        let printed = e.to_source();
        let back = ExprAst::parse(&printed, 2).unwrap();
        for x in &pts {
            match (e.eval(x), back.eval(x)) {
                (Ok(a), Ok(b)) => prop_assert!(
                    close(a, b, 1e-12) || (a.is_nan() && b.is_nan()),
                    "{src} -> {printed} at {x:?}: {a} vs {b}"
                ),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{src} -> {printed} at {x:?}: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic(src in any_expr(), x in point()) {
        let e = ExprAst::parse(&src, 2).unwrap();
        let a = e.eval(&x).map(f64::to_bits);
        let b = e.clone().eval(&x).map(f64::to_bits);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn derivatives_match_central_differences(src in smooth_expr(), x in point()) {
        let e = ExprAst::parse(&src, 2).unwrap();
        for var in 0..2 {
            let d = e.differentiate(var).unwrap().eval(&x).unwrap();
            let h = f64::EPSILON.sqrt() * x[var].abs().max(1.0);
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[var] += h;
            lo[var] -= h;
            let fd = (e.eval(&hi).unwrap() - e.eval(&lo).unwrap()) / (hi[var] - lo[var]);
            // central differences lose about eps/h of |f| to rounding
            let scale = d.abs().max(1.0).max(e.eval(&x).unwrap().abs());
            prop_assert!((d - fd).abs() <= 1e-6 * scale, "{src} d/dx{} at {x:?}: {d} vs {fd}", var + 1);
        }
    }

    #[test]
    fn metrics_satisfy_the_axioms(
        a in prop::collection::vec(-50.0f64..50.0, 3),
        b in prop::collection::vec(-50.0f64..50.0, 3),
        c in prop::collection::vec(-50.0f64..50.0, 3),
        w in prop::collection::vec(0.01f64..10.0, 3),
    ) {
        let metrics = [
            MetricSpec::Euclidean,
            MetricSpec::WeightedEuclidean { weights: w },
            MetricSpec::ArctanCompressed,
        ];
        for m in &metrics {
            prop_assert_eq!(m.distance(&a, &a), 0.0);
            prop_assert_eq!(m.distance(&a, &b), m.distance(&b, &a));
            prop_assert!(m.distance(&a, &b) >= 0.0);
            let slack = m.distance(&a, &b) + m.distance(&b, &c) - m.distance(&a, &c);
            prop_assert!(slack >= -1e-12, "{m:?}: slack {slack}");
        }
    }

    #[test]
    fn chain_rule(f in prop::collection::vec(smooth_expr(), 2), g in prop::collection::vec(smooth_expr(), 2), x in point()) {
        let whole = DomainSpec::whole(2);
        let fs: Vec<&str> = f.iter().map(String::as_str).collect();
        let gs: Vec<&str> = g.iter().map(String::as_str).collect();
        let f = SmoothMapSpec::parse("f", &fs, whole.clone()).unwrap();
        let g = SmoothMapSpec::parse("g", &gs, whole).unwrap();
        let gf = SmoothMapSpec::compose(&g, &f).unwrap();
        let direct = gf.jacobian(&x).unwrap();
        let product = g.jacobian(&f.apply(&x).unwrap()).unwrap() * f.jacobian(&x).unwrap();
        let scale = product.abs().max().max(1.0);
        prop_assert!((direct - &product).abs().max() <= 1e-9 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_is_time_invariant(a in stable_matrix(), x0 in point(), t1 in 0.5f64..10.0, t2 in 0.5f64..10.0) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default().with_horizon(20.0);
        let whole = integrate(&sys, &x0, &cfg).unwrap();
        let mid = whole.sample(t1).unwrap();
        let rest = integrate(&sys, &mid, &cfg.clone().with_horizon(t2)).unwrap();
        let end = rest.states().last().unwrap();
        let direct = whole.sample(t1 + t2).unwrap();
        for k in 0..2 {
            let tol = 10.0 * (cfg.atol + cfg.rtol * direct[k].abs().max(x0[k].abs()));
            prop_assert!((end[k] - direct[k]).abs() <= tol, "{} vs {}", end[k], direct[k]);
        }
    }

    #[test]
    fn equilibria_are_constant(a in stable_matrix()) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default();
        let tr = integrate(&sys, &[0.0, 0.0], &cfg).unwrap();
        prop_assert!(tr.termination().reached_horizon());
        for s in tr.states() {
            prop_assert!(s.iter().all(|v| v.abs() <= cfg.atol));
        }
    }

    #[test]
    fn trajectory_distance_is_a_pseudometric(a in stable_matrix(), p in prop::collection::vec(point(), 3)) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default().with_horizon(20.0);
        let plan = SamplingPlan::default();
        let tr: Vec<_> = p.iter().map(|x| integrate(&sys, x, &cfg).unwrap()).collect();
        for m in [MetricSpec::Euclidean, MetricSpec::ArctanCompressed] {
            let d = |i: usize, j: usize| trajectory_distance(&tr[i], &tr[j], &m, &plan).unwrap().value.finite().unwrap();
            prop_assert_eq!(d(0, 0), 0.0);
            prop_assert_eq!(d(0, 1).to_bits(), d(1, 0).to_bits());
            let slack = d(0, 1) + d(1, 2) - d(0, 2);
            prop_assert!(slack >= -1e-9, "slack {slack}");
        }
    }

    #[test]
    fn refining_the_grid_never_lowers_the_distance(a in stable_matrix(), p in prop::collection::vec(point(), 2)) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default().with_horizon(20.0);
        let ta = integrate(&sys, &p[0], &cfg).unwrap();
        let tb = integrate(&sys, &p[1], &cfg).unwrap();
        let mut last = 0.0;
        for n in [17, 65, 257, 1025, 4097] {
            let plan = SamplingPlan { initial_points: n, candidates: 0, ..SamplingPlan::default() };
            let d = trajectory_distance(&ta, &tb, &MetricSpec::Euclidean, &plan).unwrap();
            prop_assert!(d.sampled_sup >= last, "{n} points: {} < {last}", d.sampled_sup);
            last = d.sampled_sup;
        }
    }

    #[test]
    fn pushforward_is_functorial(b in invertible_matrix(), c in invertible_matrix(), x0 in point(), a in stable_matrix()) {
        let whole = DomainSpec::whole(2);
        let f = Arc::new(SmoothMapSpec::linear("f", &b, whole.clone()).unwrap());
        let g0 = SmoothMapSpec::parse("g", &["x1 + 0.1*sin(x2)", "x2"], whole.clone()).unwrap();
        let g0 = SmoothMapSpec::compose(&SmoothMapSpec::linear("c", &c, whole.clone()).unwrap(), &g0).unwrap();
        let g = Arc::new(g0);
        let gf = Arc::new(SmoothMapSpec::compose(&g, &f).unwrap());
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let base = Arc::new(integrate(&sys, &x0, &IntegratorConfig::default().with_horizon(10.0)).unwrap());
        let once = pushforward(&base, &gf).unwrap();
        let twice = pushforward(&Arc::new(pushforward(&base, &f).unwrap()), &g).unwrap();
        prop_assert_eq!(once.times(), twice.times());
        for (p, q) in once.states().iter().zip(twice.states()) {
            for k in 0..2 {
                prop_assert!((p[k] - q[k]).abs() <= 1e-12 * p[k].abs().max(1.0), "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn conjugated_fields_are_related(a in hyperbolic_matrix(), b in invertible_matrix()) {
        let whole = DomainSpec::whole(2);
        let x = LinearSystem::new(a).unwrap().to_field("x");
        let b_inv = b.clone().try_inverse().unwrap();
        let phi0 = SmoothMapSpec::parse("bend", &["x1 + 0.2*atan(x2)", "x2"], whole.clone()).unwrap();
        let phi = SmoothMapSpec::compose(&SmoothMapSpec::linear("b", &b, whole.clone()).unwrap(), &phi0).unwrap();
        let inv0 = SmoothMapSpec::parse("unbend", &["x1 - 0.2*atan(x2)", "x2"], whole.clone()).unwrap();
        let inv = SmoothMapSpec::compose(&inv0, &SmoothMapSpec::linear("b_inv", &b_inv, whole).unwrap()).unwrap();
        let y = conjugate_field("y", &x, &phi, &inv).unwrap();
        let decl = MorphismDecl::new(phi, x, y).unwrap();
        let region = Region::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let r = check_related(&decl, &region, 11, 1e-9, 0).unwrap();
        prop_assert!(r.pass, "max residual {}", r.max_residual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_verdicts_do_not_depend_on_the_base_point(a in hyperbolic_matrix(), x0 in point(), seed in any::<u64>()) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default();
        let at_origin = check_stability(&sys, &StabilityQuery::new(vec![0.0, 0.0]).with_seed(seed), &cfg).unwrap();
        let elsewhere = check_stability(&sys, &StabilityQuery::new(x0).with_seed(seed), &cfg).unwrap();
        prop_assert_eq!(at_origin.overall, elsewhere.overall);
        prop_assert_ne!(at_origin.overall, Overall::Inconclusive);
    }

    #[test]
    fn certified_deltas_are_monotone(a in stable_matrix(), x0 in point(), seed in any::<u64>()) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let v = check_stability(&sys, &StabilityQuery::new(x0).with_seed(seed), &IntegratorConfig::default()).unwrap();
        prop_assert_eq!(v.overall, Overall::Certified);
        let deltas: Vec<f64> = v.entries.iter().map(|e| e.delta.unwrap()).collect();
        for (k, e) in v.entries.iter().enumerate() {
            prop_assert_eq!(e.probes.len(), v.probes);
            prop_assert!(e.probes.iter().all(|p| p.sampled_sup <= e.eps * (1.0 + v.slack)));
            // a smaller ε's δ also certifies every larger ε
            for later in &deltas[k..] {
                prop_assert!(*later <= deltas[k]);
            }
        }
    }

    #[test]
    fn falsifications_replay(a in hyperbolic_matrix(), x0 in point(), seed in any::<u64>()) {
        let sys = LinearSystem::new(a).unwrap().to_field("lin");
        let cfg = IntegratorConfig::default();
        let v = check_stability(&sys, &StabilityQuery::new(x0.clone()).with_seed(seed), &cfg).unwrap();
        let base = integrate(&sys, &x0, &cfg).unwrap();
        for e in &v.entries {
            if let Some(w) = &e.counterexample {
                let probe = integrate(&sys, &w.initial, &cfg).unwrap();
                let d = trajectory_distance(&base, &probe, &v.metric, &SamplingPlan::default()).unwrap();
                prop_assert!(d.sampled_sup > e.eps);
                prop_assert!((d.sampled_sup - w.distance).abs() <= 0.01 * w.distance);
            }
        }
    }
}
