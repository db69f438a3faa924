use super::{BinaryOp, Expr, ExprError, Func, Node};

/// How to differentiate `abs`, `min` and `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KinkRule {
    /// Refuse: the function is not smooth.
    #[default]
    Reject,
    /// Subgradient convention: at the kink use the left branch. For `abs(u)`
    /// that is the derivative of `-u` at `u = 0`; for `min`/`max` a tie takes
    /// the first argument's derivative.
    LeftBranch,
}

fn select(lhs: Expr, rhs: Expr, if_le: Expr, otherwise: Expr) -> Expr {
    let span = lhs.span;
    Expr::new(
        Node::Select {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            if_le: Box::new(if_le),
            otherwise: Box::new(otherwise),
        },
        span,
    )
}

pub(super) fn derivative(e: &Expr, var: usize, kinks: KinkRule) -> Result<Expr, ExprError> {
    let d = |x: &Expr| derivative(x, var, kinks);
    let c = |v: f64| Expr::new(Node::Const(v), e.span);
    let out = match &e.node {
        Node::Const(_) => c(0.0),
        Node::Var(i) => c(if *i == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => Expr::neg(d(a)?),
        Node::Binary(op, a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            match op {
                BinaryOp::Add => Expr::add(d(a)?, d(b)?),
                BinaryOp::Sub => Expr::sub(d(a)?, d(b)?),
                BinaryOp::Mul => Expr::add(Expr::mul(d(a)?, b.clone()), Expr::mul(a.clone(), d(b)?)),
                BinaryOp::Div => {
                    // a'/b - a*b'/b^2
                    let db = d(b)?;
                    let first = Expr::div(d(a)?, b.clone());
                    if db.as_const() == Some(0.0) {
                        first
                    } else {
                        Expr::sub(
                            first,
                            Expr::div(Expr::mul(a.clone(), db), Expr::mul(b.clone(), b.clone())),
                        )
                    }
                }
                BinaryOp::Pow => power_rule(a, b, e, var, kinks)?,
            }
        }
        Node::Call(func, args) => match func {
            Func::Pow => power_rule(&args[0], &args[1], e, var, kinks)?,
            Func::Min | Func::Max | Func::Abs if kinks == KinkRule::Reject => {
                return Err(ExprError::NonSmooth {
                    func: func.name(),
                    column: e.span.column(),
                })
            }
            Func::Abs => {
                let u = &args[0];
                let du = d(u)?;
                select(u.clone(), c(0.0), Expr::neg(du.clone()), du)
            }
            Func::Min => select(args[0].clone(), args[1].clone(), d(&args[0])?, d(&args[1])?),
            Func::Max => select(args[1].clone(), args[0].clone(), d(&args[0])?, d(&args[1])?),
            _ => {
                let u = &args[0];
                let du = d(u)?;
                if du.as_const() == Some(0.0) {
                    return Ok(c(0.0));
                }
                let outer = match func {
                    Func::Sin => Expr::call(Func::Cos, vec![u.clone()]),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, vec![u.clone()])),
                    Func::Tan => {
                        let cos = Expr::call(Func::Cos, vec![u.clone()]);
                        Expr::div(c(1.0), Expr::mul(cos.clone(), cos))
                    }
                    Func::Atan => Expr::div(c(1.0), Expr::add(c(1.0), Expr::mul(u.clone(), u.clone()))),
                    Func::Exp => e.clone(),
                    Func::Log => Expr::div(c(1.0), u.clone()),
                    Func::Sqrt => Expr::div(c(0.5), e.clone()),
                    Func::Abs | Func::Pow | Func::Min | Func::Max => unreachable!(),
                };
                Expr::mul(outer, du)
            }
        },
        Node::Select {
            lhs,
            rhs,
            if_le,
            otherwise,
        } => select(lhs.as_ref().clone(), rhs.as_ref().clone(), d(if_le)?, d(otherwise)?),
    };
    Ok(out)
}

fn power_rule(base: &Expr, exponent: &Expr, whole: &Expr, var: usize, kinks: KinkRule) -> Result<Expr, ExprError> {
    let db = derivative(base, var, kinks)?;
    let de = derivative(exponent, var, kinks)?;
    let de_zero = de.as_const() == Some(0.0);
    if let (Some(k), true) = (exponent.as_const(), de_zero) {
        // k * u^(k-1) * u'
        let lowered = Expr::pow(base.clone(), Expr::constant(k - 1.0));
        return Ok(Expr::mul(Expr::mul(Expr::constant(k), lowered), db));
    }
    let log_base = Expr::call(Func::Log, vec![base.clone()]);
    if db.as_const() == Some(0.0) {
        // a^v * log(a) * v'
        return Ok(Expr::mul(Expr::mul(whole.clone(), log_base), de));
    }
    // u^v * (v' log u + v u'/u)
    let inner = Expr::add(
        Expr::mul(de, log_base),
        Expr::div(Expr::mul(exponent.clone(), db), base.clone()),
    );
    Ok(Expr::mul(whole.clone(), inner))
}

#[cfg(test)]
mod tests {
    use crate::expr::{ExprAst, ExprError, KinkRule};

    fn central(src: &str, x: f64, h: f64) -> f64 {
        let a = ExprAst::parse(src, 1).unwrap();
        (a.eval(&[x + h]).unwrap() - a.eval(&[x - h]).unwrap()) / (2.0 * h)
    }

    fn deriv_at(src: &str, x: f64) -> f64 {
        ExprAst::parse(src, 1)
            .unwrap()
            .differentiate(0)
            .unwrap()
            .eval(&[x])
            .unwrap()
    }

    #[test]
    fn negative_log_derivative() {
        let fd = central("-log(x)", 2.0, 1e-6);
        assert!((fd + 0.5).abs() < 1e-8, "oracle drifted: {fd}");
        assert!((deriv_at("-log(x)", 2.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_derivative_is_zero() {
        let d = ExprAst::parse("3.5", 1).unwrap().differentiate(0).unwrap();
        assert_eq!(d.root().as_const(), Some(0.0));
        let d = ExprAst::parse("sin(y)", 2).unwrap().differentiate(0).unwrap();
        assert_eq!(d.root().as_const(), Some(0.0));
    }

    #[test]
    fn log_map_derivative_matches_hand_formula() {
        // f'(x) = (1/x)(1 - 2 ln x)^(-3/2)
        let hand = |x: f64| (1.0 / x) * (1.0 - 2.0 * x.ln()).powf(-1.5);
        let src = "1/sqrt(log(1/x^2)+1)";
        assert!((deriv_at(src, 1.0) - 1.0).abs() < 1e-14);
        for x in [0.3, 0.5, 0.9, 1.2, 1.5] {
            let d = deriv_at(src, x);
            assert!((d - hand(x)).abs() <= 1e-13 * hand(x).abs(), "x={x}");
            let fd = central(src, x, 1e-6);
            assert!((fd - hand(x)).abs() <= 1e-8 * hand(x).abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn rules_against_closed_forms() {
        let x: f64 = 0.7;
        let cases: &[(&str, f64)] = &[
            ("sin(2*x)", 2.0 * (2.0 * x).cos()),
            ("cos(x)^2", -2.0 * x.cos() * x.sin()),
            ("tan(x)", 1.0 / x.cos().powi(2)),
            ("atan(x^2)", 2.0 * x / (1.0 + x.powi(4))),
            ("exp(-x)*x", (-x).exp() * (1.0 - x)),
            ("sqrt(1 + x)", 0.5 / (1.0 + x).sqrt()),
            ("x^x", x.powf(x) * (x.ln() + 1.0)),
            ("2^x", 2f64.powf(x) * 2f64.ln()),
            ("pow(x, 3)", 3.0 * x * x),
            ("1/x", -1.0 / (x * x)),
            ("x/(1+x)", 1.0 / (1.0 + x).powi(2)),
            ("-x^3", -3.0 * x * x),
        ];
        for (src, want) in cases {
            let got = deriv_at(src, x);
            assert!(
                (got - want).abs() < 1e-13 * want.abs().max(1.0),
                "{src}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn partials_in_two_variables() {
        let a = ExprAst::parse("x1^2*x2 + sin(x2)", 2).unwrap();
        let p = [1.5, 0.25];
        let dx = a.differentiate(0).unwrap().eval(&p).unwrap();
        let dy = a.differentiate(1).unwrap().eval(&p).unwrap();
        assert!((dx - 2.0 * 1.5 * 0.25).abs() < 1e-15);
        assert!((dy - (2.25 + 0.25f64.cos())).abs() < 1e-15);
        assert!(a.differentiate(2).is_err());
    }

    #[test]
    fn kinks_rejected_by_default() {
        for src in ["abs(x)", "min(x, 1)", "max(x, 1)", "x + abs(x)^2"] {
            let a = ExprAst::parse(src, 1).unwrap();
            assert!(matches!(a.differentiate(0), Err(ExprError::NonSmooth { .. })), "{src}");
        }
        // but not if the kink does not involve the variable at all
        let a = ExprAst::parse("abs(x)", 1).unwrap();
        assert!(!a.is_smooth());
    }

    #[test]
    fn left_branch_at_kinks() {
        let d = |src: &str, x: f64| {
            ExprAst::parse(src, 1)
                .unwrap()
                .differentiate_with(0, KinkRule::LeftBranch)
                .unwrap()
                .eval(&[x])
                .unwrap()
        };
        assert_eq!(d("abs(x)", 0.0), -1.0);
        assert_eq!(d("abs(x)", 2.0), 1.0);
        assert_eq!(d("abs(x)", -2.0), -1.0);
        assert_eq!(d("min(x, 1)", 1.0), 1.0);
        assert_eq!(d("min(x, 1)", 2.0), 0.0);
        assert_eq!(d("max(x, 1)", 1.0), 1.0);
        assert_eq!(d("max(x, 1)", 0.0), 0.0);
        assert_eq!(d("max(2*x, 1)", 3.0), 2.0);
    }
}
