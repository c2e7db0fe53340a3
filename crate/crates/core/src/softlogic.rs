//! Łukasiewicz relaxation of grounded constraints.
//!
//! Truth values live in [0, 1]. Subgradients follow the chain rule through
//! the hinges; exactly at a hinge the two one-sided slopes are averaged.

use crate::ground::Prop;

fn hinge_low(u: f64) -> (f64, f64) {
    // max(0, u)
    if u > 0.0 {
        (u, 1.0)
    } else if u < 0.0 {
        (0.0, 0.0)
    } else {
        (0.0, 0.5)
    }
}

fn hinge_high(u: f64) -> (f64, f64) {
    // min(1, u)
    if u < 1.0 {
        (u, 1.0)
    } else if u > 1.0 {
        (1.0, 0.0)
    } else {
        (1.0, 0.5)
    }
}

fn clip(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        hinge_low(u)
    } else {
        hinge_high(u)
    }
}

/// Relaxed truth value of `expr` at `scores`.
pub fn soft_eval(expr: &Prop, scores: &[f64]) -> f64 {
    local(expr, scores).0
}

fn sum(xs: &[Prop], scores: &[f64]) -> f64 {
    xs.iter().map(|x| soft_eval(x, scores)).sum()
}

/// Value and slope of the outer hinge with respect to its pre-activation.
fn local(expr: &Prop, scores: &[f64]) -> (f64, f64) {
    match expr {
        Prop::Var(i) => (scores[*i], 1.0),
        Prop::Const(b) => (f64::from(u8::from(*b)), 0.0),
        Prop::Not(a) => (1.0 - soft_eval(a, scores), 1.0),
        Prop::And(xs) if xs.len() == 1 => local(&xs[0], scores),
        Prop::Or(xs) if xs.len() == 1 => local(&xs[0], scores),
        Prop::And(xs) if xs.is_empty() => (1.0, 0.0),
        Prop::Or(xs) if xs.is_empty() => (0.0, 0.0),
        Prop::And(xs) => hinge_low(sum(xs, scores) - (xs.len() as f64 - 1.0)),
        Prop::Or(xs) => hinge_high(sum(xs, scores)),
        Prop::If(a, b) => hinge_high(1.0 - soft_eval(a, scores) + soft_eval(b, scores)),
        Prop::AtMost(k, xs) => clip(1.0 + *k as f64 - sum(xs, scores)),
    }
}

/// Adds `upstream * d truth / d scores` into `grad`.
pub fn backward(expr: &Prop, scores: &[f64], upstream: f64, grad: &mut [f64]) {
    if upstream == 0.0 {
        return;
    }
    match expr {
        Prop::Var(i) => grad[*i] += upstream,
        Prop::Const(_) => {}
        Prop::Not(a) => backward(a, scores, -upstream, grad),
        Prop::And(xs) | Prop::Or(xs) if xs.len() == 1 => backward(&xs[0], scores, upstream, grad),
        Prop::And(xs) | Prop::Or(xs) => {
            let slope = local(expr, scores).1;
            for x in xs {
                backward(x, scores, upstream * slope, grad);
            }
        }
        Prop::If(a, b) => {
            let slope = local(expr, scores).1;
            backward(a, scores, -upstream * slope, grad);
            backward(b, scores, upstream * slope, grad);
        }
        Prop::AtMost(_, xs) => {
            let slope = local(expr, scores).1;
            for x in xs {
                backward(x, scores, -upstream * slope, grad);
            }
        }
    }
}

/// Violation `1 - truth` and its subgradient over all scores.
pub fn violation(expr: &Prop, scores: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scores.len()];
    backward(expr, scores, -1.0, &mut grad);
    (1.0 - soft_eval(expr, scores), grad)
}

/// Distance of the nearest hinge argument to its breakpoint. Finite
/// differences are only meaningful well away from zero.
pub fn kink_distance(expr: &Prop, scores: &[f64]) -> f64 {
    let own = match expr {
        Prop::And(xs) if xs.len() >= 2 => (sum(xs, scores) - (xs.len() as f64 - 1.0)).abs(),
        Prop::Or(xs) if xs.len() >= 2 => (sum(xs, scores) - 1.0).abs(),
        Prop::If(a, b) => (soft_eval(b, scores) - soft_eval(a, scores)).abs(),
        Prop::AtMost(k, xs) => {
            let u = 1.0 + *k as f64 - sum(xs, scores);
            u.abs().min((u - 1.0).abs())
        }
        _ => f64::INFINITY,
    };
    let kids: Vec<&Prop> = match expr {
        Prop::Not(a) => vec![a],
        Prop::If(a, b) => vec![a, b],
        Prop::And(xs) | Prop::Or(xs) | Prop::AtMost(_, xs) => xs.iter().collect(),
        _ => Vec::new(),
    };
    kids.into_iter().map(|k| kink_distance(k, scores)).fold(own, f64::min)
}
