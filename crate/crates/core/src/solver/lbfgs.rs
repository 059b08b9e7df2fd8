//! Limited-memory BFGS with a user preconditioner as initial inverse
//! Hessian and a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;

/// Objective returning value and gradient, `None` where it is `+∞`.
pub trait Objective {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>;
}

impl<F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>> Objective for F {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖g‖ ≤ tol · (1 + |f|)`.
    pub tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 10, max_iter: 2000, tol: 1e-8, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    InfeasibleStart,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong-Wolfe line search along `d` from `p0` with slope `d0 < 0`.
fn line_search<O: Objective>(
    obj: &mut O,
    p0: &Point,
    d: &DVector<f64>,
    d0: f64,
    opts: &LbfgsOptions,
    evals: &mut usize,
) -> Option<Point> {
    let phi = |obj: &mut O, a: f64, evals: &mut usize| -> Option<(Point, f64)> {
        *evals += 1;
        let x = &p0.x + d * a;
        obj.eval(&x).map(|(f, g)| {
            let slope = g.dot(d);
            (Point { x, f, g }, slope)
        })
    };
    let mut lo = (0.0, p0.f, d0);
    let mut hi: Option<(f64, f64, f64)> = None;
    let mut a = 1.0;
    for _ in 0..opts.max_line_search {
        match phi(obj, a, evals) {
            None => hi = Some((a, f64::INFINITY, f64::NAN)),
            Some((p, s)) => {
                let armijo = p.f <= p0.f + opts.c1 * a * d0;
                if !armijo || p.f >= lo.1 {
                    hi = Some((a, p.f, s));
                } else if s.abs() <= -opts.c2 * d0 {
                    return Some(p);
                } else {
                    let flip = match hi {
                        None => s >= 0.0,
                        Some((ah, _, _)) => s * (ah - lo.0) >= 0.0,
                    };
                    if flip {
                        hi = Some(lo);
                    }
                    lo = (a, p.f, s);
                }
            }
        }
        a = match hi {
            None => 2.0 * a,
            Some((ah, fh, sh)) => {
                let (al, fl, sl) = lo;
                let width = (ah - al).abs();
                let guess = if fh.is_finite() && sh.is_finite() { cubic_min(al, fl, sl, ah, fh, sh) } else { None };
                let lo_b = al.min(ah) + 0.1 * width;
                let hi_b = al.max(ah) - 0.1 * width;
                match guess {
                    Some(t) if t > lo_b && t < hi_b => t,
                    _ => 0.5 * (al + ah),
                }
            }
        };
        if let Some((ah, _, _)) = hi {
            if (ah - lo.0).abs() <= 1e-14 * ah.abs().max(1.0) {
                break;
            }
        }
    }
    // accept a plain decrease when the curvature condition could not be met
    if lo.0 > 0.0 && lo.1 < p0.f {
        return phi(obj, lo.0, evals).map(|(p, _)| p);
    }
    None
}

/// Minimizes from `x0`. `precond` applies the initial inverse Hessian to
/// a gradient; its range must contain every search direction.
pub fn minimize<O: Objective>(
    obj: &mut O,
    precond: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    opts: &LbfgsOptions,
) -> LbfgsResult {
    let mut evals = 1;
    let Some((f, g)) = obj.eval(&x0) else {
        let n = x0.len();
        return LbfgsResult {
            x: x0,
            value: f64::INFINITY,
            grad: DVector::zeros(n),
            iterations: 0,
            evaluations: evals,
            status: LbfgsStatus::InfeasibleStart,
        };
    };
    let mut cur = Point { x: x0, f, g };
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let done = |p: &Point| p.g.norm() <= opts.tol * (1.0 + p.f.abs());
    let finish = |p: Point, it: usize, evals: usize, status| LbfgsResult {
        x: p.x,
        value: p.f,
        grad: p.g,
        iterations: it,
        evaluations: evals,
        status,
    };
    for it in 0..opts.max_iter {
        if done(&cur) {
            return finish(cur, it, evals, LbfgsStatus::Converged);
        }
        let mut q = cur.g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let mut r = precond(&q);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&r);
            r.axpy(a - b, s, 1.0);
        }
        let mut d = -r;
        let mut d0 = d.dot(&cur.g);
        if !(d0 < 0.0) {
            hist.clear();
            d = -precond(&cur.g);
            d0 = d.dot(&cur.g);
            if !(d0 < 0.0) {
                return finish(cur, it, evals, LbfgsStatus::LineSearchFailed);
            }
        }
        let next = match line_search(obj, &cur, &d, d0, opts, &mut evals) {
            Some(p) => p,
            None if !hist.is_empty() => {
                hist.clear();
                continue;
            }
            None => return finish(cur, it, evals, LbfgsStatus::LineSearchFailed),
        };
        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        cur = next;
    }
    let status = if done(&cur) { LbfgsStatus::Converged } else { LbfgsStatus::MaxIterations };
    finish(cur, opts.max_iter, evals, status)
}
