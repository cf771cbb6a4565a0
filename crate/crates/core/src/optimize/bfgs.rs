//! BFGS with a strong-Wolfe line search (cubic interpolation in the zoom phase).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub rel_f_tol: f64,
    pub max_iters: usize,
    /// Largest coordinate change allowed for the first trial step.
    pub max_step: f64,
    /// Curvature constant of the strong Wolfe condition; near zero gives an
    /// almost exact line search.
    pub curvature: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-5,
            rel_f_tol: 1e-10,
            max_iters: 500,
            max_step: 5.0,
            curvature: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// The line search failed along steepest descent before either
    /// convergence test held; `x` is the best point reached.
    pub stalled: bool,
}

const C1: f64 = 1e-4;

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Counted<'a, F> {
    f: &'a mut F,
    n: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Counted<'_, F> {
    fn eval(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.n += 1;
        let (v, g) = (self.f)(x.as_slice());
        if v.is_finite() && g.iter().all(|x| x.is_finite()) {
            (v, DVector::from_vec(g))
        } else {
            (f64::INFINITY, DVector::zeros(x.len()))
        }
    }
}

/// Minimizer of the cubic through `(a, fa, ga)` and `(b, fb, gb)`, if it lies
/// safely inside the bracket.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> Option<f64> {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    (t.is_finite() && t > lo + margin && t < hi - margin).then_some(t)
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
    grad: DVector<f64>,
}

fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Counted<'_, F>,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
    alpha0: f64,
    c2: f64,
) -> Option<Point> {
    let slope0 = g0.dot(dir);
    let at = |obj: &mut Counted<'_, F>, a: f64| {
        let (f, g) = obj.eval(&(x + dir * a));
        let slope = g.dot(dir);
        Point { alpha: a, f, slope, grad: g }
    };
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        grad: g0.clone(),
    };
    let mut alpha = alpha0;
    for i in 0..30 {
        let cur = at(obj, alpha);
        if !cur.f.is_finite() {
            // outside the domain: shrink toward the last good point
            alpha = prev.alpha + 0.3 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                return None;
            }
            continue;
        }
        if cur.f > f0 + C1 * cur.alpha * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, x, dir, f0, slope0, c2, prev, cur);
        }
        if cur.slope.abs() <= -c2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(obj, x, dir, f0, slope0, c2, cur, prev);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }
    Some(prev).filter(|p| p.alpha > 0.0)
}

fn zoom<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Counted<'_, F>,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    f0: f64,
    slope0: f64,
    c2: f64,
    mut lo: Point,
    mut hi: Point,
) -> Option<Point> {
    for _ in 0..40 {
        let trial = if hi.f.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope)
        } else {
            None
        }
        .unwrap_or(0.5 * (lo.alpha + hi.alpha));
        let (f, g) = obj.eval(&(x + dir * trial));
        let cur = Point {
            alpha: trial,
            f,
            slope: g.dot(dir),
            grad: g,
        };
        if !cur.f.is_finite() || cur.f > f0 + C1 * trial * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -c2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-14 * lo.alpha.abs().max(1e-10) {
            break;
        }
    }
    // accept a point with sufficient decrease even if curvature failed
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimizes `f`, which returns value and gradient. Non-finite values are
/// treated as outside the domain.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut obj = Counted { f: &mut f, n: 0 };
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut g) = obj.eval(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    for iter in 0..opts.max_iters {
        if max_norm(&g) < opts.grad_tol {
            return Ok(BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                grad: g.as_slice().to_vec(),
                iterations: iter,
                evaluations: obj.n,
                stalled: false,
            });
        }
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
        }
        let alpha0 = if fresh {
            (opts.max_step / max_norm(&dir)).min(1.0)
        } else {
            1.0f64.min(opts.max_step / max_norm(&dir))
        };
        let point = match line_search(&mut obj, &x, fx, &g, &dir, alpha0, opts.curvature) {
            Some(p) => p,
            None if !fresh => {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            None if iter == 0 => return Err(Error::LineSearchFailure),
            None => {
                return Ok(BfgsResult {
                    x: x.as_slice().to_vec(),
                    f: fx,
                    grad: g.as_slice().to_vec(),
                    iterations: iter,
                    evaluations: obj.n,
                    stalled: true,
                })
            }
        };
        let s = &dir * point.alpha;
        let y = &point.grad - &g;
        let f_old = fx;
        x += &s;
        fx = point.f;
        g = point.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        // relative function convergence: both the last decrease and the
        // decrease the quadratic model still predicts are negligible
        let predicted = 0.5 * g.dot(&(&hinv * &g));
        let tol = opts.rel_f_tol * fx.abs().max(1.0);
        if (f_old - fx).abs() <= tol && predicted.abs() <= tol {
            return Ok(BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                grad: g.as_slice().to_vec(),
                iterations: iter + 1,
                evaluations: obj.n,
                stalled: false,
            });
        }
    }
    Err(Error::MaxIterations(opts.max_iters))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_solved_in_few_iterations() {
        let a = DMatrix::from_row_slice(4, 4, &[
            4.0, 1.0, 0.0, 0.5, 1.0, 3.0, 0.2, 0.0, 0.0, 0.2, 2.0, 0.1, 0.5, 0.0, 0.1, 1.0,
        ]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let f = |x: &[f64]| {
            let x = DVector::from_column_slice(x);
            let ax = &a * &x;
            (0.5 * x.dot(&ax) - b.dot(&x), (ax - &b).as_slice().to_vec())
        };
        let opts = BfgsOptions { grad_tol: 1e-9, curvature: 1e-10, ..Default::default() };
        let r = minimize(f, &[0.0; 4], opts).unwrap();
        let want = a.clone().cholesky().unwrap().solve(&b);
        for i in 0..4 {
            assert!((r.x[i] - want[i]).abs() < 1e-8);
        }
        assert!(r.iterations <= 5, "{} iterations", r.iterations);
    }

    #[test]
    fn rosenbrock_converges() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
            )
        };
        let r = minimize(f, &[-1.2, 1.0], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn domain_walls_are_respected() {
        // log barrier objective defined only for x > 0
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                (f64::INFINITY, vec![0.0])
            } else {
                (x[0] - 2.0 * x[0].ln(), vec![1.0 - 2.0 / x[0]])
            }
        };
        let r = minimize(f, &[0.1], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-4);
    }
}
