//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Non-finite objective values are treated as a step that went too far.
//! Near the optimum, where decreases fall below floating-point resolution, a
//! step is also accepted under the approximate Wolfe conditions of
//! Hager and Zhang: slope conditions only, with the objective allowed to rise
//! by at most a roundoff-sized margin.

use std::collections::VecDeque;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iter: usize,
    /// Converged when the gradient max-norm falls below this.
    pub tol: T,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_max: T,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;
const APPROX_DELTA: f64 = 0.1;
const ROUNDOFF: f64 = 1e-12;

fn roundoff_margin<T: Scalar>(f: T) -> T {
    T::lit(ROUNDOFF) * (T::one() + f.abs())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m })
}

struct Eval<T> {
    alpha: T,
    x: Vec<T>,
    f: T,
    g: Vec<T>,
    slope: T,
}

struct LineSearch<'a, T, F> {
    f: &'a mut F,
    x: &'a [T],
    d: &'a [T],
    f0: T,
    slope0: T,
    evals: usize,
}

impl<T: Scalar, F: FnMut(&[T], &mut [T]) -> T> LineSearch<'_, T, F> {
    fn eval(&mut self, alpha: T) -> Eval<T> {
        self.evals += 1;
        let x: Vec<T> = self.x.iter().zip(self.d).map(|(xi, di)| *xi + alpha * *di).collect();
        let mut g = vec![T::zero(); x.len()];
        let f = (self.f)(&x, &mut g);
        let slope = dot(&g, self.d);
        Eval { alpha, x, f, g, slope }
    }

    fn origin(&self) -> Eval<T> {
        Eval {
            alpha: T::zero(),
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        }
    }

    fn finite(e: &Eval<T>) -> bool {
        e.f.is_finite() && e.slope.is_finite()
    }

    fn armijo(&self, e: &Eval<T>) -> bool {
        e.f <= self.f0 + T::lit(C1) * e.alpha * self.slope0
    }

    fn curvature(&self, e: &Eval<T>) -> bool {
        e.slope.abs() <= -T::lit(C2) * self.slope0
    }

    fn approx_wolfe(&self, e: &Eval<T>) -> bool {
        e.f <= self.f0 + roundoff_margin(self.f0)
            && e.slope <= (T::lit(2.0 * APPROX_DELTA) - T::one()) * self.slope0
            && e.slope >= T::lit(C2) * self.slope0
    }

    /// Returns an evaluation satisfying the strong Wolfe conditions, or the
    /// best sufficient-decrease point seen, or `None`.
    fn search(&mut self, alpha0: T) -> Option<Eval<T>> {
        let mut prev: Option<Eval<T>> = None;
        let mut alpha = alpha0;
        while self.evals < MAX_LINE_EVALS {
            let e = self.eval(alpha);
            if !Self::finite(&e) {
                let lo = prev.as_ref().map_or(T::zero(), |p| p.alpha);
                alpha = lo + (alpha - lo) * T::lit(0.25);
                continue;
            }
            if !self.armijo(&e) && self.approx_wolfe(&e) {
                return Some(e);
            }
            let worse_than_prev = prev.as_ref().is_some_and(|p| e.f >= p.f);
            if !self.armijo(&e) || worse_than_prev {
                return self.zoom(prev, e);
            }
            if self.curvature(&e) {
                return Some(e);
            }
            if e.slope >= T::zero() {
                let hi = prev.unwrap_or_else(|| self.origin());
                return self.zoom(Some(e), hi);
            }
            alpha = alpha * T::lit(2.0);
            prev = Some(e);
        }
        prev
    }

    /// `lo` satisfies sufficient decrease (or is the origin when `None`);
    /// the minimizer along the ray lies between `lo` and `hi`.
    fn zoom(&mut self, lo: Option<Eval<T>>, hi: Eval<T>) -> Option<Eval<T>> {
        let mut lo = lo;
        let mut hi = hi;
        let origin = |s: &Self| (T::zero(), s.f0, s.slope0);
        while self.evals < MAX_LINE_EVALS {
            let (a_lo, f_lo, s_lo) = lo.as_ref().map_or(origin(self), |e| (e.alpha, e.f, e.slope));
            let a_hi = hi.alpha;
            let width = a_hi - a_lo;
            if width.abs() <= T::epsilon() * a_lo.abs().max(T::lit(1e-300)) * T::lit(4.0) {
                break;
            }
            let (a, b) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
            let margin = T::lit(0.1) * (b - a);
            let mut trial = a_lo + T::lit(0.5) * width;
            let flat = (hi.f - f_lo).abs() <= T::lit(10.0) * roundoff_margin(f_lo);
            if flat && hi.slope.is_finite() && s_lo * hi.slope < T::zero() {
                // function values are roundoff; interpolate the slopes instead
                let t = a_lo - s_lo * width / (hi.slope - s_lo);
                if t > a + margin && t < b - margin {
                    trial = t;
                }
            } else if hi.f.is_finite() {
                // quadratic model through (lo, f_lo, s_lo) and (hi, f_hi)
                let denom = hi.f - f_lo - s_lo * width;
                if denom > T::zero() {
                    let t = a_lo - s_lo * width * width / (T::lit(2.0) * denom);
                    if t > a + margin && t < b - margin {
                        trial = t;
                    }
                }
            }
            let e = self.eval(trial);
            if !Self::finite(&e) {
                hi = e;
                continue;
            }
            if !self.armijo(&e) && self.approx_wolfe(&e) {
                return Some(e);
            }
            if !self.armijo(&e) || e.f >= f_lo {
                hi = e;
            } else {
                if self.curvature(&e) {
                    return Some(e);
                }
                if e.slope * (a_hi - a_lo) >= T::zero() {
                    hi = lo.take().unwrap_or_else(|| self.origin());
                }
                lo = Some(e);
            }
        }
        lo
    }
}

/// Minimizes `f`, which writes the gradient into its second argument.
pub fn minimize<T, F>(mut f: F, x0: &[T], opts: &LbfgsOptions<T>) -> LbfgsResult<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![T::zero(); n];
    let mut fx = f(&x, &mut g);
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return LbfgsResult { x, value: fx, grad_max: T::infinity(), iterations, converged: false };
    }
    let mut alpha_buf = vec![T::zero(); opts.memory];
    let mut converged = false;
    while iterations < opts.max_iter {
        if max_abs(&g) < opts.tol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut d: Vec<T> = g.iter().map(|v| -*v).collect();
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = *rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di = *di - a * *yi);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di = *di * gamma);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = *rho * dot(y, &d);
            let a = alpha_buf[k];
            d.iter_mut().zip(s).for_each(|(di, si)| *di = *di + (a - b) * *si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            history.clear();
            d = g.iter().map(|v| -*v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if history.is_empty() {
            T::one().min(T::one() / max_abs(&d).max(T::min_positive_value()))
        } else {
            T::one()
        };
        let found = {
            let mut ls = LineSearch { f: &mut f, x: &x, d: &d, f0: fx, slope0: slope, evals: 0 };
            ls.search(alpha0)
        };
        iterations += 1;
        let Some(e) = found.filter(|e| e.alpha > T::zero() && e.f <= fx + roundoff_margin(fx)) else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<T> = e.x.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = e.g.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        x = e.x;
        fx = e.f;
        g = e.g;
    }
    if !converged && max_abs(&g) < opts.tol {
        converged = true;
    }
    LbfgsResult { grad_max: max_abs(&g), x, value: fx, iterations, converged }
}
