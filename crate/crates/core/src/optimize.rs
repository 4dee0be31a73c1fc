//! Limited-memory BFGS with simple bounds (L-BFGS-B).
//!
//! Each iteration finds the generalized Cauchy point along the projected
//! steepest-descent path, minimizes the quasi-Newton model over the variables
//! still free there, and runs a strong-Wolfe line search toward the projected
//! result. The Hessian approximation is rebuilt densely from the stored
//! correction pairs, which is cheap for the small parameter counts used here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-coordinate box `lower <= x <= upper`; infinite ends are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape(format!(
                "{} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i]) {
            return Err(Error::InvalidInput(format!(
                "bounds for coordinate {i} are infeasible: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Max-norm of `P(x - g) - x`.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        (0..x.len())
            .map(|i| ((x[i] - g[i]).clamp(self.lower[i], self.upper[i]) - x[i]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsbOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected-gradient max-norm falls to this value.
    pub gradient_tolerance: f64,
    /// Stop when one iteration changes the objective by less than this.
    pub value_tolerance: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 1000,
            gradient_tolerance: 1e-5,
            value_tolerance: 1e-8,
            max_line_search_steps: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProjectedGradient,
    ValueChange,
    /// No acceptable step even with the curvature memory cleared.
    NoProgress,
    MaxIterations,
}

impl Termination {
    pub fn converged(&self) -> bool {
        !matches!(self, Self::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Maximizes `f` over the box. `f` returns the value and gradient; an `Err`
/// away from the start is treated as an infeasible trial point.
pub fn maximize_box_constrained<F>(
    mut f: F,
    start: &[f64],
    bounds: &BoxBounds,
    options: &LbfgsbOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut res = minimize_box_constrained(
        |x| {
            let (v, mut g) = f(x)?;
            g.iter_mut().for_each(|gi| *gi = -*gi);
            Ok((-v, g))
        },
        start,
        bounds,
        options,
    )?;
    res.value = -res.value;
    Ok(res)
}

struct Memory {
    pairs: Vec<(DVector<f64>, DVector<f64>)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        if self.pairs.len() == self.cap {
            self.pairs.remove(0);
        }
        self.pairs.push((s, y));
    }

    /// Dense BFGS matrix built from `theta I` through the stored pairs.
    fn hessian(&self, dim: usize) -> DMatrix<f64> {
        let theta = self
            .pairs
            .last()
            .map(|(s, y)| y.dot(y) / s.dot(y))
            .unwrap_or(1.0);
        let mut b = DMatrix::identity(dim, dim) * theta;
        for (s, y) in &self.pairs {
            let bs = &b * s;
            let sbs = s.dot(&bs);
            b -= &bs * bs.transpose() / sbs;
            b += y * y.transpose() / s.dot(y);
        }
        b
    }
}

pub fn minimize_box_constrained<F>(
    mut f: F,
    start: &[f64],
    bounds: &BoxBounds,
    options: &LbfgsbOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = start.len();
    if bounds.dim() != n {
        return Err(Error::Shape(format!("start has {n} entries, bounds {}", bounds.dim())));
    }
    if !bounds.contains(start) {
        return Err(Error::InvalidInput("starting point violates the bounds".into()));
    }
    let (mut fx, g0) = f(start)?;
    if !fx.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization("objective is not finite at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut x = DVector::from_column_slice(start);
    let mut g = DVector::from_vec(g0);
    let mut memory = Memory {
        pairs: Vec::new(),
        cap: options.memory.max(1),
    };
    let mut iterations = 0;
    let termination = loop {
        if bounds.projected_gradient_norm(x.as_slice(), g.as_slice()) <= options.gradient_tolerance {
            break Termination::ProjectedGradient;
        }
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        let b = memory.hessian(n);
        let target = search_target(&x, &g, &b, bounds);
        let dir = &target - &x;
        let slope = g.dot(&dir);
        let first = memory.pairs.is_empty();
        let outcome = if slope < 0.0 {
            let init = if first { (1.0 / dir.amax()).min(1.0) } else { 1.0 };
            line_search(&mut f, &x, fx, &g, &dir, init, options, &mut evaluations)
        } else {
            None
        };
        let Some((alpha, f_new, g_new)) = outcome else {
            if first {
                break Termination::NoProgress;
            }
            memory.pairs.clear();
            continue;
        };
        iterations += 1;
        let mut x_new = &x + &dir * alpha;
        bounds.project(x_new.as_mut_slice());
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > f64::EPSILON * y.norm_squared() && sy > 0.0 {
            memory.push(s, y);
        }
        let change = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if change.abs() < options.value_tolerance {
            break Termination::ValueChange;
        }
    };
    Ok(OptimResult {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        evaluations,
        termination,
    })
}

/// Generalized Cauchy point followed by subspace minimization over the
/// variables left free, projected back into the box.
fn search_target(x: &DVector<f64>, g: &DVector<f64>, b: &DMatrix<f64>, bounds: &BoxBounds) -> DVector<f64> {
    let n = x.len();
    let breakpoint = |i: usize| -> f64 {
        if g[i] < 0.0 {
            (x[i] - bounds.upper[i]) / g[i]
        } else if g[i] > 0.0 {
            (x[i] - bounds.lower[i]) / g[i]
        } else {
            f64::INFINITY
        }
    };
    let t: Vec<f64> = (0..n).map(breakpoint).collect();
    let mut d = DVector::from_fn(n, |i, _| if t[i] > 0.0 { -g[i] } else { 0.0 });
    let mut order: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0 && t[i].is_finite()).collect();
    order.sort_by(|&a, &c| t[a].total_cmp(&t[c]));
    let mut z = DVector::zeros(n);
    let mut t_prev = 0.0;
    let mut next = 0;
    loop {
        let bd = b * &d;
        let f1 = g.dot(&d) + z.dot(&bd);
        let f2 = d.dot(&bd);
        let t_next = order.get(next).map_or(f64::INFINITY, |&i| t[i]);
        if f1 >= 0.0 {
            break;
        }
        let dt_min = if f2 > 0.0 { -f1 / f2 } else { f64::INFINITY };
        if dt_min < t_next - t_prev {
            z += &d * dt_min;
            break;
        }
        if !t_next.is_finite() {
            // unbounded descent along a direction with no curvature
            break;
        }
        z += &d * (t_next - t_prev);
        t_prev = t_next;
        while next < order.len() && t[order[next]] <= t_next {
            let i = order[next];
            z[i] = if d[i] > 0.0 { bounds.upper[i] - x[i] } else { bounds.lower[i] - x[i] };
            d[i] = 0.0;
            next += 1;
        }
        if d.iter().all(|&v| v == 0.0) {
            break;
        }
    }
    let mut xc = x + &z;
    bounds.project(xc.as_mut_slice());

    let free: Vec<usize> = (0..n)
        .filter(|&i| xc[i] > bounds.lower[i] && xc[i] < bounds.upper[i])
        .collect();
    if free.is_empty() {
        return xc;
    }
    let r = g + b * (&xc - x);
    let bff = DMatrix::from_fn(free.len(), free.len(), |a, c| b[(free[a], free[c])]);
    let rf = DVector::from_fn(free.len(), |a, _| -r[free[a]]);
    let Some(chol) = bff.cholesky() else {
        return xc;
    };
    let step = chol.solve(&rf);
    let mut xbar = xc.clone();
    for (a, &i) in free.iter().enumerate() {
        xbar[i] += step[a];
    }
    bounds.project(xbar.as_mut_slice());
    if g.dot(&(&xbar - x)) < 0.0 {
        xbar
    } else {
        xc
    }
}

/// Trial point along the search direction: step, value, gradient, slope.
#[derive(Clone)]
struct Trial {
    alpha: f64,
    value: f64,
    grad: Option<DVector<f64>>,
    slope: f64,
}

/// Strong-Wolfe search on `alpha in (0, 1]`; the upper end is where the step
/// reaches the projected target. Returns the accepted step with its value and
/// gradient, or `None` when no sufficient decrease was found.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
    init: f64,
    options: &LbfgsbOptions,
    evaluations: &mut usize,
) -> Option<(f64, f64, DVector<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let d0 = g0.dot(dir);
    let mut eval = |alpha: f64| -> Trial {
        *evaluations += 1;
        let xt = x + dir * alpha;
        match f(xt.as_slice()) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => {
                let g = DVector::from_vec(g);
                Trial {
                    alpha,
                    value: v,
                    slope: g.dot(dir),
                    grad: Some(g),
                }
            }
            _ => Trial {
                alpha,
                value: f64::INFINITY,
                grad: None,
                slope: f64::NAN,
            },
        }
    };
    let sufficient = |t: &Trial| t.grad.is_some() && t.value <= f0 + C1 * t.alpha * d0;
    let curvature = |t: &Trial| t.slope.abs() <= -C2 * d0;
    let accept = |t: Trial| Some((t.alpha, t.value, t.grad.expect("accepted trials have gradients")));

    let mut prev = Trial {
        alpha: 0.0,
        value: f0,
        grad: Some(g0.clone()),
        slope: d0,
    };
    let mut alpha = init;
    let mut steps = 0;
    let (mut lo, mut hi) = loop {
        if steps == options.max_line_search_steps {
            return None;
        }
        steps += 1;
        let t = eval(alpha);
        if !sufficient(&t) || (prev.alpha > 0.0 && t.value >= prev.value) {
            break (prev, t);
        }
        if curvature(&t) {
            return accept(t);
        }
        if t.slope >= 0.0 {
            break (t, prev);
        }
        if alpha >= 1.0 {
            return accept(t);
        }
        alpha = (2.0 * alpha).min(1.0);
        prev = t;
    };
    while steps < options.max_line_search_steps {
        steps += 1;
        let width = hi.alpha - lo.alpha;
        let mut trial = lo.alpha + 0.5 * width;
        if hi.grad.is_some() {
            let c = (hi.value - lo.value - lo.slope * width) / (width * width);
            if c > 0.0 {
                let cand = lo.alpha - lo.slope / (2.0 * c);
                let (a, b) = if width > 0.0 { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
                let margin = 0.1 * width.abs();
                if cand > a + margin && cand < b - margin {
                    trial = cand;
                }
            }
        }
        if (trial - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            break;
        }
        let t = eval(trial);
        if !sufficient(&t) || t.value >= lo.value {
            hi = t;
        } else {
            if curvature(&t) {
                return accept(t);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    if lo.alpha > 0.0 {
        accept(lo)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((-(x[0] - 2.0).powi(2), vec![-2.0 * (x[0] - 2.0)]))
    }

    #[test]
    fn interior_quadratic() {
        let b = BoxBounds::new(vec![0.0], vec![5.0]).unwrap();
        let r = maximize_box_constrained(quad, &[4.5], &b, &LbfgsbOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-8);
        assert!(r.termination.converged());
    }

    #[test]
    fn active_bound() {
        let b = BoxBounds::new(vec![3.0], vec![5.0]).unwrap();
        let r = maximize_box_constrained(quad, &[4.0], &b, &LbfgsbOptions::default()).unwrap();
        assert_eq!(r.x[0], 3.0);
        assert_eq!(r.termination, Termination::ProjectedGradient);
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        let gb = 200.0 * (b - a * a);
        Ok((-v, vec![-ga, -gb]))
    }

    #[test]
    fn rosenbrock_in_a_box() {
        let b = BoxBounds::new(vec![-2.0; 2], vec![2.0; 2]).unwrap();
        let opts = LbfgsbOptions {
            value_tolerance: 0.0,
            gradient_tolerance: 1e-9,
            ..Default::default()
        };
        for start in [[-1.2, 1.0], [1.9, -1.9], [0.0, 0.0]] {
            let r = maximize_box_constrained(rosenbrock, &start, &b, &opts).unwrap();
            assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{start:?} -> {:?}", r.x);
        }
    }

    #[test]
    fn rosenbrock_with_active_bound() {
        // with a <= 0.5 the constrained optimum is a = 0.5, b = 0.25
        let b = BoxBounds::new(vec![-2.0, -2.0], vec![0.5, 2.0]).unwrap();
        let opts = LbfgsbOptions {
            value_tolerance: 0.0,
            gradient_tolerance: 1e-9,
            ..Default::default()
        };
        let r = maximize_box_constrained(rosenbrock, &[-1.0, 1.0], &b, &opts).unwrap();
        assert_eq!(r.x[0], 0.5);
        assert!((r.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn value_never_below_start() {
        let b = BoxBounds::unbounded(2);
        let start = [-1.2, 1.0];
        let r = maximize_box_constrained(rosenbrock, &start, &b, &LbfgsbOptions::default()).unwrap();
        assert!(r.value >= rosenbrock(&start).unwrap().0);
    }

    #[test]
    fn errors_are_reported() {
        assert!(BoxBounds::new(vec![1.0], vec![0.0]).is_err());
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        assert!(maximize_box_constrained(quad, &[2.0], &b, &LbfgsbOptions::default()).is_err());
        let nan = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(maximize_box_constrained(nan, &[0.5], &b, &LbfgsbOptions::default()).is_err());
    }

    #[test]
    fn failing_region_is_avoided() {
        // objective undefined for x > 1; optimum of -(x-2)^2 on the valid part is 1
        let f = |x: &[f64]| {
            if x[0] > 1.0 {
                Err(Error::NonFinite("test"))
            } else {
                quad(x)
            }
        };
        let b = BoxBounds::unbounded(1);
        let r = maximize_box_constrained(f, &[0.0], &b, &LbfgsbOptions::default()).unwrap();
        assert!(r.x[0] <= 1.0 && r.x[0] > 0.99, "{:?}", r.x);
    }
}
