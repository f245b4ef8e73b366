//! Per-slot rate-distortion optimization.
//!
//! Minimizes `sum_n c_n R_n + V sum_n f_n(D_n)` over the rate region and the
//! boxes `[0, R_max] x [D_min, D_max]`, where `c_n = U_n + (theta_n - E_n) alpha_n`
//! is the rate price. In the variables `(r, y = ln d)` the region constraints
//! are linear and the objective is convex, which both solvers exploit.
//!
//! [`solve_central`] runs a primal-dual interior-point method followed by an exact
//! per-node refinement. [`solve_distributed`] is the price-based dual
//! decomposition in which each node solves a local problem given the sum of
//! the prices of the subsets it belongs to.

use crate::cost::DistortionCost;
use crate::error::{Error, Result};
use crate::region::{kappa_ln, members, subsets, RateRegion};

/// One instance of the per-slot problem, restricted to measuring nodes.
#[derive(Debug, Clone)]
pub struct RdProblem<'a> {
    pub region: &'a RateRegion,
    /// Rate price `c_n` per measuring position.
    pub rate_price: Vec<f64>,
    pub v: f64,
    pub costs: Vec<DistortionCost>,
    pub r_max: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl<'a> RdProblem<'a> {
    pub fn new(
        region: &'a RateRegion,
        rate_price: Vec<f64>,
        v: f64,
        costs: Vec<DistortionCost>,
        r_max: f64,
        d_min: f64,
        d_max: f64,
    ) -> Result<Self> {
        let k = region.size();
        if rate_price.len() != k || costs.len() != k {
            return Err(Error::Parameter(format!("expected {k} rate prices and costs")));
        }
        if !(v > 0.0) {
            return Err(Error::Parameter(format!("V must be positive, got {v}")));
        }
        if !(r_max > 0.0 && d_min > 0.0 && d_min <= d_max) {
            return Err(Error::Parameter("invalid rate or distortion box".into()));
        }
        if rate_price.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("rate prices must be finite".into()));
        }
        if costs.iter().any(|f| !f.validate(d_min, d_max)) {
            return Err(Error::Parameter("cost function must be finite, convex and nondecreasing".into()));
        }
        Ok(Self { region, rate_price, v, costs, r_max, d_min, d_max })
    }

    pub fn size(&self) -> usize {
        self.region.size()
    }

    pub fn objective(&self, r: &[f64], d: &[f64]) -> f64 {
        (0..self.size())
            .map(|n| self.rate_price[n] * r[n] + self.v * self.costs[n].value(d[n]))
            .sum()
    }

    fn y_bounds(&self) -> (f64, f64) {
        (self.d_min.ln(), self.d_max.ln())
    }
}

/// A feasible rate/distortion choice and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct RdSolution {
    pub rates: Vec<f64>,
    pub distortions: Vec<f64>,
    pub objective: f64,
}

impl RdSolution {
    fn from_ry(p: &RdProblem, r: Vec<f64>, y: &[f64]) -> Self {
        let d: Vec<f64> = y.iter().map(|v| v.exp().clamp(p.d_min, p.d_max)).collect();
        let objective = p.objective(&r, &d);
        Self { rates: r, distortions: d, objective }
    }
}

/// Relative tolerance of the interior-point method on residuals and gap.
const IPM_TOL: f64 = 1e-11;
const IPM_DUAL_TOL: f64 = 1e-9;
const MAX_IPM: usize = 100;

/// Rates below this fraction of `R_max` are rounded to zero when the region
/// still holds afterwards.
const SNAP_FRACTION: f64 = 1e-6;

/// Centralized solve of the per-slot problem.
pub fn solve_central(p: &RdProblem) -> Result<RdSolution> {
    let k = p.size();
    let (ylo, yhi) = p.y_bounds();
    let kap = kappa_ln();
    let free_y = yhi - ylo > 1e-12;
    let nvar = if free_y { 2 * k } else { k };

    // Rows of A x >= b.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for m in subsets(k) {
        let mut a = Vec::new();
        let mut b = p.region.entropy(m);
        for n in members(m) {
            a.push((n, 1.0));
            if free_y {
                a.push((k + n, kap));
            } else {
                b -= kap * ylo;
            }
        }
        rows.push((a, b));
    }
    for n in 0..k {
        rows.push((vec![(n, 1.0)], 0.0));
        rows.push((vec![(n, -1.0)], -p.r_max));
        if free_y {
            rows.push((vec![(k + n, 1.0)], ylo));
            rows.push((vec![(k + n, -1.0)], -yhi));
        }
    }

    let x0 = initial_point(p, &rows, nvar, free_y)?;
    let x = interior_point(p, &rows, x0, free_y);
    let r = x[..k].to_vec();
    let y: Vec<f64> = if free_y { x[k..].to_vec() } else { vec![ylo; k] };
    Ok(refine(p, r, y))
}

fn dot(a: &[(usize, f64)], x: &[f64]) -> f64 {
    a.iter().map(|&(i, v)| v * x[i]).sum()
}

fn initial_point(p: &RdProblem, rows: &[(Vec<(usize, f64)>, f64)], nvar: usize, free_y: bool) -> Result<Vec<f64>> {
    let k = p.size();
    let (ylo, yhi) = p.y_bounds();
    for frac in [0.5, 0.8, 0.95, 0.99, 0.999, 0.99999] {
        let mut x = vec![0.0; nvar];
        for n in 0..k {
            x[n] = frac * p.r_max;
            if free_y {
                x[k + n] = ylo + (0.5 + 0.5 * frac) * (yhi - ylo);
            }
        }
        if rows.iter().all(|(a, b)| dot(a, &x) - b > 0.0) {
            return Ok(x);
        }
    }
    Err(Error::Infeasible("rate region has no interior point inside the boxes".into()))
}

fn objective_parts(p: &RdProblem, x: &[f64], free_y: bool, grad: &mut [f64], hdiag: &mut [f64]) -> f64 {
    let k = p.size();
    let mut val = 0.0;
    for n in 0..k {
        val += p.rate_price[n] * x[n];
        grad[n] = p.rate_price[n];
        hdiag[n] = 0.0;
        if free_y {
            let d = x[k + n].exp();
            let f = &p.costs[n];
            val += p.v * f.value(d);
            grad[k + n] = p.v * f.derivative(d) * d;
            hdiag[k + n] = p.v * (f.second_derivative(d) * d * d + f.derivative(d) * d);
        }
    }
    val
}

/// Mehrotra predictor-corrector interior-point method for
/// `min F(x) s.t. A x >= b` with separable convex `F`.
fn interior_point(p: &RdProblem, rows: &[(Vec<(usize, f64)>, f64)], mut x: Vec<f64>, free_y: bool) -> Vec<f64> {
    let n = x.len();
    let m = rows.len();
    let mut grad = vec![0.0; n];
    let mut hdiag = vec![0.0; n];
    let fval = objective_parts(p, &x, free_y, &mut grad, &mut hdiag);
    let mut s: Vec<f64> = rows.iter().map(|(a, b)| dot(a, &x) - b).collect();
    let scale = grad.iter().fold(1.0f64, |acc, g| acc.max(g.abs()));
    let mut lam: Vec<f64> = s.iter().map(|&si| (scale / si).clamp(1e-8 * scale, scale * 1e8)).collect();
    let bnorm = rows.iter().fold(1.0f64, |acc, (_, b)| acc.max(b.abs()));
    let mut h = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut ds = vec![0.0; m];
    let mut dl = vec![0.0; m];
    let mut rp = vec![0.0; m];
    let mut rd = vec![0.0; n];
    let mut rc = vec![0.0; m];
    let mut fscale = fval.abs().max(1.0);
    let mut best_rd = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..MAX_IPM {
        let f = objective_parts(p, &x, free_y, &mut grad, &mut hdiag);
        fscale = fscale.max(f.abs());
        rd.copy_from_slice(&grad);
        for (i, (a, b)) in rows.iter().enumerate() {
            rp[i] = dot(a, &x) - s[i] - b;
            for &(j, v) in a {
                rd[j] -= v * lam[i];
            }
        }
        let mu = s.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        let rp_inf = rp.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let rd_inf = rd.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let centered = rp_inf <= IPM_TOL * bnorm && mu * m as f64 <= IPM_TOL * fscale;
        if centered && rd_inf <= IPM_DUAL_TOL * scale {
            break;
        }
        if rd_inf < 0.5 * best_rd {
            best_rd = rd_inf;
            stalled = 0;
        } else {
            stalled += 1;
            if centered && stalled >= 3 {
                break;
            }
        }
        // Normal matrix H + A^T (lambda / s) A, shared by both solves.
        h.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            h[j * n + j] = hdiag[j];
        }
        for (i, (a, _)) in rows.iter().enumerate() {
            let w = lam[i] / s[i];
            for &(j, aj) in a {
                for &(k, ak) in a {
                    h[j * n + k] += w * aj * ak;
                }
            }
        }
        if !cholesky_factor(&mut h, n) {
            break;
        }
        let mut solve = |rc: &[f64], dx: &mut [f64], ds: &mut [f64], dl: &mut [f64]| {
            for j in 0..n {
                rhs[j] = -rd[j];
            }
            for (i, (a, _)) in rows.iter().enumerate() {
                let t = rc[i] / s[i] - lam[i] / s[i] * rp[i];
                for &(j, v) in a {
                    rhs[j] += v * t;
                }
            }
            dx.copy_from_slice(&rhs);
            cholesky_apply(&h, dx, n);
            for (i, (a, _)) in rows.iter().enumerate() {
                let adx = dot(a, dx);
                ds[i] = adx + rp[i];
                dl[i] = (rc[i] - lam[i] * ds[i]) / s[i];
            }
        };
        for i in 0..m {
            rc[i] = -s[i] * lam[i];
        }
        solve(&rc, &mut dx, &mut ds, &mut dl);
        let ap = max_step(&s, &ds);
        let ad = max_step(&lam, &dl);
        let mu_aff = s
            .iter()
            .zip(&ds)
            .zip(lam.iter().zip(&dl))
            .map(|((si, dsi), (li, dli))| (si + ap * dsi) * (li + ad * dli))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        for i in 0..m {
            rc[i] = -s[i] * lam[i] - ds[i] * dl[i] + sigma * mu;
        }
        solve(&rc, &mut dx, &mut ds, &mut dl);
        let ap = (0.99 * max_step(&s, &ds)).min(1.0);
        let ad = (0.99 * max_step(&lam, &dl)).min(1.0);
        for j in 0..n {
            x[j] += ap * dx[j];
        }
        for i in 0..m {
            s[i] += ap * ds[i];
            lam[i] += ad * dl[i];
        }
    }
    x
}

/// Largest step in `[0, 1/0.99]` keeping `v + step * dv` positive.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&a, &d)| -a / d)
        .fold(1.0 / 0.99, f64::min)
}

/// In-place lower Cholesky factor of a dense symmetric matrix, with a tiny
/// diagonal shift when a pivot vanishes numerically.
fn cholesky_factor(a: &mut [f64], n: usize) -> bool {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if s <= 1e-14 * scale {
            s = 1e-14 * scale;
        }
        if !s.is_finite() {
            return false;
        }
        let d = s.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solves `L L^T x = b` in place given the factor from [`cholesky_factor`].
fn cholesky_apply(l: &[f64], b: &mut [f64], n: usize) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Exact per-node improvement that keeps `z_n = r_n + kappa ln d_n` fixed, so
/// every region constraint keeps its slack, followed by rounding of
/// negligible rates.
pub(crate) fn refine(p: &RdProblem, mut r: Vec<f64>, mut y: Vec<f64>) -> RdSolution {
    let k = p.size();
    let (ylo, yhi) = p.y_bounds();
    let kap = kappa_ln();
    for n in 0..k {
        r[n] = r[n].clamp(0.0, p.r_max);
        y[n] = y[n].clamp(ylo, yhi);
        if yhi - ylo <= 1e-12 {
            continue;
        }
        let z = r[n] + kap * y[n];
        let lo = ylo.max((z - p.r_max) / kap);
        let hi = yhi.min(z / kap);
        if lo > hi {
            continue;
        }
        let c = p.rate_price[n];
        let f = p.costs[n];
        let slope = |yy: f64| -c * kap + p.v * f.derivative(yy.exp()) * yy.exp();
        let ystar = if slope(lo) >= 0.0 {
            lo
        } else if slope(hi) <= 0.0 {
            hi
        } else if f == DistortionCost::Linear {
            (c * kap / p.v).ln().clamp(lo, hi)
        } else {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if slope(mid) > 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        };
        y[n] = ystar;
        r[n] = (z - kap * ystar).clamp(0.0, p.r_max);
    }
    let snap = SNAP_FRACTION * p.r_max;
    for n in 0..k {
        if r[n] > 0.0 && r[n] < snap {
            let old = (r[n], y[n]);
            r[n] = 0.0;
            y[n] = (y[n] + old.0 / kap).min(yhi);
            let d: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            if !p.region.feasible(&r, &d) {
                r[n] = old.0;
                y[n] = old.1;
            }
        }
    }
    repair(p, &mut r, &mut y);
    RdSolution::from_ry(p, r, &y)
}

/// Restores region feasibility by raising rates on the most-violated subset,
/// spreading the deficit evenly over members below `R_max`, and raising
/// distortions only when those rates are exhausted.
pub(crate) fn repair(p: &RdProblem, r: &mut [f64], y: &mut [f64]) {
    let k = p.size();
    let (_, yhi) = p.y_bounds();
    let kap = kappa_ln();
    for _ in 0..(4 << k) {
        let d: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let deficits = p.region.deficits(r, &d);
        let (worst, def) = deficits
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if def <= 1e-9 * p.region.entropies()[worst].abs().max(1.0) {
            return;
        }
        let mask = worst as u32 + 1;
        let mut need = def * (1.0 + 1e-12) + 1e-15;
        for _ in 0..k {
            let open: Vec<usize> = members(mask).filter(|&n| r[n] < p.r_max).collect();
            if open.is_empty() || need <= 0.0 {
                break;
            }
            let share = need / open.len() as f64;
            for n in open {
                let add = share.min(p.r_max - r[n]);
                r[n] += add;
                need -= add;
            }
        }
        if need > 0.0 {
            for n in members(mask) {
                let room = (yhi - y[n]) * kap;
                let add = need.min(room);
                y[n] += add / kap;
                need -= add;
                if need <= 0.0 {
                    break;
                }
            }
            if need > 0.0 {
                return;
            }
        }
    }
}

/// Cheapest rates that make distortions `d` achievable, from the rate linear
/// program `min c.r` over the region with `d` held fixed.
pub fn cheapest_rates(p: &RdProblem, d: &[f64]) -> Option<Vec<f64>> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let k = p.size();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..k).map(|n| lp.add_var(p.rate_price[n], (0.0, p.r_max))).collect();
    for m in subsets(k) {
        let bound = p.region.rate_bound(m, d).ok()?;
        if bound > 0.0 {
            let row: Vec<_> = members(m).map(|n| (vars[n], 1.0)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, bound);
        }
    }
    let sol = lp.solve().ok()?;
    Some(vars.iter().map(|&v| sol[v].clamp(0.0, p.r_max)).collect())
}

/// Step-size schedule of the price updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `step0 / tau` times the raw subgradient.
    Harmonic,
    /// `step0 / sqrt(tau)` times the unit-norm subgradient.
    #[default]
    NormalizedSqrt,
}

/// Settings for the dual-decomposition solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedOptions {
    pub max_iter: usize,
    pub step_rule: StepRule,
    /// Weight of the strict-convexity term `eps (r^2 + d^2)`.
    pub eps_reg: f64,
    /// Initial step, in units of `V`.
    pub step0: f64,
    /// Region violation above which the result is flagged.
    pub tol_feas: f64,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        Self { max_iter: 300, step_rule: StepRule::NormalizedSqrt, eps_reg: 1e-4, step0: 0.5, tol_feas: 1e-3 }
    }
}

/// Subset prices of the dual method. Prices are kept in units of `V`, so a
/// price of `1` corresponds to `V` in the original objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub tau: usize,
    pub eps_reg: f64,
}

impl DualState {
    pub fn new(num_constraints: usize, eps_reg: f64) -> Self {
        Self { lambda: vec![0.0; num_constraints], tau: 1, eps_reg }
    }

    /// Sum of prices of the subsets that contain `node`.
    pub fn node_price(&self, node: usize) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as u32 + 1) & (1 << node) != 0)
            .map(|(_, l)| l)
            .sum()
    }
}

/// Minimizer of node `n`'s local problem
/// `c r + V f(d) - V price (r + kappa ln d) + V eps (r^2 + d^2)` over its box,
/// with `price` in units of `V`.
pub fn local_subproblem(p: &RdProblem, node: usize, price: f64, eps_reg: f64) -> (f64, f64) {
    let c = p.rate_price[node] / p.v;
    let kap = kappa_ln();
    let r = if eps_reg > 0.0 {
        ((price - c) / (2.0 * eps_reg)).clamp(0.0, p.r_max)
    } else if price > c {
        p.r_max
    } else {
        0.0
    };
    let f = p.costs[node];
    let slope = |d: f64| f.derivative(d) - kap * price / d + 2.0 * eps_reg * d;
    let d = if slope(p.d_min) >= 0.0 {
        p.d_min
    } else if slope(p.d_max) <= 0.0 {
        p.d_max
    } else if f == DistortionCost::Linear {
        if eps_reg > 0.0 {
            ((-1.0 + (1.0 + 8.0 * eps_reg * kap * price).sqrt()) / (4.0 * eps_reg)).clamp(p.d_min, p.d_max)
        } else {
            (kap * price).clamp(p.d_min, p.d_max)
        }
    } else {
        let (mut a, mut b) = (p.d_min, p.d_max);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if slope(mid) > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    (r, d)
}

/// Subgradient `a_m = g(X_m) - sum_{n in X_m} (r_n + kappa ln d_n)` of the
/// dual function at the local minimizers.
pub fn subgradient(p: &RdProblem, r: &[f64], d: &[f64]) -> Vec<f64> {
    let kap = kappa_ln();
    subsets(p.size())
        .map(|m| p.region.entropy(m) - members(m).map(|n| r[n] + kap * d[n].ln()).sum::<f64>())
        .collect()
}

/// Projected step `lambda <- max(0, lambda + step0 / tau * a)`.
pub fn subgradient_step(state: &mut DualState, a: &[f64], step0: f64) {
    let step = step0 / state.tau as f64;
    for (l, g) in state.lambda.iter_mut().zip(a) {
        *l = (*l + step * g).max(0.0);
    }
    state.tau += 1;
}

/// Projected step `lambda <- max(0, lambda + step0 / sqrt(tau) * a / |a|)`.
pub fn normalized_step(state: &mut DualState, a: &[f64], step0: f64) {
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        let step = step0 / (state.tau as f64).sqrt() / norm;
        for (l, g) in state.lambda.iter_mut().zip(a) {
            *l = (*l + step * g).max(0.0);
        }
    }
    state.tau += 1;
}

/// Unregularized dual function at subset prices `lambda` (units of `V`),
/// returned in objective units. Never exceeds the primal optimum.
pub fn dual_value(p: &RdProblem, lambda: &[f64]) -> f64 {
    let state = DualState { lambda: lambda.to_vec(), tau: 1, eps_reg: 0.0 };
    let kap = kappa_ln();
    let mut val: f64 = subsets(p.size()).zip(lambda).map(|(m, l)| l * p.region.entropy(m)).sum();
    for n in 0..p.size() {
        let price = state.node_price(n);
        let (r, d) = local_subproblem(p, n, price, 0.0);
        val += (p.rate_price[n] / p.v) * r + p.costs[n].value(d) - price * (r + kap * d.ln());
    }
    val * p.v
}

/// Output of [`solve_distributed`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedSolution {
    pub solution: RdSolution,
    pub iterations: usize,
    /// Primal objective minus the best dual value seen.
    pub duality_gap: f64,
    /// Region violation of the recovered point before repair.
    pub violation_before_repair: f64,
    /// Set when the violation before repair exceeded the feasibility tolerance.
    pub flagged: bool,
    /// Final subset prices in units of `V`.
    pub lambda: Vec<f64>,
}

/// Dual decomposition with diminishing steps, tail averaging of the local
/// minimizers and a feasibility repair of the recovered point.
pub fn solve_distributed(p: &RdProblem, opts: &DistributedOptions) -> Result<DistributedSolution> {
    if !(opts.eps_reg > 0.0) || opts.max_iter == 0 {
        return Err(Error::Parameter("need eps_reg > 0 and at least one iteration".into()));
    }
    let k = p.size();
    let mut state = DualState::new(p.region.num_constraints(), opts.eps_reg);
    let mut r = vec![0.0; k];
    let mut d = vec![0.0; k];
    let mut avg_r = vec![0.0; k];
    let mut avg_y = vec![0.0; k];
    let mut count = 0usize;
    let mut best_dual = f64::NEG_INFINITY;
    let mut best_lambda = state.lambda.clone();
    let tail_start = opts.max_iter / 2;
    for it in 0..opts.max_iter {
        for n in 0..k {
            let (rn, dn) = local_subproblem(p, n, state.node_price(n), opts.eps_reg);
            r[n] = rn;
            d[n] = dn;
        }
        let dv = dual_value(p, &state.lambda);
        if dv > best_dual {
            best_dual = dv;
            best_lambda.clone_from(&state.lambda);
        }
        if it >= tail_start {
            for n in 0..k {
                avg_r[n] += r[n];
                avg_y[n] += d[n].ln();
            }
            count += 1;
        }
        let a = subgradient(p, &r, &d);
        match opts.step_rule {
            StepRule::Harmonic => subgradient_step(&mut state, &a, opts.step0),
            StepRule::NormalizedSqrt => normalized_step(&mut state, &a, opts.step0),
        }
    }
    best_dual = best_dual.max(dual_value(p, &state.lambda));
    let inv = 1.0 / count as f64;
    avg_r.iter_mut().for_each(|v| *v *= inv);
    avg_y.iter_mut().for_each(|v| *v *= inv);
    let avg_d: Vec<f64> = avg_y.iter().map(|v| v.exp()).collect();
    let violation_before_repair = p.region.max_violation(&avg_r, &avg_d);

    let last_y: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let mut candidates = vec![(avg_r, avg_y), (r, last_y)];
    for lambda in [&state.lambda, &best_lambda] {
        let price_state = DualState { lambda: lambda.clone(), tau: 1, eps_reg: 0.0 };
        let dd: Vec<f64> = (0..k).map(|n| local_subproblem(p, n, price_state.node_price(n), 0.0).1).collect();
        if let Some(rr) = cheapest_rates(p, &dd) {
            candidates.push((rr, dd.iter().map(|v| v.ln()).collect()));
        }
    }
    let mut best: Option<RdSolution> = None;
    for (mut cr, mut cy) in candidates {
        repair(p, &mut cr, &mut cy);
        let sol = refine(p, cr, cy);
        if !p.region.feasible(&sol.rates, &sol.distortions) {
            continue;
        }
        if best.as_ref().map_or(true, |b| sol.objective < b.objective) {
            best = Some(sol);
        }
    }
    let solution = best.ok_or_else(|| Error::Infeasible("repair could not restore the region".into()))?;
    Ok(DistributedSolution {
        duality_gap: solution.objective - best_dual,
        solution,
        iterations: opts.max_iter,
        violation_before_repair,
        flagged: violation_before_repair > opts.tol_feas,
        lambda: state.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{exchangeable_correlation, full_set_rate};
    use nalgebra::DMatrix;

    fn problem(region: &RateRegion, c: Vec<f64>, v: f64, d_min: f64) -> RdProblem<'_> {
        let k = region.size();
        RdProblem::new(region, c, v, vec![DistortionCost::Linear; k], 12.0, d_min, 1.0).unwrap()
    }

    /// Scalar oracle: with one independent source the rate must cover
    /// `0.5 ln(1/d)`, so the objective is `c * 0.5 ln(1/d) + V d` on a fine grid.
    #[test]
    fn scalar_tradeoff_matches_line_search() {
        let region = RateRegion::new(&DMatrix::identity(1, 1)).unwrap();
        for &(c, v) in &[(0.3, 1.0), (4.0, 2.0), (10.0, 100.0), (0.0, 1.0)] {
            let p = problem(&region, vec![c], v, 1e-3);
            let sol = solve_central(&p).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..=200_000 {
                let d = 1e-3 + (1.0 - 1e-3) * i as f64 / 200_000.0;
                best = best.min(c * 0.5 * (1.0 / d).ln() + v * d);
            }
            assert!((sol.objective - best).abs() <= 1e-6 * best.abs().max(1.0), "{c} {v}: {} vs {best}", sol.objective);
        }
    }

    #[test]
    fn zero_price_drives_distortion_to_floor() {
        let region = RateRegion::new(&exchangeable_correlation(2, 0.5)).unwrap();
        let p = problem(&region, vec![0.0, 0.0], 1.0, 0.01);
        let sol = solve_central(&p).unwrap();
        for &d in &sol.distortions {
            assert!((d - 0.01).abs() < 1e-9);
        }
        assert!(region.feasible(&sol.rates, &sol.distortions));
    }

    #[test]
    fn expensive_rates_give_max_distortion_and_no_rate() {
        let region = RateRegion::new(&DMatrix::identity(3, 3)).unwrap();
        let p = problem(&region, vec![1e4; 3], 10.0, 1e-3);
        let sol = solve_central(&p).unwrap();
        assert_eq!(sol.rates, vec![0.0; 3]);
        assert!(sol.distortions.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        // Correlated sources can be described at zero rate below D_max.
        let region = RateRegion::new(&exchangeable_correlation(3, 0.5)).unwrap();
        let p = problem(&region, vec![1e4; 3], 10.0, 1e-3);
        let sol = solve_central(&p).unwrap();
        assert_eq!(sol.rates, vec![0.0; 3]);
        assert!(region.feasible(&sol.rates, &sol.distortions));
        assert!(sol.distortions.iter().all(|&d| d < 1.0));
    }

    #[test]
    fn local_subproblem_examples() {
        let region = RateRegion::new(&DMatrix::identity(1, 1)).unwrap();
        let p = problem(&region, vec![2.0], 5.0, 1e-3);
        assert_eq!(local_subproblem(&p, 0, 0.0, 0.0), (0.0, 1e-3));
        let (_, d) = local_subproblem(&p, 0, 1.0 / kappa_ln(), 0.0);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_subproblem_matches_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let region = RateRegion::new(&DMatrix::identity(1, 1)).unwrap();
        for _ in 0..50 {
            let c = rng.random_range(0.0..20.0);
            let v = rng.random_range(0.5..10.0);
            let price = rng.random_range(0.0..5.0);
            let eps = 1e-2;
            let p = problem(&region, vec![c], v, 1e-3);
            let (r, d) = local_subproblem(&p, 0, price, eps);
            let kap = kappa_ln();
            let obj = |r: f64, d: f64| c / v * r + d - price * (r + kap * d.ln()) + eps * (r * r + d * d);
            let mut best = f64::INFINITY;
            for i in 0..=2000 {
                let dd = 1e-3 + (1.0 - 1e-3) * i as f64 / 2000.0;
                for j in 0..=200 {
                    best = best.min(obj(12.0 * j as f64 / 200.0, dd));
                }
            }
            assert!(obj(r, d) <= best + 1e-4);
        }
    }

    #[test]
    fn subgradient_sign_rules() {
        let region = RateRegion::new(&exchangeable_correlation(2, 0.5)).unwrap();
        let p = problem(&region, vec![1.0, 1.0], 1.0, 1e-3);
        let mut st = DualState { lambda: vec![0.5, 0.5, 0.5], tau: 1, eps_reg: 1e-4 };
        let a = subgradient(&p, &[5.0, 5.0], &[0.5, 0.5]);
        assert!(a.iter().all(|&x| x < 0.0));
        let before = st.lambda.clone();
        subgradient_step(&mut st, &a, 1.0);
        assert!(st.lambda.iter().zip(&before).all(|(a, b)| a <= b));
        let mut st = DualState::new(3, 1e-4);
        let a = subgradient(&p, &[0.0, 0.0], &[1e-3, 1e-3]);
        subgradient_step(&mut st, &a, 1.0);
        assert!(st.lambda.iter().any(|&l| l > 0.0));
    }

    #[test]
    fn distributed_matches_central() {
        let o = exchangeable_correlation(3, 0.6);
        let region = RateRegion::new(&o).unwrap();
        let rmax = full_set_rate(&o, 1e-3).unwrap();
        let p = RdProblem::new(&region, vec![0.4, 1.5, 3.0], 2.0, vec![DistortionCost::Linear; 3], rmax, 1e-3, 1.0).unwrap();
        let c = solve_central(&p).unwrap();
        let opts = DistributedOptions { max_iter: 3000, ..Default::default() };
        let dsol = solve_distributed(&p, &opts).unwrap();
        assert!(region.feasible(&dsol.solution.rates, &dsol.solution.distortions));
        let rel = (dsol.solution.objective - c.objective).abs() / c.objective.abs();
        assert!(rel < 1e-3, "{} vs {}", dsol.solution.objective, c.objective);
        assert!(dual_value(&p, &dsol.lambda) <= c.objective + 1e-9);
    }
}
