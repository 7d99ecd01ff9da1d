//! Constrained optimization by linear approximations.
//!
//! Derivative-free minimization of f(x) subject to c_i(x) ≥ 0. A simplex of
//! n + 1 evaluated points defines linear models of the objective and every
//! constraint; each iteration either minimizes those models inside a trust
//! region of radius rho or moves one vertex to keep the simplex well shaped.
//! Progress is judged on the merit f + mu · max violation, with mu raised
//! whenever the models call for it. Variable bounds are turned into 2n
//! ordinary constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALPHA: f64 = 0.25;
const BETA: f64 = 2.1;
const GAMMA: f64 = 0.5;
const DELTA: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CobylaConfig {
    /// Initial trust-region radius. `None` uses half the narrowest bound width.
    pub rhobeg: Option<f64>,
    /// Final trust-region radius; the run stops once rho reaches it.
    pub rhoend: f64,
    /// Maximum number of objective evaluations.
    pub maxfun: usize,
}

impl Default for CobylaConfig {
    fn default() -> Self {
        CobylaConfig {
            rhobeg: None,
            rhoend: 1e-4,
            maxfun: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CobylaStatus {
    /// Trust region shrank to `rhoend`.
    Converged,
    MaxFunctionEvaluations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub f: f64,
    /// Largest constraint violation, 0 when feasible.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CobylaResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub evaluations: usize,
    pub rho: f64,
    pub status: CobylaStatus,
    /// Every evaluation in call order.
    pub history: Vec<Evaluation>,
}

#[derive(Clone)]
struct Vertex {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    res: f64,
}

impl Vertex {
    fn merit(&self, mu: f64) -> f64 {
        self.f + mu * self.res
    }
}

/// Linear inequality a · y ≥ b.
struct Halfspace {
    a: Vec<f64>,
    b: f64,
}

type ConstraintFn<'a> = &'a dyn Fn(&[f64]) -> f64;

struct Problem<'a, F> {
    objective: F,
    constraints: &'a [ConstraintFn<'a>],
    bounds: &'a [(f64, f64)],
    history: Vec<Evaluation>,
}

impl<F: FnMut(&[f64]) -> f64> Problem<'_, F> {
    fn evaluate(&mut self, x: &[f64]) -> Result<Vertex> {
        let f = (self.objective)(x);
        if !f.is_finite() {
            return Err(Error::Optimizer(format!("objective is not finite at {x:?}")));
        }
        let mut c: Vec<f64> = self.constraints.iter().map(|g| g(x)).collect();
        for (xi, (lo, hi)) in x.iter().zip(self.bounds) {
            c.push(xi - lo);
            c.push(hi - xi);
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!("constraint is not finite at {x:?}")));
        }
        let res = c.iter().fold(0.0f64, |m, v| m.max(-v));
        self.history.push(Evaluation { f, violation: res });
        Ok(Vertex {
            x: x.to_vec(),
            f,
            c,
            res,
        })
    }
}

/// Minimize `objective` subject to `constraints[i](x) ≥ 0` and the box
/// `bounds`, starting from `x0`.
pub fn minimize<F>(
    objective: F,
    constraints: &[ConstraintFn<'_>],
    x0: &[f64],
    bounds: &[(f64, f64)],
    config: &CobylaConfig,
) -> Result<CobylaResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidArgument("COBYLA needs at least one variable".into()));
    }
    if !bounds.is_empty() && bounds.len() != n {
        return Err(Error::Dimension {
            what: "bounds",
            expected: n,
            got: bounds.len(),
        });
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("every bound needs low < high".into()));
    }
    let rhobeg = config.rhobeg.unwrap_or_else(|| {
        bounds
            .iter()
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .fold(f64::INFINITY, f64::min)
            .min(if bounds.is_empty() { 1.0 } else { f64::INFINITY })
    });
    if !(rhobeg > 0.0 && config.rhoend > 0.0 && config.rhoend <= rhobeg) {
        return Err(Error::InvalidArgument("need 0 < rhoend <= rhobeg".into()));
    }
    if config.maxfun < n + 1 {
        return Err(Error::InvalidArgument(format!("maxfun must be at least {}", n + 1)));
    }

    let mut p = Problem {
        objective,
        constraints,
        bounds,
        history: Vec::new(),
    };
    let mut rho = rhobeg;
    let mut mu = 0.0;
    let mut best: Option<Vertex> = None;
    let track = |v: &Vertex, best: &mut Option<Vertex>| {
        if v.res <= 1e-9 && best.as_ref().is_none_or(|b| v.f < b.f) {
            *best = Some(v.clone());
        }
    };

    // Initial simplex: x0 and x0 ± rho e_j, stepping towards the roomier side of a bound.
    let mut sim = Vec::with_capacity(n + 1);
    let v0 = p.evaluate(x0)?;
    track(&v0, &mut best);
    sim.push(v0);
    for j in 0..n {
        let mut x = x0.to_vec();
        let mut step = rho;
        if let Some(&(lo, hi)) = bounds.get(j) {
            if x0[j] + rho > hi && x0[j] - lo > hi - x0[j] {
                step = -rho;
            }
        }
        x[j] += step;
        let v = p.evaluate(&x)?;
        track(&v, &mut best);
        sim.push(v);
    }

    let mut status = CobylaStatus::MaxFunctionEvaluations;
    let mut after_step = false;
    loop {
        // Best vertex by merit goes first.
        let mut ib = 0;
        for j in 1..=n {
            let (mj, mb) = (sim[j].merit(mu), sim[ib].merit(mu));
            if mj < mb || (mj == mb && mu == 0.0 && sim[j].res < sim[ib].res) {
                ib = j;
            }
        }
        sim.swap(0, ib);

        let edges: Vec<Vec<f64>> = (1..=n)
            .map(|j| sim[j].x.iter().zip(&sim[0].x).map(|(a, b)| a - b).collect())
            .collect();
        let Some(inv) = invert_columns(&edges) else {
            // Degenerate simplex: rebuild around the best vertex.
            let base = sim[0].clone();
            sim.truncate(1);
            for j in 0..n {
                let mut x = base.x.clone();
                x[j] += rho;
                if p.history.len() >= config.maxfun {
                    break;
                }
                let v = p.evaluate(&x)?;
                track(&v, &mut best);
                sim.push(v);
            }
            if sim.len() < n + 1 {
                break;
            }
            continue;
        };
        let parsig = ALPHA * rho;
        let pareta = BETA * rho;
        let vsig: Vec<f64> = inv.iter().map(|row| 1.0 / norm(row)).collect();
        let veta: Vec<f64> = edges.iter().map(|e| norm(e)).collect();
        let acceptable = (0..n).all(|j| vsig[j] >= parsig && veta[j] <= pareta);

        if p.history.len() >= config.maxfun {
            break;
        }

        let models = linear_models(&sim, &inv);
        if !after_step && !acceptable {
            // Geometry step: replace the vertex with the longest edge or the
            // flattest opposite face.
            let mut jdrop = None;
            let mut worst = pareta;
            for (j, &e) in veta.iter().enumerate() {
                if e > worst {
                    jdrop = Some(j);
                    worst = e;
                }
            }
            if jdrop.is_none() {
                let mut worst = parsig;
                for (j, &s) in vsig.iter().enumerate() {
                    if s < worst {
                        jdrop = Some(j);
                        worst = s;
                    }
                }
            }
            let j = jdrop.expect("unacceptable simplex has a culprit");
            let dx: Vec<f64> = inv[j].iter().map(|v| GAMMA * rho * vsig[j] * v).collect();
            let base = &sim[0];
            let (mut viol_plus, mut viol_minus) = (0.0f64, 0.0f64);
            let mut out_plus = false;
            let mut out_minus = false;
            for (k, a) in models.constraints.iter().enumerate() {
                let s = dot(a, &dx);
                viol_plus = viol_plus.max(-(base.c[k] + s));
                viol_minus = viol_minus.max(-(base.c[k] - s));
            }
            for (i, &(lo, hi)) in bounds.iter().enumerate() {
                out_plus |= base.x[i] + dx[i] < lo || base.x[i] + dx[i] > hi;
                out_minus |= base.x[i] - dx[i] < lo || base.x[i] - dx[i] > hi;
            }
            let slope = dot(&models.objective, &dx);
            let mut sign = if mu * (viol_plus - viol_minus) > 2.0 * slope { -1.0 } else { 1.0 };
            if out_plus && !out_minus {
                sign = -1.0;
            } else if out_minus && !out_plus {
                sign = 1.0;
            }
            let x: Vec<f64> = base.x.iter().zip(&dx).map(|(b, d)| b + sign * d).collect();
            let v = p.evaluate(&x)?;
            track(&v, &mut best);
            sim[j + 1] = v;
            continue;
        }

        // Trust-region step on the linear models.
        let base = sim[0].clone();
        let (dx, full) = trust_region_step(&models, &base.c, rho);
        let dnorm = norm(&dx);
        let reduce = if !full && dnorm < 0.5 * rho {
            true
        } else {
            let resnew = models
                .constraints
                .iter()
                .enumerate()
                .fold(0.0f64, |m, (k, a)| m.max(-(base.c[k] + dot(a, &dx))));
            let df = dot(&models.objective, &dx);
            let prerec = base.res - resnew;
            let barmu = if prerec > 0.0 { df / prerec } else { 0.0 };
            if mu < 1.5 * barmu {
                mu = 2.0 * barmu;
                let phi = base.merit(mu);
                if sim[1..].iter().any(|v| v.merit(mu) < phi) {
                    after_step = true;
                    continue;
                }
            }
            let mut prerem = mu * prerec - df;
            let x: Vec<f64> = base.x.iter().zip(&dx).map(|(b, d)| b + d).collect();
            let v = p.evaluate(&x)?;
            track(&v, &mut best);
            let mut trured = base.merit(mu) - v.merit(mu);
            if mu == 0.0 && v.f == base.f {
                prerem = prerec;
                trured = base.res - v.res;
            }

            // Choose the vertex to replace.
            let mut ratio = if trured <= 0.0 { 1.0 } else { 0.0 };
            let mut jdrop = None;
            let mut sigbar = vec![0.0; n];
            for j in 0..n {
                let t = dot(&inv[j], &dx).abs();
                if t > ratio {
                    jdrop = Some(j);
                    ratio = t;
                }
                sigbar[j] = t * vsig[j];
            }
            let mut edgmax = DELTA * rho;
            let mut far = None;
            for j in 0..n {
                if sigbar[j] >= parsig || sigbar[j] >= vsig[j] {
                    let t = if trured > 0.0 {
                        dx.iter().zip(&edges[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                    } else {
                        veta[j]
                    };
                    if t > edgmax {
                        far = Some(j);
                        edgmax = t;
                    }
                }
            }
            if far.is_some() {
                jdrop = far;
            }
            match jdrop {
                Some(j) => {
                    sim[j + 1] = v;
                    if trured > 0.0 && trured >= 0.1 * prerem {
                        after_step = true;
                        continue;
                    }
                }
                None => {}
            }
            true
        };

        if reduce {
            after_step = false;
            if !acceptable {
                continue;
            }
            if rho <= config.rhoend {
                status = CobylaStatus::Converged;
                break;
            }
            rho *= 0.5;
            if rho <= 1.5 * config.rhoend {
                rho = config.rhoend;
            }
            if mu > 0.0 {
                mu = reduced_penalty(&sim, mu);
            }
        }
    }

    let base = sim.swap_remove(0);
    let chosen = match best {
        Some(b) if b.f <= base.f || base.res > 1e-9 => b,
        _ => base,
    };
    Ok(CobylaResult {
        x: chosen.x,
        f: chosen.f,
        violation: chosen.res,
        evaluations: p.history.len(),
        rho,
        status,
        history: p.history,
    })
}

fn reduced_penalty(sim: &[Vertex], mu: f64) -> f64 {
    let m = sim[0].c.len();
    let mut denom: f64 = 0.0;
    for k in 0..m {
        let cmin = sim.iter().map(|v| v.c[k]).fold(f64::INFINITY, f64::min);
        let cmax = sim.iter().map(|v| v.c[k]).fold(f64::NEG_INFINITY, f64::max);
        if cmin < 0.5 * cmax {
            let t = cmax.max(0.0) - cmin;
            denom = if denom <= 0.0 { t } else { denom.min(t) };
        }
    }
    let fmin = sim.iter().map(|v| v.f).fold(f64::INFINITY, f64::min);
    let fmax = sim.iter().map(|v| v.f).fold(f64::NEG_INFINITY, f64::max);
    if denom == 0.0 {
        0.0
    } else if fmax - fmin < mu * denom {
        (fmax - fmin) / denom
    } else {
        mu
    }
}

struct Models {
    objective: Vec<f64>,
    constraints: Vec<Vec<f64>>,
}

/// Gradients of the linear interpolants through the simplex vertices.
fn linear_models(sim: &[Vertex], inv: &[Vec<f64>]) -> Models {
    let n = inv.len();
    let grad = |diff: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (j, row) in inv.iter().enumerate() {
            let d = diff(j);
            for (gi, r) in g.iter_mut().zip(row) {
                *gi += r * d;
            }
        }
        g
    };
    let objective = grad(&|j| sim[j + 1].f - sim[0].f);
    let constraints = (0..sim[0].c.len())
        .map(|k| grad(&|j| sim[j + 1].c[k] - sim[0].c[k]))
        .collect();
    Models { objective, constraints }
}

/// Step minimizing the linear objective model within the ball of radius `rho`,
/// first driving down the largest linearized violation. Returns the step and
/// whether it reached the ball boundary.
fn trust_region_step(models: &Models, c0: &[f64], rho: f64) -> (Vec<f64>, bool) {
    let n = models.objective.len();
    let worst = c0.iter().fold(0.0f64, |m, c| m.max(-c));
    let mut d = vec![0.0; n];
    let mut slack = 0.0;
    if worst > 0.0 {
        // Variables (d, t): minimize t subject to c_k + a_k·d + t ≥ 0 and t ≥ 0.
        let mut cons: Vec<Halfspace> = models
            .constraints
            .iter()
            .zip(c0)
            .map(|(a, c)| {
                let mut a = a.clone();
                a.push(1.0);
                Halfspace { a, b: -c }
            })
            .collect();
        let mut e = vec![0.0; n + 1];
        e[n] = 1.0;
        cons.push(Halfspace { a: e.clone(), b: 0.0 });
        let mut y = vec![0.0; n + 1];
        y[n] = worst;
        let full = active_set_walk(&e, &cons, &mut y, n, rho);
        slack = y[n].max(0.0);
        d.copy_from_slice(&y[..n]);
        if full {
            return (d, true);
        }
    }
    let cons: Vec<Halfspace> = models
        .constraints
        .iter()
        .zip(c0)
        .map(|(a, c)| Halfspace {
            a: a.clone(),
            b: -c - slack,
        })
        .collect();
    let full = active_set_walk(&models.objective, &cons, &mut d, n, rho);
    (d, full)
}

/// Minimize g·y over {a_k·y ≥ b_k} ∩ {‖y[..ball_dims]‖ ≤ rho} from a feasible
/// start, moving along projected steepest descent and stopping when the ball
/// boundary is reached. Returns true if it stopped on the boundary.
fn active_set_walk(g: &[f64], cons: &[Halfspace], y: &mut [f64], ball_dims: usize, rho: f64) -> bool {
    let dim = g.len();
    let mut active: Vec<usize> = Vec::new();
    let gnorm = norm(g);
    if gnorm == 0.0 {
        return false;
    }
    for _ in 0..4 * (dim + cons.len()) + 10 {
        let (s, lambda) = project_out(g, cons, &active);
        if let Some((pos, _)) = lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < -1e-12 * gnorm)
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            active.remove(pos);
            continue;
        }
        if norm(&s) <= 1e-12 * gnorm {
            return false;
        }
        // Largest move along s inside the ball.
        let (mut yy, mut ys, mut ss) = (0.0, 0.0, 0.0);
        for i in 0..ball_dims {
            yy += y[i] * y[i];
            ys += y[i] * s[i];
            ss += s[i] * s[i];
        }
        let alpha_ball = if ss > 0.0 {
            let disc = (ys * ys + ss * (rho * rho - yy)).max(0.0);
            ((disc.sqrt() - ys) / ss).max(0.0)
        } else {
            f64::INFINITY
        };
        let mut alpha = alpha_ball;
        let mut block = None;
        for (k, h) in cons.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let rate = dot(&h.a, &s);
            if rate < -1e-14 * norm(&h.a) * norm(&s) {
                let room = (dot(&h.a, y) - h.b).max(0.0);
                let ak = room / -rate;
                if ak < alpha {
                    alpha = ak;
                    block = Some(k);
                }
            }
        }
        if !alpha.is_finite() {
            return false;
        }
        for (yi, si) in y.iter_mut().zip(&s) {
            *yi += alpha * si;
        }
        match block {
            Some(k) => active.push(k),
            None => return true,
        }
    }
    false
}

/// Projection of −g onto the null space of the active normals, and the
/// least-squares multipliers of g on those normals.
fn project_out(g: &[f64], cons: &[Halfspace], active: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let k = active.len();
    if k == 0 {
        return (g.iter().map(|v| -v).collect(), Vec::new());
    }
    // Normal equations (A Aᵀ) λ = A g with a small ridge against dependence.
    let rows: Vec<&[f64]> = active.iter().map(|&i| cons[i].a.as_slice()).collect();
    let mut m: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(rows[i], rows[j])).collect())
        .collect();
    let scale = (0..k).map(|i| m[i][i]).fold(0.0f64, f64::max);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += 1e-13 * scale;
    }
    let rhs: Vec<f64> = rows.iter().map(|r| dot(r, g)).collect();
    let lambda = solve_dense(m, rhs).unwrap_or_else(|| vec![0.0; k]);
    let mut s: Vec<f64> = g.iter().map(|v| -v).collect();
    for (l, r) in lambda.iter().zip(&rows) {
        for (si, ri) in s.iter_mut().zip(r.iter()) {
            *si += l * ri;
        }
    }
    (s, lambda)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            if f != 0.0 {
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

/// Inverse of the matrix whose columns are `cols`, returned as rows: row j
/// dotted with column i is δ_ij.
fn invert_columns(cols: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = cols.len();
    // a[i][j] = cols[j][i]
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for k in 0..n {
            a[c][k] /= d;
            inv[c][k] /= d;
        }
        for r in 0..n {
            if r != c && a[r][c] != 0.0 {
                let f = a[r][c];
                for k in 0..n {
                    a[r][k] -= f * a[c][k];
                    inv[r][k] -= f * inv[c][k];
                }
            }
        }
    }
    Some(inv)
}
