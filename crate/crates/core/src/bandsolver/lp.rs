//! Primal active-set method for small dense linear programs.
//!
//! Solves `min c^T x` subject to `A x <= b` from a feasible start. The
//! problems here have at most a dozen variables and a few hundred rows, so
//! each step refactors the working set from scratch.

/// Row residual above which a start counts as infeasible.
const START_TOLERANCE: f64 = 1e-9;
/// Rows within this distance of their bound join the initial working set.
const ACTIVE_TOLERANCE: f64 = 1e-11;
const DEPENDENCE_TOLERANCE: f64 = 1e-9;
/// Degenerate steps tolerated before switching to smallest-index pivoting.
const DEGENERATE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum LpError {
    InfeasibleStart,
    Unbounded,
}

/// Dense row-major constraint block `A x <= b`.
pub(super) struct Constraints {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Constraints {
    pub fn new(n: usize) -> Self {
        Self { n, a: Vec::new(), b: Vec::new() }
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = f64>, rhs: f64) {
        let before = self.a.len();
        self.a.extend(row);
        debug_assert_eq!(self.a.len() - before, self.n);
        self.b.push(rhs);
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn residual(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x) - self.b[i]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin QR of the working-set rows (as columns) by modified Gram–Schmidt.
struct Factor {
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

impl Factor {
    fn new(cons: &Constraints, set: &[usize]) -> Self {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(set.len());
        let mut r = vec![vec![0.0; set.len()]; set.len()];
        for (k, &i) in set.iter().enumerate() {
            let mut v = cons.row(i).to_vec();
            for (p, qp) in q.iter().enumerate() {
                let proj = dot(qp, &v);
                r[p][k] = proj;
                v.iter_mut().zip(qp).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = dot(&v, &v).sqrt();
            r[k][k] = norm;
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
        Self { q, r }
    }

    /// `v` minus its projection onto the span of the working rows.
    fn project_out(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for qp in &self.q {
            let proj = dot(qp, &out);
            out.iter_mut().zip(qp).for_each(|(x, y)| *x -= proj * y);
        }
        out
    }

    /// Least-squares multipliers of `A_W^T lambda = -c`.
    fn multipliers(&self, c: &[f64]) -> Vec<f64> {
        let k = self.q.len();
        let rhs: Vec<f64> = self.q.iter().map(|qp| -dot(qp, c)).collect();
        let mut lambda = vec![0.0; k];
        for i in (0..k).rev() {
            let tail: f64 = (i + 1..k).map(|j| self.r[i][j] * lambda[j]).sum();
            lambda[i] = (rhs[i] - tail) / self.r[i][i];
        }
        lambda
    }
}

fn independent(cons: &Constraints, set: &[usize], candidate: usize) -> bool {
    let row = cons.row(candidate);
    let norm = dot(row, row).sqrt();
    if norm == 0.0 {
        return false;
    }
    let rest = Factor::new(cons, set).project_out(row);
    dot(&rest, &rest).sqrt() > DEPENDENCE_TOLERANCE * norm
}

/// Minimizer of `c^T x` over `cons`, starting from a feasible `x0`.
pub(super) fn minimize(c: &[f64], cons: &Constraints, x0: &[f64], max_steps: usize) -> Result<Vec<f64>, LpError> {
    let n = cons.n;
    if (0..cons.len()).any(|i| cons.residual(i, x0) > START_TOLERANCE) {
        return Err(LpError::InfeasibleStart);
    }
    let mut x = x0.to_vec();
    let mut set: Vec<usize> = Vec::with_capacity(n);
    for i in 0..cons.len() {
        if set.len() == n {
            break;
        }
        if cons.residual(i, &x) >= -ACTIVE_TOLERANCE && independent(cons, &set, i) {
            set.push(i);
        }
    }
    let c_norm = dot(c, c).sqrt().max(f64::MIN_POSITIVE);
    let mut degenerate = 0;
    for _ in 0..max_steps {
        let factor = Factor::new(cons, &set);
        let mut d: Vec<f64> = factor.project_out(c).iter().map(|v| -v).collect();
        if dot(&d, &d).sqrt() <= 1e-12 * c_norm {
            let lambda = factor.multipliers(c);
            let drop = if degenerate > DEGENERATE_LIMIT {
                // Smallest row index with a negative multiplier.
                lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| **l < -1e-12 * c_norm)
                    .min_by_key(|(k, _)| set[*k])
                    .map(|(k, _)| k)
            } else {
                lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| **l < -1e-12 * c_norm)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
            };
            let Some(k) = drop else { return Ok(x) };
            set.remove(k);
            d = Factor::new(cons, &set).project_out(c).iter().map(|v| -v).collect();
            if dot(&d, &d).sqrt() <= 1e-12 * c_norm {
                return Ok(x);
            }
        }
        let d_norm = dot(&d, &d).sqrt();
        let mut step = f64::INFINITY;
        let mut blocking = None;
        for i in 0..cons.len() {
            if set.contains(&i) {
                continue;
            }
            let rate = dot(cons.row(i), &d);
            if rate <= 1e-14 * d_norm {
                continue;
            }
            let ratio = (-cons.residual(i, &x)).max(0.0) / rate;
            if ratio < step {
                step = ratio;
                blocking = Some(i);
            }
        }
        let Some(i) = blocking else { return Err(LpError::Unbounded) };
        if step == 0.0 {
            degenerate += 1;
        } else {
            degenerate = 0;
        }
        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += step * di);
        set.push(i);
    }
    Ok(x)
}
