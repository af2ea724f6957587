//! Dense convex QP solved by a primal-dual interior-point method with
//! Mehrotra predictor-corrector steps.
//!
//! ```text
//!   minimize    ½ xᵀ P x + qᵀ x
//!   subject to  A x  = b
//!               G x <= h
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Cholesky, Lu, Matrix};
use crate::scalar::Scalar;

/// Named contiguous block of decision variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T> {
    pub p: Matrix<T>,
    pub q: Vec<T>,
    pub a_eq: Matrix<T>,
    pub b_eq: Vec<T>,
    pub g: Matrix<T>,
    pub h: Vec<T>,
    pub layout: Vec<VarBlock>,
}

impl<T: Scalar> QpProblem<T> {
    /// Problem with a single variable block named `x`.
    pub fn new(p: Matrix<T>, q: Vec<T>, a_eq: Matrix<T>, b_eq: Vec<T>, g: Matrix<T>, h: Vec<T>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a_eq,
            b_eq,
            g,
            h,
            layout: vec![VarBlock {
                name: "x".into(),
                start: 0,
                len: n,
            }],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        let px = self.p.matvec_unchecked(x);
        T::lit(0.5) * dot(x, &px) + dot(&self.q, x)
    }

    /// Shape consistency, symmetric PSD cost, finite data, and a layout that
    /// covers every variable exactly once.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let bad = |what: &str| Err(Error::InvalidArgument(format!("qp problem: {what}")));
        if self.p.shape() != (n, n) {
            return bad("P must be n×n");
        }
        if self.a_eq.shape() != (self.n_eq(), n) && !(self.n_eq() == 0 && self.a_eq.rows() == 0) {
            return bad("A_eq must be p×n");
        }
        if self.g.shape() != (self.n_ineq(), n) && !(self.n_ineq() == 0 && self.g.rows() == 0) {
            return bad("G must be m×n");
        }
        let all_finite = self.p.is_finite()
            && self.a_eq.is_finite()
            && self.g.is_finite()
            && self.q.iter().chain(&self.b_eq).chain(&self.h).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("qp problem data"));
        }
        let scale = T::one() + self.p.max_abs();
        for i in 0..n {
            for j in 0..i {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > T::lit(1e-12) * scale {
                    return bad("P is not symmetric");
                }
            }
        }
        if n > 0 && !crate::linalg::is_psd_with_shift(&self.p, T::lit(1e-9) * scale) {
            return bad("P is not positive semidefinite");
        }
        let mut covered = vec![0u32; n];
        for blk in &self.layout {
            if blk.start + blk.len > n {
                return bad("layout block out of range");
            }
            covered[blk.start..blk.start + blk.len].iter_mut().for_each(|c| *c += 1);
        }
        if covered.iter().any(|&c| c != 1) {
            return bad("layout must cover every variable exactly once");
        }
        Ok(())
    }

    /// Text dump in the fixed order `P, q, A_eq, b_eq, G, h`. Each block is a
    /// header line `<name> <rows> <cols>` followed by one line per row.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut mat = |name: &str, rows: usize, cols: usize, data: &[T]| {
            let _ = writeln!(out, "{name} {rows} {cols}");
            for r in 0..rows {
                let line: Vec<String> = data[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|v| format!("{:?}", v.to_f64_lossy()))
                    .collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        let n = self.n_vars();
        mat("P", n, n, self.p.as_slice());
        mat("q", n, 1, &self.q);
        mat("A_eq", self.n_eq(), n, self.a_eq.as_slice());
        mat("b_eq", self.n_eq(), 1, &self.b_eq);
        mat("G", self.n_ineq(), n, self.g.as_slice());
        mat("h", self.n_ineq(), 1, &self.h);
        out
    }

    /// Parses the format written by [`QpProblem::dump`].
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut block = |expect: &str| -> Result<(usize, usize, Vec<T>)> {
            let (ln, header) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: format!("missing block {expect}"),
            })?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let perr = |message: String| Error::Parse { line: ln + 1, message };
            if parts.len() != 3 || parts[0] != expect {
                return Err(perr(format!("expected header `{expect} rows cols`")));
            }
            let rows: usize = parts[1].parse().map_err(|_| perr("bad row count".into()))?;
            let cols: usize = parts[2].parse().map_err(|_| perr("bad column count".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines.next().ok_or_else(|| perr("truncated block".into()))?;
                for tok in row.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: ln + 1,
                        message: format!("bad number `{tok}`"),
                    })?;
                    data.push(T::lit(v));
                }
            }
            if data.len() != rows * cols {
                return Err(perr("row length mismatch".into()));
            }
            Ok((rows, cols, data))
        };
        let (n, _, p) = block("P")?;
        let (_, _, q) = block("q")?;
        let (pe, _, a) = block("A_eq")?;
        let (_, _, b) = block("b_eq")?;
        let (m, _, g) = block("G")?;
        let (_, _, h) = block("h")?;
        Ok(Self::new(
            Matrix::from_vec(n, n, p)?,
            q,
            Matrix::from_vec(pe, n, a)?,
            b,
            Matrix::from_vec(m, n, g)?,
            h,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
    Unbounded,
    NumericalError,
}

/// Infinity norms of the KKT optimality conditions at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    /// `‖P x + q + Aᵀ y + Gᵀ z‖`
    pub stationarity: f64,
    /// `max(‖A x − b‖, max(G x − h, 0))`
    pub primal: f64,
    /// `max(−z, 0)`
    pub dual: f64,
    /// `max |z_i (h − G x)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Equality duals.
    pub y: Vec<T>,
    /// Inequality duals, `>= 0`.
    pub z: Vec<T>,
    /// Inequality slacks `h − G x` as tracked by the solver.
    pub s: Vec<T>,
    pub objective: T,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Some inequality has both slack and dual below the degeneracy threshold.
    pub degenerate: bool,
    /// Normalized `(y, z)` ray certifying primal infeasibility.
    pub certificate: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> QpSolution<T> {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal shift added to the reduced Hessian before factorization.
    pub regularization: f64,
    pub degeneracy_threshold: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            regularization: 1e-13,
            degeneracy_threshold: 1e-6,
        }
    }
}

/// Column indices of the nonzeros of each row.
pub(crate) fn row_patterns<T: Scalar>(g: &Matrix<T>) -> Vec<Vec<usize>> {
    (0..g.rows())
        .map(|i| {
            g.row(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// `P + Gᵀ diag(w) G` using the row sparsity of `G`.
pub(crate) fn reduced_hessian<T: Scalar>(
    p: &Matrix<T>,
    g: &Matrix<T>,
    patterns: &[Vec<usize>],
    w: &[T],
    shift: T,
) -> Matrix<T> {
    let mut hm = p.clone();
    for (i, pat) in patterns.iter().enumerate() {
        let row = g.row(i);
        let wi = w[i];
        for &a in pat {
            let ga = wi * row[a];
            for &b in pat {
                hm[(a, b)] += ga * row[b];
            }
        }
    }
    for i in 0..hm.rows() {
        hm[(i, i)] += shift;
    }
    hm
}

fn g_mul<T: Scalar>(g: &Matrix<T>, patterns: &[Vec<usize>], x: &[T]) -> Vec<T> {
    patterns
        .iter()
        .enumerate()
        .map(|(i, pat)| {
            let row = g.row(i);
            pat.iter().fold(T::zero(), |acc, &j| acc + row[j] * x[j])
        })
        .collect()
}

fn gt_mul<T: Scalar>(g: &Matrix<T>, patterns: &[Vec<usize>], v: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for (i, pat) in patterns.iter().enumerate() {
        if v[i] == T::zero() {
            continue;
        }
        let row = g.row(i);
        for &j in pat {
            out[j] += row[j] * v[i];
        }
    }
    out
}

/// Factorization of the Newton system shared by the predictor and corrector.
pub(crate) enum KktFactor<T> {
    Chol(Cholesky<T>),
    Lu(Lu<T>, usize),
}

impl<T: Scalar> KktFactor<T> {
    /// Factors `[H Aᵀ; A 0]`, or just `H` when there are no equalities.
    pub(crate) fn new(hm: &Matrix<T>, a: &Matrix<T>) -> Option<Self> {
        let n = hm.rows();
        let p = a.rows();
        if p == 0 {
            if let Some(c) = Cholesky::factor(hm) {
                return Some(Self::Chol(c));
            }
        }
        let mut k = Matrix::zeros(n + p, n + p);
        for i in 0..n {
            k.row_mut(i)[..n].copy_from_slice(hm.row(i));
        }
        for r in 0..p {
            for j in 0..n {
                k[(n + r, j)] = a[(r, j)];
                k[(j, n + r)] = a[(r, j)];
            }
        }
        Lu::factor(&k).map(|lu| Self::Lu(lu, n))
    }

    /// Solves for `(dx, dy)` given right-hand sides of both block rows.
    pub(crate) fn solve(&self, r1: &[T], r2: &[T]) -> (Vec<T>, Vec<T>) {
        match self {
            Self::Chol(c) => (c.solve(r1), Vec::new()),
            Self::Lu(lu, n) => {
                let mut rhs = r1.to_vec();
                rhs.extend_from_slice(r2);
                let mut sol = lu.solve(&rhs);
                let dy = sol.split_off(*n);
                (sol, dy)
            }
        }
    }
}

struct Workspace<'a, T> {
    prob: &'a QpProblem<T>,
    patterns: Vec<Vec<usize>>,
    n: usize,
    m: usize,
}

impl<'a, T: Scalar> Workspace<'a, T> {
    fn residuals(&self, x: &[T], y: &[T], z: &[T], s: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let pr = self.prob;
        let mut rd = pr.p.matvec_unchecked(x);
        for (r, &qi) in rd.iter_mut().zip(&pr.q) {
            *r += qi;
        }
        if !y.is_empty() {
            for (r, v) in rd.iter_mut().zip(pr.a_eq.tr_matvec(y)) {
                *r += v;
            }
        }
        for (r, v) in rd.iter_mut().zip(gt_mul(&pr.g, &self.patterns, z, self.n)) {
            *r += v;
        }
        let req: Vec<T> = if pr.n_eq() > 0 {
            pr.a_eq
                .matvec_unchecked(x)
                .iter()
                .zip(&pr.b_eq)
                .map(|(&ax, &b)| ax - b)
                .collect()
        } else {
            Vec::new()
        };
        let gx = g_mul(&pr.g, &self.patterns, x);
        let rin: Vec<T> = (0..self.m).map(|i| gx[i] + s[i] - pr.h[i]).collect();
        (rd, req, rin)
    }

    /// Solves the Newton system for a given complementarity residual `rc`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        factor: &KktFactor<T>,
        rd: &[T],
        req: &[T],
        rin: &[T],
        rc: &[T],
        s: &[T],
        z: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        // rhs1 = −rd + Gᵀ S⁻¹ (rc − Z rin)
        let t: Vec<T> = (0..self.m).map(|i| (rc[i] - z[i] * rin[i]) / s[i]).collect();
        let gt = gt_mul(&self.prob.g, &self.patterns, &t, self.n);
        let r1: Vec<T> = rd.iter().zip(&gt).map(|(&a, &b)| b - a).collect();
        let r2: Vec<T> = req.iter().map(|&v| -v).collect();
        let (dx, dy) = factor.solve(&r1, &r2);
        let gdx = g_mul(&self.prob.g, &self.patterns, &dx);
        let ds: Vec<T> = (0..self.m).map(|i| -rin[i] - gdx[i]).collect();
        let dz: Vec<T> = (0..self.m).map(|i| (-rc[i] - z[i] * ds[i]) / s[i]).collect();
        (dx, dy, ds, dz)
    }
}

fn max_step<T: Scalar>(v: &[T], dv: &[T]) -> T {
    let mut alpha = T::one();
    for (&vi, &di) in v.iter().zip(dv) {
        if di < T::zero() {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

/// KKT residuals of a candidate primal-dual point.
pub fn kkt_residuals<T: Scalar>(prob: &QpProblem<T>, x: &[T], y: &[T], z: &[T]) -> KktResiduals {
    let patterns = row_patterns(&prob.g);
    let n = prob.n_vars();
    let mut rd = prob.p.matvec_unchecked(x);
    for (r, &qi) in rd.iter_mut().zip(&prob.q) {
        *r += qi;
    }
    if prob.n_eq() > 0 {
        for (r, v) in rd.iter_mut().zip(prob.a_eq.tr_matvec(y)) {
            *r += v;
        }
    }
    for (r, v) in rd.iter_mut().zip(gt_mul(&prob.g, &patterns, z, n)) {
        *r += v;
    }
    let mut primal = T::zero();
    if prob.n_eq() > 0 {
        for (ax, &b) in prob.a_eq.matvec_unchecked(x).iter().zip(&prob.b_eq) {
            primal = primal.max((*ax - b).abs());
        }
    }
    let gx = g_mul(&prob.g, &patterns, x);
    let mut comp = T::zero();
    let mut dual = T::zero();
    for i in 0..prob.n_ineq() {
        let slack = prob.h[i] - gx[i];
        primal = primal.max(-slack);
        comp = comp.max((z[i] * slack).abs());
        dual = dual.max(-z[i]);
    }
    KktResiduals {
        stationarity: norm_inf(&rd).to_f64_lossy(),
        primal: primal.to_f64_lossy(),
        dual: dual.to_f64_lossy(),
        complementarity: comp.to_f64_lossy(),
    }
}

/// Solves the QP. A warm-start primal guess only seeds `x`; slacks and duals
/// are re-centered from it.
///
/// The objective is divided by `max(1, ‖q‖∞)` before iterating and the
/// tolerance is tightened by the same factor, so the returned duals and
/// residuals refer to the original problem and meet `tol` there. If the
/// tightened target stalls, an iterate meeting `tol` on the scaled problem
/// is accepted after a few more iterations.
pub fn solve_qp<T: Scalar>(
    prob: &QpProblem<T>,
    settings: &QpSettings,
    warm_start: Option<&[T]>,
) -> Result<QpSolution<T>> {
    let c = norm_inf(&prob.q).max(T::one());
    if c == T::one() {
        return solve_scaled(prob, settings, settings.tol, warm_start);
    }
    let scaled = QpProblem {
        p: prob.p.scale(T::one() / c),
        q: prob.q.iter().map(|&v| v / c).collect(),
        ..prob.clone()
    };
    let tightened = QpSettings {
        tol: settings.tol / c.to_f64_lossy(),
        ..settings.clone()
    };
    let mut sol = solve_scaled(&scaled, &tightened, settings.tol, warm_start)?;
    sol.y.iter_mut().for_each(|v| *v *= c);
    sol.z.iter_mut().for_each(|v| *v *= c);
    sol.objective = prob.objective(&sol.x);
    sol.residuals = kkt_residuals(prob, &sol.x, &sol.y, &sol.z);
    let thr = T::lit(settings.degeneracy_threshold);
    sol.degenerate = (0..sol.s.len()).any(|i| sol.s[i].max(sol.z[i]) < thr);
    Ok(sol)
}

fn solve_scaled<T: Scalar>(
    prob: &QpProblem<T>,
    settings: &QpSettings,
    accept_tol: f64,
    warm_start: Option<&[T]>,
) -> Result<QpSolution<T>> {
    const GRACE: usize = 5;
    let n = prob.n_vars();
    let m = prob.n_ineq();
    let p = prob.n_eq();
    if prob.p.shape() != (n, n) || (m > 0 && prob.g.shape() != (m, n)) || (p > 0 && prob.a_eq.shape() != (p, n))
    {
        return Err(Error::InvalidArgument("qp problem dimensions are inconsistent".into()));
    }
    let ws = Workspace {
        prob,
        patterns: row_patterns(&prob.g),
        n,
        m,
    };
    let tol = T::lit(settings.tol);
    let accept = T::lit(accept_tol);
    let mut accepted_at: Option<usize> = None;
    let reg = T::lit(settings.regularization) * (T::one() + prob.p.max_abs());
    let ones = vec![T::one(); m];

    // Initial point: least-squares-ish primal from the unit-weight system.
    let mut x = match warm_start {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => {
            let hm = reduced_hessian(&prob.p, &prob.g, &ws.patterns, &ones, reg);
            let factor = KktFactor::new(&hm, &prob.a_eq)
                .or_else(|| {
                    let hm = reduced_hessian(&prob.p, &prob.g, &ws.patterns, &ones, reg.max(T::lit(1e-8)));
                    KktFactor::new(&hm, &prob.a_eq)
                })
                .ok_or_else(|| Error::Solver("singular initial KKT system".into()))?;
            let mut r1: Vec<T> = gt_mul(&prob.g, &ws.patterns, &prob.h, n);
            for (r, &qi) in r1.iter_mut().zip(&prob.q) {
                *r -= qi;
            }
            factor.solve(&r1, &prob.b_eq).0
        }
    };
    let mut y = vec![T::zero(); p];
    let gx = g_mul(&prob.g, &ws.patterns, &x);
    let mut s: Vec<T> = (0..m).map(|i| prob.h[i] - gx[i]).collect();
    let mut z: Vec<T> = s.iter().map(|&v| -v).collect();
    for v in [&mut s, &mut z] {
        let lowest = v.iter().copied().fold(T::infinity(), T::min);
        if lowest < T::one() {
            let shift = T::one() - lowest;
            v.iter_mut().for_each(|e| *e += shift);
        }
    }

    let mut status = QpStatus::MaxIterations;
    let mut certificate = None;
    let mut iterations = 0;
    for it in 0..settings.max_iter {
        iterations = it;
        let (rd, req, rin) = ws.residuals(&x, &y, &z, &s);
        let mu = if m > 0 { dot(&s, &z) / T::lit(m as f64) } else { T::zero() };
        let comp = (0..m).fold(T::zero(), |acc, i| acc.max(s[i] * z[i]));
        let worst = norm_inf(&rd).max(norm_inf(&req)).max(norm_inf(&rin)).max(comp);
        if worst <= accept && accepted_at.is_none() {
            accepted_at = Some(it);
        }
        if worst <= tol || accepted_at.is_some_and(|a| it >= a + GRACE || it + 1 == settings.max_iter) {
            status = QpStatus::Solved;
            break;
        }
        if !x.iter().chain(&z).chain(&s).all(|v| v.is_finite()) {
            status = QpStatus::NumericalError;
            break;
        }
        // Infeasibility certificate: a large dual ray with Aᵀy + Gᵀz ≈ 0 and bᵀy + hᵀz < 0.
        let dual_norm = norm_inf(&z).max(norm_inf(&y));
        if dual_norm > T::lit(1e8) {
            let yn: Vec<T> = y.iter().map(|&v| v / dual_norm).collect();
            let zn: Vec<T> = z.iter().map(|&v| v / dual_norm).collect();
            let mut ray = gt_mul(&prob.g, &ws.patterns, &zn, n);
            if p > 0 {
                for (r, v) in ray.iter_mut().zip(prob.a_eq.tr_matvec(&yn)) {
                    *r += v;
                }
            }
            let gap = dot(&prob.h, &zn) + dot(&prob.b_eq, &yn);
            if norm_inf(&ray) < T::lit(1e-6) && gap < T::lit(-1e-8) {
                status = QpStatus::Infeasible;
                certificate = Some((yn, zn));
                break;
            }
        }
        if norm_inf(&x) > T::lit(1e12) {
            status = QpStatus::Unbounded;
            break;
        }

        let w: Vec<T> = (0..m).map(|i| z[i] / s[i]).collect();
        let hm = reduced_hessian(&prob.p, &prob.g, &ws.patterns, &w, reg);
        let factor = match KktFactor::new(&hm, &prob.a_eq) {
            Some(f) => f,
            None => {
                let hm = reduced_hessian(&prob.p, &prob.g, &ws.patterns, &w, reg.max(T::lit(1e-8)));
                match KktFactor::new(&hm, &prob.a_eq) {
                    Some(f) => f,
                    None => {
                        status = QpStatus::NumericalError;
                        break;
                    }
                }
            }
        };

        // Predictor.
        let rc_aff: Vec<T> = (0..m).map(|i| s[i] * z[i]).collect();
        let (dxa, _, dsa, dza) = ws.direction(&factor, &rd, &req, &rin, &rc_aff, &s, &z);
        let alpha_aff = max_step(&s, &dsa).min(max_step(&z, &dza));
        let sigma = if m > 0 {
            let mu_aff = (0..m)
                .map(|i| (s[i] + alpha_aff * dsa[i]) * (z[i] + alpha_aff * dza[i]))
                .sum::<T>()
                / T::lit(m as f64);
            let ratio = (mu_aff / mu).max(T::zero()).min(T::one());
            ratio * ratio * ratio
        } else {
            T::zero()
        };
        // Corrector.
        let rc: Vec<T> = (0..m)
            .map(|i| s[i] * z[i] + dsa[i] * dza[i] - sigma * mu)
            .collect();
        let (dx, dy, ds, dz) = ws.direction(&factor, &rd, &req, &rin, &rc, &s, &z);
        let _ = dxa;
        let alpha = (T::lit(0.99) * max_step(&s, &ds).min(max_step(&z, &dz))).min(T::one());
        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for i in 0..p {
            y[i] += alpha * dy[i];
        }
        for i in 0..m {
            s[i] += alpha * ds[i];
            z[i] += alpha * dz[i];
        }
        iterations = it + 1;
    }

    let residuals = kkt_residuals(prob, &x, &y, &z);
    let thr = T::lit(settings.degeneracy_threshold);
    let degenerate = (0..m).any(|i| s[i].max(z[i]) < thr);
    Ok(QpSolution {
        objective: prob.objective(&x),
        x,
        y,
        z,
        s,
        status,
        iterations,
        residuals,
        degenerate,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: usize) -> Matrix<f64> {
        Matrix::zeros(0, n)
    }

    #[test]
    fn clipped_parabola() {
        // min (u − 2)² s.t. 0 ≤ u ≤ 1  →  ½·2u² − 4u
        let prob = QpProblem::new(
            Matrix::diag(&[2.0]),
            vec![-4.0],
            empty(1),
            vec![],
            Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
            vec![1.0, 0.0],
        );
        let sol = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert!(sol.is_solved());
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.z[0] - 2.0).abs() < 1e-7);
        assert!(sol.z[1].abs() < 1e-7);
        assert!(sol.residuals.max() <= 1e-8);
    }

    #[test]
    fn unconstrained_quadratic() {
        let prob = QpProblem::new(
            Matrix::diag(&[2.0, 2.0]),
            vec![-2.0, -4.0],
            empty(2),
            vec![],
            empty(2),
            vec![],
        );
        let sol = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert!(sol.is_solved());
        assert!((sol.x[0] - 1.0).abs() < 1e-10 && (sol.x[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn equality_constrained_lp_with_box() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, 0 ≤ x ≤ 1  →  x = (1, 0)
        let prob = QpProblem::new(
            Matrix::<f64>::zeros(2, 2),
            vec![1.0, 2.0],
            Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            vec![1.0],
            Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap(),
            vec![1.0, 1.0, 0.0, 0.0],
        );
        let sol = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert!(sol.is_solved(), "{:?}", sol.status);
        assert!((sol.x[0] - 1.0).abs() < 1e-7 && sol.x[1].abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_problem_is_detected() {
        // x ≤ −1 and −x ≤ −1 (x ≥ 1)
        let prob = QpProblem::new(
            Matrix::diag(&[1.0]),
            vec![0.0],
            empty(1),
            vec![],
            Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
            vec![-1.0, -1.0],
        );
        let sol = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let (_, z) = sol.certificate.unwrap();
        assert!(z.iter().all(|&v| v >= 0.0));
        let gtz = z[0] - z[1];
        assert!(gtz.abs() < 1e-6);
        assert!(-z[0] - z[1] < 0.0);
    }

    #[test]
    fn single_precision_solve() {
        let prob: QpProblem<f32> = QpProblem::new(
            Matrix::diag(&[2.0f32]),
            vec![-4.0],
            Matrix::zeros(0, 1),
            vec![],
            Matrix::from_vec(2, 1, vec![1.0f32, -1.0]).unwrap(),
            vec![1.0, 0.0],
        );
        let settings = QpSettings {
            tol: 1e-4,
            ..QpSettings::default()
        };
        let sol = solve_qp(&prob, &settings, None).unwrap();
        assert!(sol.is_solved());
        assert!((sol.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn validate_rejects_indefinite_and_bad_layout() {
        let mut prob = QpProblem::new(
            Matrix::diag(&[1.0, -1.0]),
            vec![0.0, 0.0],
            empty(2),
            vec![],
            empty(2),
            vec![],
        );
        assert!(prob.validate().is_err());
        prob.p = Matrix::diag(&[1.0, 0.0]);
        assert!(prob.validate().is_ok());
        prob.layout[0].len = 1;
        assert!(prob.validate().is_err());
    }

    #[test]
    fn dump_round_trips() {
        let prob = QpProblem::new(
            Matrix::diag(&[2.0, 1.0 / 3.0]),
            vec![-4.0, 0.1],
            Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            vec![1.0],
            Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap(),
            vec![0.5],
        );
        let back = QpProblem::<f64>::parse_dump(&prob.dump()).unwrap();
        assert_eq!(back, prob);
        assert!(matches!(
            QpProblem::<f64>::parse_dump("P 1 1\nx\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
