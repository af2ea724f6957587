//! Assembly of the eNMPC optimal control problem as a QP.
//!
//! Inputs `u_t` and predicted states are in scaled units (`[-1, 1]` on the
//! configured boxes). Storage `N_s` is kept in hours of demand. Path
//! constraints apply at `t = 1..N`, the economic stage cost uses the outputs
//! `y_t` for `t = 0..N-1`.
//!
//! In the condensed formulation every predicted quantity is an affine function
//! of the stacked input sequence. Its coefficients are the free responses
//! `C Aᵗ z₀`, `D Aᵗ z₀` and the Markov parameters `C Aᵏ B`, `D Aᵏ B`, `E`
//! (collected in [`Responses`]). The parts of the QP that depend on them are
//! written through a [`Sink`], so the same routine produces the problem data
//! and the adjoint of the assembly.

use super::config::{Bounds, ConstraintMode, Formulation, OcpConfig};
use super::qp::{QpProblem, VarBlock};
use crate::error::{check_dim, Error, Result};
use crate::gradtape::{ModelVars, Tape, Var};
use crate::koopman::KoopmanModel;
use crate::linalg::Matrix;

/// Measured state handed to the controller at one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpInput {
    /// Scaled observation fed to the encoder.
    pub x_obs: Vec<f64>,
    /// Current storage level in hours of demand.
    pub storage: f64,
    /// Electricity price per control step over the horizon.
    pub prices: Vec<f64>,
}

/// Free responses and Markov parameters of the model over a horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Responses {
    /// `C Aᵗ z₀` for `t = 1..=N` (index `t - 1`).
    pub fx: Vec<Vec<f64>>,
    /// `D Aᵗ z₀` for `t = 0..N`.
    pub fy: Vec<Vec<f64>>,
    /// `C Aᵏ B` for `k = 0..N`.
    pub cm: Vec<Matrix<f64>>,
    /// `D Aᵏ B` for `k = 0..N`.
    pub dm: Vec<Matrix<f64>>,
    pub e: Matrix<f64>,
}

impl Responses {
    pub fn from_model(model: &KoopmanModel<f64>, z0: &[f64], horizon: usize) -> Result<Self> {
        check_dim("latent state", model.dims.n_z, z0.len())?;
        let mut fx = Vec::with_capacity(horizon);
        let mut fy = Vec::with_capacity(horizon);
        let mut z = z0.to_vec();
        for _ in 0..horizon {
            fy.push(model.d.matvec_unchecked(&z));
            z = model.a.matvec_unchecked(&z);
            fx.push(model.c.matvec_unchecked(&z));
        }
        let mut cm = Vec::with_capacity(horizon);
        let mut dm = Vec::with_capacity(horizon);
        let mut akb = model.b.clone();
        for k in 0..horizon {
            if k > 0 {
                akb = model.a.matmul_unchecked(&akb);
            }
            cm.push(model.c.matmul_unchecked(&akb));
            dm.push(model.d.matmul_unchecked(&akb));
        }
        Ok(Self {
            fx,
            fy,
            cm,
            dm,
            e: model.e.clone(),
        })
    }

    fn zeros_like(other: &Self) -> Self {
        let zv = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![0.0; x.len()]).collect();
        let zm = |v: &Vec<Matrix<f64>>| v.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            fx: zv(&other.fx),
            fy: zv(&other.fy),
            cm: zm(&other.cm),
            dm: zm(&other.dm),
            e: Matrix::zeros(other.e.rows(), other.e.cols()),
        }
    }

    fn value(&self, src: Src) -> f64 {
        match src {
            Src::Fx(t, r) => self.fx[t - 1][r],
            Src::Fy(t, r) => self.fy[t][r],
            Src::Cm(k, r, c) => self.cm[k][(r, c)],
            Src::Dm(k, r, c) => self.dm[k][(r, c)],
            Src::E(r, c) => self.e[(r, c)],
        }
    }

    fn slot_mut(&mut self, src: Src) -> &mut f64 {
        match src {
            Src::Fx(t, r) => &mut self.fx[t - 1][r],
            Src::Fy(t, r) => &mut self.fy[t][r],
            Src::Cm(k, r, c) => &mut self.cm[k][(r, c)],
            Src::Dm(k, r, c) => &mut self.dm[k][(r, c)],
            Src::E(r, c) => &mut self.e[(r, c)],
        }
    }
}

/// One entry of [`Responses`].
#[derive(Clone, Copy, Debug)]
pub(crate) enum Src {
    Fx(usize, usize),
    Fy(usize, usize),
    Cm(usize, usize, usize),
    Dm(usize, usize, usize),
    E(usize, usize),
}

/// Receiver of the response-dependent terms of the condensed QP. Each call
/// states that `coef · src` is added to the named data entry.
pub(crate) trait Sink {
    fn q(&mut self, col: usize, coef: f64, src: Src);
    fn g(&mut self, row: usize, col: usize, coef: f64, src: Src);
    fn h(&mut self, row: usize, coef: f64, src: Src);
    fn objective(&mut self, coef: f64, src: Src);
}

struct ValueSink<'a> {
    resp: &'a Responses,
    qp: &'a mut QpProblem<f64>,
    offset: &'a mut f64,
}

impl Sink for ValueSink<'_> {
    fn q(&mut self, col: usize, coef: f64, src: Src) {
        self.qp.q[col] += coef * self.resp.value(src);
    }
    fn g(&mut self, row: usize, col: usize, coef: f64, src: Src) {
        self.qp.g[(row, col)] += coef * self.resp.value(src);
    }
    fn h(&mut self, row: usize, coef: f64, src: Src) {
        self.qp.h[row] += coef * self.resp.value(src);
    }
    fn objective(&mut self, coef: f64, src: Src) {
        *self.offset += coef * self.resp.value(src);
    }
}

/// Pulls adjoints of `(q, G, h)` back onto [`Responses`].
pub(crate) struct AdjointSink<'a, F: Fn(usize, usize) -> f64> {
    pub dq: &'a [f64],
    pub dg: F,
    pub dh: &'a [f64],
    pub out: Responses,
}

impl<F: Fn(usize, usize) -> f64> Sink for AdjointSink<'_, F> {
    fn q(&mut self, col: usize, coef: f64, src: Src) {
        *self.out.slot_mut(src) += coef * self.dq[col];
    }
    fn g(&mut self, row: usize, col: usize, coef: f64, src: Src) {
        *self.out.slot_mut(src) += coef * (self.dg)(row, col);
    }
    fn h(&mut self, row: usize, coef: f64, src: Src) {
        *self.out.slot_mut(src) += coef * self.dh[row];
    }
    fn objective(&mut self, _coef: f64, _src: Src) {}
}

/// Variable and row indexing of the condensed QP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CondensedLayout {
    pub horizon: usize,
    pub n_u: usize,
    pub n_g: usize,
    pub mode: ConstraintMode,
}

impl CondensedLayout {
    pub fn u(&self, t: usize, i: usize) -> usize {
        t * self.n_u + i
    }

    /// Epigraph variable of constraint `c` at `t = 1..=N`.
    pub fn epi(&self, t: usize, c: usize) -> usize {
        self.horizon * self.n_u + (t - 1) * self.n_g + c
    }

    pub fn n_vars(&self) -> usize {
        match self.mode {
            ConstraintMode::SlackPenalty => self.horizon * (self.n_u + self.n_g),
            ConstraintMode::Hard => self.horizon * self.n_u,
        }
    }

    fn path_base(&self) -> usize {
        let box_rows = 2 * self.horizon * self.n_u;
        match self.mode {
            ConstraintMode::SlackPenalty => box_rows + self.horizon * self.n_g,
            ConstraintMode::Hard => box_rows,
        }
    }

    /// Row bounding `sign · g` for constraint `c` at `t = 1..=N`.
    pub fn path_row(&self, t: usize, c: usize, sign: f64) -> usize {
        self.path_base() + 2 * ((t - 1) * self.n_g + c) + usize::from(sign > 0.0)
    }

    pub fn n_rows(&self) -> usize {
        self.path_base() + 2 * self.horizon * self.n_g
    }
}

const SIGNS: [f64; 2] = [-1.0, 1.0];

pub(crate) fn emit_condensed<S: Sink>(lay: &CondensedLayout, cfg: &OcpConfig, prices: &[f64], sink: &mut S) {
    let n = lay.horizon;
    let n_u = lay.n_u;
    let n_xp = lay.n_g - 1;
    let dt = cfg.dt_hours();
    let e_half = cfg.output_ranges[0].half_range();
    let p_w = dt * cfg.output_ranges[1].half_range();
    for tau in 0..n {
        let w = prices[tau] * dt * e_half;
        sink.objective(w, Src::Fy(tau, 0));
        for i in 0..n_u {
            sink.q(lay.u(tau, i), w, Src::E(0, i));
        }
        for j in 0..tau {
            for i in 0..n_u {
                sink.q(lay.u(j, i), w, Src::Dm(tau - 1 - j, 0, i));
            }
        }
    }
    for t in 1..=n {
        for c in 0..lay.n_g {
            for sign in SIGNS {
                let row = lay.path_row(t, c, sign);
                if c < n_xp {
                    sink.h(row, -sign, Src::Fx(t, c));
                    for j in 0..t {
                        for i in 0..n_u {
                            sink.g(row, lay.u(j, i), sign, Src::Cm(t - 1 - j, c, i));
                        }
                    }
                } else {
                    for tau in 0..t {
                        sink.h(row, -sign * p_w, Src::Fy(tau, 1));
                    }
                    for j in 0..t {
                        for i in 0..n_u {
                            let col = lay.u(j, i);
                            sink.g(row, col, sign * p_w, Src::E(1, i));
                            for tau in j + 1..t {
                                sink.g(row, col, sign * p_w, Src::Dm(tau - 1 - j, 1, i));
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Bounds of constrained quantity `c`: scaled states use `[-1, 1]`, storage
/// its physical box.
fn path_bounds(cfg: &OcpConfig, c: usize) -> Bounds {
    if c < cfg.n_x_pred() {
        Bounds::new(-1.0, 1.0)
    } else {
        cfg.storage_bounds
    }
}

/// Right-hand side of a path row, given the response-free part `g0` of `g`.
fn path_rhs(cfg: &OcpConfig, mode: ConstraintMode, c: usize, sign: f64, g0: f64) -> f64 {
    let b = path_bounds(cfg, c);
    match mode {
        ConstraintMode::SlackPenalty => b.half_range() - cfg.delta + sign * b.mid() - sign * g0,
        ConstraintMode::Hard => {
            let limit = if sign > 0.0 { b.upper } else { -b.lower };
            limit - sign * g0
        }
    }
}

/// A built OCP together with what is needed to read its solution.
#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub qp: QpProblem<f64>,
    pub mode: ConstraintMode,
    pub formulation: Formulation,
    pub horizon: usize,
    pub n_u: usize,
    /// Constant added to the QP objective to obtain the full OCP cost.
    pub objective_offset: f64,
}

impl OcpProblem {
    /// Scaled input sequence contained in a primal vector.
    pub fn inputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.horizon)
            .map(|t| x[t * self.n_u..(t + 1) * self.n_u].to_vec())
            .collect()
    }

    pub fn first_input(&self, x: &[f64]) -> Vec<f64> {
        x[..self.n_u].to_vec()
    }

    /// Full OCP cost (economic plus penalty) of a primal vector.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.qp.objective(x) + self.objective_offset
    }

    /// Primal guess for the next control step: inputs shifted by one step
    /// with the last one repeated, auxiliary variables reset to zero.
    pub fn shifted_guess(&self, x: &[f64]) -> Vec<f64> {
        let mut guess = vec![0.0; self.qp.n_vars()];
        let n_u = self.n_u;
        for t in 0..self.horizon {
            let src = (t + 1).min(self.horizon - 1);
            guess[t * n_u..(t + 1) * n_u].copy_from_slice(&x[src * n_u..(src + 1) * n_u]);
        }
        guess
    }
}

fn check_inputs(model: &KoopmanModel<f64>, input: &OcpInput, cfg: &OcpConfig) -> Result<()> {
    cfg.validate()?;
    if (model.dt_model - cfg.dt_minutes).abs() > 1e-9 * cfg.dt_minutes {
        return Err(Error::InvalidArgument(format!(
            "model time step {} min does not match the control step {} min",
            model.dt_model, cfg.dt_minutes
        )));
    }
    check_dim("number of inputs", cfg.n_u(), model.dims.n_u)?;
    check_dim("number of predicted states", cfg.n_x_pred(), model.dims.n_x_pred)?;
    check_dim("number of outputs", 2, model.dims.n_y)?;
    check_dim("price forecast length", cfg.horizon, input.prices.len())?;
    check_dim("observation length", model.dims.n_x_obs, input.x_obs.len())?;
    if !input.prices.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("price forecast"));
    }
    if !(input.storage.is_finite() && input.x_obs.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("ocp initial state"));
    }
    Ok(())
}

/// Constant part of the condensed QP: cost Hessian, input box, epigraph
/// columns and right-hand sides that do not depend on the model.
fn condensed_base(lay: &CondensedLayout, cfg: &OcpConfig, storage: f64) -> (QpProblem<f64>, f64) {
    let n = lay.n_vars();
    let m = lay.n_rows();
    let nu_total = lay.horizon * lay.n_u;
    let mut p = Matrix::zeros(n, n);
    let mut g = Matrix::zeros(m, n);
    let mut h = vec![0.0; m];
    for k in 0..nu_total {
        g[(k, k)] = 1.0;
        h[k] = 1.0;
        g[(nu_total + k, k)] = -1.0;
        h[nu_total + k] = 1.0;
    }
    let slack = lay.mode == ConstraintMode::SlackPenalty;
    if slack {
        for t in 1..=lay.horizon {
            for c in 0..lay.n_g {
                let v = lay.epi(t, c);
                p[(v, v)] = 2.0 * cfg.penalty;
                let row = 2 * nu_total + (t - 1) * lay.n_g + c;
                g[(row, v)] = -1.0;
            }
        }
    }
    let dt = cfg.dt_hours();
    let drift = dt * (cfg.output_ranges[1].mid() - cfg.demand_rate);
    for t in 1..=lay.horizon {
        for c in 0..lay.n_g {
            let g0 = if c < lay.n_g - 1 { 0.0 } else { storage + drift * t as f64 };
            for sign in SIGNS {
                let row = lay.path_row(t, c, sign);
                h[row] = path_rhs(cfg, lay.mode, c, sign, g0);
                if slack {
                    g[(row, lay.epi(t, c))] = -1.0;
                }
            }
        }
    }
    let mut layout = vec![VarBlock {
        name: "u".into(),
        start: 0,
        len: nu_total,
    }];
    if slack {
        layout.push(VarBlock {
            name: "t".into(),
            start: nu_total,
            len: lay.horizon * lay.n_g,
        });
    }
    let mut qp = QpProblem::new(p, vec![0.0; n], Matrix::zeros(0, n), Vec::new(), g, h);
    qp.layout = layout;
    (qp, 0.0)
}

fn economic_constant(cfg: &OcpConfig, prices: &[f64]) -> f64 {
    let w = cfg.dt_hours() * cfg.output_ranges[0].mid();
    prices.iter().map(|p| p * w).sum()
}

/// Condensed QP from precomputed responses.
pub fn assemble_condensed(
    resp: &Responses,
    input: &OcpInput,
    cfg: &OcpConfig,
    mode: ConstraintMode,
) -> OcpProblem {
    let lay = CondensedLayout {
        horizon: cfg.horizon,
        n_u: cfg.n_u(),
        n_g: cfg.n_g(),
        mode,
    };
    let (mut qp, _) = condensed_base(&lay, cfg, input.storage);
    let mut offset = economic_constant(cfg, &input.prices);
    emit_condensed(
        &lay,
        cfg,
        &input.prices,
        &mut ValueSink {
            resp,
            qp: &mut qp,
            offset: &mut offset,
        },
    );
    OcpProblem {
        qp,
        mode,
        formulation: Formulation::Condensed,
        horizon: cfg.horizon,
        n_u: lay.n_u,
        objective_offset: offset,
    }
}

/// Adjoint of [`assemble_condensed`] with respect to the responses.
pub(crate) fn assemble_condensed_adjoint<F: Fn(usize, usize) -> f64>(
    resp: &Responses,
    prices: &[f64],
    cfg: &OcpConfig,
    mode: ConstraintMode,
    dq: &[f64],
    dg: F,
    dh: &[f64],
) -> Responses {
    let lay = CondensedLayout {
        horizon: cfg.horizon,
        n_u: cfg.n_u(),
        n_g: cfg.n_g(),
        mode,
    };
    let mut sink = AdjointSink {
        dq,
        dg,
        dh,
        out: Responses::zeros_like(resp),
    };
    emit_condensed(&lay, cfg, prices, &mut sink);
    sink.out
}

/// Builds the OCP for the current measurement in the configured formulation.
pub fn build_ocp(
    model: &KoopmanModel<f64>,
    input: &OcpInput,
    cfg: &OcpConfig,
    mode: ConstraintMode,
) -> Result<OcpProblem> {
    check_inputs(model, input, cfg)?;
    let z0 = model.encode(&input.x_obs)?;
    match cfg.formulation {
        Formulation::Condensed => {
            let resp = Responses::from_model(model, &z0, cfg.horizon)?;
            Ok(assemble_condensed(&resp, input, cfg, mode))
        }
        Formulation::FullSpace => Ok(build_full_space(model, &z0, input, cfg, mode)),
    }
}

/// OCP with inputs, latents, slacks, epigraph variables and storage as
/// decision variables, coupled by equality constraints.
fn build_full_space(
    model: &KoopmanModel<f64>,
    z0: &[f64],
    input: &OcpInput,
    cfg: &OcpConfig,
    mode: ConstraintMode,
) -> OcpProblem {
    let nh = cfg.horizon;
    let n_u = cfg.n_u();
    let n_z = model.dims.n_z;
    let n_g = cfg.n_g();
    let n_xp = cfg.n_x_pred();
    let slack = mode == ConstraintMode::SlackPenalty;
    let dt = cfg.dt_hours();
    let e_half = cfg.output_ranges[0].half_range();
    let p_half = cfg.output_ranges[1].half_range();
    let drift = dt * (cfg.output_ranges[1].mid() - cfg.demand_rate);

    let iu = |t: usize, i: usize| t * n_u + i;
    let z_start = nh * n_u;
    let iz = |t: usize, r: usize| z_start + (t - 1) * n_z + r;
    let s_start = z_start + nh * n_z;
    let n_aux = if slack { nh * n_g } else { 0 };
    let is = |t: usize, c: usize| s_start + (t - 1) * n_g + c;
    let t_start = s_start + n_aux;
    let it = |t: usize, c: usize| t_start + (t - 1) * n_g + c;
    let ns_start = t_start + n_aux;
    let ins = |t: usize| ns_start + t - 1;
    let n = ns_start + nh;

    let mut p = Matrix::zeros(n, n);
    let mut q = vec![0.0; n];
    let mut offset = economic_constant(cfg, &input.prices);
    let dz0 = model.d.matvec_unchecked(z0);
    for tau in 0..nh {
        let w = input.prices[tau] * dt * e_half;
        if tau == 0 {
            offset += w * dz0[0];
        } else {
            for r in 0..n_z {
                q[iz(tau, r)] += w * model.d[(0, r)];
            }
        }
        for i in 0..n_u {
            q[iu(tau, i)] += w * model.e[(0, i)];
        }
    }
    if slack {
        for t in 1..=nh {
            for c in 0..n_g {
                p[(it(t, c), it(t, c))] = 2.0 * cfg.penalty;
            }
        }
    }

    let n_eq = nh * n_z + nh + if slack { nh * n_g } else { 0 };
    let mut a = Matrix::zeros(n_eq, n);
    let mut b = vec![0.0; n_eq];
    let mut row = 0;
    let az0 = model.a.matvec_unchecked(z0);
    for t in 0..nh {
        for r in 0..n_z {
            a[(row, iz(t + 1, r))] = 1.0;
            if t == 0 {
                b[row] = az0[r];
            } else {
                for k in 0..n_z {
                    a[(row, iz(t, k))] -= model.a[(r, k)];
                }
            }
            for i in 0..n_u {
                a[(row, iu(t, i))] -= model.b[(r, i)];
            }
            row += 1;
        }
    }
    for t in 0..nh {
        a[(row, ins(t + 1))] = 1.0;
        b[row] = drift;
        if t == 0 {
            b[row] += input.storage + dt * p_half * dz0[1];
        } else {
            a[(row, ins(t))] = -1.0;
            for k in 0..n_z {
                a[(row, iz(t, k))] -= dt * p_half * model.d[(1, k)];
            }
        }
        for i in 0..n_u {
            a[(row, iu(t, i))] -= dt * p_half * model.e[(1, i)];
        }
        row += 1;
    }
    if slack {
        for t in 1..=nh {
            for c in 0..n_g {
                a[(row, is(t, c))] = 1.0;
                if c < n_xp {
                    for k in 0..n_z {
                        a[(row, iz(t, k))] = model.c[(c, k)];
                    }
                } else {
                    a[(row, ins(t))] = 1.0;
                }
                b[row] = path_bounds(cfg, c).mid();
                row += 1;
            }
        }
    }

    let m = 2 * nh * n_u + if slack { 3 * nh * n_g } else { 2 * nh * n_g };
    let mut g = Matrix::zeros(m, n);
    let mut h = vec![0.0; m];
    let mut row = 0;
    for sign in [1.0, -1.0] {
        for k in 0..nh * n_u {
            g[(row, k)] = sign;
            h[row] = 1.0;
            row += 1;
        }
    }
    for t in 1..=nh {
        for c in 0..n_g {
            let bnd = path_bounds(cfg, c);
            if slack {
                g[(row, it(t, c))] = -1.0;
                row += 1;
                for sign in SIGNS {
                    g[(row, is(t, c))] = sign;
                    g[(row, it(t, c))] = -1.0;
                    h[row] = bnd.half_range() - cfg.delta;
                    row += 1;
                }
            } else {
                for sign in SIGNS {
                    if c < n_xp {
                        for k in 0..n_z {
                            g[(row, iz(t, k))] = sign * model.c[(c, k)];
                        }
                    } else {
                        g[(row, ins(t))] = sign;
                    }
                    h[row] = if sign > 0.0 { bnd.upper } else { -bnd.lower };
                    row += 1;
                }
            }
        }
    }

    let mut qp = QpProblem::new(p, q, a, b, g, h);
    let mut layout = vec![
        VarBlock {
            name: "u".into(),
            start: 0,
            len: nh * n_u,
        },
        VarBlock {
            name: "z".into(),
            start: z_start,
            len: nh * n_z,
        },
    ];
    if slack {
        layout.push(VarBlock {
            name: "s".into(),
            start: s_start,
            len: n_aux,
        });
        layout.push(VarBlock {
            name: "t".into(),
            start: t_start,
            len: n_aux,
        });
    }
    layout.push(VarBlock {
        name: "n_s".into(),
        start: ns_start,
        len: nh,
    });
    qp.layout = layout;
    OcpProblem {
        qp,
        mode,
        formulation: Formulation::FullSpace,
        horizon: nh,
        n_u,
        objective_offset: offset,
    }
}

/// Taped counterparts of [`Responses`], in the order
/// `fx, fy, cm, dm` (each of length N) and `e`.
#[derive(Clone, Debug)]
pub struct ResponseVars {
    pub fx: Vec<Var>,
    pub fy: Vec<Var>,
    pub cm: Vec<Var>,
    pub dm: Vec<Var>,
    pub e: Var,
}

impl ResponseVars {
    pub fn record(tape: &mut Tape, vars: &ModelVars, z0: Var, horizon: usize) -> Result<Self> {
        let mut fx = Vec::with_capacity(horizon);
        let mut fy = Vec::with_capacity(horizon);
        let mut z = z0;
        for _ in 0..horizon {
            fy.push(tape.matmul(vars.d, z)?);
            z = tape.matmul(vars.a, z)?;
            fx.push(tape.matmul(vars.c, z)?);
        }
        let mut cm = Vec::new();
        let mut dm = Vec::new();
        let mut akb = vars.b;
        for k in 0..horizon {
            if k > 0 {
                akb = tape.matmul(vars.a, akb)?;
            }
            cm.push(tape.matmul(vars.c, akb)?);
            dm.push(tape.matmul(vars.d, akb)?);
        }
        Ok(Self {
            fx,
            fy,
            cm,
            dm,
            e: vars.e,
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = self.fx.clone();
        v.extend(&self.fy);
        v.extend(&self.cm);
        v.extend(&self.dm);
        v.push(self.e);
        v
    }

    pub fn values(&self, tape: &Tape) -> Responses {
        let col = |v: &Var| tape.value(*v).as_slice().to_vec();
        Responses {
            fx: self.fx.iter().map(col).collect(),
            fy: self.fy.iter().map(col).collect(),
            cm: self.cm.iter().map(|v| tape.value(*v).clone()).collect(),
            dm: self.dm.iter().map(|v| tape.value(*v).clone()).collect(),
            e: tape.value(self.e).clone(),
        }
    }
}

impl Responses {
    /// Adjoints in the order of [`ResponseVars::all`].
    pub fn into_mats(self) -> Vec<Matrix<f64>> {
        let mut out: Vec<Matrix<f64>> = self.fx.iter().map(|v| Matrix::column(v)).collect();
        out.extend(self.fy.iter().map(|v| Matrix::column(v)));
        out.extend(self.cm);
        out.extend(self.dm);
        out.push(self.e);
        out
    }
}
