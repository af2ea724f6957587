//! Sensitivities of a QP solution by implicit differentiation of the KKT
//! conditions, and the OCP as a differentiable node on a [`Tape`].
//!
//! For a loss `L(x*)` with `g = ∂L/∂x*` the adjoint system
//!
//! ```text
//!   [ P    GᵀΛ   Aᵀ ] [d_x]     [g]
//!   [ G    −S    0  ] [d_λ] = − [0]
//!   [ A    0     0  ] [d_ν]     [0]
//! ```
//!
//! is solved for `(d_x, Λ d_λ, d_ν)`, with inactive constraints eliminated
//! through `Λ d_λ = Λ S⁻¹ G d_x`. Then
//! `∂L/∂q = d_x`, `∂L/∂P = ½(d_x xᵀ + x d_xᵀ)`, `∂L/∂G = Λ d_λ xᵀ + λ d_xᵀ`,
//! `∂L/∂h = −Λ d_λ`, `∂L/∂A = d_ν xᵀ + ν d_xᵀ`, `∂L/∂b = −d_ν`.

use std::cell::Cell;
use std::rc::Rc;

use super::build::{assemble_condensed, assemble_condensed_adjoint, OcpInput, OcpProblem, ResponseVars};
use super::config::{ConstraintMode, Formulation, OcpConfig};
use super::qp::{reduced_hessian, row_patterns, solve_qp, QpProblem, QpSolution, QpStatus};
use crate::error::{check_dim, Error, Result};
use crate::gradtape::{ModelVars, Tape, Var};
use crate::koopman::KoopmanModel;
use crate::linalg::{Lu, Matrix};

/// Shift used when the KKT linearization is singular or degenerate.
pub const KKT_REGULARIZATION: f64 = 1e-8;

/// Gradient of a loss with respect to all QP data. The matrix blocks are
/// rank-two outer products and are kept in factored form.
#[derive(Clone, Debug)]
pub struct QpGradient {
    pub dq: Vec<f64>,
    pub dh: Vec<f64>,
    pub db: Vec<f64>,
    x: Vec<f64>,
    dx: Vec<f64>,
    lambda: Vec<f64>,
    lambda_dlambda: Vec<f64>,
    nu: Vec<f64>,
    dnu: Vec<f64>,
    /// The linearization was regularized because it was singular or the
    /// solution is degenerate.
    pub regularized: bool,
    pub degenerate: bool,
}

impl QpGradient {
    pub fn dg(&self, i: usize, j: usize) -> f64 {
        self.lambda_dlambda[i] * self.x[j] + self.lambda[i] * self.dx[j]
    }

    pub fn dp(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.dx[i] * self.x[j] + self.x[i] * self.dx[j])
    }

    pub fn da(&self, i: usize, j: usize) -> f64 {
        self.dnu[i] * self.x[j] + self.nu[i] * self.dx[j]
    }

    pub fn dg_dense(&self) -> Matrix<f64> {
        Matrix::from_fn(self.lambda.len(), self.x.len(), |i, j| self.dg(i, j))
    }

    pub fn dp_dense(&self) -> Matrix<f64> {
        Matrix::from_fn(self.x.len(), self.x.len(), |i, j| self.dp(i, j))
    }

    pub fn da_dense(&self) -> Matrix<f64> {
        Matrix::from_fn(self.nu.len(), self.x.len(), |i, j| self.da(i, j))
    }
}

/// Pulls `∂L/∂x*` back onto the problem data.
pub fn qp_gradient(prob: &QpProblem<f64>, sol: &QpSolution<f64>, dl_dx: &[f64]) -> Result<QpGradient> {
    if sol.status != QpStatus::Solved {
        return Err(Error::Solver(format!("cannot differentiate a {:?} solution", sol.status)));
    }
    let n = prob.n_vars();
    check_dim("loss gradient length", n, dl_dx.len())?;
    let n_eq = prob.n_eq();
    let m = prob.n_ineq();
    let patterns = row_patterns(&prob.g);
    // Constraints with λ > s stay in the system as rows with the small
    // diagonal −s/λ; the rest are folded into the Hessian with weight λ/s.
    // Eliminating an active row would put a weight of order 1/tol there.
    let active: Vec<usize> = (0..m).filter(|&i| sol.z[i] > sol.s[i]).collect();
    let w: Vec<f64> = (0..m)
        .map(|i| if sol.z[i] > sol.s[i] { 0.0 } else { sol.z[i] / sol.s[i] })
        .collect();
    let dim = n + active.len() + n_eq;
    let assemble = |shift: f64| {
        let hm = reduced_hessian(&prob.p, &prob.g, &patterns, &w, shift);
        let mut k = Matrix::zeros(dim, dim);
        for i in 0..n {
            k.row_mut(i)[..n].copy_from_slice(hm.row(i));
        }
        for (r, &i) in active.iter().enumerate() {
            for &j in &patterns[i] {
                k[(n + r, j)] = prob.g[(i, j)];
                k[(j, n + r)] = prob.g[(i, j)];
            }
            k[(n + r, n + r)] = -sol.s[i] / sol.z[i];
        }
        let off = n + active.len();
        for r in 0..n_eq {
            for j in 0..n {
                k[(off + r, j)] = prob.a_eq[(r, j)];
                k[(j, off + r)] = prob.a_eq[(r, j)];
            }
        }
        Lu::factor(&k)
    };
    let mut regularized = sol.degenerate;
    let mut factor = if regularized {
        None
    } else {
        assemble(prob.p.max_abs().max(1.0) * 1e-13)
    };
    if factor.is_none() {
        regularized = true;
        factor = assemble(KKT_REGULARIZATION);
    }
    let factor = factor.ok_or_else(|| Error::Solver("singular KKT linearization".into()))?;
    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -dl_dx[j];
    }
    let mut sol_vec = factor.solve(&rhs);
    let dnu = sol_vec.split_off(n + active.len());
    let dx = sol_vec[..n].to_vec();
    let mut lambda_dlambda: Vec<f64> = patterns
        .iter()
        .enumerate()
        .map(|(i, pat)| w[i] * pat.iter().map(|&j| prob.g[(i, j)] * dx[j]).sum::<f64>())
        .collect();
    for (r, &i) in active.iter().enumerate() {
        lambda_dlambda[i] = sol_vec[n + r];
    }
    Ok(QpGradient {
        dq: dx.clone(),
        dh: lambda_dlambda.iter().map(|v| -v).collect(),
        db: dnu.iter().map(|v| -v).collect(),
        x: sol.x.clone(),
        dx,
        lambda: sol.z.clone(),
        lambda_dlambda,
        nu: sol.y.clone(),
        dnu,
        regularized,
        degenerate: sol.degenerate,
    })
}

/// Gradient of a loss on the first control input with respect to all data
/// of the OCP's QP.
pub fn grad_ocp(ocp: &OcpProblem, sol: &QpSolution<f64>, dl_du0: &[f64]) -> Result<QpGradient> {
    check_dim("first input gradient length", ocp.n_u, dl_du0.len())?;
    let mut dl_dx = vec![0.0; ocp.qp.n_vars()];
    dl_dx[..ocp.n_u].copy_from_slice(dl_du0);
    qp_gradient(&ocp.qp, sol, &dl_dx)
}

/// Outcome of recording the OCP layer on a tape.
#[derive(Clone, Debug)]
pub struct OcpLayerInfo {
    pub u0: Vec<f64>,
    pub x: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub degenerate: bool,
    /// Set during the backward pass if the KKT system had to be regularized.
    pub regularized: Rc<Cell<bool>>,
}

/// Records `u₀*(z₀, A, B, C, D, E)` as an opaque node. The node's VJP solves
/// the KKT adjoint and pulls it back through the condensed assembly.
pub fn record_ocp_layer(
    tape: &mut Tape,
    vars: &ModelVars,
    z0: Var,
    input: &OcpInput,
    cfg: &OcpConfig,
    mode: ConstraintMode,
    warm_start: Option<&[f64]>,
) -> Result<(Var, OcpLayerInfo)> {
    if cfg.formulation != Formulation::Condensed {
        return Err(Error::InvalidArgument(
            "the differentiable OCP layer requires the condensed formulation".into(),
        ));
    }
    check_dim("price forecast length", cfg.horizon, input.prices.len())?;
    let rv = ResponseVars::record(tape, vars, z0, cfg.horizon)?;
    let resp = rv.values(tape);
    let ocp = assemble_condensed(&resp, input, cfg, mode);
    let sol = solve_qp(&ocp.qp, &cfg.solver, warm_start)?;
    let u0 = ocp.first_input(&sol.x);
    let regularized = Rc::new(Cell::new(false));
    let info = OcpLayerInfo {
        u0: u0.clone(),
        x: sol.x.clone(),
        status: sol.status,
        iterations: sol.iterations,
        degenerate: sol.degenerate,
        regularized: regularized.clone(),
    };
    let inputs = rv.all();
    let shapes: Vec<(usize, usize)> = inputs.iter().map(|v| tape.value(*v).shape()).collect();
    let prices = input.prices.clone();
    let cfg = cfg.clone();
    let vjp = Box::new(move |adj: &Matrix<f64>| -> Vec<Matrix<f64>> {
        match grad_ocp(&ocp, &sol, adj.as_slice()) {
            Ok(gr) => {
                regularized.set(regularized.get() || gr.regularized);
                assemble_condensed_adjoint(&resp, &prices, &cfg, mode, &gr.dq, |i, j| gr.dg(i, j), &gr.dh)
                    .into_mats()
            }
            Err(_) => shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    });
    let node = tape.opaque(&inputs, Matrix::column(&u0), vjp);
    Ok((node, info))
}

/// Differentiable evaluation of the eNMPC policy for one measurement.
pub struct PolicyEval {
    tape: Tape,
    u0_var: Var,
    n_params: usize,
    pub info: OcpLayerInfo,
}

impl PolicyEval {
    pub fn new(
        model: &KoopmanModel<f64>,
        input: &OcpInput,
        cfg: &OcpConfig,
        warm_start: Option<&[f64]>,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = ModelVars::record(&mut tape, model);
        let x = tape.column(&input.x_obs);
        let z0 = vars.encode(&mut tape, x)?;
        let (u0_var, info) =
            record_ocp_layer(&mut tape, &vars, z0, input, cfg, ConstraintMode::SlackPenalty, warm_start)?;
        Ok(Self {
            tape,
            u0_var,
            n_params: vars.n_params,
            info,
        })
    }

    pub fn u0(&self) -> &[f64] {
        &self.info.u0
    }

    pub fn is_solved(&self) -> bool {
        self.info.status == QpStatus::Solved
    }

    /// `∂L/∂θ` in [`KoopmanModel::flatten`] order for a loss with gradient
    /// `dl_du0` on the first input.
    pub fn gradient(&self, dl_du0: &[f64]) -> Result<Vec<f64>> {
        if !self.is_solved() {
            return Err(Error::Solver(format!("policy solve ended with {:?}", self.info.status)));
        }
        check_dim("first input gradient length", self.info.u0.len(), dl_du0.len())?;
        self.tape
            .backward_params(&[(self.u0_var, Matrix::column(dl_du0))], self.n_params)
    }
}
