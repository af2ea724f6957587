//! Reverse-mode differentiation over a small set of matrix primitives.
//!
//! A [`Tape`] records every value produced during one forward evaluation
//! together with the primitive that produced it. Nodes are appended in
//! evaluation order, so the node index is a topological order and the
//! backward sweep is a single reverse pass. Learnable leaves carry an offset
//! into a flat parameter vector; [`Adjoints::param_gradient`] scatters their
//! adjoints there.
//!
//! Vectors are `n×1` matrices. Batched evaluation stores samples as columns.

use rand::Rng;

use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::linalg::Matrix;

type Mat = Matrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of an opaque node: maps the output adjoint to one
/// adjoint per input.
pub type VjpFn = Box<dyn Fn(&Mat) -> Vec<Mat>>;

enum Op {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sum(Var),
    Dot(Var, Var),
    Transpose(Var),
    Rows(Var, usize),
    VStack(Vec<Var>),
    Opaque { inputs: Vec<Var>, vjp: VjpFn },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
pub struct Adjoints {
    adj: Vec<Option<Mat>>,
    visited: Vec<usize>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.adj[v.0].as_ref()
    }

    /// Node indices in the order the backward sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }

    /// Sums adjoints of every parameter leaf into a flat gradient of length `n_params`.
    pub fn param_gradient(&self, tape: &Tape, n_params: usize) -> Vec<f64> {
        let mut g = vec![0.0; n_params];
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param { offset }, Some(a)) = (&node.op, &self.adj[i]) {
                for (k, v) in a.as_slice().iter().enumerate() {
                    g[offset + k] += v;
                }
            }
        }
        g
    }
}

fn shape_err(context: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::InvalidArgument(format!("{context}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn column(&mut self, values: &[f64]) -> Var {
        self.constant(Matrix::column(values))
    }

    /// Learnable leaf whose row-major entries map to `offset..offset + len`.
    pub fn param(&mut self, value: Mat, offset: usize) -> Var {
        self.push(value, Op::Param { offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let v = va.matmul_unchecked(vb);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `a + b 1ᵀ` for a column vector `b`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.cols() != 1 || vb.rows() != va.rows() {
            return Err(shape_err("add_bias", va.shape(), vb.shape()));
        }
        let mut v = va.clone();
        for i in 0..v.rows() {
            let bi = vb.as_slice()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x += bi);
        }
        Ok(self.push(v, Op::AddBias(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push(Matrix::column(&[s]), Op::Sum(a))
    }

    /// Frobenius inner product of two equally shaped nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("dot", va.shape(), vb.shape()));
        }
        let s = crate::linalg::dot(va.as_slice(), vb.as_slice());
        Ok(self.push(Matrix::column(&[s]), Op::Dot(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::InvalidArgument(format!(
                "rows {start}..{} out of range for {} rows",
                start + len,
                va.rows()
            )));
        }
        let c = va.cols();
        let v = Matrix::from_vec(len, c, va.as_slice()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(v, Op::Rows(a, start)))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|p| self.value(*p).cols()).unwrap_or(1);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(shape_err("vstack", (rows, cols), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::VStack(parts.to_vec())))
    }

    /// Node with externally computed value and vector-Jacobian product.
    pub fn opaque(&mut self, inputs: &[Var], value: Mat, vjp: VjpFn) -> Var {
        self.push(
            value,
            Op::Opaque {
                inputs: inputs.to_vec(),
                vjp,
            },
        )
    }

    /// Applies a primitive by name. Unknown names are an error.
    pub fn apply(&mut self, name: &str, args: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if args.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "primitive `{name}` takes {n} arguments, got {}",
                    args.len()
                )));
            }
            Ok(())
        };
        match name {
            "matmul" => arity(2).and_then(|_| self.matmul(args[0], args[1])),
            "add" => arity(2).and_then(|_| self.add(args[0], args[1])),
            "sub" => arity(2).and_then(|_| self.sub(args[0], args[1])),
            "mul" => arity(2).and_then(|_| self.mul(args[0], args[1])),
            "add_bias" => arity(2).and_then(|_| self.add_bias(args[0], args[1])),
            "dot" => arity(2).and_then(|_| self.dot(args[0], args[1])),
            "tanh" => arity(1).map(|_| self.tanh(args[0])),
            "sum" => arity(1).map(|_| self.sum(args[0])),
            "transpose" => arity(1).map(|_| self.transpose(args[0])),
            "vstack" => self.vstack(args),
            other => Err(Error::UnsupportedPrimitive(other.to_string())),
        }
    }

    /// Reverse sweep from the given output seeds.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Result<Adjoints> {
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, s) in seeds {
            let value = self.value(*v);
            if value.shape() != s.shape() {
                return Err(Error::Dimension {
                    context: "backward seed",
                    expected: value.rows() * value.cols(),
                    actual: s.rows() * s.cols(),
                });
            }
            accumulate(&mut adj[v.0], s);
            last = last.max(v.0 + 1);
        }
        let mut visited = Vec::with_capacity(last);
        for i in (0..last).rev() {
            let Some(g) = adj[i].take() else { continue };
            visited.push(i);
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Adjoints { adj, visited })
    }

    /// Convenience wrapper returning only the flat parameter gradient.
    pub fn backward_params(&self, seeds: &[(Var, Mat)], n_params: usize) -> Result<Vec<f64>> {
        Ok(self.backward(seeds)?.param_gradient(self, n_params))
    }

    fn propagate(&self, i: usize, g: &Mat, adj: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(&mut adj[a.0], &g.matmul_unchecked(&vb.transpose()));
                accumulate(&mut adj[b.0], &va.transpose().matmul_unchecked(g));
            }
            Op::Add(a, b) => {
                accumulate(&mut adj[a.0], g);
                accumulate(&mut adj[b.0], g);
            }
            Op::Sub(a, b) => {
                accumulate(&mut adj[a.0], g);
                accumulate(&mut adj[b.0], &g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(&mut adj[a.0], &hadamard(g, vb));
                accumulate(&mut adj[b.0], &hadamard(g, va));
            }
            Op::AddBias(a, b) => {
                accumulate(&mut adj[a.0], g);
                let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                accumulate(&mut adj[b.0], &Matrix::column(&sums));
            }
            Op::Scale(a, s) => accumulate(&mut adj[a.0], &g.scale(*s)),
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g
                    .as_slice()
                    .iter()
                    .zip(y.as_slice())
                    .map(|(gi, yi)| gi * (1.0 - yi * yi))
                    .collect();
                accumulate(&mut adj[a.0], &Matrix::from_vec(y.rows(), y.cols(), d).unwrap());
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                let s = g.as_slice()[0];
                accumulate(&mut adj[a.0], &Matrix::from_fn(va.rows(), va.cols(), |_, _| s));
            }
            Op::Dot(a, b) => {
                let s = g.as_slice()[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(&mut adj[a.0], &vb.scale(s));
                accumulate(&mut adj[b.0], &va.scale(s));
            }
            Op::Transpose(a) => accumulate(&mut adj[a.0], &g.transpose()),
            Op::Rows(a, start) => {
                let va = self.value(*a);
                let mut full = Matrix::zeros(va.rows(), va.cols());
                let c = va.cols();
                full.as_mut_slice()[start * c..start * c + g.rows() * c].copy_from_slice(g.as_slice());
                accumulate(&mut adj[a.0], &full);
            }
            Op::VStack(parts) => {
                let c = g.cols();
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    let piece =
                        Matrix::from_vec(r, c, g.as_slice()[off * c..(off + r) * c].to_vec()).unwrap();
                    accumulate(&mut adj[p.0], &piece);
                    off += r;
                }
            }
            Op::Opaque { inputs, vjp } => {
                for (inp, gi) in inputs.iter().zip(vjp(g)) {
                    accumulate(&mut adj[inp.0], &gi);
                }
            }
        }
    }
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    let d = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), d).unwrap()
}

fn accumulate(slot: &mut Option<Mat>, g: &Mat) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

/// Taped leaves of every learnable block of a [`KoopmanModel`], with offsets
/// matching [`KoopmanModel::flatten`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    /// `(weight, bias)` per encoder layer; biases are column vectors.
    pub encoder: Vec<(Var, Var)>,
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub d: Var,
    pub e: Var,
    pub n_params: usize,
}

impl ModelVars {
    pub fn record(tape: &mut Tape, model: &KoopmanModel<f64>) -> Self {
        let mut off = 0;
        let mut encoder = Vec::with_capacity(model.encoder.layers.len());
        for layer in &model.encoder.layers {
            let w = tape.param(layer.weight.clone(), off);
            off += layer.weight.rows() * layer.weight.cols();
            let b = tape.param(Matrix::column(&layer.bias), off);
            off += layer.bias.len();
            encoder.push((w, b));
        }
        let mut leaf = |m: &Mat| {
            let v = tape.param(m.clone(), off);
            off += m.rows() * m.cols();
            v
        };
        let (a, b, c, d, e) = (
            leaf(&model.a),
            leaf(&model.b),
            leaf(&model.c),
            leaf(&model.d),
            leaf(&model.e),
        );
        Self {
            encoder,
            a,
            b,
            c,
            d,
            e,
            n_params: off,
        }
    }

    /// Encoder applied to the columns of `x`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.encoder.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.encoder.iter().enumerate() {
            let wx = tape.matmul(w, h)?;
            h = tape.add_bias(wx, b)?;
            if i < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn step_latent(&self, tape: &mut Tape, z: Var, u: Var) -> Result<Var> {
        let az = tape.matmul(self.a, z)?;
        let bu = tape.matmul(self.b, u)?;
        tape.add(az, bu)
    }

    pub fn decode_state(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        tape.matmul(self.c, z)
    }

    pub fn decode_output(&self, tape: &mut Tape, z: Var, u: Var) -> Result<Var> {
        let dz = tape.matmul(self.d, z)?;
        let eu = tape.matmul(self.e, u)?;
        tape.add(dz, eu)
    }

    /// Returns `(latents, states, outputs)` with the same lengths as
    /// [`KoopmanModel::rollout`].
    pub fn rollout(
        &self,
        tape: &mut Tape,
        x0: Var,
        inputs: &[Var],
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
        let mut z = self.encode(tape, x0)?;
        let mut latents = vec![z];
        let mut states = vec![self.decode_state(tape, z)?];
        let mut outputs = Vec::with_capacity(inputs.len());
        for &u in inputs {
            outputs.push(self.decode_output(tape, z, u)?);
            z = self.step_latent(tape, z, u)?;
            latents.push(z);
            states.push(self.decode_state(tape, z)?);
        }
        Ok((latents, states, outputs))
    }
}

/// A composition of model primitives that can be recorded on a tape.
pub trait Program {
    fn record(&self, tape: &mut Tape, vars: &ModelVars, x_obs: Var) -> Result<Vec<Var>>;
}

impl<F> Program for F
where
    F: Fn(&mut Tape, &ModelVars, Var) -> Result<Vec<Var>>,
{
    fn record(&self, tape: &mut Tape, vars: &ModelVars, x_obs: Var) -> Result<Vec<Var>> {
        self(tape, vars, x_obs)
    }
}

/// `z_0 = ψ(x_obs)`.
pub struct EncodeProgram;

impl Program for EncodeProgram {
    fn record(&self, tape: &mut Tape, vars: &ModelVars, x_obs: Var) -> Result<Vec<Var>> {
        Ok(vec![vars.encode(tape, x_obs)?])
    }
}

/// Latents, then states, then outputs of an open-loop rollout.
pub struct RolloutProgram {
    pub inputs: Vec<Vec<f64>>,
}

impl Program for RolloutProgram {
    fn record(&self, tape: &mut Tape, vars: &ModelVars, x_obs: Var) -> Result<Vec<Var>> {
        let us: Vec<Var> = self.inputs.iter().map(|u| tape.column(u)).collect();
        let (mut l, s, o) = vars.rollout(tape, x_obs, &us)?;
        l.extend(s);
        l.extend(o);
        Ok(l)
    }
}

/// A recorded forward evaluation.
pub struct Recording {
    pub tape: Tape,
    pub vars: ModelVars,
    pub outputs: Vec<Var>,
}

impl Recording {
    pub fn output_values(&self) -> Vec<Mat> {
        self.outputs.iter().map(|&v| self.tape.value(v).clone()).collect()
    }

    /// `dL/dθ` for `L = Σ_k ⟨seed_k, output_k⟩`.
    pub fn backward(&self, seeds: &[Mat]) -> Result<Vec<f64>> {
        if seeds.len() != self.outputs.len() {
            return Err(Error::Dimension {
                context: "backward seed count",
                expected: self.outputs.len(),
                actual: seeds.len(),
            });
        }
        let pairs: Vec<(Var, Mat)> = self.outputs.iter().copied().zip(seeds.iter().cloned()).collect();
        self.tape.backward_params(&pairs, self.vars.n_params)
    }
}

pub fn record_forward(
    model: &KoopmanModel<f64>,
    x_obs: &[f64],
    program: &dyn Program,
) -> Result<Recording> {
    crate::error::check_dim("record_forward x_obs", model.dims.n_x_obs, x_obs.len())?;
    let mut tape = Tape::new();
    let vars = ModelVars::record(&mut tape, model);
    let x = tape.column(x_obs);
    let outputs = program.record(&mut tape, &vars, x)?;
    Ok(Recording {
        tape,
        vars,
        outputs,
    })
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, analytic, finite difference)`
    pub entries: Vec<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Entries whose analytic and numeric magnitudes are both below this are compared absolutely.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR)
}

/// Compares the taped gradient of `L = Σ_k ⟨w_k, output_k⟩` (random fixed
/// `w_k`) with central differences of step `h` on `n_samples` random
/// parameter indices.
pub fn check_gradients<R: Rng + ?Sized>(
    program: &dyn Program,
    model: &KoopmanModel<f64>,
    x_obs: &[f64],
    h: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let rec = record_forward(model, x_obs, program)?;
    let weights: Vec<Mat> = rec
        .output_values()
        .iter()
        .map(|v| Matrix::from_fn(v.rows(), v.cols(), |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let grad = rec.backward(&weights)?;
    let loss = |m: &KoopmanModel<f64>| -> Result<f64> {
        let r = record_forward(m, x_obs, program)?;
        Ok(r.output_values()
            .iter()
            .zip(&weights)
            .map(|(v, w)| crate::linalg::dot(v.as_slice(), w.as_slice()))
            .sum())
    };
    let theta = model.flatten();
    let n = theta.len();
    let mut entries = Vec::with_capacity(n_samples.min(n));
    let mut max_rel: f64 = 0.0;
    let mut probe = model.clone();
    let indices: Vec<usize> = if n_samples >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, n_samples).into_vec()
    };
    for idx in indices {
        let mut p = theta.0.clone();
        p[idx] += h;
        probe.set_params(&p)?;
        let lp = loss(&probe)?;
        p[idx] -= 2.0 * h;
        probe.set_params(&p)?;
        let lm = loss(&probe)?;
        let fd = (lp - lm) / (2.0 * h);
        max_rel = max_rel.max(relative_error(grad[idx], fd));
        entries.push((idx, grad[idx], fd));
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        entries,
    })
}

/// Finite-difference check of an arbitrary taped function of matrix inputs.
/// Every input is a parameter leaf; the loss is `⟨w, f(inputs)⟩` with random `w`.
pub fn check_function<R, F>(inputs: &[Mat], f: F, h: f64, rng: &mut R) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let record = |vals: &[Mat]| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let mut off = 0;
        let vars: Vec<Var> = vals
            .iter()
            .map(|m| {
                let v = tape.param(m.clone(), off);
                off += m.rows() * m.cols();
                v
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out))
    };
    let n: usize = inputs.iter().map(|m| m.rows() * m.cols()).sum();
    let (tape, out) = record(inputs)?;
    let ov = tape.value(out);
    let w = Matrix::from_fn(ov.rows(), ov.cols(), |_, _| rng.random_range(-1.0..1.0));
    let grad = tape.backward_params(&[(out, w.clone())], n)?;
    let eval = |vals: &[Mat]| -> Result<f64> {
        let (t, o) = record(vals)?;
        Ok(crate::linalg::dot(t.value(o).as_slice(), w.as_slice()))
    };
    let mut entries = Vec::with_capacity(n);
    let mut max_rel: f64 = 0.0;
    let mut flat_idx = 0;
    for (k, m) in inputs.iter().enumerate() {
        for j in 0..m.rows() * m.cols() {
            let mut pert = inputs.to_vec();
            pert[k].as_mut_slice()[j] += h;
            let lp = eval(&pert)?;
            pert[k].as_mut_slice()[j] -= 2.0 * h;
            let lm = eval(&pert)?;
            let fd = (lp - lm) / (2.0 * h);
            max_rel = max_rel.max(relative_error(grad[flat_idx], fd));
            entries.push((flat_idx, grad[flat_idx], fd));
            flat_idx += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        entries,
    })
}
