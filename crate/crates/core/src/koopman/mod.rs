//! Koopman surrogate model: a nonlinear encoder into a latent space with
//! linear, input-affine dynamics and two linear decoders.
//!
//! ```text
//!   z_0     = ψ(x_0)
//!   z_{t+1} = A z_t + B u_t
//!   x̂_t     = C z_t
//!   y_t     = D z_t + E u_t      (direct feedthrough of u_t)
//! ```

mod io;
mod mlp;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, MODEL_FILE_VERSION};
pub use mlp::{mlp_value_and_grad, Dense, Mlp};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Sizes of every block of a [`KoopmanModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KoopmanDims {
    pub n_x_obs: usize,
    pub n_z: usize,
    pub n_u: usize,
    pub n_x_pred: usize,
    pub n_y: usize,
    /// Hidden layer widths of the encoder. Empty means a single affine layer.
    pub hidden: Vec<usize>,
}

impl Default for KoopmanDims {
    fn default() -> Self {
        Self {
            n_x_obs: 4,
            n_z: 10,
            n_u: 4,
            n_x_pred: 3,
            n_y: 2,
            hidden: vec![50, 50],
        }
    }
}

impl KoopmanDims {
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_x_obs];
        s.extend_from_slice(&self.hidden);
        s.push(self.n_z);
        s
    }

    pub fn n_encoder_params(&self) -> usize {
        self.encoder_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_encoder_params()
            + self.n_z * self.n_z
            + self.n_z * self.n_u
            + self.n_x_pred * self.n_z
            + self.n_y * self.n_z
            + self.n_y * self.n_u
    }

    /// Offsets of the matrix blocks inside a [`ParamVector`].
    pub fn layout(&self) -> ParamLayout {
        let enc = self.n_encoder_params();
        let a = enc;
        let b = a + self.n_z * self.n_z;
        let c = b + self.n_z * self.n_u;
        let d = c + self.n_x_pred * self.n_z;
        let e = d + self.n_y * self.n_z;
        ParamLayout {
            encoder: 0..enc,
            a: a..b,
            b: b..c,
            c: c..d,
            d: d..e,
            e: e..e + self.n_y * self.n_u,
        }
    }
}

/// Index ranges of each parameter block in the flat ordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub encoder: std::ops::Range<usize>,
    pub a: std::ops::Range<usize>,
    pub b: std::ops::Range<usize>,
    pub c: std::ops::Range<usize>,
    pub d: std::ops::Range<usize>,
    pub e: std::ops::Range<usize>,
}

/// All learnable entries of a model: encoder layers (weights row-major, then
/// biases, in layer order), followed by `A, B, C, D, E` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct ParamVector<T>(pub Vec<T>);

impl<T> ParamVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct KoopmanModel<T> {
    pub dims: KoopmanDims,
    /// Minutes advanced by one application of `(A, B)`.
    pub dt_model: f64,
    pub encoder: Mlp<T>,
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub c: Matrix<T>,
    pub d: Matrix<T>,
    pub e: Matrix<T>,
}

/// Output of [`KoopmanModel::rollout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T> {
    /// `N + 1` latent states.
    pub latents: Vec<Vec<T>>,
    /// `N + 1` decoded states.
    pub states: Vec<Vec<T>>,
    /// `N` outputs.
    pub outputs: Vec<Vec<T>>,
}

impl<T: Scalar> KoopmanModel<T> {
    pub fn zeros(dims: KoopmanDims, dt_model: f64) -> Self {
        let sizes = dims.encoder_sizes();
        Self {
            encoder: Mlp::zeros(&sizes),
            a: Matrix::zeros(dims.n_z, dims.n_z),
            b: Matrix::zeros(dims.n_z, dims.n_u),
            c: Matrix::zeros(dims.n_x_pred, dims.n_z),
            d: Matrix::zeros(dims.n_y, dims.n_z),
            e: Matrix::zeros(dims.n_y, dims.n_u),
            dims,
            dt_model,
        }
    }

    /// Encoder uniform in `±1/sqrt(fan_in)`, `A = I`, remaining matrices uniform in `±0.01`.
    pub fn init<R: Rng + ?Sized>(dims: KoopmanDims, dt_model: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(dims, dt_model);
        m.encoder = Mlp::init_uniform(&m.dims.encoder_sizes(), rng);
        m.a = Matrix::identity(m.dims.n_z);
        for mat in [&mut m.b, &mut m.c, &mut m.d, &mut m.e] {
            for v in mat.as_mut_slice() {
                *v = T::lit(rng.random_range(-0.01..=0.01));
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if self.encoder.sizes() != d.encoder_sizes() {
            return Err(Error::InvalidArgument(format!(
                "encoder sizes {:?} do not match dims {:?}",
                self.encoder.sizes(),
                d.encoder_sizes()
            )));
        }
        let shapes = [
            ("A", self.a.shape(), (d.n_z, d.n_z)),
            ("B", self.b.shape(), (d.n_z, d.n_u)),
            ("C", self.c.shape(), (d.n_x_pred, d.n_z)),
            ("D", self.d.shape(), (d.n_y, d.n_z)),
            ("E", self.e.shape(), (d.n_y, d.n_u)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::InvalidArgument(format!(
                    "matrix {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if !(self.dt_model > 0.0 && self.dt_model.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt_model must be positive, got {}",
                self.dt_model
            )));
        }
        let finite = self.encoder.is_finite()
            && [&self.a, &self.b, &self.c, &self.d, &self.e]
                .iter()
                .all(|m| m.is_finite());
        if !finite {
            return Err(Error::NonFinite("koopman model parameters"));
        }
        Ok(())
    }

    pub fn encode(&self, x_obs: &[T]) -> Result<Vec<T>> {
        check_dim("encode x_obs", self.dims.n_x_obs, x_obs.len())?;
        if x_obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encode x_obs"));
        }
        Ok(self.encoder.forward_unchecked(x_obs))
    }

    pub fn step_latent(&self, z: &[T], u: &[T]) -> Result<Vec<T>> {
        check_dim("step_latent z", self.dims.n_z, z.len())?;
        check_dim("step_latent u", self.dims.n_u, u.len())?;
        let mut next = self.a.matvec_unchecked(z);
        for (n, bu) in next.iter_mut().zip(self.b.matvec_unchecked(u)) {
            *n += bu;
        }
        Ok(next)
    }

    pub fn decode_state(&self, z: &[T]) -> Result<Vec<T>> {
        check_dim("decode_state z", self.dims.n_z, z.len())?;
        Ok(self.c.matvec_unchecked(z))
    }

    pub fn decode_output(&self, z: &[T], u: &[T]) -> Result<Vec<T>> {
        check_dim("decode_output z", self.dims.n_z, z.len())?;
        check_dim("decode_output u", self.dims.n_u, u.len())?;
        let mut y = self.d.matvec_unchecked(z);
        for (yi, eu) in y.iter_mut().zip(self.e.matvec_unchecked(u)) {
            *yi += eu;
        }
        Ok(y)
    }

    pub fn rollout(&self, x_obs_0: &[T], inputs: &[Vec<T>]) -> Result<Rollout<T>> {
        let mut z = self.encode(x_obs_0)?;
        let mut out = Rollout {
            latents: Vec::with_capacity(inputs.len() + 1),
            states: Vec::with_capacity(inputs.len() + 1),
            outputs: Vec::with_capacity(inputs.len()),
        };
        out.states.push(self.decode_state(&z)?);
        for u in inputs {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("rollout inputs"));
            }
            out.outputs.push(self.decode_output(&z, u)?);
            let next = self.step_latent(&z, u)?;
            out.latents.push(std::mem::replace(&mut z, next));
            out.states.push(self.decode_state(&z)?);
        }
        out.latents.push(z);
        Ok(out)
    }

    /// Model whose single step equals `k` chained steps of `self` under a
    /// constant input:
    ///
    /// ```text
    ///   A' = A^k
    ///   B' = (Σ_{i<k} A^i) B
    ///   D' = D A^k
    ///   E' = D (Σ_{i<k} A^i) B + E
    /// ```
    ///
    /// The output channel of the result therefore refers to the end of the
    /// `k`-step interval.
    pub fn upscale(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("upscale factor must be >= 1".into()));
        }
        let n = self.dims.n_z;
        let mut power = Matrix::identity(n);
        let mut geom = Matrix::<T>::zeros(n, n);
        for _ in 0..k {
            geom.add_assign(&power);
            power = self.a.matmul_unchecked(&power);
        }
        let b = geom.matmul_unchecked(&self.b);
        let e = self.d.matmul_unchecked(&b).add(&self.e)?;
        Ok(Self {
            dims: self.dims.clone(),
            dt_model: self.dt_model * k as f64,
            encoder: self.encoder.clone(),
            d: self.d.matmul_unchecked(&power),
            a: power,
            b,
            c: self.c.clone(),
            e,
        })
    }

    pub fn flatten(&self) -> ParamVector<T> {
        let mut v = Vec::with_capacity(self.dims.n_params());
        self.encoder.write_params(&mut v);
        for m in [&self.a, &self.b, &self.c, &self.d, &self.e] {
            v.extend_from_slice(m.as_slice());
        }
        ParamVector(v)
    }

    pub fn unflatten(params: &ParamVector<T>, dims: &KoopmanDims, dt_model: f64) -> Result<Self> {
        check_dim("unflatten parameter count", dims.n_params(), params.len())?;
        let mut m = Self::zeros(dims.clone(), dt_model);
        m.set_params(params.as_slice())?;
        Ok(m)
    }

    /// Overwrites all parameters in place from a flat slice.
    pub fn set_params(&mut self, src: &[T]) -> Result<()> {
        check_dim("set_params parameter count", self.dims.n_params(), src.len())?;
        let mut off = self.encoder.read_params(src);
        for m in [&mut self.a, &mut self.b, &mut self.c, &mut self.d, &mut self.e] {
            let n = m.rows() * m.cols();
            m.as_mut_slice().copy_from_slice(&src[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> KoopmanModel<U> {
        let encoder = Mlp {
            layers: self
                .encoder
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|&b| U::lit(b.to_f64_lossy())).collect(),
                })
                .collect(),
        };
        KoopmanModel {
            dims: self.dims.clone(),
            dt_model: self.dt_model,
            encoder,
            a: self.a.cast(),
            b: self.b.cast(),
            c: self.c.cast(),
            d: self.d.cast(),
            e: self.e.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> KoopmanDims {
        KoopmanDims {
            n_x_obs: 2,
            n_z: 3,
            n_u: 2,
            n_x_pred: 2,
            n_y: 2,
            hidden: vec![4],
        }
    }

    fn random_model(seed: u64) -> KoopmanModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = KoopmanModel::init(small_dims(), 5.0, &mut rng);
        for mat in [&mut m.a, &mut m.b, &mut m.c, &mut m.d, &mut m.e] {
            for v in mat.as_mut_slice() {
                *v = rng.random_range(-0.6..0.6);
            }
        }
        m
    }

    fn naive_matvec(m: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[i] += m[(i, j)] * x[j];
            }
        }
        out
    }

    #[test]
    fn zero_network_encodes_to_zero() {
        let m = KoopmanModel::<f64>::zeros(KoopmanDims::default(), 5.0);
        assert_eq!(m.encode(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn identity_affine_encoder() {
        let dims = KoopmanDims {
            n_x_obs: 3,
            n_z: 3,
            n_u: 1,
            n_x_pred: 3,
            n_y: 1,
            hidden: vec![],
        };
        let mut m = KoopmanModel::<f64>::zeros(dims, 5.0);
        m.encoder.layers[0].weight = Matrix::identity(3);
        assert_eq!(m.encode(&[0.1, -0.4, 2.0]).unwrap(), vec![0.1, -0.4, 2.0]);
    }

    #[test]
    fn encode_matches_handwritten_forward_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = KoopmanDims {
            hidden: vec![5, 3],
            ..KoopmanDims::default()
        };
        let m: KoopmanModel<f64> = KoopmanModel::init(dims, 5.0, &mut rng);
        let x = [0.1, 0.2, 0.3, 0.4];
        let mut h: Vec<f64> = x.to_vec();
        for (li, layer) in m.encoder.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out()];
            for i in 0..layer.n_out() {
                let mut s = layer.bias[i];
                for j in 0..layer.n_in() {
                    s += layer.weight[(i, j)] * h[j];
                }
                next[i] = if li + 1 < m.encoder.layers.len() { s.tanh() } else { s };
            }
            h = next;
        }
        let z = m.encode(&x).unwrap();
        for (a, b) in z.iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_rejects_bad_input() {
        let m = random_model(1);
        assert!(matches!(m.encode(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(m.encode(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn step_latent_cases() {
        let mut m = random_model(2);
        m.a = Matrix::identity(3);
        m.b = Matrix::zeros(3, 2);
        assert_eq!(m.step_latent(&[1.0, 2.0, 3.0], &[5.0, 6.0]).unwrap(), vec![1.0, 2.0, 3.0]);

        let m = random_model(3);
        let (z, u) = ([0.3, -0.1, 0.8], [0.5, -0.7]);
        let az = naive_matvec(&m.a, &z);
        let bu = naive_matvec(&m.b, &u);
        let next = m.step_latent(&z, &u).unwrap();
        for i in 0..3 {
            assert!((next[i] - (az[i] + bu[i])).abs() < 1e-15);
        }
        assert!(m.step_latent(&z, &[1.0]).is_err());
    }

    #[test]
    fn square_input_config_passes_input_through() {
        let dims = KoopmanDims {
            n_x_obs: 2,
            n_z: 2,
            n_u: 2,
            n_x_pred: 2,
            n_y: 2,
            hidden: vec![],
        };
        let mut m = KoopmanModel::<f64>::zeros(dims, 5.0);
        m.b = Matrix::identity(2);
        assert_eq!(m.step_latent(&[4.0, 4.0], &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn decoders() {
        let mut m = random_model(4);
        let z = [0.2, 0.4, -0.6];
        m.c = Matrix::from_vec(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.decode_state(&z).unwrap(), vec![0.4, -0.6]);
        m.c = Matrix::zeros(2, 3);
        assert_eq!(m.decode_state(&z).unwrap(), vec![0.0, 0.0]);

        let m = random_model(5);
        let u = [0.9, -0.3];
        let y = m.decode_output(&z, &u).unwrap();
        let dz = naive_matvec(&m.d, &z);
        let eu = naive_matvec(&m.e, &u);
        for i in 0..2 {
            assert!((y[i] - dz[i] - eu[i]).abs() < 1e-15);
        }

        let mut m = random_model(6);
        m.d = Matrix::zeros(2, 3);
        m.e = Matrix::identity(2);
        assert_eq!(m.decode_output(&z, &u).unwrap(), u.to_vec());
        m.e = Matrix::zeros(2, 2);
        m.d = random_model(7).d;
        assert_eq!(m.decode_output(&z, &u).unwrap(), naive_matvec(&m.d, &z));
    }

    #[test]
    fn rollout_matches_manual_steps() {
        let m = random_model(8);
        let x0 = [0.3, -0.2];
        let us: Vec<Vec<f64>> = (0..5).map(|t| vec![0.1 * t as f64, -0.2]).collect();
        let r = m.rollout(&x0, &us).unwrap();
        assert_eq!(r.latents.len(), 6);
        assert_eq!(r.states.len(), 6);
        assert_eq!(r.outputs.len(), 5);
        let mut z = m.encode(&x0).unwrap();
        for (t, u) in us.iter().enumerate() {
            assert_eq!(r.latents[t], z);
            assert_eq!(r.outputs[t], m.decode_output(&z, u).unwrap());
            assert_eq!(r.states[t], m.decode_state(&z).unwrap());
            z = m.step_latent(&z, u).unwrap();
        }
        assert_eq!(r.latents[5], z);

        let empty = m.rollout(&x0, &[]).unwrap();
        assert_eq!(empty.latents.len(), 1);
        assert!(empty.outputs.is_empty());
    }

    #[test]
    fn rollout_zero_model_is_zero() {
        let m = KoopmanModel::<f64>::zeros(small_dims(), 5.0);
        let r = m.rollout(&[1.0, 1.0], &vec![vec![1.0, 2.0]; 3]).unwrap();
        assert!(r.latents.iter().flatten().all(|&v| v == 0.0));
        assert!(r.outputs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rollout_identity_dynamics_is_constant() {
        let mut m = random_model(9);
        m.a = Matrix::identity(3);
        m.b = Matrix::zeros(3, 2);
        let r = m.rollout(&[0.5, 0.1], &vec![vec![1.0, -1.0]; 4]).unwrap();
        assert!(r.latents.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn upscale_by_one_keeps_dynamics_and_shifts_output_to_step_end() {
        let m = random_model(10);
        let u = m.upscale(1).unwrap();
        assert_eq!(u.a, m.a);
        assert_eq!(u.b, m.b);
        assert_eq!(u.c, m.c);
        assert_eq!(u.encoder, m.encoder);
        assert_eq!(u.dt_model, m.dt_model);
        // y' = D z_{t+1} + E u_t
        assert_eq!(u.d, m.d.matmul(&m.a).unwrap());
        assert_eq!(u.e, m.d.matmul(&m.b).unwrap().add(&m.e).unwrap());
        assert!(m.upscale(0).is_err());
    }

    #[test]
    fn nested_upscale_composes() {
        let m = random_model(16);
        let (a, b) = (2, 3);
        let nested = m.upscale(a).unwrap().upscale(b).unwrap();
        let direct = m.upscale(a * b).unwrap();
        let close = |x: &Matrix<f64>, y: &Matrix<f64>| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .all(|(p, q)| (p - q).abs() <= 1e-10 * q.abs().max(1.0))
        };
        assert!(close(&nested.a, &direct.a));
        assert!(close(&nested.b, &direct.b));
        assert_eq!(nested.dt_model, direct.dt_model);
        // The output decoder of the nested model reads the end of one extra
        // inner interval: it matches a direct upscale by a*b + a.
        let shifted = m.upscale(a * b + a).unwrap();
        assert!(close(&nested.d, &shifted.d));
        assert!(close(&nested.e, &shifted.e));
    }

    #[test]
    fn upscale_with_identity_dynamics_is_geometric() {
        let mut m = random_model(11);
        m.a = Matrix::identity(3);
        let k = 4;
        let up = m.upscale(k).unwrap();
        let kb = m.b.scale(k as f64);
        for (a, b) in up.b.as_slice().iter().zip(kb.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        let e = m.d.matmul(&kb).unwrap().add(&m.e).unwrap();
        for (a, b) in up.e.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(up.dt_model, 20.0);
    }

    #[test]
    fn upscale_three_matches_written_out_formulas() {
        let m = random_model(12);
        let up = m.upscale(3).unwrap();
        let a2 = m.a.matmul(&m.a).unwrap();
        let a3 = a2.matmul(&m.a).unwrap();
        let b = a2
            .matmul(&m.b)
            .unwrap()
            .add(&m.a.matmul(&m.b).unwrap())
            .unwrap()
            .add(&m.b)
            .unwrap();
        let d = m.d.matmul(&a3).unwrap();
        let e = m
            .d
            .matmul(&a2)
            .unwrap()
            .matmul(&m.b)
            .unwrap()
            .add(&m.d.matmul(&m.a).unwrap().matmul(&m.b).unwrap())
            .unwrap()
            .add(&m.d.matmul(&m.b).unwrap())
            .unwrap()
            .add(&m.e)
            .unwrap();
        for (x, y) in [(&up.a, &a3), (&up.b, &b), (&up.d, &d), (&up.e, &e)] {
            for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
                assert!((p - q).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn flatten_round_trip_and_ordering() {
        let m = random_model(13);
        let p = m.flatten();
        assert_eq!(p.len(), m.dims.n_params());
        let back = KoopmanModel::unflatten(&p, &m.dims, m.dt_model).unwrap();
        assert_eq!(back, m);
        let layout = m.dims.layout();
        assert_eq!(&p.0[layout.a.clone()], m.a.as_slice());
        assert_eq!(&p.0[layout.e.clone()], m.e.as_slice());
        assert_eq!(p.0[0], m.encoder.layers[0].weight[(0, 0)]);

        let short = ParamVector(p.0[1..].to_vec());
        assert!(KoopmanModel::unflatten(&short, &m.dims, 5.0).is_err());
    }

    #[test]
    fn perturbing_one_entry_changes_one_parameter() {
        let m = random_model(14);
        let base = m.flatten();
        for i in 0..base.len() {
            let mut p = base.clone();
            p.0[i] += 1.0;
            let changed = KoopmanModel::unflatten(&p, &m.dims, 5.0).unwrap().flatten();
            let diffs: Vec<usize> = (0..base.len()).filter(|&j| changed.0[j] != base.0[j]).collect();
            assert_eq!(diffs, vec![i]);
            let mm = KoopmanModel::unflatten(&p, &m.dims, 5.0).unwrap();
            let n_changed = [&mm.a, &mm.b, &mm.c, &mm.d, &mm.e]
                .iter()
                .zip([&m.a, &m.b, &m.c, &m.d, &m.e])
                .map(|(x, y)| {
                    x.as_slice().iter().zip(y.as_slice()).filter(|(p, q)| p != q).count()
                })
                .sum::<usize>()
                + {
                    let (mut a, mut b) = (Vec::new(), Vec::new());
                    mm.encoder.write_params(&mut a);
                    m.encoder.write_params(&mut b);
                    a.iter().zip(&b).filter(|(p, q)| p != q).count()
                };
            assert_eq!(n_changed, 1);
        }
    }

    #[test]
    fn single_precision_model_evaluates() {
        let m32: KoopmanModel<f32> = random_model(15).cast();
        let z = m32.encode(&[0.1, 0.2]).unwrap();
        let z64 = random_model(15).encode(&[0.1, 0.2]).unwrap();
        for (a, b) in z.iter().zip(&z64) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
        assert!(m32.upscale(3).unwrap().validate().is_ok());
    }
}
