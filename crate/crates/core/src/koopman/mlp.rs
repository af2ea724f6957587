use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(n_out, n_in),
            bias: vec![T::zero(); n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.n_out())
            .map(|i| dot(self.weight.row(i), x) + self.bias[i])
            .collect()
    }
}

/// Multi-layer perceptron with tanh on every hidden layer and a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists every layer width including input and output.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.n_in() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = T::lit(rng.random_range(-bound..=bound));
            }
            for b in &mut layer.bias {
                *b = T::lit(rng.random_range(-bound..=bound));
            }
        }
        mlp
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in()];
        s.extend(self.layers.iter().map(Dense::n_out));
        s
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim("Mlp::forward input", self.n_in(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> Vec<T> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }

    /// Appends weights (row-major) then biases, layer by layer.
    pub fn write_params(&self, out: &mut Vec<T>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Inverse of [`Mlp::write_params`]; returns the number of entries consumed.
    pub fn read_params(&mut self, src: &[T]) -> usize {
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weight.rows() * layer.weight.cols();
            layer.weight.as_mut_slice().copy_from_slice(&src[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&src[off..off + nb]);
            off += nb;
        }
        off
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Manual backward pass for a single sample, used where a tape would be overkill.
///
/// Returns `(output, grad)` where `grad` follows the [`Mlp::write_params`] order
/// and holds `d(seedᵀ output)/dθ`.
pub fn mlp_value_and_grad(mlp: &Mlp<f64>, x: &[f64], seed: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let last = mlp.layers.len() - 1;
    let mut acts = vec![x.to_vec()];
    for (i, layer) in mlp.layers.iter().enumerate() {
        let mut h = layer.apply(acts.last().unwrap());
        if i < last {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(h);
    }
    let output = acts.last().unwrap().clone();

    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(mlp.layers.len());
    let mut delta = seed.to_vec();
    for i in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[i];
        if i < last {
            for (d, a) in delta.iter_mut().zip(&acts[i + 1]) {
                *d *= 1.0 - a * a;
            }
        }
        let input = &acts[i];
        let mut g = Vec::with_capacity(layer.n_out() * (layer.n_in() + 1));
        for &d in &delta {
            g.extend(input.iter().map(|&v| d * v));
        }
        g.extend_from_slice(&delta);
        grads.push(g);
        delta = layer.weight.tr_matvec(&delta);
    }
    grads.reverse();
    (output, grads.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn manual_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp: Mlp<f64> = Mlp::init_uniform(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -0.2, 0.7];
        let seed = [1.0, -0.5];
        let (_, g) = mlp_value_and_grad(&mlp, &x, &seed);
        let mut flat = Vec::new();
        mlp.write_params(&mut flat);
        assert_eq!(flat.len(), g.len());
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut p = mlp.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.read_params(&v);
            let fp = dot(&p.forward(&x).unwrap(), &seed);
            v[i] -= 2.0 * h;
            p.read_params(&v);
            let fm = dot(&p.forward(&x).unwrap(), &seed);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", g[i]);
        }
    }
}
