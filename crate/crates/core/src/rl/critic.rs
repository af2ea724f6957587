use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::Observation;
use crate::error::{check_dim, Result};
use crate::koopman::{mlp_value_and_grad, Mlp};
use crate::ocp::Bounds;

/// State-value network over `x_obs ⊕ scaled storage ⊕ prices / price_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub mlp: Mlp<f64>,
    pub storage_bounds: Bounds,
    pub price_scale: f64,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: &[usize], storage_bounds: Bounds, rng: &mut R) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut mlp = Mlp::init_uniform(&sizes, rng);
        if let Some(last) = mlp.layers.last_mut() {
            last.weight.as_mut_slice().iter_mut().for_each(|w| *w *= 0.01);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        Self {
            mlp,
            storage_bounds,
            price_scale: 100.0,
        }
    }

    pub fn n_inputs(obs: &Observation) -> usize {
        obs.x_obs.len() + 1 + obs.forecast.len()
    }

    pub fn features(&self, obs: &Observation) -> Vec<f64> {
        let mut f = obs.x_obs.clone();
        f.push(self.storage_bounds.scale(obs.storage));
        f.extend(obs.forecast.iter().map(|p| p / self.price_scale));
        f
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self.mlp.forward(&self.features(obs))?[0])
    }

    /// `V(obs)` and `∂V/∂φ`.
    pub fn value_and_grad(&self, obs: &Observation) -> Result<(f64, Vec<f64>)> {
        let f = self.features(obs);
        check_dim("critic input", self.mlp.n_in(), f.len())?;
        let (v, g) = mlp_value_and_grad(&self.mlp, &f, &[1.0]);
        Ok((v[0], g))
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        self.mlp.write_params(&mut v);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("critic parameter count", self.n_params(), p.len())?;
        self.mlp.read_params(p);
        Ok(())
    }
}
