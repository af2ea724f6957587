use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SIDataset;
use crate::error::{Error, Result};
use crate::gradtape::{ModelVars, Tape};
use crate::koopman::{KoopmanDims, KoopmanModel};
use crate::linalg::{Cholesky, Matrix};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Prediction horizon of the loss in sampling periods.
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Trailing share of every trajectory held out for validation.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub shuffle: bool,
    /// Fit `A, B, C, D, E` by ridge regression on the current encoder
    /// before gradient descent.
    pub least_squares_init: bool,
    pub ridge: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 256,
            validation_fraction: 0.2,
            patience: 10,
            shuffle: true,
            least_squares_init: true,
            ridge: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("fit config: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.ridge >= 0.0) {
            return bad("learning_rate must be positive and ridge non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Parameters with the lowest validation loss seen.
    pub model: KoopmanModel<f64>,
    pub validation_loss: f64,
    /// Validation loss after the warm start and after every epoch.
    pub validation_history: Vec<f64>,
    pub train_history: Vec<f64>,
    /// 0 for the warm start.
    pub best_epoch: usize,
}

type Window = (usize, usize);

/// Splits window starts into training and validation sets. The validation
/// part of a trajectory is its trailing `fraction` of windows.
fn split_windows(ds: &SIDataset, h: usize, fraction: f64) -> (Vec<Window>, Vec<Window>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, tr) in ds.trajectories.iter().enumerate() {
        if tr.len() < h {
            continue;
        }
        let n = tr.len() - h + 1;
        let cut = n - ((n as f64 * fraction).floor() as usize).min(n - 1);
        train.extend((0..cut).map(|t| (i, t)));
        val.extend((cut..n).map(|t| (i, t)));
    }
    if val.is_empty() {
        val = train.clone();
    }
    (train, val)
}

/// Gathers one vector per window into the columns of a matrix.
fn gather(windows: &[Window], n: usize, pick: impl Fn(usize, usize) -> Vec<f64>) -> Matrix<f64> {
    let mut m = Matrix::zeros(n, windows.len());
    for (j, &(i, t)) in windows.iter().enumerate() {
        let v = pick(i, t);
        for r in 0..n {
            m[(r, j)] = v[r];
        }
    }
    m
}

/// Mean over windows of `Σ_{k=1..H} ‖x̂_{t+k} − x_{t+k}‖² + ‖ŷ_{t+k−1} − y_{t+k−1}‖²`
/// and, if requested, its gradient in [`KoopmanModel::flatten`] order.
pub fn multi_step_loss(
    model: &KoopmanModel<f64>,
    ds: &SIDataset,
    windows: &[Window],
    h: usize,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to evaluate".into()));
    }
    let d = &model.dims;
    let tr = &ds.trajectories;
    let mut tape = Tape::new();
    let vars = ModelVars::record(&mut tape, model);
    let x0 = gather(windows, d.n_x_obs, |i, t| tr[i].x_obs[t].clone());
    let x0 = tape.constant(x0);
    let mut z = vars.encode(&mut tape, x0)?;
    let mut total = None;
    for k in 0..h {
        let u = tape.constant(gather(windows, d.n_u, |i, t| tr[i].u[t + k].clone()));
        let y = tape.constant(gather(windows, d.n_y, |i, t| tr[i].y[t + k].clone()));
        let x = tape.constant(gather(windows, d.n_x_pred, |i, t| {
            tr[i].x_obs[t + k + 1][..d.n_x_pred].to_vec()
        }));
        let y_hat = vars.decode_output(&mut tape, z, u)?;
        let dy = tape.sub(y_hat, y)?;
        let ly = tape.dot(dy, dy)?;
        z = vars.step_latent(&mut tape, z, u)?;
        let x_hat = vars.decode_state(&mut tape, z)?;
        let dx = tape.sub(x_hat, x)?;
        let lx = tape.dot(dx, dx)?;
        let step = tape.add(ly, lx)?;
        total = Some(match total {
            None => step,
            Some(acc) => tape.add(acc, step)?,
        });
    }
    let total = total.expect("horizon is positive");
    let loss = tape.scale(total, 1.0 / windows.len() as f64);
    let value = tape.scalar(loss);
    let grad = if with_grad {
        Some(tape.backward_params(&[(loss, Matrix::column(&[1.0]))], vars.n_params)?)
    } else {
        None
    };
    Ok((value, grad))
}

fn chunked_loss(model: &KoopmanModel<f64>, ds: &SIDataset, windows: &[Window], h: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in windows.chunks(2048) {
        sum += multi_step_loss(model, ds, chunk, h, false)?.0 * chunk.len() as f64;
    }
    Ok(sum / windows.len() as f64)
}

/// Ridge regression `T ≈ M F` over paired feature/target columns.
fn ridge_fit(features: &[Vec<f64>], targets: &[Vec<f64>], ridge: f64) -> Result<Matrix<f64>> {
    let nf = features[0].len();
    let nt = targets[0].len();
    let mut g = Matrix::<f64>::zeros(nf, nf);
    let mut r = Matrix::<f64>::zeros(nf, nt);
    for (f, t) in features.iter().zip(targets) {
        for a in 0..nf {
            for b in 0..nf {
                g[(a, b)] += f[a] * f[b];
            }
            for b in 0..nt {
                r[(a, b)] += f[a] * t[b];
            }
        }
    }
    let scale = (0..nf).map(|i| g[(i, i)]).fold(1.0, f64::max);
    for i in 0..nf {
        g[(i, i)] += ridge * scale;
    }
    let chol = Cholesky::factor(&g)
        .ok_or_else(|| Error::Solver("least-squares normal equations are not positive definite".into()))?;
    let mut m = Matrix::zeros(nt, nf);
    for b in 0..nt {
        let col = chol.solve(&r.col_vec(b));
        for a in 0..nf {
            m[(b, a)] = col[a];
        }
    }
    Ok(m)
}

/// Sets `A, B, C, D, E` to their one-step least-squares values given the
/// current encoder, using the first `limit(i)` periods of trajectory `i`.
pub fn least_squares_linear_maps(
    model: &mut KoopmanModel<f64>,
    ds: &SIDataset,
    ridge: f64,
    limit: impl Fn(usize) -> usize,
) -> Result<()> {
    let d = model.dims.clone();
    let (mut zu, mut z_next, mut z_only, mut x_t, mut y_t) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, tr) in ds.trajectories.iter().enumerate() {
        let n = limit(i).min(tr.len());
        let mut z = model.encode(&tr.x_obs[0])?;
        for t in 0..n {
            let zn = model.encode(&tr.x_obs[t + 1])?;
            let mut f = z.clone();
            f.extend_from_slice(&tr.u[t]);
            zu.push(f);
            z_next.push(zn.clone());
            y_t.push(tr.y[t].clone());
            z_only.push(zn.clone());
            x_t.push(tr.x_obs[t + 1][..d.n_x_pred].to_vec());
            z = zn;
        }
    }
    if zu.is_empty() {
        return Err(Error::InvalidArgument("no data for the least-squares warm start".into()));
    }
    let ab = ridge_fit(&zu, &z_next, ridge)?;
    let de = ridge_fit(&zu, &y_t, ridge)?;
    let c = ridge_fit(&z_only, &x_t, ridge)?;
    let split = |m: &Matrix<f64>, rows: usize| {
        (
            Matrix::from_fn(rows, d.n_z, |r, k| m[(r, k)]),
            Matrix::from_fn(rows, d.n_u, |r, k| m[(r, d.n_z + k)]),
        )
    };
    let (a, b) = split(&ab, d.n_z);
    let (dd, e) = split(&de, d.n_y);
    let candidate = KoopmanModel {
        a,
        b,
        c,
        d: dd,
        e,
        ..model.clone()
    };
    if candidate.validate().is_ok() {
        *model = candidate;
    }
    Ok(())
}

/// Fits a freshly initialized model. The encoder's output bias starts at
/// zero so that the latent origin corresponds to the scaled origin.
pub fn fit_koopman(ds: &SIDataset, dims: &KoopmanDims, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    let dt = ds
        .dt_minutes()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = KoopmanModel::init(dims.clone(), dt, &mut rng);
    if let Some(last) = model.encoder.layers.last_mut() {
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    fit_koopman_from(ds, model, cfg, seed)
}

/// Continues fitting from `init`.
pub fn fit_koopman_from(ds: &SIDataset, init: KoopmanModel<f64>, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    let d = &init.dims;
    for tr in &ds.trajectories {
        if tr.x_obs[0].len() != d.n_x_obs || tr.u[0].len() != d.n_u || tr.y[0].len() != d.n_y {
            return Err(Error::InvalidArgument("dataset layout does not match the model dimensions".into()));
        }
    }
    let h = cfg.horizon;
    let (train, val) = split_windows(ds, h, cfg.validation_fraction);
    if train.is_empty() {
        return Err(Error::InvalidArgument(format!("no trajectory spans the loss horizon of {h} periods")));
    }
    let mut model = init;
    if cfg.least_squares_init {
        let mut limits = vec![0; ds.trajectories.len()];
        for &(i, t) in &train {
            limits[i] = limits[i].max(t + h);
        }
        least_squares_linear_maps(&mut model, ds, cfg.ridge, |i| limits[i])?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f17);
    let mut params = model.flatten().0;
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let first = chunked_loss(&model, ds, &val, h)?;
    if !first.is_finite() {
        return Err(Error::Diverged("initial validation loss is not finite".into()));
    }
    let mut best = (first, params.clone(), 0);
    let mut validation_history = vec![first];
    let mut train_history = Vec::new();
    let mut order = train;
    let mut since = 0;
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.set_params(&params)?;
            let (loss, grad) = multi_step_loss(&model, ds, batch, h, true)?;
            let grad = grad.expect("gradient requested");
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b} (last validation loss {:.3e})",
                    validation_history.last().copied().unwrap_or(f64::NAN)
                )));
            }
            sum += loss * batch.len() as f64;
            opt.step(&mut params, &grad)?;
        }
        train_history.push(sum / order.len() as f64);
        model.set_params(&params)?;
        let v = chunked_loss(&model, ds, &val, h)?;
        validation_history.push(v);
        if v < best.0 {
            best = (v, params.clone(), epoch);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    model.set_params(&best.1)?;
    Ok(FitResult {
        model,
        validation_loss: best.0,
        validation_history,
        train_history,
        best_epoch: best.2,
    })
}

/// Open-loop prediction error of a model over windows of `h` periods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionError {
    /// Largest absolute deviation of any predicted state or output.
    pub max_abs: f64,
    pub rmse: f64,
}

pub fn prediction_error(model: &KoopmanModel<f64>, ds: &SIDataset, h: usize) -> Result<PredictionError> {
    let n_x = model.dims.n_x_pred;
    let (mut max_abs, mut sq, mut n) = (0.0f64, 0.0, 0usize);
    for (i, t) in ds.windows(h) {
        let tr = &ds.trajectories[i];
        let ro = model.rollout(&tr.x_obs[t], &tr.u[t..t + h])?;
        for k in 0..h {
            let pairs = ro.states[k + 1]
                .iter()
                .zip(&tr.x_obs[t + k + 1][..n_x])
                .chain(ro.outputs[k].iter().zip(&tr.y[t + k]));
            for (p, o) in pairs {
                let e = p - o;
                max_abs = max_abs.max(e.abs());
                sq += e * e;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(format!("no window of {h} periods in the dataset")));
    }
    Ok(PredictionError {
        max_abs,
        rmse: (sq / n as f64).sqrt(),
    })
}
