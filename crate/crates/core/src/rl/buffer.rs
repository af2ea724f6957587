use crate::envsim::Observation;
use crate::error::{check_dim, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Pre-clip action.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    /// `false` if the policy mean could not be computed at this step.
    pub differentiable: bool,
}

/// One collection round: a contiguous segment per actor plus the value of
/// the observation after each segment (zero if the segment ended an
/// episode).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub segments: Vec<Vec<Transition>>,
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.segments.iter().flatten()
    }

    /// Advantages and returns for all transitions in segment order,
    /// recomputed from the stored rewards and values.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("bootstrap values", self.segments.len(), self.bootstrap.len())?;
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for (seg, &boot) in self.segments.iter().zip(&self.bootstrap) {
            let rewards: Vec<f64> = seg.iter().map(|t| t.reward).collect();
            let mut values: Vec<f64> = seg.iter().map(|t| t.value).collect();
            values.push(boot);
            let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
            let (a, r) = gae(&rewards, &values, &dones, gamma, lambda)?;
            adv.extend(a);
            ret.extend(r);
        }
        Ok((adv, ret))
    }
}

/// Generalized advantage estimation. `values` has one more entry than
/// `rewards`: the bootstrap value after the last step. `dones[t]` cuts the
/// recursion after step `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    check_dim("gae values (rewards + 1)", n + 1, values.len())?;
    check_dim("gae dones", n, dones.len())?;
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales to zero mean and unit (population) variance.
pub fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    if v.len() < 2 {
        return;
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        let sd = var.sqrt();
        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    } else {
        v.iter_mut().for_each(|x| *x -= mean);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_and_myopic_limits() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2, 0.7];
        let d = [false; 3];
        let (a, ret) = gae(&r, &v, &d, 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert!((a[t] - (r[t] + 0.9 * v[t + 1] - v[t])).abs() < 1e-15);
            assert!((ret[t] - a[t] - v[t]).abs() < 1e-15);
        }
        let (a, _) = gae(&r, &v, &d, 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert!((a[t] - (r[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn three_step_example_matches_direct_sum() {
        let (g, l) = (0.98, 0.95);
        let r = [1.0, 0.0, 1.0];
        let v = [0.5, 0.5, 0.5, 0.0];
        let (a, _) = gae(&r, &v, &[false; 3], g, l).unwrap();
        let delta: Vec<f64> = (0..3).map(|t| r[t] + g * v[t + 1] - v[t]).collect();
        for t in 0..3 {
            let oracle: f64 = (t..3).map(|k| (g * l).powi((k - t) as i32) * delta[k]).sum();
            assert!((a[t] - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn done_cuts_bootstrapping() {
        let (a, _) = gae(&[1.0, 1.0], &[0.0, 5.0, 7.0], &[true, false], 0.9, 0.9).unwrap();
        assert_eq!(a[0], 1.0);
        assert!(gae(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalization_gives_zero_mean_unit_variance() {
        let mut v = vec![1.0, 4.0, -2.0, 0.5, 3.0];
        normalize(&mut v);
        let m = v.iter().sum::<f64>() / 5.0;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-15 && (var - 1.0).abs() < 1e-14);
    }
}
