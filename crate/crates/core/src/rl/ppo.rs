use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::buffer::{normalize, RolloutBuffer, Transition};
use super::config::PpoConfig;
use super::critic::Critic;
use super::policy::{gaussian_entropy, gaussian_log_prob, Actor};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossStats {
    /// Mean clipped surrogate loss over differentiable samples.
    pub policy_loss: f64,
    /// `value_coef ·` mean squared value error.
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of `log π_old − log π_new`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub policy_samples: usize,
}

impl LossStats {
    pub fn total(&self, entropy_coef: f64) -> f64 {
        self.policy_loss + self.value_loss - entropy_coef * self.entropy
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub stats: LossStats,
}

struct PolicyTerm {
    loss: f64,
    grad: Vec<f64>,
    log_ratio: f64,
    clipped: bool,
}

/// `−min(ρA, clip(ρ, 1 ± ε) A)` and its derivative with respect to the mean.
fn surrogate(t: &Transition, mean: &[f64], adv: f64, std: &[f64], eps: f64) -> (f64, Vec<f64>, f64, bool) {
    let log_ratio = gaussian_log_prob(&t.action, mean, std) - t.log_prob;
    let ratio = log_ratio.exp();
    let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
    let unclipped = ratio * adv;
    let clipped = clipped_ratio * adv;
    let active = unclipped <= clipped;
    let loss = -unclipped.min(clipped);
    let dmean = if active {
        t.action
            .iter()
            .zip(mean)
            .zip(std)
            .map(|((a, m), s)| -adv * ratio * (a - m) / (s * s))
            .collect()
    } else {
        vec![0.0; mean.len()]
    };
    (loss, dmean, log_ratio, !active)
}

/// Gradients of the PPO loss on one minibatch. `advantages` are used as
/// given. Samples whose policy mean cannot be recomputed only contribute to
/// the value loss.
pub fn ppo_gradients<A: Actor + ?Sized>(
    actor: &A,
    critic: &Critic,
    batch: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<Gradients> {
    let std = &cfg.action_std;
    let eps = cfg.clip_epsilon;
    let per_sample: Vec<Result<(Option<PolicyTerm>, f64, Vec<f64>)>> = batch
        .par_iter()
        .zip(advantages.par_iter().zip(returns.par_iter()))
        .map(|(t, (&adv, &ret))| {
            let policy = if t.differentiable {
                let dloss = |mean: &[f64]| surrogate(t, mean, adv, std, eps).1;
                actor.mean_and_grad(&t.obs, &dloss)?.map(|(mean, grad)| {
                    let (loss, _, log_ratio, clipped) = surrogate(t, &mean, adv, std, eps);
                    PolicyTerm {
                        loss,
                        grad,
                        log_ratio,
                        clipped,
                    }
                })
            } else {
                None
            };
            let (v, g) = critic.value_and_grad(&t.obs)?;
            let err = v - ret;
            let scale = 2.0 * cfg.value_coef * err;
            Ok((policy, cfg.value_coef * err * err, g.into_iter().map(|x| x * scale).collect()))
        })
        .collect();

    let mut actor_grad = vec![0.0; actor.n_params()];
    let mut critic_grad = vec![0.0; critic.n_params()];
    let mut stats = LossStats {
        entropy: gaussian_entropy(std),
        ..Default::default()
    };
    let (mut n_clipped, mut kl) = (0usize, 0.0);
    for r in per_sample {
        let (policy, vloss, cg) = r?;
        stats.value_loss += vloss;
        critic_grad.iter_mut().zip(&cg).for_each(|(a, b)| *a += b);
        if let Some(p) = policy {
            stats.policy_loss += p.loss;
            stats.policy_samples += 1;
            kl -= p.log_ratio;
            n_clipped += usize::from(p.clipped);
            actor_grad.iter_mut().zip(&p.grad).for_each(|(a, b)| *a += b);
        }
    }
    let n = batch.len().max(1) as f64;
    stats.value_loss /= n;
    critic_grad.iter_mut().for_each(|g| *g /= n);
    if stats.policy_samples > 0 {
        let np = stats.policy_samples as f64;
        stats.policy_loss /= np;
        stats.approx_kl = kl / np;
        stats.clip_fraction = n_clipped as f64 / np;
        actor_grad.iter_mut().for_each(|g| *g /= np);
    }
    Ok(Gradients {
        actor: actor_grad,
        critic: critic_grad,
        stats,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Averages over all minibatches of the update; gradient norms are taken
    /// before clipping.
    pub loss: LossStats,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub minibatches: usize,
    /// A non-finite loss or gradient was met; parameters and optimizer
    /// states were restored to their values before the update.
    pub aborted: bool,
    /// Steps excluded from the policy term in the final epoch.
    pub skipped_policy_samples: usize,
}

/// `K` epochs of shuffled minibatch steps on the clipped surrogate plus the
/// value loss. The joint actor and critic gradient is clipped to
/// `max_grad_norm`.
pub fn ppo_update<A: Actor + ?Sized, R: Rng + ?Sized>(
    actor: &mut A,
    critic: &mut Critic,
    opt_actor: &mut Adam,
    opt_critic: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let transitions: Vec<&Transition> = buffer.transitions().collect();
    if transitions.is_empty() {
        return Err(Error::InvalidArgument("empty rollout buffer".into()));
    }
    let (adv, ret) = buffer.advantages(cfg.gamma, cfg.gae_lambda)?;
    let saved = (actor.params(), critic.params(), opt_actor.clone(), opt_critic.clone());
    let mut theta = saved.0.clone();
    let mut phi = saved.1.clone();
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mb = cfg.minibatch_size.min(transitions.len());
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let last_epoch = epoch + 1 == cfg.epochs;
        for chunk in order.chunks(mb) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| transitions[i]).collect();
            let mut a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            if cfg.normalize_advantages {
                normalize(&mut a);
            }
            let r: Vec<f64> = chunk.iter().map(|&i| ret[i]).collect();
            let mut g = ppo_gradients(&*actor, critic, &batch, &a, &r, cfg)?;
            let finite = g.stats.total(cfg.entropy_coef).is_finite()
                && g.actor.iter().chain(&g.critic).all(|v| v.is_finite());
            if !finite {
                actor.set_params(&saved.0)?;
                critic.set_params(&saved.1)?;
                *opt_actor = saved.2;
                *opt_critic = saved.3;
                stats.aborted = true;
                return Ok(stats);
            }
            stats.actor_grad_norm += norm(&g.actor);
            stats.critic_grad_norm += norm(&g.critic);
            let mut joint: Vec<f64> = g.actor.iter().chain(&g.critic).copied().collect();
            clip_grad_norm(&mut joint, cfg.max_grad_norm);
            let (ga, gc) = joint.split_at(g.actor.len());
            g.actor.copy_from_slice(ga);
            g.critic.copy_from_slice(gc);
            if g.stats.policy_samples > 0 {
                opt_actor.step(&mut theta, &g.actor)?;
                actor.set_params(&theta)?;
            }
            opt_critic.step(&mut phi, &g.critic)?;
            critic.set_params(&phi)?;
            if last_epoch {
                stats.skipped_policy_samples += batch.len() - g.stats.policy_samples;
            }
            let l = &mut stats.loss;
            l.policy_loss += g.stats.policy_loss;
            l.value_loss += g.stats.value_loss;
            l.entropy = g.stats.entropy;
            l.approx_kl += g.stats.approx_kl;
            l.clip_fraction += g.stats.clip_fraction;
            l.policy_samples += g.stats.policy_samples;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    let l = &mut stats.loss;
    l.policy_loss /= k;
    l.value_loss /= k;
    l.approx_kl /= k;
    l.clip_fraction /= k;
    stats.actor_grad_norm /= k;
    stats.critic_grad_norm /= k;
    Ok(stats)
}
