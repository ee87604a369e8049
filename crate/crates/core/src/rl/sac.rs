use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ddpg::{action_gradient, critic_spec, critic_step};
use super::{
    apply_mask, check_finite, odd_actor_mask, env_reset, env_step, observe, state_action_batch, state_batch, AlgoConfig,
    EnvConfig, ReplayBuffer, TrainLogRow, Transition,
};
use crate::error::{Error, Result};
use crate::nnet::{Activation, AdamState, Network, NetworkSpec, OutputGrad};
use crate::physics::PendulumState;
use crate::pilots::{ActorHead, NetPolicy, PolicyKind, WindowConfig};
use crate::rng::seeded;

pub(crate) const LOG_STD_MIN: f64 = -5.0;
pub(crate) const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Outputs `(mean, log_std)` of the pre-squash Gaussian.
pub(crate) fn gaussian_actor_spec(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(2, hidden, 2, Activation::Linear).with_hidden_activation(Activation::Tanh)
}

/// Rewards used in place of the stored ones, computed per batch.
pub(crate) type RewardFn<'a> = &'a dyn Fn(&[Transition]) -> Result<Vec<f64>>;

struct Sampled {
    action: Vec<f64>,
    log_prob: Vec<f64>,
    eps: Vec<f64>,
    sigma: Vec<f64>,
    /// log σ was clamped; its gradient is zero.
    clamped: Vec<bool>,
}

fn sample_actions(out: &Array2<f64>, rng: &mut ChaCha8Rng) -> Sampled {
    let n = out.nrows();
    let mut s = Sampled {
        action: Vec::with_capacity(n),
        log_prob: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        clamped: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mu = out[[i, 0]];
        let raw = out[[i, 1]];
        let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let sigma = log_std.exp();
        let e: f64 = rng.sample(StandardNormal);
        let a = (mu + sigma * e).tanh();
        let lp = -0.5 * e * e - log_std - HALF_LOG_2PI - (1.0 - a * a + SQUASH_EPS).ln();
        s.action.push(a);
        s.log_prob.push(lp);
        s.eps.push(e);
        s.sigma.push(sigma);
        s.clamped.push(raw != log_std);
    }
    s
}

/// Soft actor-critic with twin critics and a learned temperature.
#[derive(Debug, Clone)]
pub struct SacTrainer {
    env: EnvConfig,
    algo: AlgoConfig,
    actor: Network,
    critics: [Network; 2],
    targets: [Network; 2],
    actor_opt: AdamState,
    actor_mask: Vec<bool>,
    critic_opts: [AdamState; 2],
    log_alpha: f64,
    alpha_opt: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    state: PendulumState,
    episode_return: f64,
    steps: usize,
    critic_loss: f64,
    actor_loss: f64,
    log: Vec<TrainLogRow>,
}

impl SacTrainer {
    pub fn new(env: EnvConfig, algo: AlgoConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let actor = Network::init_with(gaussian_actor_spec(&algo.hidden), &mut rng)?;
        Self::build(env, algo, actor, rng)
    }

    /// Continues from an existing `(mean, log_std)` actor with fresh critics.
    pub fn from_actor(env: EnvConfig, algo: AlgoConfig, actor: Network, seed: u64) -> Result<Self> {
        let spec = &actor.spec;
        if spec.input_dim != 2 || spec.output_dim != 2 {
            return Err(Error::Dimension {
                context: "SAC actor".into(),
                expected: 2,
                got: if spec.input_dim != 2 { spec.input_dim } else { spec.output_dim },
            });
        }
        Self::build(env, algo, actor, seeded(seed))
    }

    fn build(env: EnvConfig, algo: AlgoConfig, actor: Network, mut rng: ChaCha8Rng) -> Result<Self> {
        env.validate()?;
        algo.validate()?;
        if algo.initial_alpha <= 0.0 {
            return Err(Error::Config("initial_alpha must be positive".into()));
        }
        let c1 = Network::init_with(critic_spec(&algo.hidden), &mut rng)?;
        let c2 = Network::init_with(critic_spec(&algo.hidden), &mut rng)?;
        let state = env_reset(&env, &mut rng);
        let np = c1.params.len();
        Ok(SacTrainer {
            actor_opt: AdamState::new(actor.params.len(), algo.lr),
            actor_mask: odd_actor_mask(&actor.params, &[1]),
            critic_opts: [AdamState::new(np, algo.lr), AdamState::new(np, algo.lr)],
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            log_alpha: algo.initial_alpha.ln(),
            alpha_opt: AdamState::new(1, algo.lr),
            buffer: ReplayBuffer::new(algo.buffer_capacity),
            actor,
            env,
            algo,
            rng,
            state,
            episode_return: 0.0,
            steps: 0,
            critic_loss: 0.0,
            actor_loss: 0.0,
            log: Vec::new(),
        })
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.interact()?;
        if self.ready() {
            self.update(None)?;
        }
        Ok(())
    }

    pub(crate) fn ready(&self) -> bool {
        self.steps >= self.algo.learning_starts && self.buffer.len() >= self.algo.batch
    }

    /// One environment step with a stochastic action; returns the stored
    /// transition.
    pub(crate) fn interact(&mut self) -> Result<Transition> {
        let obs = observe(&self.state);
        let action = if self.steps < self.algo.learning_starts {
            self.rng.gen_range(-1.0..=1.0)
        } else {
            let out = self.actor.predict_batch(&[state_batch(&[obs])])?;
            sample_actions(&out, &mut self.rng).action[0]
        };
        let out = env_step(self.state, action, &self.env)?;
        self.episode_return += out.reward;
        let t = Transition {
            state: obs,
            action,
            reward: out.reward * self.algo.reward_scale,
            next_state: observe(&out.next),
            done: out.done,
            terminal: out.crashed,
        };
        self.buffer.push(t);
        self.steps += 1;
        if out.done {
            self.log.push(TrainLogRow {
                step: self.steps,
                episode_return: self.episode_return,
                critic_loss: self.critic_loss,
                actor_loss: self.actor_loss,
            });
            self.episode_return = 0.0;
            self.state = env_reset(&self.env, &mut self.rng);
        } else {
            self.state = out.next;
        }
        Ok(t)
    }

    /// One gradient step on critics, actor and temperature. `rewards`
    /// replaces the stored rewards when given.
    pub(crate) fn update(&mut self, rewards: Option<RewardFn<'_>>) -> Result<()> {
        let batch = self.buffer.sample(self.algo.batch, &mut self.rng);
        let n = batch.len();
        let r: Vec<f64> = match rewards {
            Some(f) => f(&batch)?,
            None => batch.iter().map(|t| t.reward).collect(),
        };
        let alpha = self.log_alpha.exp();
        let s = state_batch(&batch.iter().map(|t| t.state).collect::<Vec<_>>());
        let s2 = state_batch(&batch.iter().map(|t| t.next_state).collect::<Vec<_>>());
        let a: Vec<f64> = batch.iter().map(|t| t.action).collect();

        let next = sample_actions(&self.actor.predict_batch(std::slice::from_ref(&s2))?, &mut self.rng);
        let sa2 = state_action_batch(&s2, &next.action);
        let q1t = self.targets[0].predict_batch(std::slice::from_ref(&sa2))?;
        let q2t = self.targets[1].predict_batch(&[sa2])?;
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let soft = q1t[[i, 0]].min(q2t[[i, 0]]) - alpha * next.log_prob[i];
                r[i] + if batch[i].terminal { 0.0 } else { self.algo.gamma * soft }
            })
            .collect();
        let sa = state_action_batch(&s, &a);
        let mut closs = 0.0;
        for (c, opt) in self.critics.iter_mut().zip(self.critic_opts.iter_mut()) {
            closs += critic_step(c, opt, &sa, &y)?;
        }
        self.critic_loss = closs / 2.0;
        check_finite(self.critic_loss, "critic loss", self.steps)?;

        // Reparameterized actor step on α·log π − min Q.
        let trace = self.actor.forward_batch(std::slice::from_ref(&s))?;
        let cur = sample_actions(&trace.output, &mut self.rng);
        let sa_pi = state_action_batch(&s, &cur.action);
        let t1 = self.critics[0].forward_batch(std::slice::from_ref(&sa_pi))?;
        let t2 = self.critics[1].forward_batch(&[sa_pi])?;
        let (q1, q2) = (&t1.output, &t2.output);
        let inv = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut which = Vec::with_capacity(n);
        for i in 0..n {
            let (q, w) = if q1[[i, 0]] <= q2[[i, 0]] { (q1[[i, 0]], 0) } else { (q2[[i, 0]], 1) };
            loss += (alpha * cur.log_prob[i] - q) * inv;
            which.push(w);
        }
        self.actor_loss = loss;
        check_finite(loss, "actor loss", self.steps)?;
        let mut dq_da = vec![0.0; n];
        for (k, (c, tr)) in self.critics.iter().zip([&t1, &t2]).enumerate() {
            let scale: Vec<f64> = which.iter().map(|&w| if w == k { 1.0 } else { 0.0 }).collect();
            for (acc, g) in dq_da.iter_mut().zip(action_gradient(c, tr, &scale)?) {
                *acc += g;
            }
        }
        let mut d_out = Array2::zeros((n, 2));
        for i in 0..n {
            let a = cur.action[i];
            let jac = 1.0 - a * a;
            let g_u = 2.0 * a * jac / (jac + SQUASH_EPS);
            let se = cur.sigma[i] * cur.eps[i];
            d_out[[i, 0]] = inv * (alpha * g_u - dq_da[i] * jac);
            if !cur.clamped[i] {
                d_out[[i, 1]] = inv * (alpha * (-1.0 + g_u * se) - dq_da[i] * jac * se);
            }
        }
        let mut g = vec![0.0; self.actor.params.len()];
        self.actor.backward(&trace, OutputGrad::Activated(d_out), &mut g)?;
        apply_mask(&mut g, &self.actor_mask);
        self.actor_opt.step(self.actor.params.as_mut_slice(), &g)?;

        // Temperature toward the entropy target.
        let mean_lp = cur.log_prob.iter().sum::<f64>() * inv;
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[-(mean_lp + self.algo.target_entropy)])?;
        self.log_alpha = la[0];

        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.params.polyak_update(&c.params, self.algo.tau);
        }
        Ok(())
    }

    pub fn actor(&self) -> &Network {
        &self.actor
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &[TrainLogRow] {
        &self.log
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub(crate) fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn actor_mut(&mut self) -> (&mut Network, &mut AdamState) {
        (&mut self.actor, &mut self.actor_opt)
    }

    /// Greedy policy: `tanh(mean)`.
    pub fn policy(&self, kind: PolicyKind) -> NetPolicy {
        NetPolicy::new(
            self.actor.clone(),
            WindowConfig::state_only(crate::physics::VIP_HZ),
            ActorHead::SquashedGaussian,
            kind,
        )
        .expect("actor matches the state-only window")
    }
}

pub fn train_sac(
    env: &EnvConfig,
    algo: &AlgoConfig,
    seed: u64,
    total_steps: usize,
) -> Result<(NetPolicy, Vec<TrainLogRow>)> {
    if total_steps < algo.batch {
        return Err(Error::Config(format!(
            "total_steps {total_steps} is smaller than the batch {}",
            algo.batch
        )));
    }
    let mut t = SacTrainer::new(*env, algo.clone(), seed)?;
    t.run(total_steps)?;
    Ok((t.policy(PolicyKind::Sac), t.log.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// log π from the closed form of a tanh-squashed Gaussian.
    #[test]
    fn log_prob_matches_change_of_variables() {
        let out = ndarray::arr2(&[[0.3, -0.7]]);
        let mut rng = seeded(5);
        let s = sample_actions(&out, &mut rng);
        let sigma = (-0.7f64).exp();
        let u = 0.3 + sigma * s.eps[0];
        let gauss = -((u - 0.3) / sigma).powi(2) / 2.0 - sigma.ln() - (2.0 * std::f64::consts::PI).sqrt().ln();
        let expected = gauss - (1.0 - u.tanh().powi(2) + SQUASH_EPS).ln();
        assert!((s.log_prob[0] - expected).abs() < 1e-12);
        assert_eq!(s.action[0], u.tanh());
    }

    #[test]
    fn log_std_is_clamped() {
        let out = ndarray::arr2(&[[0.0, 9.0], [0.0, -9.0]]);
        let s = sample_actions(&out, &mut seeded(1));
        assert_eq!(s.sigma[0], LOG_STD_MAX.exp());
        assert_eq!(s.sigma[1], LOG_STD_MIN.exp());
        assert!(s.clamped.iter().all(|&c| c));
    }
}
