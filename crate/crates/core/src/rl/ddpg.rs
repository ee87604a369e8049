use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    apply_mask, check_finite, odd_actor_mask, env_reset, env_step, observe, state_action_batch, state_batch, AlgoConfig,
    EnvConfig, ReplayBuffer, TrainLogRow, Transition,
};
use crate::error::Result;
use crate::nnet::{Activation, AdamState, Network, NetworkSpec, OutputGrad, Trace};
use crate::physics::PendulumState;
use crate::pilots::{ActorHead, NetPolicy, PolicyKind, WindowConfig};
use crate::rng::seeded;

pub(crate) fn deterministic_actor_spec(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(2, hidden, 1, Activation::Tanh).with_hidden_activation(Activation::Tanh)
}

pub(crate) fn critic_spec(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(3, hidden, 1, Activation::Linear)
}

/// `scale[i]·∂Q/∂a` for each row of a critic forward pass.
pub(crate) fn action_gradient(critic: &Network, trace: &Trace, scale: &[f64]) -> Result<Vec<f64>> {
    let d_out = Array2::from_shape_vec((scale.len(), 1), scale.to_vec()).expect("one column");
    let d_in = critic.input_gradients(trace, OutputGrad::Activated(d_out))?;
    Ok(d_in[0].column(2).to_vec())
}

/// Fits `critic` to `targets` with one MSE step; returns the loss.
pub(crate) fn critic_step(
    critic: &mut Network,
    opt: &mut AdamState,
    sa: &Array2<f64>,
    targets: &[f64],
) -> Result<f64> {
    let trace = critic.forward_batch(std::slice::from_ref(sa))?;
    let n = targets.len() as f64;
    let mut d = Array2::zeros((targets.len(), 1));
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let e = trace.output[[i, 0]] - y;
        loss += e * e / n;
        d[[i, 0]] = 2.0 * e / n;
    }
    let mut g = vec![0.0; critic.params.len()];
    critic.backward(&trace, OutputGrad::Activated(d), &mut g)?;
    opt.step(critic.params.as_mut_slice(), &g)?;
    Ok(loss)
}

/// Deep deterministic policy gradient with target networks and Gaussian
/// exploration noise.
#[derive(Debug, Clone)]
pub struct DdpgTrainer {
    env: EnvConfig,
    algo: AlgoConfig,
    actor: Network,
    actor_target: Network,
    critic: Network,
    critic_target: Network,
    actor_opt: AdamState,
    actor_mask: Vec<bool>,
    critic_opt: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    state: PendulumState,
    episode_return: f64,
    steps: usize,
    critic_loss: f64,
    actor_loss: f64,
    log: Vec<TrainLogRow>,
}

impl DdpgTrainer {
    pub fn new(env: EnvConfig, algo: AlgoConfig, seed: u64) -> Result<Self> {
        env.validate()?;
        algo.validate()?;
        let mut rng = seeded(seed);
        let actor = Network::init_with(deterministic_actor_spec(&algo.hidden), &mut rng)?;
        let critic = Network::init_with(critic_spec(&algo.hidden), &mut rng)?;
        let state = env_reset(&env, &mut rng);
        Ok(DdpgTrainer {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: AdamState::new(actor.params.len(), algo.lr),
            actor_mask: odd_actor_mask(&actor.params, &[]),
            critic_opt: AdamState::new(critic.params.len(), algo.lr),
            buffer: ReplayBuffer::new(algo.buffer_capacity),
            actor,
            critic,
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

    /// One environment step followed by one gradient update once enough
    /// data is buffered.
    pub fn step(&mut self) -> Result<()> {
        let obs = observe(&self.state);
        let action = if self.steps < self.algo.learning_starts {
            rand::Rng::gen_range(&mut self.rng, -1.0..=1.0)
        } else {
            let mean = self.actor.forward(&[obs.to_vec()])?[0];
            let noise = Normal::new(0.0, self.algo.exploration_sigma)
                .expect("sigma is finite")
                .sample(&mut self.rng);
            (mean + noise).clamp(-1.0, 1.0)
        };
        let out = env_step(self.state, action, &self.env)?;
        self.episode_return += out.reward;
        self.buffer.push(Transition {
            state: obs,
            action,
            reward: out.reward * self.algo.reward_scale,
            next_state: observe(&out.next),
            done: out.done,
            terminal: out.crashed,
        });
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
        if self.steps >= self.algo.learning_starts && self.buffer.len() >= self.algo.batch {
            self.update()?;
        }
        Ok(())
    }

    fn update(&mut self) -> Result<()> {
        let batch = self.buffer.sample(self.algo.batch, &mut self.rng);
        let n = batch.len();
        let s = state_batch(&batch.iter().map(|t| t.state).collect::<Vec<_>>());
        let s2 = state_batch(&batch.iter().map(|t| t.next_state).collect::<Vec<_>>());
        let a: Vec<f64> = batch.iter().map(|t| t.action).collect();

        let a2 = self.actor_target.predict_batch(std::slice::from_ref(&s2))?;
        let sa2 = state_action_batch(&s2, &a2.column(0).to_vec());
        let q2 = self.critic_target.predict_batch(&[sa2])?;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.terminal { 0.0 } else { self.algo.gamma * q2[[i, 0]] };
                t.reward + boot
            })
            .collect();
        let sa = state_action_batch(&s, &a);
        self.critic_loss = critic_step(&mut self.critic, &mut self.critic_opt, &sa, &targets)?;
        check_finite(self.critic_loss, "critic loss", self.steps)?;

        // Actor: maximize Q(s, μ(s)).
        let actor_trace = self.actor.forward_batch(std::slice::from_ref(&s))?;
        let mu: Vec<f64> = actor_trace.output.column(0).to_vec();
        let sa_pi = state_action_batch(&s, &mu);
        let q_trace = self.critic.forward_batch(&[sa_pi])?;
        self.actor_loss = -q_trace.output.sum() / n as f64;
        check_finite(self.actor_loss, "actor loss", self.steps)?;
        let scale = vec![-1.0 / n as f64; n];
        let dq_da = action_gradient(&self.critic, &q_trace, &scale)?;
        let d_mu = Array2::from_shape_vec((n, 1), dq_da).expect("one column");
        let mut g = vec![0.0; self.actor.params.len()];
        self.actor.backward(&actor_trace, OutputGrad::Activated(d_mu), &mut g)?;
        apply_mask(&mut g, &self.actor_mask);
        self.actor_opt.step(self.actor.params.as_mut_slice(), &g)?;

        self.actor_target.params.polyak_update(&self.actor.params, self.algo.tau);
        self.critic_target.params.polyak_update(&self.critic.params, self.algo.tau);
        Ok(())
    }

    pub fn actor(&self) -> &Network {
        &self.actor
    }

    pub fn critic(&self) -> &Network {
        &self.critic
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

    pub fn policy(&self) -> NetPolicy {
        NetPolicy::new(
            self.actor.clone(),
            WindowConfig::state_only(crate::physics::VIP_HZ),
            ActorHead::Direct,
            PolicyKind::Ddpg,
        )
        .expect("actor matches the state-only window")
    }
}

/// Trains a DDPG actor for `total_steps` environment steps.
pub fn train_ddpg(
    env: &EnvConfig,
    algo: &AlgoConfig,
    seed: u64,
    total_steps: usize,
) -> Result<(NetPolicy, Vec<TrainLogRow>)> {
    if total_steps < algo.batch {
        return Err(crate::Error::Config(format!(
            "total_steps {total_steps} is smaller than the batch {}",
            algo.batch
        )));
    }
    let mut t = DdpgTrainer::new(*env, algo.clone(), seed)?;
    t.run(total_steps)?;
    Ok((t.policy(), t.log.clone()))
}
