use rand::Rng;

use super::bc::{fit, BcConfig};
use super::sac::SacTrainer;
use super::{check_finite, AlgoConfig, Demo, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nnet::{Activation, AdamState, Loss, Network, NetworkSpec, Sample};
use crate::pilots::{ActorHead, NetPolicy, PolicyKind};
use crate::rng::{derive_seed, seeded};

/// Final actor and discriminator of an AIRL run.
#[derive(Debug, Clone)]
pub struct AirlOutput {
    pub actor: NetPolicy,
    pub discriminator: Network,
    /// Mean discriminator loss per round.
    pub disc_losses: Vec<f64>,
}

fn discriminator_spec(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(3, hidden, 1, Activation::Sigmoid)
}

/// Adversarial imitation with a SAC generator. The discriminator sees
/// `(θ/60, ω/300, d)` and the generator is rewarded with its logit.
#[derive(Debug, Clone)]
pub struct AirlTrainer {
    sac: SacTrainer,
    disc: Network,
    disc_opt: AdamState,
    expert: Vec<Demo>,
    algo: AlgoConfig,
    disc_losses: Vec<f64>,
    seed: u64,
}

impl AirlTrainer {
    pub fn new(env: EnvConfig, algo: AlgoConfig, expert: Vec<Demo>, seed: u64) -> Result<Self> {
        let sac = SacTrainer::new(env, algo.clone(), seed)?;
        Self::build(sac, algo, expert, seed)
    }

    pub fn from_actor(
        env: EnvConfig,
        algo: AlgoConfig,
        actor: Network,
        expert: Vec<Demo>,
        seed: u64,
    ) -> Result<Self> {
        let sac = SacTrainer::from_actor(env, algo.clone(), actor, seed)?;
        Self::build(sac, algo, expert, seed)
    }

    fn build(sac: SacTrainer, algo: AlgoConfig, expert: Vec<Demo>, seed: u64) -> Result<Self> {
        if expert.is_empty() {
            return Err(Error::Empty("expert demonstrations"));
        }
        if algo.airl_steps_per_iter == 0 {
            return Err(Error::Config("airl_steps_per_iter must be positive".into()));
        }
        let disc = Network::init(discriminator_spec(&algo.hidden), derive_seed(seed, 1, 0))?;
        Ok(AirlTrainer {
            disc_opt: AdamState::new(disc.params.len(), algo.lr),
            sac,
            disc,
            expert,
            algo,
            disc_losses: Vec::new(),
            seed,
        })
    }

    /// Clones the expert actions into the actor before adversarial rounds.
    pub fn pretrain_actor_bc(&mut self, epochs: usize, batch: usize) -> Result<f64> {
        let x: Vec<Vec<Vec<f64>>> = self.expert.iter().map(|d| vec![d.input()[..2].to_vec()]).collect();
        let y: Vec<f64> = self.expert.iter().map(|d| d.action).collect();
        let cfg = BcConfig {
            lr: self.algo.lr,
            epochs,
            batch,
        };
        let mut rng = seeded(derive_seed(self.seed, 2, 0));
        let (actor, _) = self.sac.actor_mut();
        fit(actor, ActorHead::SquashedGaussian, &x, &y, &cfg, &mut rng)
    }

    /// `iterations` rounds of generator interaction followed by
    /// discriminator updates.
    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            for _ in 0..self.algo.airl_steps_per_iter {
                self.sac.interact()?;
                if self.sac.ready() {
                    let disc = &self.disc;
                    let reward = |batch: &[Transition]| learned_reward(disc, batch);
                    self.sac.update(Some(&reward))?;
                }
            }
            self.update_discriminator()?;
        }
        Ok(())
    }

    fn update_discriminator(&mut self) -> Result<()> {
        let recent = self.sac.buffer().recent(self.algo.airl_steps_per_iter);
        let half = (self.algo.batch / 2).max(1);
        let mut total = 0.0;
        for u in 0..self.algo.airl_disc_updates {
            let rng = self.sac.rng_mut();
            let mut batch = Vec::with_capacity(2 * half);
            for _ in 0..half {
                let d = self.expert[rng.gen_range(0..self.expert.len())];
                batch.push(Sample {
                    inputs: vec![d.input().to_vec()],
                    target: vec![1.0],
                });
            }
            for _ in 0..half {
                let t = recent[rng.gen_range(0..recent.len())];
                batch.push(Sample {
                    inputs: vec![vec![t.state[0], t.state[1], t.action]],
                    target: vec![0.0],
                });
            }
            let (loss, g) = self.disc.loss_and_gradients(&batch, Loss::Bce)?;
            check_finite(loss, "discriminator loss", u)?;
            self.disc_opt.step(self.disc.params.as_mut_slice(), &g)?;
            total += loss;
        }
        self.disc_losses
            .push(total / self.algo.airl_disc_updates.max(1) as f64);
        Ok(())
    }

    pub fn actor(&self) -> &Network {
        self.sac.actor()
    }

    pub fn discriminator(&self) -> &Network {
        &self.disc
    }

    /// `D(s, a)` for a demonstration-shaped pair.
    pub fn disc_prob(&self, d: &Demo) -> Result<f64> {
        Ok(self.disc.forward(&[d.input().to_vec()])?[0])
    }

    /// Fraction of `expert` scored above 0.5 and `other` at or below it.
    pub fn disc_accuracy(&self, expert: &[Demo], other: &[Demo]) -> Result<f64> {
        let mut right = 0usize;
        for d in expert {
            right += usize::from(self.disc_prob(d)? > 0.5);
        }
        for d in other {
            right += usize::from(self.disc_prob(d)? <= 0.5);
        }
        Ok(right as f64 / (expert.len() + other.len()).max(1) as f64)
    }

    pub fn into_output(self) -> AirlOutput {
        AirlOutput {
            actor: self.sac.policy(PolicyKind::Airl),
            discriminator: self.disc,
            disc_losses: self.disc_losses,
        }
    }
}

/// `log D − log(1 − D)`, i.e. the discriminator's pre-sigmoid output.
fn learned_reward(disc: &Network, batch: &[Transition]) -> Result<Vec<f64>> {
    let sa: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| vec![t.state[0], t.state[1], t.action])
        .collect();
    let seqs: Vec<&[Vec<f64>]> = sa.iter().map(std::slice::from_ref).collect();
    let steps = crate::nnet::stack_sequences(&seqs, 3)?;
    let trace = disc.forward_batch(&steps)?;
    Ok(trace.head_pre().column(0).to_vec())
}

/// Runs AIRL from a fresh SAC actor.
pub fn train_airl(
    env: &EnvConfig,
    algo: &AlgoConfig,
    expert: Vec<Demo>,
    seed: u64,
    iterations: usize,
) -> Result<AirlOutput> {
    let mut t = AirlTrainer::new(*env, algo.clone(), expert, seed)?;
    t.run(iterations)?;
    Ok(t.into_output())
}
