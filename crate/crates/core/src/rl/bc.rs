use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{stack_sequences, AdamState, Network, NetworkSpec, OutputGrad};
use crate::pilots::{ActorHead, NetPolicy, ObservationWindow};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            lr: 1e-3,
            epochs: 50,
            batch: 64,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr > 0.0 && self.batch > 0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid behavior-cloning config {self:?}")))
        }
    }
}

/// Minibatch MSE regression of the head's deflection onto `targets`.
/// Returns the mean loss of the final epoch (0 when no epoch runs).
pub(crate) fn fit(
    net: &mut Network,
    head: ActorHead,
    inputs: &[Vec<Vec<f64>>],
    targets: &[f64],
    cfg: &BcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let needed = match head {
        ActorHead::Direct => 1,
        ActorHead::SquashedGaussian => 2,
    };
    if net.spec.output_dim != needed {
        return Err(Error::Dimension {
            context: "behavior-cloning actor output".into(),
            expected: needed,
            got: net.spec.output_dim,
        });
    }
    let mut opt = AdamState::new(net.params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut last = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let seqs: Vec<&[Vec<f64>]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let steps = stack_sequences(&seqs, net.spec.input_dim)?;
            let trace = net.forward_batch(&steps)?;
            let n = chunk.len() as f64;
            let mut d = Array2::zeros((chunk.len(), needed));
            for (r, &i) in chunk.iter().enumerate() {
                let raw = trace.output[[r, 0]];
                let (pred, slope) = match head {
                    ActorHead::Direct => (raw, 1.0),
                    ActorHead::SquashedGaussian => {
                        let y = raw.tanh();
                        (y, 1.0 - y * y)
                    }
                };
                let e = pred - targets[i];
                total += e * e;
                d[[r, 0]] = 2.0 * e * slope / n;
            }
            let mut g = vec![0.0; net.params.len()];
            net.backward(&trace, OutputGrad::Activated(d), &mut g)?;
            opt.step(net.params.as_mut_slice(), &g)?;
        }
        last = total / inputs.len() as f64;
        if !last.is_finite() {
            return Err(Error::NonFiniteLoss { index: epoch });
        }
    }
    Ok(last)
}

fn split(net: &Network, demos: &[(ObservationWindow, f64)]) -> (Vec<Vec<Vec<f64>>>, Vec<f64>) {
    demos
        .iter()
        .map(|(w, a)| (w.network_input(net.spec.arch), *a))
        .unzip()
}

/// Fresh network of shape `spec`, cloned onto `demos` with a direct head.
pub fn train_bc(
    spec: &NetworkSpec,
    demos: &[(ObservationWindow, f64)],
    seed: u64,
    cfg: &BcConfig,
) -> Result<Network> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let mut rng = seeded(seed);
    let mut net = Network::init_with(spec.clone(), &mut rng)?;
    let (x, y) = split(&net, demos);
    fit(&mut net, ActorHead::Direct, &x, &y, cfg, &mut rng)?;
    Ok(net)
}

/// Continues training `policy` on `demos`, keeping its window and head.
pub fn clone_policy(
    policy: &NetPolicy,
    demos: &[(ObservationWindow, f64)],
    seed: u64,
    cfg: &BcConfig,
) -> Result<NetPolicy> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let mut rng = seeded(seed);
    let mut net = policy.net.clone();
    let (x, y) = split(&net, demos);
    fit(&mut net, policy.head, &x, &y, cfg, &mut rng)?;
    NetPolicy::new(net, policy.window, policy.head, policy.kind)
}
