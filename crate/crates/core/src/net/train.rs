//! Mini-batch training with divergence detection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{Error, Result};
use crate::spiral::Dataset;

use super::batch::{sigmoid_ce_into, BatchTape, NetGrads};
use super::optim::OptState;
use super::{beyond_f32, Mode, Network, OptimizerKind};

/// Final state of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    /// True when the loss or any parameter left the float32 range; training
    /// stops early and the record is excluded from downstream evaluation.
    pub diverged: bool,
    pub steps_run: usize,
}

/// Minimizes sigmoid cross-entropy on the scalar logit for `steps`
/// mini-batch steps.
///
/// Batches of `min(batch_size, m)` points are sampled with replacement from
/// a stream seeded by `train_seed`; batch-norm layers normalize with batch
/// statistics and update their moving averages each step. Divergence is
/// checked every 100 steps and at the final step.
pub fn train(mut net: Network, data: &Dataset, steps: usize, train_seed: u64) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(Error::domain("steps must be >= 1".to_string()));
    }
    let m = data.points.len();
    if m == 0 {
        return Err(Error::domain("cannot train on an empty dataset".to_string()));
    }
    net.ensure_usable()?;

    let batch = (net.hparams.batch_size as usize).min(m);
    let lr = net.hparams.learning_rate;
    let dropout = net.hparams.dropout_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let mut opt = match net.hparams.optimizer {
        OptimizerKind::Sgd => OptState::sgd(),
        OptimizerKind::Adam => OptState::adam(&net.tensor_sizes()),
    };

    let mut tape = BatchTape::new();
    let mut grads = NetGrads::zeros_like(&net);
    let mut inputs = vec![0.0; batch * 2];
    let mut labels = vec![0i8; batch];
    let mut d_logits = Vec::with_capacity(batch);
    let mut diverged = false;
    let mut steps_run = 0;

    for step in 1..=steps {
        for b in 0..batch {
            let p = &data.points[rng.random_range(0..m)];
            inputs[2 * b] = p.x;
            inputs[2 * b + 1] = p.y;
            labels[b] = p.label;
        }
        let masks = (dropout > 0.0).then(|| net.draw_dropout_masks(batch, &mut rng));
        net.batch_forward_into(&inputs, batch, Mode::Training, masks.as_deref(), &mut tape)?;
        let loss = sigmoid_ce_into(&tape.logits, &labels, &mut d_logits);
        net.batch_backward_into(&tape, &d_logits, &mut grads);
        net.update_moving_stats(&tape);
        net.apply_grads(&grads, &mut opt, lr);
        steps_run = step;

        if step % 100 == 0 || step == steps {
            if beyond_f32(loss) || net.divergence_flagged() {
                diverged = true;
                break;
            }
        }
    }

    Ok(TrainOutcome { net, diverged, steps_run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init, NetHparams};
    use crate::spiral::{self, LabeledPoint, Purpose, SpiralSpec};

    fn hp(optimizer: OptimizerKind, lr: f64) -> NetHparams {
        NetHparams {
            layer_widths: vec![4],
            optimizer,
            learning_rate: lr,
            batch_size: 32,
            batch_norm: false,
            dropout_rate: 0.0,
            hparam_id: 0,
        }
    }

    fn two_point_set() -> Dataset {
        Dataset {
            spec: SpiralSpec::new(1, 0.0, 2, 1),
            purpose: Purpose::Train,
            points: vec![
                LabeledPoint { x: -0.5, y: 0.2, label: -1 },
                LabeledPoint { x: 0.5, y: -0.2, label: 1 },
            ],
        }
    }

    #[test]
    fn converges_on_two_separable_points() {
        let net = init(&hp(OptimizerKind::Sgd, 0.1), 3).unwrap();
        let outcome = train(net, &two_point_set(), 500, 17).unwrap();
        assert!(!outcome.diverged);
        assert_eq!(outcome.net.accuracy(&two_point_set()).unwrap(), 1.0);
    }

    #[test]
    fn zero_steps_is_a_domain_error() {
        let net = init(&hp(OptimizerKind::Sgd, 0.1), 3).unwrap();
        assert!(train(net, &two_point_set(), 0, 17).is_err());
    }

    #[test]
    fn empty_dataset_is_a_domain_error() {
        let net = init(&hp(OptimizerKind::Sgd, 0.1), 3).unwrap();
        let mut data = two_point_set();
        data.points.clear();
        assert!(train(net, &data, 10, 17).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let spec = SpiralSpec::new(1, 0.05, 50, 1);
        let data = spiral::generate_train(&spec).unwrap();
        let mut h = hp(OptimizerKind::Sgd, 1e6);
        h.layer_widths = vec![8, 8];
        let net = init(&h, 5).unwrap();
        let outcome = train(net, &data, 500, 9).unwrap();
        assert!(outcome.diverged);
        assert!(outcome.steps_run < 500);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = SpiralSpec::new(1, 0.05, 50, 2);
        let data = spiral::generate_train(&spec).unwrap();
        let mut h = hp(OptimizerKind::Adam, 0.01);
        h.batch_norm = true;
        h.dropout_rate = 0.25;
        let a = train(init(&h, 4).unwrap(), &data, 300, 11).unwrap();
        let b = train(init(&h, 4).unwrap(), &data, 300, 11).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.diverged, b.diverged);
    }

    #[test]
    fn moving_stats_change_during_training() {
        let spec = SpiralSpec::new(1, 0.0, 50, 3);
        let data = spiral::generate_train(&spec).unwrap();
        let mut h = hp(OptimizerKind::Sgd, 0.01);
        h.batch_norm = true;
        let outcome = train(init(&h, 8).unwrap(), &data, 200, 21).unwrap();
        let bn = outcome.net.hidden[0].bn.as_ref().unwrap();
        assert!(bn.moving_mean.iter().any(|&m| m != 0.0));
        assert!(bn.moving_var.iter().any(|&v| v != 1.0));
    }
}
