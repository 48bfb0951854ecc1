//! Single-node SGD: seeded shuffling, the training loop and checkpoints.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objective::{sgd_step, LossParams};
use crate::sparse::{Dataset, DenseModel, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossParams,
    /// Updates performed by the fastest node.
    pub total_iterations: u64,
    pub seed: u64,
    /// Initial value of every weight component.
    pub init_value: f64,
    /// Checkpoint cadence in fastest-node iterations; 0 disables checkpoints.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn new(loss: LossParams, total_iterations: u64, seed: u64) -> Self {
        Self {
            loss,
            total_iterations,
            seed,
            init_value: 0.0,
            checkpoint_every: 0,
        }
    }

    pub fn initial_model(&self, dim: usize) -> DenseModel {
        DenseModel::filled(dim, self.init_value)
    }

    /// Iterations (ascending, each in `1..=total`) at which checkpoints fire.
    pub fn checkpoint_iterations(&self) -> Vec<u64> {
        if self.checkpoint_every == 0 {
            return Vec::new();
        }
        (1..=self.total_iterations / self.checkpoint_every)
            .map(|i| i * self.checkpoint_every)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub model: DenseModel,
}

/// Random stream for node `node` under `seed`. Every node draws from its own
/// ChaCha stream, so node results do not depend on scheduling.
pub fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}

/// A seeded permutation of `d`. Uses the same stream as node 0 of a cluster,
/// so a one-node cluster sees exactly this order.
pub fn shuffle(d: &Dataset, seed: u64) -> Dataset {
    shuffle_with(d, &mut node_rng(seed, 0))
}

pub(crate) fn shuffle_with(d: &Dataset, rng: &mut ChaCha8Rng) -> Dataset {
    let mut samples = d.samples().to_vec();
    samples.shuffle(rng);
    Dataset::new(samples, d.dim()).expect("a permutation of a valid dataset is valid")
}

/// A node's training state: its shuffled local data, the read cursor and the
/// model. Running past the end of the data wraps around to the same order.
#[derive(Debug, Clone)]
pub struct NodeTrainer {
    data: Dataset,
    cursor: usize,
    model: DenseModel,
    loss: LossParams,
}

impl NodeTrainer {
    /// Shuffles `local` with the node's stream and starts from the configured
    /// initial model.
    pub fn new(local: &Dataset, cfg: &TrainConfig, node: usize) -> Self {
        let data = shuffle_with(local, &mut node_rng(cfg.seed, node));
        let model = cfg.initial_model(local.dim());
        Self {
            data,
            cursor: 0,
            model,
            loss: cfg.loss,
        }
    }

    pub fn model(&self) -> &DenseModel {
        &self.model
    }

    pub fn into_model(self) -> DenseModel {
        self.model
    }

    /// Overwrites the weights (keeping the iteration count), as an averaging
    /// round does.
    pub fn set_weights(&mut self, weights: &[f64]) {
        self.model.weights.copy_from_slice(weights);
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// The sample the next step will consume.
    pub fn peek(&self) -> &Sample {
        &self.data.samples()[self.cursor]
    }

    pub fn step(&mut self) -> Result<()> {
        let s = &self.data.samples()[self.cursor];
        sgd_step(&mut self.model, s, &self.loss)?;
        self.cursor = (self.cursor + 1) % self.data.len();
        Ok(())
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains one model for `cfg.total_iterations` steps on `d`, collecting a
/// snapshot at every checkpoint.
pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<(DenseModel, Vec<Checkpoint>)> {
    cfg.loss.validate()?;
    if !cfg.init_value.is_finite() {
        return Err(Error::InvalidParameter("init value must be finite".into()));
    }
    let mut node = NodeTrainer::new(d, cfg, 0);
    let mut checkpoints = Vec::new();
    let mut done = 0;
    for at in cfg.checkpoint_iterations() {
        node.advance(at - done)?;
        done = at;
        checkpoints.push(Checkpoint {
            iteration: at,
            model: node.model().clone(),
        });
    }
    node.advance(cfg.total_iterations - done)?;
    Ok((node.into_model(), checkpoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::objective_value;
    use crate::sparse::SparseVector;

    fn tiny(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let x = SparseVector::new([(i % 3, 1.0 + i as f64)], 3).unwrap();
                Sample::new(x, (i % 2) as u8).unwrap()
            })
            .collect();
        Dataset::new(samples, 3).unwrap()
    }

    fn cfg(t: u64) -> TrainConfig {
        TrainConfig::new(LossParams::new(0.1, 0.05).unwrap(), t, 11)
    }

    #[test]
    fn shuffle_is_seeded() {
        let d = tiny(1);
        assert_eq!(shuffle(&d, 3), d);
        let d = tiny(100);
        assert_eq!(shuffle(&d, 3), shuffle(&d, 3));
        assert_ne!(shuffle(&d, 3), shuffle(&d, 4));
        let mut a: Vec<_> = shuffle(&d, 5).samples().iter().map(|s| s.features.values()[0].to_bits()).collect();
        let mut b: Vec<_> = d.samples().iter().map(|s| s.features.values()[0].to_bits()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let mut c = cfg(0);
        c.init_value = 4.0;
        c.checkpoint_every = 1;
        let (m, cps) = train(&tiny(5), &c).unwrap();
        assert_eq!(m.weights, vec![4.0; 3]);
        assert_eq!(m.iterations, 0);
        assert!(cps.is_empty());
    }

    #[test]
    fn one_step_matches_hand_update() {
        let x = SparseVector::new([(1, 2.0)], 3).unwrap();
        let d = Dataset::new(vec![Sample::new(x, 1).unwrap()], 3).unwrap();
        let (m, _) = train(&d, &cfg(1)).unwrap();
        // zero init: margin 0 < 1, so w = η ŷ x
        assert_eq!(m.weights, vec![0.0, 0.05 * 2.0, 0.0]);
        assert_eq!(m.iterations, 1);
    }

    #[test]
    fn deterministic_and_checkpointed() {
        let mut c = cfg(23);
        c.checkpoint_every = 5;
        let d = tiny(7);
        let (a, cps_a) = train(&d, &c).unwrap();
        let (b, cps_b) = train(&d, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(cps_a, cps_b);
        let its: Vec<u64> = cps_a.iter().map(|c| c.iteration).collect();
        assert_eq!(its, vec![5, 10, 15, 20]);
        assert_eq!(a.iterations, 23);
    }

    #[test]
    fn resuming_equals_uninterrupted() {
        let d = tiny(9);
        let c = cfg(40);
        let (full, _) = train(&d, &c).unwrap();
        let mut node = NodeTrainer::new(&d, &c, 0);
        node.advance(17).unwrap();
        let paused = node.clone();
        let mut resumed = paused;
        resumed.advance(23).unwrap();
        assert_eq!(resumed.model(), &full);
    }

    #[test]
    fn wraparound_reuses_order() {
        let d = tiny(4);
        let mut node = NodeTrainer::new(&d, &cfg(0), 0);
        let first: Vec<Sample> = (0..4).map(|i| node.data().samples()[i].clone()).collect();
        node.advance(4).unwrap();
        assert_eq!(node.cursor(), 0);
        assert_eq!(node.peek(), &first[0]);
    }

    #[test]
    fn objective_decreases_on_strongly_convex_problem() {
        use rand::Rng;
        let mut rng = node_rng(99, 0);
        let dim = 8;
        let samples: Vec<Sample> = (0..200)
            .map(|_| {
                let raw: Vec<(usize, f64)> = (0..dim).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
                let norm = raw.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                let x = SparseVector::new(raw.into_iter().map(|(j, v)| (j, v / norm)), dim).unwrap();
                let label = u8::from(x.values()[0] + 0.5 * x.values()[1] > 0.0);
                Sample::new(x, label).unwrap()
            })
            .collect();
        let d = Dataset::new(samples, dim).unwrap();
        for seed in 0..10 {
            let mut c = TrainConfig::new(LossParams::new(0.1, 0.01).unwrap(), 5_000, seed);
            c.init_value = 1.0;
            let start = objective_value(&c.initial_model(dim), &d, &c.loss).unwrap();
            let (m, _) = train(&d, &c).unwrap();
            let end = objective_value(&m, &d, &c.loss).unwrap();
            assert!(end < start, "seed {seed}: {end} >= {start}");
        }
    }
}
