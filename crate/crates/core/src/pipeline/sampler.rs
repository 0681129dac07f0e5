//! Mini-batch index streams.

use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;

use super::Dataset;

/// Produces the batches of one epoch.
///
/// With `balanced` set and every sample labeled, indices are drawn with
/// replacement with probability proportional to `1 / count(class)`.
/// Otherwise the epoch is a shuffled pass over the data. Either way the epoch
/// has `ceil(N / B)` batches; a final batch smaller than 2 is dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    len: usize,
    weights: Option<WeightedIndex<f64>>,
}

impl BatchSampler {
    pub fn new(dataset: &Dataset, batch_size: usize, balanced: bool) -> Self {
        let weights = if balanced && dataset.is_labeled() {
            let counts = dataset.class_counts();
            let w: Vec<f64> = dataset
                .samples()
                .iter()
                .map(|s| 1.0 / counts[s.label().expect("labeled")] as f64)
                .collect();
            Some(WeightedIndex::new(w).expect("positive weights"))
        } else {
            None
        };
        Self {
            batch_size,
            len: dataset.len(),
            weights,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.weights.is_some()
    }

    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.gen_range(0..self.len),
        }
    }

    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let order: Vec<usize> = match &self.weights {
            Some(w) => (0..self.len).map(|_| w.sample(rng)).collect(),
            None => {
                let mut o: Vec<usize> = (0..self.len).collect();
                o.shuffle(rng);
                o
            }
        };
        order
            .chunks(self.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
