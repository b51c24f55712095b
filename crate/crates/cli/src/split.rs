//! Train/validation (and optional monitor) splits, sampled uniformly
//! without replacement from the first 50,000 examples of the source data,
//! deterministically per seed.

use lsqtune::datafit::Dataset;
use lsqtune::matrix::DenseMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Scale;
use crate::errors::DataError;

/// Upper bound on the sampling pool: the classic 60k training file keeps
/// its last 10k examples out of the pool.
pub const POOL_LIMIT: usize = 50_000;

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    /// Held-out monitor split for early stopping (same size as val); `None`
    /// unless requested.
    pub monitor: Option<Dataset>,
    /// Source-row index of each training example (for reporting).
    pub train_indices: Vec<usize>,
}

fn gather(source: &Dataset, indices: &[usize]) -> Dataset {
    let inputs = DenseMatrix::from_fn(indices.len(), source.inputs.cols(), |i, j| {
        source.inputs.get(indices[i], j)
    });
    let targets = DenseMatrix::from_fn(indices.len(), source.targets.cols(), |i, j| {
        source.targets.get(indices[i], j)
    });
    Dataset::new(inputs, targets).expect("row counts match by construction")
}

/// Samples the ladder's train/val split (plus a monitor split when asked)
/// from the pool. Same seed ⇒ same index sets; all splits disjoint.
pub fn split(
    source: &Dataset,
    scale: Scale,
    seed: u64,
    with_monitor: bool,
) -> Result<Splits, DataError> {
    let pool = source.len().min(POOL_LIMIT);
    let (n_train, n_val) = scale.sizes();
    let n_monitor = if with_monitor { n_val } else { 0 };
    let needed = n_train + n_val + n_monitor;
    if needed > pool {
        return Err(DataError::InsufficientData { needed, available: pool });
    }
    let mut indices: Vec<usize> = (0..pool).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train_indices = indices[..n_train].to_vec();
    let val_indices = &indices[n_train..n_train + n_val];
    let monitor = if with_monitor {
        Some(gather(source, &indices[n_train + n_val..needed]))
    } else {
        None
    };
    Ok(Splits {
        train: gather(source, &train_indices),
        val: gather(source, val_indices),
        monitor,
        train_indices,
    })
}
