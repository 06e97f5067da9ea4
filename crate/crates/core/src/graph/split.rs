use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Exactly `shots_per_class` training instances per class; everything else is test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotSplit {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub shots_per_class: usize,
    pub seed: u64,
}

/// Samples a k-shot split. Deterministic in `(dataset, k, seed)`.
///
/// Training ids are grouped by class in ascending class order; test ids are
/// ascending.
pub fn kshot_sample(ds: &LabeledDataset, k: usize, seed: u64) -> Result<FewShotSplit> {
    let labels = ds.instance_labels();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (id, &y) in labels.iter().enumerate() {
        by_class[y].push(id);
    }
    if let Some((class, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < k) {
        return Err(Error::InsufficientData(format!(
            "class {class} has {} labelled instances, fewer than k = {k}",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; labels.len()];
    let mut train_ids = Vec::with_capacity(k * by_class.len());
    for members in &by_class {
        for pick in index::sample(&mut rng, members.len(), k).into_iter() {
            let id = members[pick];
            in_train[id] = true;
            train_ids.push(id);
        }
    }
    let test_ids = (0..labels.len()).filter(|&id| !in_train[id]).collect();
    Ok(FewShotSplit { train_ids, test_ids, shots_per_class: k, seed })
}
