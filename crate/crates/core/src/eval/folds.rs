use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;
use crate::nn::RngState;

/// Indices into the participant list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold partition: each class is shuffled with the seed and
/// dealt round-robin over the folds, so fold sizes per class differ by at
/// most one.
pub fn kfold_split(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    if k < 2 {
        return Err(EvalError::Folds(format!("k = {k}; need at least 2 folds")));
    }
    let mut rng = RngState::new(seed).derive(&[0x6b66]);
    let mut assignment = vec![0usize; labels.len()];
    for class in [Label::Depressed, Label::NonDepressed] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(EvalError::Folds(format!("{class} class has {} participants, fewer than k = {k}", members.len())));
        }
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            assignment[i] = j % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// Fails if any fold's training ids intersect its test ids, or if the
/// test folds do not partition `ids`.
pub fn leak_check(folds: &[Fold], ids: &[String]) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for (f, fold) in folds.iter().enumerate() {
        let train: BTreeSet<&str> = fold.train.iter().map(|&i| ids[i].as_str()).collect();
        if let Some(&i) = fold.test.iter().find(|&&i| train.contains(ids[i].as_str())) {
            return Err(EvalError::Leak { fold: f, participant: ids[i].clone() });
        }
        for &i in &fold.test {
            if !seen.insert(i) {
                return Err(EvalError::Folds(format!("participant {} is in more than one test fold", ids[i])));
            }
        }
        if fold.train.len() + fold.test.len() != ids.len() {
            return Err(EvalError::Folds(format!("fold {f} covers {} of {} participants", fold.train.len() + fold.test.len(), ids.len())));
        }
    }
    if seen.len() != ids.len() {
        return Err(EvalError::Folds(format!("test folds cover {} of {} participants", seen.len(), ids.len())));
    }
    Ok(())
}
