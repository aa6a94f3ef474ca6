//! Class balancing and sample construction.
//!
//! Interview corpora are cut into contiguous windows of ten responses; the
//! minority class is filled up by drawing windows round-robin across its
//! participants without replacement. Three-response corpora enlarge the
//! depressed class with all six orderings of each participant's responses.
//! Evaluation always uses exactly one sample per participant.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClassCounts, CorpusKind, Label};
use crate::nn::{Mat, RngState};

pub const GROUP_SIZE: usize = 10;
pub const THREE: usize = 3;

/// Per-participant features: one Mel spectrogram and one text row per response.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantFeatures {
    pub id: String,
    pub label: Label,
    pub audio: Vec<Arc<Mat>>,
    pub text: Mat,
}

impl ParticipantFeatures {
    pub fn responses(&self) -> usize {
        self.text.nrows()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    /// Window `k` of ten consecutive responses.
    Group(usize),
    /// Index into the lexicographic list of response orderings.
    Permutation(usize),
    Original,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub participant: String,
    pub unit: Unit,
}

/// One training or evaluation example with paired audio and text rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// S spectrograms, one per response step.
    pub audio: Vec<Arc<Mat>>,
    /// S×W text embeddings, row `t` pairs with `audio[t]`.
    pub text: Mat,
    pub label: Label,
    pub provenance: Provenance,
}

impl Sample {
    pub fn steps(&self) -> usize {
        self.text.nrows()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("participant {participant}: {rows} responses, need at least {GROUP_SIZE} for one group")]
    NoFullGroup { participant: String, rows: usize },
    #[error("participant {participant}: expected exactly 3 responses, found {found}")]
    ResponseCount { participant: String, found: usize },
    #[error("minority class has no groups to draw from")]
    EmptyMinorityPool,
    #[error("participant {participant}: {audio} audio rows but {text} text rows")]
    Misaligned { participant: String, audio: usize, text: usize },
}

/// Contiguous, non-overlapping windows of [`GROUP_SIZE`] rows; the trailing
/// `n mod 10` rows are dropped.
pub fn group_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n / GROUP_SIZE).map(|g| g * GROUP_SIZE..(g + 1) * GROUP_SIZE).collect()
}

/// Splits an N×W matrix into `floor(N/10)` matrices of 10×W.
pub fn group_segments<T: Clone>(matrix: &Array2<T>, participant: &str) -> Result<Vec<Array2<T>>, SamplingError> {
    let ranges = group_ranges(matrix.nrows());
    if ranges.is_empty() {
        return Err(SamplingError::NoFullGroup {
            participant: participant.to_string(),
            rows: matrix.nrows(),
        });
    }
    Ok(ranges.into_iter().map(|r| matrix.slice(s![r, ..]).to_owned()).collect())
}

fn check_aligned(p: &ParticipantFeatures) -> Result<(), SamplingError> {
    if p.audio.len() != p.text.nrows() {
        return Err(SamplingError::Misaligned {
            participant: p.id.clone(),
            audio: p.audio.len(),
            text: p.text.nrows(),
        });
    }
    Ok(())
}

/// All window samples of an interview participant.
pub fn group_samples(p: &ParticipantFeatures) -> Result<Vec<Sample>, SamplingError> {
    check_aligned(p)?;
    let ranges = group_ranges(p.responses());
    if ranges.is_empty() {
        return Err(SamplingError::NoFullGroup {
            participant: p.id.clone(),
            rows: p.responses(),
        });
    }
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(g, r)| Sample {
            audio: p.audio[r.clone()].to_vec(),
            text: p.text.slice(s![r, ..]).to_owned(),
            label: p.label,
            provenance: Provenance { participant: p.id.clone(), unit: Unit::Group(g) },
        })
        .collect())
}

/// Result of [`balance_by_resampling`].
#[derive(Clone, Debug, PartialEq)]
pub struct Balanced<T> {
    pub majority: Vec<T>,
    pub minority: Vec<T>,
    /// The pool ran out and was drawn from again.
    pub recycled: bool,
}

/// Draws minority items until they match the majority count.
///
/// `minority_pool[p]` lists the candidate items of minority participant
/// `p`. Participants are visited round-robin in a shuffled order, each
/// contributing one not-yet-used item per round, so items are spread over
/// participants and never repeat unless the whole pool is exhausted (then
/// the pool is reused and `recycled` is set). The drawn items come back
/// ordered by `(participant, item)` position in the pool; the majority
/// class is returned untouched.
pub fn balance_by_resampling<T: Clone>(majority: Vec<T>, minority_pool: &[Vec<T>], rng: &mut RngState) -> Result<Balanced<T>, SamplingError> {
    let pool_size: usize = minority_pool.iter().map(Vec::len).sum();
    if pool_size == 0 {
        return Err(SamplingError::EmptyMinorityPool);
    }
    let target = majority.len();
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(target);
    let mut recycled = false;
    while picks.len() < target {
        if !picks.is_empty() {
            recycled = true;
        }
        let mut participants: Vec<usize> = (0..minority_pool.len()).collect();
        participants.shuffle(rng);
        let mut queues: Vec<Vec<usize>> = minority_pool
            .iter()
            .map(|items| {
                let mut order: Vec<usize> = (0..items.len()).collect();
                order.shuffle(rng);
                order
            })
            .collect();
        let mut pass = Vec::with_capacity(pool_size);
        let mut round = 0;
        while pass.len() < pool_size {
            for &p in &participants {
                if let Some(&item) = queues[p].get(round) {
                    pass.push((p, item));
                }
            }
            round += 1;
        }
        queues.clear();
        let need = target - picks.len();
        picks.extend(pass.into_iter().take(need));
    }
    if recycled {
        log::warn!("minority pool of {pool_size} items is smaller than the {target} needed; items were reused");
    }
    picks.sort_unstable();
    let minority = picks.into_iter().map(|(p, i)| minority_pool[p][i].clone()).collect();
    Ok(Balanced { majority, minority, recycled })
}

/// The six orderings of three items, lexicographic: abc, acb, bac, bca, cab, cba.
pub const PERMUTATIONS_3: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Emits all six response orderings, audio and text permuted together.
pub fn permutation_augment(p: &ParticipantFeatures) -> Result<Vec<Sample>, SamplingError> {
    check_aligned(p)?;
    if p.responses() != THREE {
        return Err(SamplingError::ResponseCount {
            participant: p.id.clone(),
            found: p.responses(),
        });
    }
    Ok(PERMUTATIONS_3
        .iter()
        .enumerate()
        .map(|(k, perm)| Sample {
            audio: perm.iter().map(|&i| Arc::clone(&p.audio[i])).collect(),
            text: p.text.select(Axis(0), perm),
            label: p.label,
            provenance: Provenance { participant: p.id.clone(), unit: Unit::Permutation(k) },
        })
        .collect())
}

fn original(p: &ParticipantFeatures) -> Sample {
    Sample {
        audio: p.audio.clone(),
        text: p.text.clone(),
        label: p.label,
        provenance: Provenance { participant: p.id.clone(), unit: Unit::Original },
    }
}

/// The single evaluation sample of a participant: a uniformly drawn window
/// for interview corpora, the original order for three-response corpora.
pub fn select_eval_segment(p: &ParticipantFeatures, kind: CorpusKind, rng: &mut RngState) -> Result<Sample, SamplingError> {
    match kind {
        CorpusKind::ThreeResponse => {
            check_aligned(p)?;
            if p.responses() != THREE {
                return Err(SamplingError::ResponseCount {
                    participant: p.id.clone(),
                    found: p.responses(),
                });
            }
            Ok(original(p))
        }
        CorpusKind::Interview => {
            let mut groups = group_samples(p)?;
            let k = rng.random_range(0..groups.len());
            Ok(groups.swap_remove(k))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSummary {
    pub kind: Option<CorpusKind>,
    pub participants: ClassCounts,
    pub samples: ClassCounts,
    pub groups_per_participant: BTreeMap<String, usize>,
    pub discarded_rows: usize,
    pub skipped_participants: Vec<String>,
    pub recycled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub summary: ResampleSummary,
}

/// Builds the balanced/augmented training samples for one training split.
pub fn training_samples(participants: &[&ParticipantFeatures], kind: CorpusKind, rng: &mut RngState) -> Result<TrainingSet, SamplingError> {
    let mut summary = ResampleSummary {
        kind: Some(kind),
        participants: ClassCounts::from_labels(participants.iter().map(|p| p.label)),
        ..ResampleSummary::default()
    };
    let samples = match kind {
        CorpusKind::ThreeResponse => {
            let mut out = Vec::new();
            for p in participants {
                if p.label.is_depressed() {
                    out.extend(permutation_augment(p)?);
                } else {
                    check_aligned(p)?;
                    if p.responses() != THREE {
                        return Err(SamplingError::ResponseCount { participant: p.id.clone(), found: p.responses() });
                    }
                    out.push(original(p));
                }
            }
            out
        }
        CorpusKind::Interview => {
            let mut by_class: BTreeMap<Label, Vec<Vec<Sample>>> = BTreeMap::new();
            for p in participants {
                summary.discarded_rows += p.responses() % GROUP_SIZE;
                match group_samples(p) {
                    Ok(groups) => {
                        summary.groups_per_participant.insert(p.id.clone(), groups.len());
                        by_class.entry(p.label).or_default().push(groups);
                    }
                    Err(SamplingError::NoFullGroup { participant, rows }) => {
                        log::warn!("participant {participant}: {rows} responses, no full group; skipped");
                        summary.discarded_rows += rows - rows % GROUP_SIZE;
                        summary.skipped_participants.push(participant);
                    }
                    Err(e) => return Err(e),
                }
            }
            let dep = by_class.remove(&Label::Depressed).unwrap_or_default();
            let non = by_class.remove(&Label::NonDepressed).unwrap_or_default();
            let (major, minor) = if non.len() >= dep.len() { (non, dep) } else { (dep, non) };
            // one window per majority participant
            let majority: Vec<Sample> = major
                .into_iter()
                .map(|mut groups| {
                    let k = rng.random_range(0..groups.len());
                    groups.swap_remove(k)
                })
                .collect();
            if minor.is_empty() {
                majority
            } else {
                let balanced = balance_by_resampling(majority, &minor, rng)?;
                summary.recycled = balanced.recycled;
                let mut out = balanced.majority;
                out.extend(balanced.minority);
                out
            }
        }
    };
    summary.samples = ClassCounts::from_labels(samples.iter().map(|s| s.label));
    Ok(TrainingSet { samples, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn participant(id: &str, label: Label, n: usize) -> ParticipantFeatures {
        ParticipantFeatures {
            id: id.to_string(),
            label,
            audio: (0..n).map(|i| Arc::new(Mat::from_elem((2, 3), i as f64))).collect(),
            text: Mat::from_shape_fn((n, 4), |(i, j)| (i * 10 + j) as f64),
        }
    }

    #[test]
    fn group_counts() {
        let m = Array2::<f64>::zeros((107, 2));
        assert_eq!(group_segments(&m, "p").unwrap().len(), 10);
        assert_eq!(group_segments(&Array2::<f64>::zeros((10, 2)), "p").unwrap().len(), 1);
        assert_eq!(
            group_segments(&Array2::<f64>::zeros((9, 2)), "p9"),
            Err(SamplingError::NoFullGroup { participant: "p9".into(), rows: 9 })
        );
        let groups = group_segments(&Array2::from_shape_fn((25, 1), |(i, _)| i), "p").unwrap();
        assert_eq!(groups[1][[0, 0]], 10);
        assert_eq!(groups[1][[9, 0]], 19);
    }

    #[test]
    fn balance_77_from_77_uses_each_once() {
        // 30 participants with 77 groups in total
        let pool: Vec<Vec<(usize, usize)>> = (0..30).map(|p| (0..if p < 17 { 3 } else { 2 }).map(|g| (p, g)).collect()).collect();
        assert_eq!(pool.iter().map(Vec::len).sum::<usize>(), 77);
        let majority: Vec<u8> = vec![0; 77];
        let out = balance_by_resampling(majority.iter().map(|_| (99, 99)).collect(), &pool, &mut RngState::new(3)).unwrap();
        assert_eq!(out.minority.len(), 77);
        assert_eq!(out.majority.len(), 77);
        assert!(!out.recycled);
        let unique: BTreeSet<_> = out.minority.iter().collect();
        assert_eq!(unique.len(), 77);
    }

    #[test]
    fn balance_spreads_across_participants() {
        let pool: Vec<Vec<(usize, usize)>> = (0..5).map(|p| (0..10).map(|g| (p, g)).collect()).collect();
        let out = balance_by_resampling(vec![(0, 0); 10], &pool, &mut RngState::new(1)).unwrap();
        for p in 0..5 {
            assert_eq!(out.minority.iter().filter(|x| x.0 == p).count(), 2);
        }
    }

    #[test]
    fn balanced_input_is_noop() {
        let pool: Vec<Vec<&str>> = vec![vec!["a"], vec!["b"], vec!["c"]];
        let out = balance_by_resampling(vec!["x", "y", "z"], &pool, &mut RngState::new(5)).unwrap();
        assert_eq!(out.minority, vec!["a", "b", "c"]);
        assert_eq!(out.majority, vec!["x", "y", "z"]);
    }

    #[test]
    fn small_pool_recycles() {
        let pool = vec![vec![1], vec![2]];
        let out = balance_by_resampling(vec![0; 5], &pool, &mut RngState::new(5)).unwrap();
        assert_eq!(out.minority.len(), 5);
        assert!(out.recycled);
        let empty: Vec<Vec<i32>> = vec![vec![]];
        assert_eq!(balance_by_resampling(vec![0], &empty, &mut RngState::new(0)), Err(SamplingError::EmptyMinorityPool));
    }

    #[test]
    fn six_orderings_paired() {
        let p = participant("d1", Label::Depressed, 3);
        let samples = permutation_augment(&p).unwrap();
        assert_eq!(samples.len(), 6);
        let orders: Vec<Vec<usize>> = samples.iter().map(|s| s.text.column(0).iter().map(|&v| v as usize / 10).collect()).collect();
        assert_eq!(orders, vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]);
        for (s, o) in samples.iter().zip(&orders) {
            let audio_order: Vec<usize> = s.audio.iter().map(|m| m[[0, 0]] as usize).collect();
            assert_eq!(&audio_order, o);
            assert_eq!(s.label, Label::Depressed);
        }
        assert!(matches!(permutation_augment(&participant("x", Label::Depressed, 4)), Err(SamplingError::ResponseCount { found: 4, .. })));
    }

    #[test]
    fn identical_responses_still_six() {
        let mut p = participant("d", Label::Depressed, 3);
        p.text.fill(1.0);
        let samples = permutation_augment(&p).unwrap();
        assert_eq!(samples.len(), 6);
        assert!(samples.iter().all(|s| s.text == samples[0].text));
    }

    #[test]
    fn thirty_depressed_become_180() {
        let ps: Vec<ParticipantFeatures> = (0..30)
            .map(|i| participant(&format!("d{i}"), Label::Depressed, 3))
            .chain((0..132).map(|i| participant(&format!("c{i}"), Label::NonDepressed, 3)))
            .collect();
        let refs: Vec<&ParticipantFeatures> = ps.iter().collect();
        let set = training_samples(&refs, CorpusKind::ThreeResponse, &mut RngState::new(0)).unwrap();
        assert_eq!(set.summary.samples, ClassCounts { depressed: 180, non_depressed: 132 });
    }

    #[test]
    fn eval_segment_rules() {
        let p = participant("c", Label::NonDepressed, 3);
        let s = select_eval_segment(&p, CorpusKind::ThreeResponse, &mut RngState::new(0)).unwrap();
        assert_eq!(s.text, p.text);
        assert_eq!(s.provenance.unit, Unit::Original);

        let one = participant("i", Label::NonDepressed, 14);
        let s = select_eval_segment(&one, CorpusKind::Interview, &mut RngState::new(0)).unwrap();
        assert_eq!(s.provenance.unit, Unit::Group(0));

        let five = participant("f", Label::NonDepressed, 50);
        let a = select_eval_segment(&five, CorpusKind::Interview, &mut RngState::new(42)).unwrap();
        let b = select_eval_segment(&five, CorpusKind::Interview, &mut RngState::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_segment_uniform() {
        let five = participant("f", Label::NonDepressed, 50);
        let mut rng = RngState::new(7);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            match select_eval_segment(&five, CorpusKind::Interview, &mut rng).unwrap().provenance.unit {
                Unit::Group(g) => counts[g] += 1,
                _ => unreachable!(),
            }
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.2).abs() <= 0.02, "{counts:?}");
        }
    }
}
