use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochSet, TrialRef};
use crate::{Error, Result, Tensor};

/// Index batches covering `0..len` exactly once; the last may be short.
pub fn make_batches(len: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::EmptyData("cannot batch an empty trial set".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A list of trials drawn from a slice of epoch sets.
#[derive(Clone, Debug)]
pub struct TrialView<'a> {
    pub sets: &'a [EpochSet],
    pub refs: Cow<'a, [TrialRef]>,
}

impl<'a> TrialView<'a> {
    pub fn new(sets: &'a [EpochSet], refs: &'a [TrialRef]) -> Self {
        Self {
            sets,
            refs: Cow::Borrowed(refs),
        }
    }

    /// Every trial of a single set, in order.
    pub fn of_set(set: &'a EpochSet) -> Self {
        Self {
            sets: std::slice::from_ref(set),
            refs: Cow::Owned((0..set.trials()).map(|trial| TrialRef { set: 0, trial }).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        let r = self.refs[i];
        self.sets[r.set].labels[r.trial]
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn class_names(&self) -> &[String] {
        self.sets.first().map_or(&[], |s| &s.class_names)
    }

    /// `(subject, session, trial)` identity of entry `i`.
    pub fn identity(&self, i: usize) -> (&str, &str, usize) {
        let r = self.refs[i];
        let set = &self.sets[r.set];
        (&set.subject_id, &set.session_id, r.trial)
    }

    /// Stacks the selected entries into `[B, 1, C, T]` plus labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let first = self.sets.first().ok_or_else(|| Error::EmptyData("view has no sets".into()))?;
        let (c, t) = (first.channels(), first.timepoints());
        let mut values = Vec::with_capacity(indices.len() * c * t);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self.refs[i];
            values.extend_from_slice(self.sets[r.set].trial(r.trial));
            labels.push(self.label(i));
        }
        Ok((Tensor::new(vec![indices.len(), 1, c, t], values)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_for_288_trials() {
        let sizes: Vec<usize> = make_batches(288, 128, true, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![128, 128, 32]);
    }

    #[test]
    fn unshuffled_keeps_order() {
        let flat: Vec<usize> = make_batches(10, 3, false, 0).unwrap().concat();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_shuffle_is_reproducible_partition() {
        let a = make_batches(300, 64, true, 9).unwrap();
        assert_eq!(a, make_batches(300, 64, true, 9).unwrap());
        let mut flat = a.concat();
        flat.sort_unstable();
        assert_eq!(flat, (0..300).collect::<Vec<_>>());
    }

    #[test]
    fn empty_and_zero_batch() {
        assert!(matches!(make_batches(0, 4, false, 0), Err(Error::EmptyData(_))));
        assert!(matches!(make_batches(4, 0, false, 0), Err(Error::Parameter(_))));
    }
}
