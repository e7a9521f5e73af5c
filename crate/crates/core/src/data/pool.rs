use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassLabel, SampleId};
use crate::error::{Error, Result};

/// Labeled/unlabeled partition over one dataset's ids.
///
/// Both sides are kept in ascending id order, which fixes the row order of every score
/// vector computed over the unlabeled side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    labeled: BTreeSet<SampleId>,
    unlabeled: BTreeSet<SampleId>,
    labels: BTreeMap<SampleId, ClassLabel>,
}

impl Pool {
    /// Everything starts unlabeled.
    pub fn new(ids: impl IntoIterator<Item = SampleId>) -> Self {
        Self {
            labeled: BTreeSet::new(),
            unlabeled: ids.into_iter().collect(),
            labels: BTreeMap::new(),
        }
    }

    pub fn labeled_ids(&self) -> &BTreeSet<SampleId> {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn unlabeled_vec(&self) -> Vec<SampleId> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn labels(&self) -> &BTreeMap<SampleId, ClassLabel> {
        &self.labels
    }

    pub fn label(&self, id: SampleId) -> Option<ClassLabel> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_labeled(&self, id: SampleId) -> bool {
        self.labeled.contains(&id)
    }

    pub fn is_unlabeled(&self, id: SampleId) -> bool {
        self.unlabeled.contains(&id)
    }

    /// Moves `annotations` from the unlabeled to the labeled side.
    ///
    /// Validation happens before any mutation, so a failed call leaves the pool untouched.
    pub fn reveal_labels(&mut self, annotations: &[(SampleId, ClassLabel)]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &(id, _) in annotations {
            if self.labeled.contains(&id) || !seen.insert(id) {
                return Err(Error::AlreadyLabeled(id));
            }
            if !self.unlabeled.contains(&id) {
                return Err(Error::UnknownId(id));
            }
        }
        for &(id, label) in annotations {
            self.unlabeled.remove(&id);
            self.labeled.insert(id);
            self.labels.insert(id, label);
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> bool {
        self.labeled.is_disjoint(&self.unlabeled)
            && self.labels.len() == self.labeled.len()
            && self.labels.keys().all(|id| self.labeled.contains(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reveal_moves_ids() {
        let mut pool = Pool::new(0..500);
        let batch: Vec<_> = (0..80).map(|i| (i * 3, ClassLabel::Normal)).collect();
        pool.reveal_labels(&batch).unwrap();
        assert_eq!(pool.labeled_ids().len(), 80);
        assert_eq!(pool.unlabeled_ids().len(), 420);
        assert!(pool.check_invariants());
    }

    #[test]
    fn empty_reveal_is_identity() {
        let mut pool = Pool::new(0..10);
        let before = pool.clone();
        pool.reveal_labels(&[]).unwrap();
        assert_eq!(pool, before);
    }

    #[test]
    fn errors_leave_pool_untouched() {
        let mut pool = Pool::new(0..10);
        pool.reveal_labels(&[(1, ClassLabel::Abnormal)]).unwrap();
        let before = pool.clone();
        assert!(matches!(
            pool.reveal_labels(&[(2, ClassLabel::Normal), (1, ClassLabel::Normal)]),
            Err(Error::AlreadyLabeled(1))
        ));
        assert!(matches!(
            pool.reveal_labels(&[(3, ClassLabel::Normal), (99, ClassLabel::Normal)]),
            Err(Error::UnknownId(99))
        ));
        assert!(matches!(
            pool.reveal_labels(&[(4, ClassLabel::Normal), (4, ClassLabel::Normal)]),
            Err(Error::AlreadyLabeled(4))
        ));
        assert_eq!(pool, before);
    }

    proptest! {
        #[test]
        fn size_is_conserved(batches in prop::collection::vec(prop::collection::vec(0u32..200, 0..30), 0..10)) {
            let mut pool = Pool::new(0..200);
            for batch in batches {
                let ann: Vec<_> = batch.iter().map(|&id| (id, ClassLabel::Normal)).collect();
                let _ = pool.reveal_labels(&ann);
                prop_assert_eq!(pool.len(), 200);
                prop_assert!(pool.check_invariants());
            }
        }
    }
}
