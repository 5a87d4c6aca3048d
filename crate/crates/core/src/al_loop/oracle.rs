use crate::corpus::{DatasetSplit, TagSeq};
use crate::error::{Error, Result};

/// What the loop asks of an oracle in one round.
#[derive(Clone, Copy, Debug)]
pub struct OracleRequest<'a> {
    pub iteration: usize,
    /// Ids selected this round.
    pub new: &'a [usize],
    /// Every id still waiting for a label, including `new`.
    pub awaiting: &'a [usize],
}

/// Source of gold segmentations. May answer only part of a request; the rest
/// stays pending and can be answered in a later round.
pub trait Oracle {
    fn label(&mut self, request: &OracleRequest<'_>, split: &DatasetSplit) -> Result<Vec<(usize, TagSeq)>>;
}

/// Reveals the reference segmentation already stored in the corpus.
#[derive(Clone, Copy, Debug, Default)]
pub struct GoldOracle;

impl Oracle for GoldOracle {
    fn label(&mut self, request: &OracleRequest<'_>, split: &DatasetSplit) -> Result<Vec<(usize, TagSeq)>> {
        request
            .awaiting
            .iter()
            .map(|&id| {
                split
                    .training_by_id(id)
                    .map(|s| (id, s.tags.clone()))
                    .ok_or_else(|| Error::Oracle(format!("no gold label for sentence {id}")))
            })
            .collect()
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn label(&mut self, request: &OracleRequest<'_>, split: &DatasetSplit) -> Result<Vec<(usize, TagSeq)>> {
        (**self).label(request, split)
    }
}
