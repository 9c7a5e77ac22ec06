use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Layers skipped by a draft subnetwork. Indices are 1-based.
///
/// An empty spec is the full model. A removed attention or MLP sub-block
/// passes the residual stream through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftSpec {
    remove_attn: BTreeSet<usize>,
    remove_mlp: BTreeSet<usize>,
}

impl DraftSpec {
    /// The full model: nothing removed.
    pub fn full() -> Self {
        Self::default()
    }

    /// Builds a spec; every removed MLP layer must also have its attention removed.
    pub fn new(
        remove_attn: impl IntoIterator<Item = usize>,
        remove_mlp: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ModelError> {
        let remove_attn: BTreeSet<usize> = remove_attn.into_iter().collect();
        let remove_mlp: BTreeSet<usize> = remove_mlp.into_iter().collect();
        if remove_attn.contains(&0) || remove_mlp.contains(&0) {
            return Err(ModelError::LayerIndex { layer: 0, num_layers: 0 });
        }
        if !remove_mlp.is_subset(&remove_attn) {
            return Err(ModelError::Config(format!(
                "removed MLP layers {remove_mlp:?} are not a subset of removed attention layers {remove_attn:?}"
            )));
        }
        Ok(Self { remove_attn, remove_mlp })
    }

    /// Removes every attention and MLP sub-block of an `num_layers` model.
    pub fn remove_all(num_layers: usize) -> Self {
        let all: BTreeSet<usize> = (1..=num_layers).collect();
        Self {
            remove_attn: all.clone(),
            remove_mlp: all,
        }
    }

    pub fn remove_attn(&self) -> &BTreeSet<usize> {
        &self.remove_attn
    }

    pub fn remove_mlp(&self) -> &BTreeSet<usize> {
        &self.remove_mlp
    }

    pub fn removes_attn(&self, layer: usize) -> bool {
        self.remove_attn.contains(&layer)
    }

    pub fn removes_mlp(&self, layer: usize) -> bool {
        self.remove_mlp.contains(&layer)
    }

    pub fn is_full(&self) -> bool {
        self.remove_attn.is_empty() && self.remove_mlp.is_empty()
    }

    pub fn check_layers(&self, num_layers: usize) -> Result<(), ModelError> {
        match self.remove_attn.iter().chain(&self.remove_mlp).find(|l| **l > num_layers) {
            Some(&layer) => Err(ModelError::LayerIndex { layer, num_layers }),
            None => Ok(()),
        }
    }
}
