//! A candidate set prepared for the models: augmented feature rows with the
//! user vector appended, and the canonical (id-sorted) item order.

use steerank_autodiff::Tensor;

use crate::data::{Item, LogSample, UserProfile};
use crate::error::{invalid, Result};
use crate::features::augment_features;

#[derive(Clone, Debug)]
pub struct Instance {
    pub user: UserProfile,
    pub candidates: Vec<Item>,
    /// `[M, d_aug + d_u]`, row `i` is `[aug(x_i); x_u]`.
    pub rows: Tensor,
    /// Candidate indices sorted by item id.
    pub id_order: Vec<usize>,
    /// Logged exposure list as candidate indices (empty when unknown).
    pub exposure: Vec<usize>,
    /// Click labels aligned with `exposure`.
    pub clicks: Vec<f64>,
}

impl Instance {
    pub fn new(user: UserProfile, candidates: Vec<Item>) -> Result<Self> {
        if candidates.is_empty() {
            return invalid("empty candidate set");
        }
        let width = candidates[0].features.len();
        if candidates.iter().any(|c| c.features.len() != width) {
            return invalid("candidate feature widths differ");
        }
        let mut ids: Vec<u64> = candidates.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != candidates.len() {
            return invalid("candidate ids are not distinct");
        }
        let aug = augment_features(&candidates);
        let rows: Vec<Vec<f64>> = aug
            .into_iter()
            .map(|mut r| {
                r.extend_from_slice(&user.features);
                r
            })
            .collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("non-finite feature value");
        }
        let rows = Tensor::from_rows(&rows)?;
        let mut id_order: Vec<usize> = (0..candidates.len()).collect();
        id_order.sort_by_key(|&i| candidates[i].id);
        Ok(Self {
            user,
            candidates,
            rows,
            id_order,
            exposure: Vec::new(),
            clicks: Vec::new(),
        })
    }

    pub fn from_sample(sample: &LogSample) -> Result<Self> {
        sample.validate()?;
        let mut inst = Self::new(sample.user.clone(), sample.candidates.clone())?;
        inst.exposure = sample.exposure_indices()?;
        inst.clicks = sample.clicks();
        Ok(inst)
    }

    pub fn m(&self) -> usize {
        self.candidates.len()
    }

    pub fn width(&self) -> usize {
        self.rows.shape()[1]
    }

    /// Rows of the listed candidates, in list order.
    pub fn list_rows(&self, list: &[usize]) -> Result<Tensor> {
        let w = self.width();
        let mut data = Vec::with_capacity(list.len() * w);
        for &i in list {
            if i >= self.m() {
                return invalid(format!("candidate index {i} out of range"));
            }
            data.extend_from_slice(self.rows.row(i));
        }
        Ok(Tensor::matrix(list.len(), w, data)?)
    }

    pub fn items(&self, list: &[usize]) -> Vec<&Item> {
        list.iter().map(|&i| &self.candidates[i]).collect()
    }
}

/// Input row width for a given raw feature dimension.
pub fn input_width(feature_dim: usize, user_dim: usize) -> usize {
    feature_dim + crate::features::AUGMENT_EXTRA + user_dim
}
