use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ownership::TokenOwnership;
use crate::dense_caption::{LikelihoodScore, ObjectAnnotation};
use crate::error::{Error, Result};

/// One object's contribution to a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreContribution {
    pub object_index: usize,
    pub tag: String,
    pub score: LikelihoodScore,
    pub mask_area: usize,
    pub tokens: Vec<usize>,
}

/// Queries by tokens matrix of per-object scores, 1 where no object applies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub values: Array2<f64>,
    pub provenance: Vec<ScoreContribution>,
}

impl ScoreMatrix {
    pub fn ones(n_q: usize, n_k: usize) -> Self {
        Self {
            values: Array2::ones((n_q, n_k)),
            provenance: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// `S[p, j] = s_i` where query `p` lies in object `i`'s mask and token `j`
/// is owned by `i`, otherwise 1. Where several objects apply the largest
/// score wins.
pub fn build_score_matrix(
    annotations: &[ObjectAnnotation],
    ownership: &TokenOwnership,
    n_q: usize,
    n_k: usize,
) -> Result<ScoreMatrix> {
    if ownership.n_k() != n_k {
        return Err(Error::shape("token ownership", &[n_k], &[ownership.n_k()]));
    }
    ownership.check_objects(annotations)?;
    let mut values = Array2::<f64>::ones((n_q, n_k));
    let mut written = Array2::<bool>::from_elem((n_q, n_k), false);
    let mut provenance = Vec::new();
    for a in annotations {
        let cells = a.mask.cells();
        if cells.len() != n_q {
            return Err(Error::shape(
                format!("mask of `{}`", a.tag),
                &[n_q],
                &[cells.len()],
            ));
        }
        let tokens = ownership.tokens_of(a.object_index);
        let s = a.score.value();
        for (p, _) in cells.iter().enumerate().filter(|(_, c)| **c) {
            for &j in &tokens {
                if !written[[p, j]] || s > values[[p, j]] {
                    values[[p, j]] = s;
                    written[[p, j]] = true;
                }
            }
        }
        provenance.push(ScoreContribution {
            object_index: a.object_index,
            tag: a.tag.clone(),
            score: a.score,
            mask_area: a.mask.area(),
            tokens,
        });
    }
    Ok(ScoreMatrix { values, provenance })
}
