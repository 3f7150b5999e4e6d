//! Reduction of ragged token sequences to per-sentence rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matrix::{ActivationMatrix, TokenActivations};
use crate::error::Result;

/// Averages each sentence's token rows.
///
/// Accumulation is in f64 over tokens in order, with a single division at the end.
pub fn mean_pool(tokens: &TokenActivations) -> Result<ActivationMatrix> {
    let d = tokens.cols();
    let data = tokens.data();
    let mut out = DMatrix::<f32>::zeros(tokens.sentences(), d);
    let mut acc = vec![0f64; d];
    for (i, span) in tokens.spans().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let count = span.len() as f64;
        for r in span {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += f64::from(data[(r, c)]);
            }
        }
        for (c, a) in acc.iter().enumerate() {
            out[(i, c)] = (a / count) as f32;
        }
    }
    ActivationMatrix::new(tokens.language(), tokens.layer(), out)
}

/// One flattened token row's origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenKey {
    pub sentence: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedTokens {
    pub data: DMatrix<f32>,
    pub keys: Vec<TokenKey>,
}

/// Treats every timestep as its own data point, sentence-major.
pub fn token_flatten(tokens: &TokenActivations) -> FlattenedTokens {
    let keys = tokens
        .token_counts()
        .iter()
        .enumerate()
        .flat_map(|(sentence, &t)| (0..t).map(move |position| TokenKey { sentence, position }))
        .collect();
    FlattenedTokens {
        data: tokens.data().clone(),
        keys,
    }
}

/// How two flattened token matrices were paired row-by-row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub rows_a: usize,
    pub rows_b: usize,
    pub rows_used: usize,
    pub truncated: bool,
}

/// Pairs the rows of two flattened token sets by truncating both to the shorter one.
pub fn align_token_rows(
    a: &FlattenedTokens,
    b: &FlattenedTokens,
) -> (DMatrix<f32>, DMatrix<f32>, TokenAlignment) {
    let rows_a = a.data.nrows();
    let rows_b = b.data.nrows();
    let rows_used = rows_a.min(rows_b);
    let alignment = TokenAlignment {
        rows_a,
        rows_b,
        rows_used,
        truncated: rows_a != rows_b,
    };
    (
        a.data.rows(0, rows_used).into_owned(),
        b.data.rows(0, rows_used).into_owned(),
        alignment,
    )
}
