//! Laplacian eigenmaps over language similarity graphs.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::{format_float, SimilarityMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Similarity to graph weights: clamp to [0, 1], drop self-loops, optionally keep
/// only each node's `knn` strongest edges (symmetrized with an elementwise max).
pub fn build_affinity(sim: &SimilarityMatrix, knn: Option<usize>) -> Result<AffinityMatrix> {
    let l = sim.len();
    let mut values = sim.values.map(|v| v.clamp(0.0, 1.0));
    values.fill_diagonal(0.0);

    if let Some(k) = knn {
        if k == 0 {
            return Err(Error::InvalidInput("knn must be positive".into()));
        }
        let mut kept = DMatrix::<f64>::zeros(l, l);
        for i in 0..l {
            let mut order: Vec<usize> = (0..l).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| values[(i, b)].total_cmp(&values[(i, a)]).then(a.cmp(&b)));
            for &j in order.iter().take(k) {
                kept[(i, j)] = values[(i, j)];
            }
        }
        values = DMatrix::from_fn(l, l, |i, j| kept[(i, j)].max(kept[(j, i)]));
    }

    for i in 0..l {
        if values.row(i).iter().all(|&v| v <= 0.0) {
            return Err(Error::IsolatedNode(sim.labels[i].clone()));
        }
    }
    Ok(AffinityMatrix {
        labels: sim.labels.clone(),
        values,
    })
}

fn component_count(values: &DMatrix<f64>) -> usize {
    let l = values.nrows();
    let mut seen = vec![false; l];
    let mut components = 0;
    for start in 0..l {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..l {
                if !seen[j] && values[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCoordinates {
    pub labels: Vec<String>,
    /// One row per language.
    pub coords: Vec<Vec<f64>>,
    /// Ascending, one per coordinate column.
    pub eigenvalues: Vec<f64>,
}

impl EmbeddingCoordinates {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Columns `language,x1..xm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["language".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        out.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.coords) {
            let mut record = vec![label.clone()];
            record.extend(row.iter().map(|v| format_float(*v)));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Embeds the graph with the eigenvectors of the symmetric normalized Laplacian
/// `I - D^-1/2 A D^-1/2` for its `dim` smallest nonzero eigenvalues, rescaled by
/// `D^-1/2`. Each column is signed so its largest-magnitude entry (first on ties)
/// is positive.
/// Entries within this relative distance of the largest magnitude count as tied
/// when fixing eigenvector signs; the lowest index wins.
const SIGN_TIE_TOLERANCE: f64 = 1e-9;

pub fn laplacian_eigenmap(aff: &AffinityMatrix, dim: usize) -> Result<EmbeddingCoordinates> {
    let l = aff.values.nrows();
    if dim == 0 || dim + 2 > l {
        return Err(Error::InvalidInput(format!(
            "embedding dimension must be in 1..={} for {l} nodes, got {dim}",
            l.saturating_sub(2)
        )));
    }
    let components = component_count(&aff.values);
    if components > 1 {
        return Err(Error::DisconnectedGraph { components });
    }
    let degree: Vec<f64> = aff.values.row_iter().map(|r| r.sum()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut lap = DMatrix::from_fn(l, l, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - inv_sqrt[i] * aff.values[(i, j)] * inv_sqrt[j]
    });
    lap = (&lap + lap.transpose()) * 0.5;

    let eig = SymmetricEigen::try_new(lap, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("Laplacian eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let mut coords = vec![vec![0.0; dim]; l];
    let mut eigenvalues = Vec::with_capacity(dim);
    for (c, &idx) in order.iter().skip(1).take(dim).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].clamp(0.0, 2.0));
        let column: Vec<f64> = (0..l).map(|i| eig.eigenvectors[(i, idx)] * inv_sqrt[i]).collect();
        let peak = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pivot = column
            .iter()
            .position(|v| v.abs() >= peak * (1.0 - SIGN_TIE_TOLERANCE))
            .unwrap_or(0);
        let sign = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, v) in column.iter().enumerate() {
            coords[i][c] = sign * v;
        }
    }
    Ok(EmbeddingCoordinates {
        labels: aff.labels.clone(),
        coords,
        eigenvalues,
    })
}
