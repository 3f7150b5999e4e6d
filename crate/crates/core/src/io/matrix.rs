use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pooled per-sentence activations for one (language, layer); row i is sentence i.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    language: String,
    layer: String,
    data: DMatrix<f32>,
}

fn check_finite(context: &str, data: &DMatrix<f32>) -> Result<()> {
    for (col, column) in data.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData {
                context: context.to_string(),
                row,
                col,
            });
        }
    }
    Ok(())
}

impl ActivationMatrix {
    pub fn new(language: impl Into<String>, layer: impl Into<String>, data: DMatrix<f32>) -> Result<Self> {
        let language = language.into();
        let layer = layer.into();
        let context = format!("{language}/{layer}");
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(Error::ShapeMismatch {
                context,
                expected: "at least 2 rows and 1 column".into(),
                found: format!("{}x{}", data.nrows(), data.ncols()),
            });
        }
        check_finite(&context, &data)?;
        Ok(Self { language, layer, data })
    }

    /// Builds from a row-major buffer.
    pub fn from_row_slice(
        language: impl Into<String>,
        layer: impl Into<String>,
        rows: usize,
        cols: usize,
        values: &[f32],
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "row-major buffer".into(),
                expected: format!("{} values", rows * cols),
                found: format!("{} values", values.len()),
            });
        }
        Self::new(language, layer, DMatrix::from_row_slice(rows, cols, values))
    }

    /// Converts an f64 matrix, rounding each entry to f32.
    pub fn from_f64(language: impl Into<String>, layer: impl Into<String>, data: &DMatrix<f64>) -> Result<Self> {
        Self::new(language, layer, data.map(|v| v as f32))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn data(&self) -> &DMatrix<f32> {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.data.map(f64::from)
    }

    pub fn to_row_major(&self) -> Vec<f32> {
        self.data.transpose().as_slice().to_vec()
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }
}

/// Ragged per-token activations. Rows of sentence i are contiguous and in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivations {
    language: String,
    layer: String,
    token_counts: Vec<usize>,
    data: DMatrix<f32>,
}

impl TokenActivations {
    pub fn new(
        language: impl Into<String>,
        layer: impl Into<String>,
        token_counts: Vec<usize>,
        data: DMatrix<f32>,
    ) -> Result<Self> {
        let language = language.into();
        let layer = layer.into();
        let context = format!("{language}/{layer}");
        if let Some(i) = token_counts.iter().position(|&t| t == 0) {
            return Err(Error::Malformed {
                context,
                reason: format!("sentence {i} has zero tokens"),
            });
        }
        let total: usize = token_counts.iter().sum();
        if total != data.nrows() {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{total} token rows"),
                found: format!("{} rows", data.nrows()),
            });
        }
        if data.ncols() < 1 {
            return Err(Error::ShapeMismatch {
                context,
                expected: "at least 1 column".into(),
                found: "0 columns".into(),
            });
        }
        check_finite(&context, &data)?;
        Ok(Self {
            language,
            layer,
            token_counts,
            data,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn token_counts(&self) -> &[usize] {
        &self.token_counts
    }

    pub fn data(&self) -> &DMatrix<f32> {
        &self.data
    }

    pub fn sentences(&self) -> usize {
        self.token_counts.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// Row ranges of each sentence.
    pub fn spans(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.token_counts.iter().scan(0usize, |start, &t| {
            let r = *start..*start + t;
            *start += t;
            Some(r)
        })
    }
}

/// Data held for one (language, layer) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerData {
    Pooled(ActivationMatrix),
    Token(TokenActivations),
}

impl LayerData {
    pub fn language(&self) -> &str {
        match self {
            LayerData::Pooled(m) => m.language(),
            LayerData::Token(t) => t.language(),
        }
    }

    pub fn layer(&self) -> &str {
        match self {
            LayerData::Pooled(m) => m.layer(),
            LayerData::Token(t) => t.layer(),
        }
    }

    pub fn sentences(&self) -> usize {
        match self {
            LayerData::Pooled(m) => m.rows(),
            LayerData::Token(t) => t.sentences(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LayerData::Pooled(m) => m.cols(),
            LayerData::Token(t) => t.cols(),
        }
    }
}
