use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Named, ordered list of every learnable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Matrix)>,
}

impl ModelParams {
    pub fn from_entries(entries: Vec<(String, Matrix)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::Contract(format!("duplicate parameter name {name}")));
            }
        }
        Ok(Self { entries })
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Errors unless `other` has the same names, in the same order, with the
    /// same shapes.
    pub fn check_same_layout(&self, other: &ModelParams) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Topology(format!(
                "expected {} tensors, got {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, a), (nb, b)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(Error::Topology(format!("expected tensor {na}, got {nb}")));
            }
            if a.shape() != b.shape() {
                return Err(Error::Topology(format!(
                    "tensor {na}: expected shape {:?}, got {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self += other * c`, entry by entry.
    pub fn add_scaled(&mut self, other: &ModelParams, c: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += c * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (_, m) in &mut self.entries {
            m.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CensusRow {
    pub name: String,
    pub shape: (usize, usize),
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterCensus {
    pub rows: Vec<CensusRow>,
    pub total: usize,
}

impl ParameterCensus {
    pub fn of(params: &ModelParams) -> Self {
        let rows: Vec<CensusRow> = params
            .iter()
            .map(|(name, m)| CensusRow {
                name: name.to_string(),
                shape: m.shape(),
                count: m.len(),
            })
            .collect();
        let total = rows.iter().map(|r| r.count).sum();
        Self { rows, total }
    }
}
