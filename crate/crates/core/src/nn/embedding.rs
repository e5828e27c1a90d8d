use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, NnError};

/// Dense vectors for one categorical field, indexed by hashed id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub field_name: String,
    /// `vocab_size × dim`
    pub vectors: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(
        field_name: impl Into<String>,
        vocab_size: usize,
        dim: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, init_std).expect("non-negative init std");
        let values = (0..vocab_size * dim).map(|_| normal.sample(rng)).collect();
        Self {
            field_name: field_name.into(),
            vectors: DenseMatrix::from_vec(vocab_size, dim, values).expect("sized"),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Per-field embedding tables, kept in schema field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    pub tables: Vec<EmbeddingTable>,
}

/// Row gradients accumulated per table; repeated ids sum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingGrads {
    pub rows: Vec<BTreeMap<usize, Vec<f64>>>,
}

impl EmbeddingGrads {
    pub fn new(num_tables: usize) -> Self {
        Self {
            rows: vec![BTreeMap::new(); num_tables],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rows
            .iter()
            .all(|t| t.values().all(|g| g.iter().all(|&v| v == 0.0)))
    }
}

impl EmbeddingTables {
    pub fn new(tables: Vec<EmbeddingTable>) -> Self {
        Self { tables }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tables.iter().map(|t| t.vectors.len()).sum()
    }

    /// Resolves field names to table positions.
    pub fn field_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, NnError> {
        names
            .iter()
            .map(|name| {
                let name = name.as_ref();
                self.tables
                    .iter()
                    .position(|t| t.field_name == name)
                    .ok_or_else(|| NnError::UnknownField(name.to_string()))
            })
            .collect()
    }

    /// Total width of the concatenation over `fields`.
    pub fn width(&self, fields: &[usize]) -> usize {
        fields.iter().map(|&f| self.tables[f].dim()).sum()
    }

    /// Concatenates the vectors of `fields` (in the given order) for one
    /// instance whose ids are listed in full schema order.
    pub fn lookup_into(&self, fields: &[usize], ids: &[u32], out: &mut [f64]) -> Result<(), NnError> {
        let mut offset = 0;
        for &f in fields {
            let table = &self.tables[f];
            let id = *ids.get(f).ok_or(NnError::MissingId { field: f })? as usize;
            if id >= table.vocab_size() {
                return Err(NnError::IdOutOfRange {
                    field: table.field_name.clone(),
                    id,
                    vocab: table.vocab_size(),
                });
            }
            let dim = table.dim();
            out[offset..offset + dim].copy_from_slice(table.vectors.row(id));
            offset += dim;
        }
        Ok(())
    }

    pub fn lookup(&self, fields: &[usize], ids: &[u32]) -> Result<Vec<f64>, NnError> {
        let mut out = vec![0.0; self.width(fields)];
        self.lookup_into(fields, ids, &mut out)?;
        Ok(out)
    }

    /// One concatenated row per instance.
    pub fn lookup_batch<'a>(
        &self,
        fields: &[usize],
        ids: impl ExactSizeIterator<Item = &'a [u32]>,
    ) -> Result<DenseMatrix, NnError> {
        let width = self.width(fields);
        let mut out = DenseMatrix::zeros(ids.len(), width);
        for (r, row_ids) in ids.enumerate() {
            self.lookup_into(fields, row_ids, out.row_mut(r))?;
        }
        Ok(out)
    }

    /// Scatters a gradient on a concatenated row back onto the rows it came
    /// from.
    pub fn accumulate_grad(
        &self,
        fields: &[usize],
        ids: &[u32],
        row_grad: &[f64],
        grads: &mut EmbeddingGrads,
    ) -> Result<(), NnError> {
        if row_grad.len() != self.width(fields) {
            return Err(NnError::Shape {
                op: "accumulate_grad",
                left: (1, self.width(fields)),
                right: (1, row_grad.len()),
            });
        }
        let mut offset = 0;
        for &f in fields {
            let dim = self.tables[f].dim();
            let id = *ids.get(f).ok_or(NnError::MissingId { field: f })? as usize;
            let slot = grads.rows[f].entry(id).or_insert_with(|| vec![0.0; dim]);
            for (s, g) in slot.iter_mut().zip(&row_grad[offset..offset + dim]) {
                *s += g;
            }
            offset += dim;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tables.iter().all(|t| t.vectors.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> EmbeddingTables {
        EmbeddingTables::new(vec![
            EmbeddingTable {
                field_name: "user".into(),
                vectors: DenseMatrix::from_rows(&[&[0.5, -0.5], &[1.0, 2.0]]),
            },
            EmbeddingTable {
                field_name: "item".into(),
                vectors: DenseMatrix::from_rows(&[&[1.0, 1.0, 1.0], &[0.0, 0.1, 0.2]]),
            },
        ])
    }

    #[test]
    fn single_field_lookup_reads_the_row() {
        let t = tables();
        assert_eq!(t.lookup(&[0], &[0, 1]).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn concatenation_follows_declared_order() {
        let t = tables();
        let fields = t.field_indices(&["user", "item"]).unwrap();
        let row = t.lookup(&fields, &[1, 1]).unwrap();
        assert_eq!(row, vec![1.0, 2.0, 0.0, 0.1, 0.2]);
        let swapped = t.field_indices(&["item", "user"]).unwrap();
        assert_eq!(t.lookup(&swapped, &[1, 1]).unwrap(), vec![0.0, 0.1, 0.2, 1.0, 2.0]);
    }

    #[test]
    fn unknown_field_is_an_error() {
        assert_eq!(
            tables().field_indices(&["nope"]).unwrap_err(),
            NnError::UnknownField("nope".into())
        );
    }

    #[test]
    fn out_of_vocab_id_is_an_error() {
        assert!(matches!(
            tables().lookup(&[1], &[0, 2]),
            Err(NnError::IdOutOfRange { id: 2, vocab: 2, .. })
        ));
    }

    #[test]
    fn repeated_ids_sum_their_gradients() {
        let t = tables();
        let fields = [0, 1];
        let mut grads = EmbeddingGrads::new(2);
        t.accumulate_grad(&fields, &[1, 0], &[1.0, 2.0, 0.1, 0.2, 0.3], &mut grads)
            .unwrap();
        t.accumulate_grad(&fields, &[1, 1], &[0.5, -1.0, 1.0, 1.0, 1.0], &mut grads)
            .unwrap();
        assert_eq!(grads.rows[0].len(), 1);
        assert_eq!(grads.rows[0][&1], vec![1.5, 1.0]);
        assert_eq!(grads.rows[1][&0], vec![0.1, 0.2, 0.3]);
        assert_eq!(grads.rows[1][&1], vec![1.0, 1.0, 1.0]);
    }
}
