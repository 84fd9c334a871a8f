use std::ops::Range;

use crate::real::Real;

/// Sparse gradient rows keyed by ascending Gaussian id. An absent id has a
/// zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T> {
    pub ids: Vec<u32>,
    pub dim: usize,
    pub rows: Vec<T>,
}

impl<T: Real> GradBuffer<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            rows: Vec::new(),
        }
    }

    pub fn zeros(ids: Vec<u32>, dim: usize) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]), "ids must be sorted and unique");
        let rows = vec![T::zero(); ids.len() * dim];
        Self { ids, dim, rows }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn get(&self, id: u32) -> Option<&[T]> {
        self.ids.binary_search(&id).ok().map(|k| self.row(k))
    }

    /// The given columns of every row.
    pub fn columns(&self, cols: Range<usize>) -> Self {
        assert!(cols.end <= self.dim);
        let dim = cols.len();
        let mut rows = Vec::with_capacity(self.ids.len() * dim);
        for k in 0..self.ids.len() {
            rows.extend_from_slice(&self.row(k)[cols.clone()]);
        }
        Self {
            ids: self.ids.clone(),
            dim,
            rows,
        }
    }

    /// Like [`GradBuffer::columns`], reusing the allocations of `out`.
    pub fn columns_into(&self, cols: Range<usize>, out: &mut Self) {
        assert!(cols.end <= self.dim);
        out.dim = cols.len();
        out.ids.clear();
        out.ids.extend_from_slice(&self.ids);
        out.rows.clear();
        for k in 0..self.ids.len() {
            out.rows.extend_from_slice(&self.row(k)[cols.clone()]);
        }
    }

    /// Sparse sum over the union of ids, adding `self` first then `other`.
    pub fn merge(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut ids = Vec::with_capacity(self.len() + other.len());
        let mut rows = Vec::with_capacity((self.len() + other.len()) * d);
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let a = self.ids.get(i).copied().unwrap_or(u32::MAX);
            let b = other.ids.get(j).copied().unwrap_or(u32::MAX);
            if i < self.len() && (j >= other.len() || a < b) {
                ids.push(a);
                rows.extend_from_slice(self.row(i));
                i += 1;
            } else if j < other.len() && (i >= self.len() || b < a) {
                ids.push(b);
                rows.extend_from_slice(other.row(j));
                j += 1;
            } else {
                ids.push(a);
                rows.extend(self.row(i).iter().zip(other.row(j)).map(|(&x, &y)| x + y));
                i += 1;
                j += 1;
            }
        }
        Self { ids, dim: d, rows }
    }

    /// Dense `n × dim` copy.
    pub fn to_dense(&self, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n * self.dim];
        for (k, &id) in self.ids.iter().enumerate() {
            let id = id as usize;
            out[id * self.dim..(id + 1) * self.dim].copy_from_slice(self.row(k));
        }
        out
    }

    pub fn bytes(&self) -> usize {
        self.rows.len() * T::BYTES + self.ids.len() * 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_sums_overlapping_rows() {
        let mut a = GradBuffer::<f64>::zeros(vec![1, 3, 5], 2);
        a.rows.copy_from_slice(&[1.0, 1.0, 3.0, 3.0, 5.0, 5.0]);
        let mut b = GradBuffer::<f64>::zeros(vec![0, 3, 7], 2);
        b.rows.copy_from_slice(&[0.5, 0.5, 0.25, 0.25, 7.0, 7.0]);
        let m = a.merge(&b);
        assert_eq!(m.ids, vec![0, 1, 3, 5, 7]);
        assert_eq!(m.get(3).unwrap(), &[3.25, 3.25]);
        assert_eq!(m.get(0).unwrap(), &[0.5, 0.5]);
        assert!(m.get(2).is_none());
    }

    #[test]
    fn columns_and_dense() {
        let mut a = GradBuffer::<f32>::zeros(vec![2], 4);
        a.rows.copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let c = a.columns(1..3);
        assert_eq!(c.rows, vec![2.0, 3.0]);
        let d = c.to_dense(3);
        assert_eq!(d, vec![0.0, 0.0, 0.0, 0.0, 2.0, 3.0]);
    }
}
