use std::rc::Rc;

use super::DiffTensor;
use crate::error::{shape_err, Result};

/// A fixed sparse linear map `y[i] = sum_j w_ij x[j]`, stored row-wise.
///
/// Gathers, channel permutations, subsampling and interpolated raster
/// rotations are all instances.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    input_len: usize,
    output_shape: Vec<usize>,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseMap {
    /// Build from one list of `(input index, weight)` terms per output entry.
    pub fn from_rows(input_len: usize, output_shape: &[usize], rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), output_shape.iter().product::<usize>());
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (j, w) in row {
                assert!(j < input_len, "sparse map index {j} out of range {input_len}");
                indices.push(j as u32);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        SparseMap {
            input_len,
            output_shape: output_shape.to_vec(),
            offsets,
            indices,
            weights,
        }
    }

    /// `y[i] = x[source[i]]`; `None` entries are zero.
    pub fn gather(input_len: usize, output_shape: &[usize], source: &[Option<usize>]) -> Self {
        let rows = source
            .iter()
            .map(|s| s.map(|j| vec![(j, 1.0)]).unwrap_or_default())
            .collect();
        Self::from_rows(input_len, output_shape, rows)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn output_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_len);
        (0..self.output_len())
            .map(|i| self.row(i).map(|(j, w)| w * x[j]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.input_len];
        for (i, &g) in y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (j, w) in self.row(i) {
                x[j] += w * g;
            }
        }
        x
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &SparseMap) -> SparseMap {
        assert_eq!(self.input_len, other.output_len());
        let rows = (0..self.output_len())
            .map(|i| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for (k, w) in self.row(i) {
                    for (j, v) in other.row(k) {
                        match acc.iter_mut().find(|(jj, _)| *jj == j) {
                            Some(e) => e.1 += w * v,
                            None => acc.push((j, w * v)),
                        }
                    }
                }
                acc
            })
            .collect();
        SparseMap::from_rows(other.input_len, &self.output_shape, rows)
    }
}

/// Differentiable application of a fixed sparse linear map.
pub fn linear_map(x: &DiffTensor, map: &Rc<SparseMap>) -> Result<DiffTensor> {
    if x.len() != map.input_len() {
        return shape_err(format!(
            "linear map expects {} inputs, got {}",
            map.input_len(),
            x.len()
        ));
    }
    let out = map.apply(x.data());
    let m = Rc::clone(map);
    Ok(DiffTensor::from_op(
        map.output_shape().to_vec(),
        out,
        vec![x.clone()],
        move |g, _| vec![Some(m.apply_transpose(g))],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_and_transpose() {
        let m = SparseMap::gather(3, &[4], &[Some(2), None, Some(0), Some(2)]);
        assert_eq!(m.apply(&[1.0, 2.0, 3.0]), vec![3.0, 0.0, 1.0, 3.0]);
        assert_eq!(m.apply_transpose(&[1.0, 1.0, 1.0, 1.0]), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = SparseMap::from_rows(2, &[2], vec![vec![(0, 2.0), (1, 1.0)], vec![(1, -1.0)]]);
        let b = SparseMap::from_rows(3, &[2], vec![vec![(2, 1.0)], vec![(0, 0.5), (1, 0.5)]]);
        let x = [1.0, 3.0, 5.0];
        assert_eq!(a.compose(&b).apply(&x), a.apply(&b.apply(&x)));
    }

    #[test]
    fn linear_map_gradient() {
        let m = Rc::new(SparseMap::from_rows(2, &[1], vec![vec![(0, 2.0), (1, -3.0)]]));
        let x = DiffTensor::parameter(&[2], vec![1.0, 1.0]).unwrap();
        let y = linear_map(&x, &m).unwrap();
        assert_eq!(y.item(), -1.0);
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -3.0]);
    }
}
