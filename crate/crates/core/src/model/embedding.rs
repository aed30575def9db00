use rand::Rng;

use crate::nn::{Module, Param, Tensor};
use crate::scalar::Scalar;

/// One learned vector per training singer, kept inside the unit ball.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    /// `[k, dim]`.
    pub table: Param<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// I.i.d. uniform entries on `[-0.1, 0.1]`.
    pub fn new<R: Rng + ?Sized>(k: usize, dim: usize, rng: &mut R) -> Self {
        Self { table: Param::new(Tensor::uniform(&[k, dim], 0.1, rng)) }
    }

    pub fn from_tensor(table: Tensor<T>) -> Self {
        Self { table: Param::new(table) }
    }

    pub fn k(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn vector(&self, j: usize) -> &[T] {
        self.table.value.row(j)
    }

    pub fn grad_mut(&mut self, j: usize) -> &mut [T] {
        self.table.grad.row_mut(j)
    }

    pub fn norm(&self, j: usize) -> f64 {
        self.vector(j).iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.k()).map(|j| self.norm(j)).fold(0.0, f64::max)
    }

    /// Rescales every vector longer than 1 back onto the unit sphere.
    pub fn project(&mut self) {
        for j in 0..self.k() {
            let n = self.norm(j);
            if n > 1.0 {
                let s = T::of(1.0 / n);
                self.table.value.row_mut(j).iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable { table: self.table.cast() }
    }
}

/// Functional form of [`EmbeddingTable::project`].
pub fn project_embeddings<T: Scalar>(table: &EmbeddingTable<T>) -> EmbeddingTable<T> {
    let mut out = table.clone();
    out.project();
    out
}

impl<T: Scalar> Module<T> for EmbeddingTable<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("table".into(), &self.table)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("table".into(), &mut self.table)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[&[f64]]) -> EmbeddingTable<f64> {
        let dim = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingTable::from_tensor(Tensor::from_vec(&[rows.len(), dim], data).unwrap())
    }

    #[test]
    fn projection_examples() {
        let t = table(&[&[3.0, 4.0, 0.0], &[0.3, 0.4, 0.0], &[0.0, 0.0, 0.0]]);
        let p = project_embeddings(&t);
        assert!((p.vector(0)[0] - 0.6).abs() < 1e-15);
        assert!((p.vector(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(p.vector(1), t.vector(1));
        assert_eq!(p.vector(2), &[0.0, 0.0, 0.0]);
        assert!((p.norm(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn initialization_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = EmbeddingTable::<f32>::new(5, 64, &mut rng);
        assert!(t.table.value.data().iter().all(|v| v.abs() <= 0.1));
        assert!(t.max_norm() < 1.0);
    }
}
