//! Block-sparse symmetric positive-definite factorization.

use nalgebra::{DMatrix, DVector};

/// Lower block triangle of a symmetric matrix with dense blocks.
#[derive(Debug, Clone)]
pub struct BlockSym {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    blocks: Vec<Option<DMatrix<f64>>>,
}

impl BlockSym {
    /// Empty matrix whose nonzero pattern (plus fill) covers `pattern` (pairs `i >= j`).
    pub fn with_pattern(sizes: &[usize], pattern: &[(usize, usize)]) -> Self {
        let nb = sizes.len();
        let mut present = vec![false; nb * nb];
        for i in 0..nb {
            present[i * nb + i] = true;
        }
        for &(i, j) in pattern {
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            present[i * nb + j] = true;
        }
        // Symbolic elimination adds fill.
        for k in 0..nb {
            let below: Vec<usize> = (k + 1..nb).filter(|&i| present[i * nb + k]).collect();
            for (x, &i) in below.iter().enumerate() {
                for &j in &below[..=x] {
                    present[i * nb + j] = true;
                }
            }
        }
        let mut offsets = Vec::with_capacity(nb);
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        let blocks = (0..nb * nb)
            .map(|ij| {
                let (i, j) = (ij / nb, ij % nb);
                present[ij].then(|| DMatrix::zeros(sizes[i], sizes[j]))
            })
            .collect();
        BlockSym {
            sizes: sizes.to_vec(),
            offsets,
            blocks,
        }
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn clear(&mut self) {
        for b in self.blocks.iter_mut().flatten() {
            b.fill(0.0);
        }
    }

    fn nb(&self) -> usize {
        self.sizes.len()
    }

    /// Mutable block `(i, j)` with `i >= j`.
    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut DMatrix<f64> {
        let nb = self.nb();
        self.blocks[i * nb + j]
            .as_mut()
            .expect("block outside the declared pattern")
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.blocks[i * self.nb() + j].as_ref()
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.nb())
            .filter_map(|i| self.block(i, i))
            .flat_map(|b| b.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.nb() {
            let b = self.block_mut(i, i);
            for k in 0..b.nrows() {
                b[(k, k)] += v;
            }
        }
    }

    /// `M v` using both triangles.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let nb = self.nb();
        let mut out = DVector::zeros(v.len());
        for i in 0..nb {
            for j in 0..=i {
                let Some(b) = self.block(i, j) else { continue };
                let (oi, oj) = (self.offsets[i], self.offsets[j]);
                let vj = v.rows(oj, self.sizes[j]);
                let mut oi_seg = out.rows_mut(oi, self.sizes[i]);
                oi_seg.gemv(1.0, b, &vj, 1.0);
                if i != j {
                    let vi = v.rows(oi, self.sizes[i]);
                    let mut oj_seg = out.rows_mut(oj, self.sizes[j]);
                    oj_seg.gemv_tr(1.0, b, &vi, 1.0);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.nb() {
            for j in 0..=i {
                if let Some(b) = self.block(i, j) {
                    let (oi, oj) = (self.offsets[i], self.offsets[j]);
                    out.view_mut((oi, oj), b.shape()).copy_from(b);
                    if i != j {
                        out.view_mut((oj, oi), (b.ncols(), b.nrows()))
                            .copy_from(&b.transpose());
                    }
                }
            }
        }
        out
    }

    /// Block Cholesky factorization; `None` if a pivot block is not positive definite.
    pub fn factor(&self) -> Option<BlockCholesky> {
        let nb = self.nb();
        let mut l = self.blocks.clone();
        for k in 0..nb {
            let akk = l[k * nb + k].take().expect("diagonal block");
            let lkk = akk.cholesky()?.l();
            for i in k + 1..nb {
                if let Some(aik) = l[i * nb + k].take() {
                    // L_ik = A_ik L_kk^{-T}
                    let t = lkk.solve_lower_triangular(&aik.transpose())?;
                    l[i * nb + k] = Some(t.transpose());
                }
            }
            for i in k + 1..nb {
                let Some(lik) = l[i * nb + k].clone() else { continue };
                for j in k + 1..=i {
                    let Some(ljk) = l[j * nb + k].as_ref() else { continue };
                    let upd = &lik * ljk.transpose();
                    let slot = l[i * nb + j].as_mut().expect("fill is pre-allocated");
                    *slot -= upd;
                }
            }
            l[k * nb + k] = Some(lkk);
        }
        Some(BlockCholesky {
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlockCholesky {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    l: Vec<Option<DMatrix<f64>>>,
}

impl BlockCholesky {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let nb = self.sizes.len();
        let seg = |v: &DVector<f64>, i: usize| v.rows(self.offsets[i], self.sizes[i]).clone_owned();
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut r = seg(rhs, k);
            for (j, wj) in w.iter().enumerate() {
                if let Some(lkj) = &self.l[k * nb + j] {
                    r -= lkj * wj;
                }
            }
            let lkk = self.l[k * nb + k].as_ref().expect("diagonal");
            w.push(lkk.solve_lower_triangular(&r).expect("nonsingular factor"));
        }
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); nb];
        for k in (0..nb).rev() {
            let mut r = w[k].clone();
            for i in k + 1..nb {
                if let Some(lik) = &self.l[i * nb + k] {
                    r -= lik.transpose() * &x[i];
                }
            }
            let lkk = self.l[k * nb + k].as_ref().expect("diagonal");
            x[k] = lkk
                .tr_solve_lower_triangular(&r)
                .expect("nonsingular factor");
        }
        let mut out = DVector::zeros(rhs.len());
        for k in 0..nb {
            out.rows_mut(self.offsets[k], self.sizes[k]).copy_from(&x[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve_with_fill() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sizes = [2, 3, 1, 2];
        // arrow pattern: last block couples to all, plus a chain link
        let pattern = [(1, 0), (3, 0), (3, 1), (3, 2), (2, 0)];
        let mut m = BlockSym::with_pattern(&sizes, &pattern);
        let n = m.dim();
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut dense = &g * g.transpose() + DMatrix::identity(n, n) * n as f64;
        // zero out entries outside the pattern to keep the test honest
        let off = m.offsets().to_vec();
        for i in 0..4 {
            for j in 0..4 {
                let keep = i == j || pattern.contains(&(i.max(j), i.min(j)));
                if !keep {
                    dense
                        .view_mut((off[i], off[j]), (sizes[i], sizes[j]))
                        .fill(0.0);
                }
            }
        }
        dense = crate::matkit::symmetrize(&dense) + DMatrix::identity(n, n) * n as f64;
        for i in 0..4 {
            for j in 0..=i {
                if m.block(i, j).is_some() {
                    let v = dense.view((off[i], off[j]), (sizes[i], sizes[j])).clone_owned();
                    m.block_mut(i, j).copy_from(&v);
                }
            }
        }
        assert!((m.to_dense() - &dense).norm() < 1e-12);
        let rhs = DVector::from_fn(n, |i, _| i as f64 - 2.0);
        let x = m.factor().unwrap().solve(&rhs);
        let xd = dense.clone().cholesky().unwrap().solve(&rhs);
        assert!((x - xd).norm() < 1e-10);
    }
}
