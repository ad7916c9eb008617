//! Small linear-algebra helpers: row-compressed sparse matrices, stationary
//! distributions of finite chains, and the level-structured solver for `I - Q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    n_cols: usize,
}

impl SparseRows {
    pub fn new(n_cols: usize) -> Self {
        Self {
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            n_cols,
        }
    }

    pub fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col as u32);
        self.vals.push(val);
    }

    /// Merges duplicate columns of the open row and closes it.
    pub fn finish_row(&mut self) {
        let start = *self.offsets.last().unwrap();
        let mut k = start;
        while k < self.cols.len() {
            let mut j = k + 1;
            while j < self.cols.len() {
                if self.cols[j] == self.cols[k] {
                    self.vals[k] += self.vals[j];
                    self.cols.swap_remove(j);
                    self.vals.swap_remove(j);
                } else {
                    j += 1;
                }
            }
            k += 1;
        }
        self.offsets.push(self.cols.len());
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&c, &v)| v * x[c as usize])
            .sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.vals[self.offsets[i]..self.offsets[i + 1]].iter().sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for i in 0..self.n_rows() {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
}

fn reachable(p: &DMatrix<f64>, from: usize) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if p[(i, j)] > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Stationary law of a finite chain started from `start`.
///
/// The chain must have exactly one closed class reachable from `start`; the
/// result is supported on that class. Solved directly by replacing one
/// balance equation with the normalization.
pub fn stationary_from(p: &DMatrix<f64>, start: usize) -> Result<Vec<f64>> {
    let n = p.nrows();
    let from_start = reachable(p, start);
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            if from_start[i] {
                reachable(p, i)
            } else {
                Vec::new()
            }
        })
        .collect();
    // a state is recurrent iff everything it reaches reaches it back
    let recurrent: Vec<bool> = (0..n)
        .map(|i| from_start[i] && (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let Some(anchor) = recurrent.iter().position(|&r| r) else {
        return Err(Error::Numerical("no recurrent class found".into()));
    };
    let class: Vec<usize> = (0..n).filter(|&j| reach[anchor][j]).collect();
    if (0..n).any(|j| recurrent[j] && !reach[anchor][j]) {
        return Err(Error::Numerical(
            "embedded chain has several closed classes reachable from the start state".into(),
        ));
    }
    let k = class.len();
    // pi (P - I) = 0  <=>  (P - I)^T pi^T = 0; last equation replaced by sum = 1
    let mut a = DMatrix::zeros(k, k);
    for (ci, &i) in class.iter().enumerate() {
        for (cj, &j) in class.iter().enumerate() {
            a[(cj, ci)] = p[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    let mut pi = vec![0.0; n];
    for (ci, &i) in class.iter().enumerate() {
        pi[i] = x[ci].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical("stationary solve produced no mass".into()));
    }
    pi.iter_mut().for_each(|x| *x /= total);
    Ok(pi)
}

/// Solver for `(I - Q) x = b` where `Q` moves level `l` only to level
/// `min(l + 1, top)`. Levels below `top` are eliminated by back substitution;
/// the top level, which feeds itself, is factorized densely.
#[derive(Debug)]
pub struct LevelSolver {
    levels: Vec<Vec<usize>>,
    top_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl LevelSolver {
    /// `level[h]` gives the level of row `h`; `q` must respect the level structure.
    pub fn new(q: &SparseRows, level: &[u32]) -> Result<Self> {
        let n = q.n_rows();
        let top = *level
            .iter()
            .max()
            .ok_or_else(|| Error::Numerical("empty matrix".into()))?;
        let mut levels = vec![Vec::new(); top as usize + 1];
        for (h, &l) in level.iter().enumerate() {
            levels[l as usize].push(h);
        }
        for h in 0..n {
            let want = (level[h] + 1).min(top);
            if let Some((j, _)) = q.row(h).find(|&(j, v)| v != 0.0 && level[j] != want) {
                return Err(Error::Numerical(format!(
                    "transition {h} -> {j} breaks the level structure ({} -> {})",
                    level[h], level[j]
                )));
            }
        }
        let top_rows = &levels[top as usize];
        let mut local = vec![usize::MAX; n];
        for (k, &h) in top_rows.iter().enumerate() {
            local[h] = k;
        }
        let m = top_rows.len();
        let mut a = DMatrix::<f64>::identity(m, m);
        for (k, &h) in top_rows.iter().enumerate() {
            for (j, v) in q.row(h) {
                a[(k, local[j])] -= v;
            }
        }
        let top_lu = a.lu();
        if !top_lu.is_invertible() {
            return Err(Error::Numerical(format!(
                "I - Q is singular on the top level ({m} states)"
            )));
        }
        Ok(Self { levels, top_lu })
    }

    pub fn solve(&self, q: &SparseRows, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        let top = self.levels.len() - 1;
        let rows = &self.levels[top];
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&h| b[h]));
        let sol = self
            .top_lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("top-level solve failed".into()))?;
        for (k, &h) in rows.iter().enumerate() {
            x[h] = sol[k];
        }
        for l in (0..top).rev() {
            for &h in &self.levels[l] {
                x[h] = b[h] + q.row_dot(h, &x);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "non-finite solution of (I - Q) x = b".into(),
            ));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sparse_rows_merge_duplicates() {
        let mut m = SparseRows::new(3);
        m.push(1, 0.25);
        m.push(2, 0.25);
        m.push(1, 0.5);
        m.finish_row();
        assert_eq!(m.n_rows(), 1);
        assert_eq!(m.nnz(), 2);
        assert_abs_diff_eq!(m.row_dot(0, &[0.0, 1.0, 2.0]), 1.25);
    }

    #[test]
    fn stationary_of_two_state_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let pi = stationary_from(&p, 0).unwrap();
        assert_abs_diff_eq!(pi[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn stationary_of_reducible_chain_uses_reached_class() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let pi = stationary_from(&p, 0).unwrap();
        assert_eq!(pi, vec![0.0, 1.0, 0.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(stationary_from(&id, 1).unwrap(), vec![0.0, 1.0]);
        let split = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(stationary_from(&split, 0).is_err());
    }

    #[test]
    fn level_solver_matches_dense_solve() {
        // levels 0 -> 1 -> 2 -> 2
        let level = [0u32, 1, 1, 2, 2];
        let mut q = SparseRows::new(5);
        for (row, entries) in [
            vec![(1usize, 0.3), (2, 0.4)],
            vec![(3, 0.5)],
            vec![(3, 0.2), (4, 0.6)],
            vec![(3, 0.4), (4, 0.3)],
            vec![(3, 0.1), (4, 0.5)],
        ]
        .into_iter()
        .enumerate()
        {
            let _ = row;
            for (j, v) in entries {
                q.push(j, v);
            }
            q.finish_row();
        }
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let solver = LevelSolver::new(&q, &level).unwrap();
        let x = solver.solve(&q, &b).unwrap();
        let a = DMatrix::<f64>::identity(5, 5) - q.to_dense();
        let dense = a.lu().solve(&DVector::from_row_slice(&b)).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(x[i], dense[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn level_solver_rejects_broken_structure() {
        let level = [0u32, 1];
        let mut q = SparseRows::new(2);
        q.push(0, 0.5);
        q.finish_row();
        q.finish_row();
        assert!(LevelSolver::new(&q, &level).is_err());
    }
}
