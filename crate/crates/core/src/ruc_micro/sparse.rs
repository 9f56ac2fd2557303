//! Compressed sparse row storage and Jacobi-preconditioned conjugate gradients.

#[derive(Clone, Debug)]
pub(crate) struct CsrPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
}

impl CsrPattern {
    /// Builds the pattern from per-row sorted, deduplicated column sets.
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col = Vec::new();
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col.extend_from_slice(&r);
            row_ptr.push(col.len());
        }
        CsrPattern { n, row_ptr, col }
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    /// Position of `(row, col)` in the value array.
    pub fn slot(&self, row: usize, col: u32) -> Option<usize> {
        let cols = &self.col[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|p| self.row_ptr[row] + p)
    }

    pub fn spmv(&self, val: &[f64], x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += val[p] * x[self.col[p] as usize];
            }
            *yr = s;
        }
    }

    pub fn diagonal(&self, val: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.slot(r, r as u32).map(|p| val[p]).unwrap_or(0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CgFailure {
    /// Direction of non-positive curvature found; `x` holds the iterate
    /// accumulated before it.
    Indefinite,
    NotConverged {
        residual: f64,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from `x = 0`; returns the iteration count.
pub(crate) fn pcg(
    pattern: &CsrPattern,
    val: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, CgFailure> {
    let n = pattern.n;
    x.iter_mut().for_each(|v| *v = 0.0);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(0);
    }
    let inv_diag: Vec<f64> = pattern
        .diagonal(val)
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rel_tol * b_norm;
    for it in 1..=max_iter {
        pattern.spmv(val, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CgFailure::Indefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = dot(&r, &r).sqrt();
        if r_norm <= target {
            return Ok(it);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CgFailure::NotConverged {
        residual: dot(&r, &r).sqrt() / b_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 50;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![i as u32];
                if i > 0 {
                    r.push(i as u32 - 1);
                }
                if i + 1 < n {
                    r.push(i as u32 + 1);
                }
                r
            })
            .collect();
        let pat = CsrPattern::from_rows(rows);
        let mut val = vec![0.0; pat.nnz()];
        for i in 0..n {
            val[pat.slot(i, i as u32).unwrap()] = 2.0 + i as f64 * 0.01;
            if i > 0 {
                val[pat.slot(i, i as u32 - 1).unwrap()] = -1.0;
            }
            if i + 1 < n {
                val[pat.slot(i, i as u32 + 1).unwrap()] = -1.0;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        pcg(&pat, &val, &b, &mut x, 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        pat.spmv(&val, &x, &mut ax);
        let err: f64 = ax
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn detects_indefinite() {
        let pat = CsrPattern::from_rows(vec![vec![0], vec![1]]);
        let val = vec![1.0, -1.0];
        let mut x = vec![0.0; 2];
        assert_eq!(
            pcg(&pat, &val, &[0.0, 1.0], &mut x, 1e-10, 10),
            Err(CgFailure::Indefinite)
        );
    }
}
