//! Small exact-arithmetic linear algebra: elimination, rank, nullspaces,
//! orthogonal complements. Dense and unoptimized on purpose — every matrix
//! here is small (ambient dimension or a node-local cone).

use crate::rational::Rational;
use num_traits::Zero;

/// Reduced row echelon form in place; returns the pivot column of each row kept.
pub fn rref(rows: &mut Vec<Vec<Rational>>) -> Vec<usize> {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][c].recip();
        for x in rows[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in 0..ncols {
                    let t = &rows[r][j] * &f;
                    rows[i][j] = &rows[i][j] - t;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    pivots
}

pub fn rank(rows: &[Vec<Rational>]) -> usize {
    let mut m = rows.to_vec();
    rref(&mut m).len()
}

/// Basis of `{x : rows · x = 0}`.
pub fn nullspace(rows: &[Vec<Rational>], ncols: usize) -> Vec<Vec<Rational>> {
    let mut m = rows.to_vec();
    for row in &m {
        debug_assert_eq!(row.len(), ncols);
    }
    let pivots = rref(&mut m);
    let mut basis = Vec::new();
    let piv_of_col: Vec<Option<usize>> = {
        let mut v = vec![None; ncols];
        for (i, &c) in pivots.iter().enumerate() {
            v[c] = Some(i);
        }
        v
    };
    for free in 0..ncols {
        if piv_of_col[free].is_some() {
            continue;
        }
        let mut x = vec![Rational::zero(); ncols];
        x[free] = Rational::from_integer(1.into());
        for (&c, row) in pivots.iter().zip(m.iter()) {
            x[c] = -row[free].clone();
        }
        basis.push(x);
    }
    basis
}

/// Extracts indices of a maximal linearly independent subset, scanning in order.
pub fn independent_subset(vectors: &[Vec<Rational>]) -> Vec<usize> {
    let mut kept_rows: Vec<Vec<Rational>> = Vec::new();
    let mut kept = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let mut trial = kept_rows.clone();
        trial.push(v.clone());
        if rref(&mut trial).len() > kept_rows.len() {
            kept_rows = trial;
            kept.push(i);
        }
    }
    kept
}

/// Basis of the span of the given vectors (rref rows, so deterministic).
pub fn span_basis(vectors: &[Vec<Rational>], ncols: usize) -> Vec<Vec<Rational>> {
    let mut m: Vec<Vec<Rational>> = vectors
        .iter()
        .inspect(|v| debug_assert_eq!(v.len(), ncols))
        .cloned()
        .collect();
    rref(&mut m);
    m
}

/// Basis of the orthogonal complement of `span(vectors)` in `Q^ncols`.
pub fn orthogonal_complement(vectors: &[Vec<Rational>], ncols: usize) -> Vec<Vec<Rational>> {
    nullspace(vectors, ncols)
}

/// Solves `A x = b` for square or rectangular `A`; returns one solution if consistent.
pub fn solve(a: &[Vec<Rational>], b: &[Rational]) -> Option<Vec<Rational>> {
    let ncols = a.first().map_or(0, |r| r.len());
    let mut aug: Vec<Vec<Rational>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    // inconsistent iff a pivot lands in the augmented column
    if pivots.iter().any(|&c| c == ncols) {
        return None;
    }
    let mut x = vec![Rational::zero(); ncols];
    for (&c, row) in pivots.iter().zip(aug.iter()) {
        x[c] = row[ncols].clone();
    }
    Some(x)
}

/// Whether `v` lies in the span of `basis`.
pub fn in_span(basis: &[Vec<Rational>], v: &[Rational]) -> bool {
    if basis.is_empty() {
        return v.iter().all(|x| x.is_zero());
    }
    let cols = transpose(basis);
    solve(&cols, v).is_some()
}

fn transpose(rows: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    (0..ncols)
        .map(|c| rows.iter().map(|r| r[c].clone()).collect())
        .collect()
}
