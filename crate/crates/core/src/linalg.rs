//! Linear algebra over the truncated series ring: determinants, Cramer
//! solving against unit matrices, and generic rank over the fraction field
//! of the power series ring (fraction-free elimination on exact polynomial
//! data).

use crate::error::CrError;
use crate::scalar::GaussianRational;
use crate::series::{TruncatedSeries, NO_CAP};
use std::ops::{Mul, Neg};

/// Column vector of series sharing a ring `(m, cap)`.
pub type SeriesVector = Vec<TruncatedSeries>;

/// Rectangular matrix of series sharing a ring, stored row-major.
#[derive(Clone, Debug)]
pub struct SeriesMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<TruncatedSeries>,
}

impl SeriesMatrix {
    pub fn from_rows(rows: Vec<Vec<TruncatedSeries>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix");
            entries.extend(row);
        }
        SeriesMatrix { rows: r, cols: c, entries }
    }

    pub fn at(&self, i: usize, j: usize) -> &TruncatedSeries {
        &self.entries[i * self.cols + j]
    }

    pub fn ring(&self) -> (usize, usize) {
        let e = &self.entries[0];
        (e.m, e.cap)
    }

    /// Constant-term matrix as scalars.
    pub fn at_zero(&self) -> Vec<Vec<GaussianRational>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.at(i, j).eval_at_zero()).collect())
            .collect()
    }

    /// Determinant by Laplace expansion; intended for small square matrices.
    pub fn det(&self) -> TruncatedSeries {
        assert_eq!(self.rows, self.cols, "determinant of non-square matrix");
        let (m, cap) = self.ring();
        det_rec(&(0..self.rows).collect::<Vec<_>>(), &(0..self.cols).collect::<Vec<_>>(), self, m, cap)
    }
}

fn det_rec(
    rows: &[usize],
    cols: &[usize],
    mat: &SeriesMatrix,
    m: usize,
    cap: usize,
) -> TruncatedSeries {
    if rows.is_empty() {
        return TruncatedSeries::one(m, cap);
    }
    if rows.len() == 1 {
        return mat.at(rows[0], cols[0]).clone();
    }
    let mut acc = TruncatedSeries::zero(m, cap);
    let sub_rows = &rows[1..];
    for (k, &j) in cols.iter().enumerate() {
        let e = mat.at(rows[0], j);
        if e.is_zero() {
            continue;
        }
        let sub_cols: Vec<usize> = cols.iter().enumerate().filter(|(t, _)| *t != k).map(|(_, &c)| c).collect();
        let minor = det_rec(sub_rows, &sub_cols, mat, m, cap);
        let signed = if k % 2 == 0 { e.mul(&minor) } else { e.mul(&minor).neg() };
        acc = acc.add(&signed);
    }
    acc
}

/// Solve `A x = b` for a square `A` whose determinant is a unit (nonzero at
/// the origin). Returns the solution along with `det(A)`.
pub fn cramer_solve(a: &SeriesMatrix, b: &SeriesVector) -> Result<(SeriesVector, TruncatedSeries), CrError> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), a.rows);
    let d = a.det();
    if d.eval_at_zero().is_zero() {
        return Err(CrError::SingularAtOrigin);
    }
    let d_inv = d.invert_unit();
    let n = a.rows;
    let mut x = Vec::with_capacity(n);
    for j in 0..n {
        // Replace column j by b.
        let mut mod_rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for k in 0..n {
                row.push(if k == j { b[i].clone() } else { a.at(i, k).clone() });
            }
            mod_rows.push(row);
        }
        let dj = SeriesMatrix::from_rows(mod_rows).det();
        x.push(dj.mul(&d_inv));
    }
    Ok((x, d))
}

/// Outcome of a generic-rank computation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankResult {
    pub rank: usize,
    /// Set when the verdict relied on data a truncation could invalidate:
    /// either elimination exhausted pivots before filling the matrix (an
    /// entry that vanishes up to the cap might not vanish beyond it), or a
    /// pivot minor was nonzero only above the entries' stated cap.
    pub truncation_warning: bool,
}

/// Rank of a series matrix over the fraction field of the power series ring,
/// computed by fraction-free (Bareiss) elimination on the stored polynomial
/// data with exact arithmetic. The result is exact whenever the entries are
/// genuine polynomials of degree at most their cap.
pub fn generic_rank(mat: &SeriesMatrix) -> RankResult {
    if mat.rows == 0 || mat.cols == 0 {
        return RankResult { rank: 0, truncation_warning: false };
    }
    let orig_cap = mat.ring().1;
    // Work uncapped: Bareiss intermediates are minors and may exceed the cap.
    let mut work: Vec<Vec<TruncatedSeries>> = (0..mat.rows)
        .map(|i| (0..mat.cols).map(|j| mat.at(i, j).with_cap(NO_CAP)).collect())
        .collect();
    let mut prev_pivot: Option<TruncatedSeries> = None;
    let mut rank = 0usize;
    let mut pivot_beyond_cap = false;
    let rmax = mat.rows.min(mat.cols);
    let mut row = 0usize;
    let mut active_cols: Vec<usize> = (0..mat.cols).collect();
    while row < rmax && row < mat.rows {
        // Find a pivot: first entry (graded order of the search) that is a
        // nonzero polynomial.
        let mut pivot_pos = None;
        'search: for (ci, &c) in active_cols.iter().enumerate().skip(row) {
            for r in row..mat.rows {
                if !work[r][c].is_zero() {
                    pivot_pos = Some((r, ci));
                    break 'search;
                }
            }
        }
        let (pr, pci) = match pivot_pos {
            Some(p) => p,
            None => break,
        };
        work.swap(row, pr);
        active_cols.swap(row, pci);
        let pc = active_cols[row];
        let pivot = work[row][pc].clone();
        if pivot.valuation().unwrap_or(0) > orig_cap {
            pivot_beyond_cap = true;
        }
        // Bareiss step: entry <- (entry*pivot - cross) / prev_pivot, exact.
        for r in row + 1..mat.rows {
            for &c in active_cols.iter().skip(row + 1) {
                let num = work[r][c].mul(&pivot).sub(&work[r][pc].mul(&work[row][c]));
                let val = match &prev_pivot {
                    Some(p) => num
                        .exact_div(p)
                        .expect("fraction-free elimination division must be exact"),
                    None => num,
                };
                work[r][c] = val;
            }
            work[r][pc] = TruncatedSeries::zero(work[r][pc].m, NO_CAP);
        }
        prev_pivot = Some(pivot);
        rank += 1;
        row += 1;
    }
    let exhausted_early = rank < rmax;
    RankResult {
        rank,
        truncation_warning: pivot_beyond_cap || exhausted_early,
    }
}

/// Exact rank of a constant matrix over the Gaussian rationals, by Gaussian
/// elimination.
pub fn scalar_rank(rows: &[Vec<GaussianRational>]) -> usize {
    let mut work: Vec<Vec<GaussianRational>> = rows.to_vec();
    let nrows = work.len();
    if nrows == 0 {
        return 0;
    }
    let ncols = work[0].len();
    let mut rank = 0;
    for col in 0..ncols {
        let mut piv = None;
        for r in rank..nrows {
            if !work[r][col].is_zero() {
                piv = Some(r);
                break;
            }
        }
        let Some(piv) = piv else { continue };
        work.swap(rank, piv);
        let inv = work[rank][col].clone().inv();
        for c in col..ncols {
            work[rank][c] = (&work[rank][c]).mul(&inv);
        }
        for r in 0..nrows {
            if r != rank && !work[r][col].is_zero() {
                let f = work[r][col].clone();
                for c in col..ncols {
                    let sub = (&f).mul(&work[rank][c]);
                    work[r][c] -= &sub;
                }
            }
        }
        rank += 1;
        if rank == nrows {
            break;
        }
    }
    rank
}

/// Row-reduce an exact linear system `A x = b` over the Gaussian rationals.
/// Returns `(particular_solution, kernel_basis)` or None when inconsistent.
pub fn solve_scalar_system(
    a: &[Vec<GaussianRational>],
    b: &[GaussianRational],
) -> Option<(Vec<GaussianRational>, Vec<Vec<GaussianRational>>)> {
    let nrows = a.len();
    let ncols = if nrows == 0 { 0 } else { a[0].len() };
    let mut work: Vec<Vec<GaussianRational>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut rank = 0usize;
    for col in 0..ncols {
        let mut piv = None;
        for r in rank..nrows {
            if !work[r][col].is_zero() {
                piv = Some(r);
                break;
            }
        }
        let Some(piv) = piv else { continue };
        work.swap(rank, piv);
        let inv = work[rank][col].clone().inv();
        for c in col..=ncols {
            work[rank][c] = (&work[rank][c]).mul(&inv);
        }
        for r in 0..nrows {
            if r != rank && !work[r][col].is_zero() {
                let f = work[r][col].clone();
                for c in col..=ncols {
                    let sub = (&f).mul(&work[rank][c]);
                    work[r][c] -= &sub;
                }
            }
        }
        pivot_cols.push(col);
        rank += 1;
        if rank == nrows {
            break;
        }
    }
    // Inconsistent when a zero row has nonzero rhs.
    for r in rank..nrows {
        if !work[r][ncols].is_zero() {
            return None;
        }
    }
    let mut particular = vec![GaussianRational::zero(); ncols];
    for (r, &pc) in pivot_cols.iter().enumerate() {
        particular[pc] = work[r][ncols].clone();
    }
    let pivot_set: std::collections::BTreeSet<usize> = pivot_cols.iter().cloned().collect();
    let mut kernel = Vec::new();
    for free in 0..ncols {
        if pivot_set.contains(&free) {
            continue;
        }
        let mut v = vec![GaussianRational::zero(); ncols];
        v[free] = GaussianRational::one();
        for (r, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = work[r][free].clone().neg();
        }
        kernel.push(v);
    }
    Some((particular, kernel))
}

/// Evaluate every entry of a series matrix at a rational point. Used as an
/// independent oracle for `generic_rank` on polynomial matrices.
pub fn evaluate_matrix_at(
    mat: &SeriesMatrix,
    point: &[GaussianRational],
) -> Vec<Vec<GaussianRational>> {
    let (m, _) = mat.ring();
    assert_eq!(point.len(), m);
    (0..mat.rows)
        .map(|i| {
            (0..mat.cols)
                .map(|j| {
                    let mut acc = GaussianRational::zero();
                    for (e, c) in &mat.at(i, j).terms {
                        let mut t = c.clone();
                        for (v, &k) in point.iter().zip(&e.0) {
                            for _ in 0..k {
                                t *= v;
                            }
                        }
                        acc += &t;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Identity matrix in the given ring.
pub fn identity_matrix(n: usize, m: usize, cap: usize) -> SeriesMatrix {
    SeriesMatrix::from_rows(
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            TruncatedSeries::one(m, cap)
                        } else {
                            TruncatedSeries::zero(m, cap)
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Jacobian of a series vector with respect to all ring variables.
pub fn jacobian(v: &SeriesVector) -> SeriesMatrix {
    assert!(!v.is_empty());
    let m = v[0].m;
    SeriesMatrix::from_rows(
        v.iter()
            .map(|f| (0..m).map(|j| f.derivative(j)).collect())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn cramer_identity() {
        let cap = 6;
        let a = identity_matrix(2, 2, cap);
        let b = vec![S::var(2, cap, 0), S::var(2, cap, 1)];
        let (x, det) = cramer_solve(&a, &b).unwrap();
        assert_eq!(x, b);
        assert!(det.eq(&S::one(2, cap)));
    }

    #[test]
    fn cramer_1x1_geometric() {
        // (1+z) x = 1  =>  x = 1 - z + z^2 - ...
        let cap = 6;
        let z = S::var(1, cap, 0);
        let a = SeriesMatrix::from_rows(vec![vec![S::one(1, cap).add(&z)]]);
        let b = vec![S::one(1, cap)];
        let (x, _) = cramer_solve(&a, &b).unwrap();
        let residual = a.at(0, 0).mul(&x[0]).sub(&b[0]);
        assert!(residual.is_zero());
        assert_eq!(x[0].coeff(&crate::series::Exponent(vec![3])), Q::from_int(-1));
    }

    #[test]
    fn cramer_random_2x2_back_substitution() {
        // Oracle: A x - b must vanish identically up to the cap.
        let cap = 6;
        let m = 2;
        let z = S::var(m, cap, 0);
        let w = S::var(m, cap, 1);
        let a = SeriesMatrix::from_rows(vec![
            vec![S::one(m, cap).add(&z.mul(&w)), z.scale(&Q::from_parts(0, 1, 1, 1))],
            vec![w.clone(), S::one(m, cap).sub(&z).add(&w.mul(&w))],
        ]);
        let b = vec![z.add(&w), z.mul(&z).sub(&w)];
        let (x, _) = cramer_solve(&a, &b).unwrap();
        for i in 0..2 {
            let mut res = b[i].neg();
            for j in 0..2 {
                res = res.add(&a.at(i, j).mul(&x[j]));
            }
            assert!(res.is_zero(), "row {i} residual {res:?}");
        }
    }

    #[test]
    fn cramer_singular_rejected() {
        let cap = 4;
        let z = S::var(1, cap, 0);
        let a = SeriesMatrix::from_rows(vec![vec![z.clone()]]);
        assert!(cramer_solve(&a, &vec![z]).is_err());
    }

    #[test]
    fn rank_column_and_zero() {
        let cap = 4;
        let z = S::var(1, cap, 0);
        let col = SeriesMatrix::from_rows(vec![vec![z.clone()], vec![z.mul(&z)]]);
        assert_eq!(generic_rank(&col).rank, 1);
        let zero = SeriesMatrix::from_rows(vec![vec![S::zero(1, cap)], vec![S::zero(1, cap)]]);
        let r = generic_rank(&zero);
        assert_eq!(r.rank, 0);
        assert!(r.truncation_warning);
    }

    #[test]
    fn rank_matches_random_evaluation_oracle() {
        // 3x2 with generic rank 2: the last row is not a series multiple of
        // the first.
        let cap = 8;
        let m = 2;
        let z = S::var(m, cap, 0);
        let w = S::var(m, cap, 1);
        let mat = SeriesMatrix::from_rows(vec![
            vec![z.clone(), w.clone()],
            vec![z.mul(&z), z.mul(&w)],
            vec![w.clone(), w.mul(&w)],
        ]);
        let r = generic_rank(&mat).rank;
        // Oracle: evaluate at a few rational points, take the max scalar rank.
        let pts = [
            vec![Q::from_ratio(1, 2), Q::from_ratio(1, 3)],
            vec![Q::from_ratio(2, 1), Q::from_ratio(-3, 5)],
            vec![Q::from_parts(1, 3, 1, 7), Q::from_ratio(5, 2)],
        ];
        let oracle = pts
            .iter()
            .map(|p| scalar_rank(&evaluate_matrix_at(&mat, p)))
            .max()
            .unwrap();
        assert_eq!(r, oracle);
        assert_eq!(r, 2);
    }

    #[test]
    fn scalar_system_kernel() {
        // x + y = 1 over 2 unknowns: one-dimensional solution set.
        let a = vec![vec![Q::one(), Q::one()]];
        let b = vec![Q::one()];
        let (p, k) = solve_scalar_system(&a, &b).unwrap();
        assert_eq!(p, vec![Q::one(), Q::zero()]);
        assert_eq!(k.len(), 1);
        // Inconsistent system.
        let a2 = vec![vec![Q::one()], vec![Q::one()]];
        let b2 = vec![Q::one(), Q::from_int(2)];
        assert!(solve_scalar_system(&a2, &b2).is_none());
    }
}
