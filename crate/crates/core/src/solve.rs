//! Degree-by-degree solvers: the formal implicit function theorem, weighted
//! homogeneous decomposition, and the singular implicit function theorem that
//! inverts along a determinant locus by introducing fresh scaled variables.

use crate::error::CrError;
use crate::linalg::{cramer_solve, SeriesMatrix, SeriesVector};
use crate::scalar::GaussianRational;
use crate::series::{Exponent, TruncatedSeries};

/// Solve `F(x, y) = 0` for `y = f(x)` with `F(0,0) = 0` and an invertible
/// `dF/dy` at the origin. Variables `0..k` of the ring are `x`, variables
/// `k..k+p` are `y`; `f` consists of `p` series in the `k`-variable ring with
/// `f(0) = 0` and `F(x, f(x)) = 0` up to the cap.
pub fn implicit_solve(f_sys: &SeriesVector, k: usize) -> Result<SeriesVector, CrError> {
    let p = f_sys.len();
    assert!(p > 0);
    let m = f_sys[0].m;
    let cap = f_sys[0].cap;
    assert_eq!(m, k + p, "ring must split as (x, y)");
    for f in f_sys {
        if !f.eval_at_zero().is_zero() {
            return Err(CrError::Input("implicit solve needs F(0,0)=0".into()));
        }
    }
    // a = dF/dy(0,0)
    let a: Vec<Vec<GaussianRational>> = (0..p)
        .map(|i| (0..p).map(|j| f_sys[i].derivative(k + j).eval_at_zero()).collect())
        .collect();
    let a_mat = SeriesMatrix::from_rows(
        a.iter()
            .map(|row| {
                row.iter()
                    .map(|c| TruncatedSeries::constant(k.max(1), cap, c.clone()))
                    .collect()
            })
            .collect(),
    );
    if a_mat.det().eval_at_zero().is_zero() {
        return Err(CrError::SingularAtOrigin);
    }
    // Split F = A y + G(x, y) with dG/dy(0,0) = 0, then iterate
    // y <- -A^{-1} G(x, y); each pass gains at least one degree.
    // In the degenerate k = 0 case (no parameters) the unique solution is y = 0.
    if k == 0 {
        return Ok(vec![TruncatedSeries::zero(0, cap); p]);
    }
    let x_vars: Vec<TruncatedSeries> = (0..k).map(|i| TruncatedSeries::var(k, cap, i)).collect();
    let mut y: SeriesVector = vec![TruncatedSeries::zero(k, cap); p];
    let g_parts: Vec<TruncatedSeries> = (0..p)
        .map(|i| {
            // G_i = F_i - sum_j a[i][j] y_j
            let mut g = f_sys[i].clone();
            for j in 0..p {
                let lin = TruncatedSeries::var(m, cap, k + j).scale(&a[i][j]);
                g = g.sub(&lin);
            }
            g
        })
        .collect();
    for _ in 0..=cap {
        // Substitute (x, y(x)) into G.
        let subs: Vec<TruncatedSeries> = x_vars.iter().cloned().chain(y.iter().cloned()).collect();
        let g_val: Vec<TruncatedSeries> = g_parts.iter().map(|g| g.compose(&subs)).collect();
        // Solve A y_next = -G(x, y)
        let b: SeriesVector = g_val.iter().map(|g| g.neg()).collect();
        let a_small = SeriesMatrix::from_rows(
            a.iter()
                .map(|row| {
                    row.iter()
                        .map(|c| TruncatedSeries::constant(k, cap, c.clone()))
                        .collect()
                })
                .collect(),
        );
        let (y_next, _) = cramer_solve(&a_small, &b)?;
        if y_next == y {
            break;
        }
        y = y_next;
    }
    Ok(y)
}

/// One weighted-homogeneous component of a series.
#[derive(Clone, Debug)]
pub struct WeightedPart {
    pub weighted_degree: usize,
    pub part: TruncatedSeries,
}

/// Split a series into weighted-homogeneous parts with the given positive
/// per-variable weights. The parts have pairwise disjoint support and sum to
/// the input.
pub fn weighted_decompose(g: &TruncatedSeries, weights: &[usize]) -> Vec<WeightedPart> {
    assert_eq!(weights.len(), g.m);
    assert!(weights.iter().all(|&w| w > 0), "weights must be positive");
    let mut buckets: std::collections::BTreeMap<usize, TruncatedSeries> = Default::default();
    for (e, c) in &g.terms {
        let nu = e.weighted_degree(weights);
        buckets
            .entry(nu)
            .or_insert_with(|| TruncatedSeries::zero(g.m, g.cap))
            .terms
            .insert(e.clone(), c.clone());
    }
    buckets
        .into_iter()
        .map(|(weighted_degree, part)| WeightedPart { weighted_degree, part })
        .collect()
}

/// Result of the singular implicit solve: `y = Delta(x) * theta(x, t', w')`
/// solves `u(x, t, y) = w` after the scalings `t = Delta^2 t'`, `w = Delta^2 w'`.
#[derive(Clone, Debug)]
pub struct SingularSolution {
    /// `d` series in the ring `(x_1..x_r1, t'_1..t'_r2, w'_1..w'_d)`.
    pub theta: SeriesVector,
    /// `det(du/dy)(x, 0, 0)` in the `x`-ring.
    pub delta: TruncatedSeries,
}

/// Singular implicit function theorem. `u` consists of `d` series in the
/// variables `(x, t, y)` with `u(x,0,0) = 0` and `du/dy(x,0,0)` of generic
/// rank `d`. No division happens: the scaled unknowns `t' = t/Delta^2`,
/// `w' = w/Delta^2`, `y' = y/Delta` are fresh ring variables throughout.
pub fn singular_implicit_solve(
    u: &SeriesVector,
    r1: usize,
    r2: usize,
) -> Result<SingularSolution, CrError> {
    let d = u.len();
    assert!(d > 0);
    let m = u[0].m;
    let cap = u[0].cap;
    assert_eq!(m, r1 + r2 + d, "ring must split as (x, t, y)");
    // u(x,0,0) must vanish identically.
    for f in u {
        for e in f.terms.keys() {
            let t_deg: u32 = e.0[r1..].iter().sum();
            if t_deg == 0 {
                return Err(CrError::Input("u(x,0,0) must vanish".into()));
            }
        }
    }
    // g0(x) = du/dy(x, 0, 0), Delta = det g0.
    let x_only = |s: &TruncatedSeries| -> TruncatedSeries {
        let mut out = TruncatedSeries::zero(r1, cap);
        for (e, c) in &s.terms {
            if e.0[r1..].iter().all(|&v| v == 0) {
                out.terms.insert(Exponent(e.0[..r1].to_vec()), c.clone());
            }
        }
        out
    };
    let g0_rows: Vec<Vec<TruncatedSeries>> = (0..d)
        .map(|i| (0..d).map(|j| x_only(&u[i].derivative(r1 + r2 + j))).collect())
        .collect();
    let g0 = SeriesMatrix::from_rows(g0_rows.clone());
    let delta = g0.det();
    if delta.is_zero() {
        return Err(CrError::SingularInversion);
    }
    // Adjugate of g0: b * g0 = Delta * I.
    let adj = adjugate(&g0);

    // Write u = g0(x) y + rest. Every rest-term carries a t factor or two y
    // factors, so the scalings t = Delta^2 t', y = Delta y' make rest
    // divisible by Delta^2. Multiplying the scaled equation by adj(g0) and
    // dividing by Delta^2 yields a regular implicit system for y' in the ring
    // (x, t', w', y').
    let mw = r1 + r2 + d; // ring (x, t', w') has r1 + r2 + d variables
    let big = r1 + r2 + d + d; // working ring (x, t', w', y')
    let xv: Vec<TruncatedSeries> = (0..r1).map(|i| TruncatedSeries::var(big, cap, i)).collect();
    let tv: Vec<TruncatedSeries> = (0..r2).map(|i| TruncatedSeries::var(big, cap, r1 + i)).collect();
    let wv: Vec<TruncatedSeries> = (0..d).map(|i| TruncatedSeries::var(big, cap, r1 + r2 + i)).collect();
    let yv: Vec<TruncatedSeries> = (0..d).map(|i| TruncatedSeries::var(big, cap, r1 + r2 + d + i)).collect();
    let delta_big = delta.embed(big, &(0..r1).collect::<Vec<_>>());
    let delta_sq = delta_big.mul(&delta_big);
    // rest(x,t,y) = u - g0(x) y, then substitute t = Delta^2 t', y = Delta y'.
    let subs: Vec<TruncatedSeries> = xv
        .iter()
        .cloned()
        .chain(tv.iter().map(|t| delta_sq.mul(t)))
        .chain(yv.iter().map(|y| delta_big.mul(y)))
        .collect();
    let mut system: SeriesVector = Vec::with_capacity(d);
    for i in 0..d {
        let mut rest = u[i].clone();
        for j in 0..d {
            let gy = g0_rows[i][j]
                .embed(m, &(0..r1).collect::<Vec<_>>())
                .mul(&TruncatedSeries::var(m, cap, r1 + r2 + j));
            rest = rest.sub(&gy);
        }
        system.push(rest.compose(&subs));
    }
    // adj * system and adj * w'
    let adj_big: Vec<Vec<TruncatedSeries>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| adj.at(i, j).embed(big, &(0..r1).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let mut final_sys: SeriesVector = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = TruncatedSeries::zero(big, cap);
        for j in 0..d {
            acc = acc.add(&adj_big[i][j].mul(&system[j]));
        }
        let acc_div = match divide_series_by_power(&acc, &delta_big, 2) {
            Some(v) => v,
            None => {
                return Err(CrError::RecoveryFailure(
                    "scaled system not divisible by Delta^2".into(),
                ));
            }
        };
        // Full equation: y'_i + acc_div = (adj * w')_i.
        let mut rhs = TruncatedSeries::zero(big, cap);
        for j in 0..d {
            rhs = rhs.add(&adj_big[i][j].mul(&wv[j]));
        }
        final_sys.push(yv[i].clone().add(&acc_div).sub(&rhs));
    }
    let theta = implicit_solve(&final_sys, mw)?;
    Ok(SingularSolution { theta, delta })
}

/// Adjugate matrix (transpose of cofactors): `adj(A) * A = det(A) * I`.
pub fn adjugate(a: &SeriesMatrix) -> SeriesMatrix {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let (m, cap) = a.ring();
    if n == 1 {
        return SeriesMatrix::from_rows(vec![vec![TruncatedSeries::one(m, cap)]]);
    }
    let mut rows = vec![vec![TruncatedSeries::zero(m, cap); n]; n];
    for i in 0..n {
        for j in 0..n {
            let sub_rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
            let sub_cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
            let minor_rows: Vec<Vec<TruncatedSeries>> = sub_rows
                .iter()
                .map(|&r| sub_cols.iter().map(|&c| a.at(r, c).clone()).collect())
                .collect();
            let minor = SeriesMatrix::from_rows(minor_rows).det();
            rows[i][j] = if (i + j) % 2 == 0 { minor } else { minor.neg() };
        }
    }
    SeriesMatrix::from_rows(rows)
}

/// Divide a truncated series by `poly^power`, assuming the quotient exists as
/// a formal series. Works degree by degree: if `v = val(poly)`, the quotient
/// is recovered up to degree `cap - power*v` (its cap records the loss). The
/// homogeneous divisions must be exact; None signals non-divisibility.
pub fn divide_series_by_power(
    num: &TruncatedSeries,
    poly: &TruncatedSeries,
    power: usize,
) -> Option<TruncatedSeries> {
    if num.is_zero() {
        return Some(num.clone());
    }
    if power == 0 {
        return Some(num.clone());
    }
    let mut p = poly.clone();
    for _ in 1..power {
        p = p.mul(poly);
    }
    let v = p.valuation()?;
    let lead = p.homogeneous_part(v);
    let out_cap = num.cap.saturating_sub(v);
    let mut quot = TruncatedSeries::zero(num.m, out_cap);
    for k in 0..=out_cap {
        // rhs_k = num_{k+v} - sum_{j<k} p_{k+v-j} * quot_j
        let mut rhs = num.homogeneous_part(k + v);
        for j in 0..k {
            let pj = p.homogeneous_part(k + v - j);
            if pj.is_zero() {
                continue;
            }
            rhs = rhs.sub(&pj.mul(&quot.homogeneous_part(j)));
        }
        if rhs.is_zero() {
            continue;
        }
        let hk = rhs.with_cap(crate::series::NO_CAP).exact_div(&lead.with_cap(crate::series::NO_CAP))?;
        for (e, c) in hk.terms {
            if e.degree() <= out_cap {
                quot.terms.insert(e, c);
            }
        }
    }
    Some(quot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn implicit_linear() {
        // F = y - x  =>  f(x) = x
        let cap = 6;
        let x = S::var(2, cap, 0);
        let y = S::var(2, cap, 1);
        let f = implicit_solve(&vec![y.sub(&x)], 1).unwrap();
        assert_eq!(f[0], S::var(1, cap, 0));
        // F = 2y - x  =>  f(x) = x/2
        let f2 = implicit_solve(&vec![y.scale(&Q::from_int(2)).sub(&x)], 1).unwrap();
        assert_eq!(f2[0], S::var(1, cap, 0).scale(&Q::from_ratio(1, 2)));
    }

    #[test]
    fn implicit_catalan() {
        // F = y - x - y^2: fixed-point oracle y_{k+1} = x + y_k^2 gives
        // 1, 1, 2, 5, 14 (Catalan numbers) as the first coefficients.
        let cap = 8;
        let x = S::var(2, cap, 0);
        let y = S::var(2, cap, 1);
        let sys = vec![y.sub(&x).sub(&y.mul(&y))];
        let f = implicit_solve(&sys, 1).unwrap();
        // Oracle: naive fixed-point iteration in the x-ring.
        let xr = S::var(1, cap, 0);
        let mut oracle = S::zero(1, cap);
        for _ in 0..=cap {
            oracle = xr.add(&oracle.mul(&oracle));
        }
        assert_eq!(f[0], oracle);
        let catalan = [0i64, 1, 1, 2, 5, 14, 42, 132, 429];
        for (k, &c) in catalan.iter().enumerate().take(cap + 1) {
            assert_eq!(f[0].coeff(&Exponent(vec![k as u32])), Q::from_int(c));
        }
        // Residual check.
        let subs = vec![xr.clone(), f[0].clone()];
        assert!(sys[0].compose(&subs).is_zero());
    }

    #[test]
    fn implicit_denominator_shape() {
        // For Gaussian-integer input coefficients, the degree-k solution
        // coefficient times det^(2k-1) stays a Gaussian integer: the
        // denominators are the Cramer-chain determinant powers. (The sharper
        // exponent k fails already here: the x^2 coefficient is 7/27.)
        let cap = 6;
        let x = S::var(2, cap, 0);
        let y = S::var(2, cap, 1);
        // F = 3y - x - 2xy - y^2  (det of dF/dy at 0 is 3)
        let sys = vec![y
            .scale(&Q::from_int(3))
            .sub(&x)
            .sub(&x.mul(&y).scale(&Q::from_int(2)))
            .sub(&y.mul(&y))];
        let f = implicit_solve(&sys, 1).unwrap();
        assert_eq!(f[0].coeff(&Exponent(vec![2])), Q::from_ratio(7, 27));
        let det = Q::from_int(3);
        for (e, c) in &f[0].terms {
            let mut scale = Q::one();
            for _ in 0..2 * e.degree() - 1 {
                scale *= &det;
            }
            let cleared = c * &scale;
            assert!(cleared.is_gaussian_integer(), "coefficient {c} at {e:?}");
        }
    }

    #[test]
    fn weighted_parts_roundtrip() {
        let cap = 6;
        let z = S::var(2, cap, 0);
        let w = S::var(2, cap, 1);
        // g = z^2 + w with weights (1, 2): single part at weight 2.
        let g = z.mul(&z).add(&w);
        let parts = weighted_decompose(&g, &[1, 2]);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].weighted_degree, 2);
        assert_eq!(parts[0].part, g);
        // Random-ish mixed series: parts sum back to the input.
        let g2 = g.mul(&g).add(&z).add(&w.mul(&z).scale(&Q::from_parts(1, 2, -3, 1)));
        let parts2 = weighted_decompose(&g2, &[1, 2]);
        let mut sum = S::zero(2, cap);
        for p in &parts2 {
            sum = sum.add(&p.part);
        }
        assert_eq!(sum, g2);
    }

    #[test]
    fn singular_identity() {
        // u = y: Delta = 1, theta = w'.
        let cap = 6;
        // ring (x, y): r1 = 1, r2 = 0, d = 1
        let y = S::var(2, cap, 1);
        let sol = singular_implicit_solve(&vec![y], 1, 0).unwrap();
        assert!(sol.delta.eq(&S::one(1, cap)));
        // theta lives in (x, w')
        assert_eq!(sol.theta[0], S::var(2, cap, 1));
    }

    #[test]
    fn singular_xy() {
        // u = x y: Delta = x, theta = w' (so y = w/x formally).
        let cap = 6;
        let x = S::var(2, cap, 0);
        let y = S::var(2, cap, 1);
        let sol = singular_implicit_solve(&vec![x.mul(&y)], 1, 0).unwrap();
        assert_eq!(sol.delta, S::var(1, cap, 0));
        assert_eq!(sol.theta[0], S::var(2, cap, 1));
    }

    #[test]
    fn singular_back_substitution() {
        // u = x y + t y^2 at D = 6: verify u(x, Delta^2 t', Delta theta) = Delta^2 w'.
        let cap = 6;
        // ring (x, t, y)
        let x = S::var(3, cap, 0);
        let t = S::var(3, cap, 1);
        let y = S::var(3, cap, 2);
        let u = vec![x.mul(&y).add(&t.mul(&y).mul(&y))];
        let sol = singular_implicit_solve(&u, 1, 1).unwrap();
        // Ring (x, t', w').
        let xr = S::var(3, cap, 0);
        let tr = S::var(3, cap, 1);
        let wr = S::var(3, cap, 2);
        let delta = sol.delta.embed(3, &[0]);
        let dsq = delta.mul(&delta);
        let theta = &sol.theta[0];
        let subs = vec![xr.clone(), dsq.mul(&tr), delta.mul(theta)];
        let lhs = u[0].compose(&subs);
        let rhs = dsq.mul(&wr);
        assert_eq!(lhs, rhs);
    }
}
