//! Finite nondegeneracy (the minimal order ell0 at which the tangential
//! derivatives of the defining differentials span the ambient space) and the
//! formal holomorphic nondegeneracy test.

use crate::linalg::{scalar_rank, solve_scalar_system, SeriesVector};
use crate::manifold::FormalSubmanifold;
use crate::mapping::{monomials_of_degree, monomials_up_to};
use crate::scalar::GaussianRational;
use crate::series::{Exponent, TruncatedSeries};
use crate::vfields::cr_basis;

#[derive(Clone, Debug)]
pub struct NondegeneracyReport {
    /// Minimal ell with full span, when one exists up to the tested bound.
    pub ell0: Option<usize>,
    /// Span dimension for ell = 0, 1, ..., ell_max.
    pub span_dims: Vec<usize>,
    pub ell_max: usize,
}

/// Compute the span of `L^alpha (d rho_j / dZ)(0)` for |alpha| <= ell and
/// report the minimal ell reaching the full ambient dimension. The fields
/// are applied symbolically and only then evaluated at 0.
pub fn ell_nondegenerate(mfd: &FormalSubmanifold, ell_max: usize) -> NondegeneracyReport {
    assert!(ell_max + 1 <= mfd.cap, "ell_max must stay below the cap");
    let ambient = mfd.ambient();
    let fields = cr_basis(mfd);
    // Gradient rows of the normal defining series w - Q: d/dz_i gives
    // -dQ_j/dz_i, d/dw_k gives the unit vector.
    let rho = mfd.defining_normal();
    let grads: Vec<Vec<TruncatedSeries>> = rho
        .iter()
        .map(|r| (0..ambient).map(|i| r.derivative(i)).collect())
        .collect();
    // Apply L^alpha iteratively with memoization on the multi-index chain.
    // The basis fields commute in normal coordinates (their tau-coefficients
    // are free of tau), so applying in a fixed variable order is canonical.
    let mut table: std::collections::BTreeMap<Exponent, Vec<Vec<TruncatedSeries>>> =
        Default::default();
    table.insert(Exponent::zero(mfd.n), grads);
    let mut span_rows: Vec<Vec<GaussianRational>> = Vec::new();
    let mut span_dims = Vec::new();
    let mut ell0 = None;
    for ell in 0..=ell_max {
        for alpha in if ell == 0 {
            vec![Exponent::zero(mfd.n)]
        } else {
            monomials_of_degree(mfd.n, ell)
        } {
            if !table.contains_key(&alpha) {
                // Reduce along the last nonzero slot.
                let i = (0..mfd.n).rev().find(|&i| alpha.0[i] > 0).unwrap();
                let mut prev = alpha.clone();
                prev.0[i] -= 1;
                let lower = table.get(&prev).expect("table is filled level by level");
                let applied: Vec<Vec<TruncatedSeries>> = lower
                    .iter()
                    .map(|row| row.iter().map(|g| fields[i].apply(g)).collect())
                    .collect();
                table.insert(alpha.clone(), applied);
            }
            let rows = table.get(&alpha).unwrap();
            for row in rows {
                span_rows.push(row.iter().map(|g| g.eval_at_zero()).collect());
            }
        }
        let dim = scalar_rank(&span_rows);
        span_dims.push(dim);
        if dim == ambient && ell0.is_none() {
            ell0 = Some(ell);
        }
    }
    NondegeneracyReport { ell0, span_dims, ell_max }
}

/// Verdict of the holomorphic nondegeneracy test. A witness is a nontrivial
/// tangent (1,0) field whose coefficients depend on Z only; the verdict is
/// decidable only up to the truncation cap.
#[derive(Clone, Debug)]
pub enum HoloVerdict {
    /// Coefficients of the witness field, N series in the (z, w) ring.
    Degenerate(SeriesVector),
    NondegenerateAtCap(usize),
}

impl HoloVerdict {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, HoloVerdict::Degenerate(_))
    }
}

/// Search for a nontrivial holomorphic tangent field `sum c_i(Z) d/dZ_i` by
/// solving the exact linear system expressing tangency after reduction to
/// the normal form. The unknown coefficients run over all monomials up to
/// degree cap - 1.
pub fn holomorphically_nondegenerate(mfd: &FormalSubmanifold) -> HoloVerdict {
    let ambient = mfd.ambient();
    let m = mfd.ring_vars();
    let cap = mfd.cap;
    let deg_budget = cap - 1;
    // The reduced residual of component k for the field with a single
    // monomial coefficient: linear over Q(i), so columns are computed from
    // unit probes.
    let q_z: Vec<Vec<TruncatedSeries>> = (0..mfd.d)
        .map(|k| (0..mfd.n).map(|j| mfd.q[k].derivative(mfd.idx_z(j))).collect())
        .collect();
    let reduced_qz: Vec<Vec<TruncatedSeries>> = q_z
        .iter()
        .map(|row| row.iter().map(|g| mfd.reduce_mod_ideal(g)).collect())
        .collect();
    // A z-slot whose reduced derivatives all vanish is tangent outright.
    for i in 0..mfd.n {
        if (0..mfd.d).all(|k| reduced_qz[k][i].is_zero()) {
            let mut witness = vec![TruncatedSeries::zero(ambient, cap); ambient];
            witness[i] = TruncatedSeries::one(ambient, cap);
            return HoloVerdict::Degenerate(witness);
        }
    }
    // Unknowns: coefficient of monomial e in component i. A z-slot
    // coefficient of degree D only shows up in the residual at degree
    // D + val(dQ/dz_i), so its budget shrinks accordingly; otherwise the top
    // coefficients would be invisible at the cap and fake a kernel.
    let slot_budget: Vec<usize> = (0..ambient)
        .map(|i| {
            if i < mfd.n {
                let val = (0..mfd.d)
                    .filter_map(|k| reduced_qz[k][i].valuation())
                    .min()
                    .expect("free slots were handled above");
                deg_budget.saturating_sub(val)
            } else {
                deg_budget
            }
        })
        .collect();
    let unknowns: Vec<(usize, Exponent)> = (0..ambient)
        .flat_map(|i| {
            let mut basis: Vec<Exponent> = vec![Exponent::zero(ambient)];
            basis.extend(monomials_up_to(ambient, slot_budget[i]));
            basis.into_iter().map(move |e| (i, e))
        })
        .collect();
    // Equation rows are indexed by (component k, monomial of the reduced
    // ring) up to degree deg_budget.
    let mut eq_index: Vec<(usize, Exponent)> = Vec::new();
    {
        let mut mono = vec![Exponent::zero(m)];
        mono.extend(monomials_up_to(m, deg_budget));
        for k in 0..mfd.d {
            for e in &mono {
                eq_index.push((k, e.clone()));
            }
        }
    }
    let mut columns: Vec<Vec<GaussianRational>> = Vec::with_capacity(unknowns.len());
    for (i, e) in &unknowns {
        // Residual of the probe field c = z^e in slot i:
        //   i < n:      -(dQ_k/dz_i reduced) * z^e
        //   i = n + k0:  z^e on component k0
        let probe = TruncatedSeries::monomial(m, cap, {
            // e is an exponent over (z, w); embed into the double ring.
            let mut v = vec![0u32; m];
            v[..ambient].copy_from_slice(&e.0);
            Exponent(v)
        }, GaussianRational::one());
        let mut col = Vec::with_capacity(eq_index.len());
        for k in 0..mfd.d {
            let res = if *i < mfd.n {
                reduced_qz[k][*i].mul(&probe).neg()
            } else if *i - mfd.n == k {
                probe.clone()
            } else {
                TruncatedSeries::zero(m, cap)
            };
            let res = res.truncate(deg_budget);
            for (kk, ee) in eq_index.iter().filter(|(kk, _)| *kk == k) {
                debug_assert_eq!(*kk, k);
                col.push(res.coeff(ee));
            }
        }
        columns.push(col);
    }
    let nrows = eq_index.len();
    let a: Vec<Vec<GaussianRational>> = (0..nrows)
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();
    let b = vec![GaussianRational::zero(); nrows];
    let (_, kernel) = solve_scalar_system(&a, &b).expect("homogeneous system is consistent");
    if let Some(v) = kernel.first() {
        let mut witness = vec![TruncatedSeries::zero(ambient, cap); ambient];
        for ((i, e), c) in unknowns.iter().zip(v) {
            if !c.is_zero() {
                witness[*i].terms.insert(e.clone(), c.clone());
            }
        }
        HoloVerdict::Degenerate(witness)
    } else {
        HoloVerdict::NondegenerateAtCap(cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;

    #[test]
    fn heisenberg_ell0_is_one() {
        let rep = ell_nondegenerate(&gallery::heisenberg(8), 3);
        assert_eq!(rep.ell0, Some(1));
        assert_eq!(rep.span_dims[0], 1);
        assert_eq!(rep.span_dims[1], 2);
    }

    #[test]
    fn abs_z4_never_nondegenerate() {
        let rep = ell_nondegenerate(&gallery::abs_z4(8), 4);
        assert_eq!(rep.ell0, None);
        // Every derivative of -dQ/dz keeps a factor of z, so the z-slot never
        // fills in.
        assert!(rep.span_dims.iter().all(|&d| d == 1));
    }

    #[test]
    fn ell2_example_in_c3() {
        let rep = ell_nondegenerate(&gallery::ell2_hypersurface(8), 3);
        assert_eq!(rep.ell0, Some(2));
        assert_eq!(rep.span_dims[1], 2);
        assert_eq!(rep.span_dims[2], 3);
    }

    #[test]
    fn span_at_zero_counts_codimension() {
        for (_, mfd) in gallery::standard_corpus(6) {
            let rep = ell_nondegenerate(&mfd, 1);
            assert_eq!(rep.span_dims[0], mfd.d);
        }
    }

    #[test]
    fn flat_is_degenerate_with_witness() {
        let v = holomorphically_nondegenerate(&gallery::flat_hypersurface(6));
        let HoloVerdict::Degenerate(w) = v else {
            panic!("flat must be degenerate")
        };
        // Witness must be a nonzero field; d/dz is in the kernel.
        assert!(w.iter().any(|f| !f.is_zero()));
    }

    #[test]
    fn product_degenerate_witness_in_z2() {
        let v = holomorphically_nondegenerate(&gallery::product_c3(6));
        let HoloVerdict::Degenerate(w) = v else {
            panic!("product must be degenerate")
        };
        // The free direction is z2: the witness must involve it and may not
        // involve the w slot.
        assert!(!w[1].is_zero());
    }

    #[test]
    fn heisenberg_holomorphically_nondegenerate() {
        let v = holomorphically_nondegenerate(&gallery::heisenberg(8));
        assert!(!v.is_degenerate());
    }

    #[test]
    fn finite_nondegeneracy_implies_holomorphic() {
        for (name, mfd) in gallery::standard_corpus(6) {
            let rep = ell_nondegenerate(&mfd, 3);
            if rep.ell0.is_some() {
                assert!(
                    !holomorphically_nondegenerate(&mfd).is_degenerate(),
                    "{name}"
                );
            }
        }
    }
}
