//! Property-based invariants of the series ring and its linear algebra.

use crgeo::linalg::{cramer_solve, SeriesMatrix};
use crgeo::scalar::GaussianRational as Q;
use crgeo::series::{Exponent, TruncatedSeries as S};
use crgeo::solve::weighted_decompose;
use proptest::prelude::*;

fn arb_coeff() -> impl Strategy<Value = Q> {
    (-4i64..=4, 1i64..=3, -4i64..=4, 1i64..=3)
        .prop_map(|(rn, rd, im, id)| Q::from_parts(rn, rd, im, id))
}

/// Sparse random series in `m` variables with bounded degree terms.
fn arb_series(m: usize, cap: usize, max_deg: usize) -> impl Strategy<Value = S> {
    let exps = prop::collection::vec(
        (prop::collection::vec(0u32..=max_deg as u32, m), arb_coeff()),
        0..6,
    );
    exps.prop_map(move |terms| {
        let mut s = S::zero(m, cap);
        for (e, c) in terms {
            let exp = Exponent(e);
            if exp.degree() <= max_deg.min(cap) && !c.is_zero() {
                s.terms.insert(exp, c);
            }
        }
        s
    })
}

/// Same, with no constant term.
fn arb_series_positive(m: usize, cap: usize, max_deg: usize) -> impl Strategy<Value = S> {
    arb_series(m, cap, max_deg).prop_map(move |mut s| {
        s.terms.remove(&Exponent::zero(m));
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conjugation_is_multiplicative_involution(
        a in arb_series(2, 8, 4),
        b in arb_series(2, 8, 4),
    ) {
        prop_assert_eq!(a.mul(&b).conjugate(), a.conjugate().mul(&b.conjugate()));
        prop_assert_eq!(a.conjugate().conjugate(), a);
    }

    #[test]
    fn compose_is_associative_on_cubic_data(
        f in arb_series(1, 6, 3),
        g in arb_series_positive(1, 6, 3),
        h in arb_series_positive(1, 6, 3),
    ) {
        // (f o g) o h = f o (g o h) at D = 6.
        let lhs = f.compose(&[g.clone()]).compose(&[h.clone()]);
        let rhs = f.compose(&[g.compose(&[h.clone()])]);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn compose_degree_locality(
        f in arb_series(2, 8, 5),
        g0 in arb_series_positive(2, 8, 4),
        g1 in arb_series_positive(2, 8, 4),
    ) {
        // Truncating inputs to degree D then composing equals composing then
        // truncating.
        let d = 4;
        let full = f.compose(&[g0.clone(), g1.clone()]).truncate(d);
        let cut = f
            .truncate(d)
            .with_cap(8)
            .compose(&[g0.truncate(d).with_cap(8), g1.truncate(d).with_cap(8)])
            .truncate(d);
        prop_assert_eq!(full, cut);
    }

    #[test]
    fn cramer_back_substitution_random_units(
        a01 in arb_series_positive(2, 6, 3),
        a10 in arb_series_positive(2, 6, 3),
        d0 in arb_series_positive(2, 6, 3),
        d1 in arb_series_positive(2, 6, 3),
        b0 in arb_series(2, 6, 3),
        b1 in arb_series(2, 6, 3),
    ) {
        // A = I + (strictly positive-valuation entries): always a unit.
        let one = S::one(2, 6);
        let a = SeriesMatrix::from_rows(vec![
            vec![one.add(&d0), a01],
            vec![a10, one.add(&d1)],
        ]);
        let b = vec![b0, b1];
        let (x, _) = cramer_solve(&a, &b).unwrap();
        for i in 0..2 {
            let mut res = b[i].neg();
            for j in 0..2 {
                res = res.add(&a.at(i, j).mul(&x[j]));
            }
            prop_assert!(res.is_zero());
        }
    }

    #[test]
    fn weighted_parts_disjoint_and_complete(
        g in arb_series(3, 8, 6),
        w0 in 1usize..3,
        w1 in 1usize..3,
        w2 in 1usize..4,
    ) {
        let weights = [w0, w1, w2];
        let parts = weighted_decompose(&g, &weights);
        let mut sum = S::zero(3, 8);
        let mut seen = std::collections::BTreeSet::new();
        for p in &parts {
            for e in p.part.terms.keys() {
                prop_assert!(seen.insert(e.clone()), "supports overlap");
                prop_assert_eq!(e.weighted_degree(&weights), p.weighted_degree);
            }
            sum = sum.add(&p.part);
        }
        prop_assert_eq!(sum, g);
    }

    #[test]
    fn jet_projection_coherence(
        c1 in arb_coeff(),
        c2 in arb_coeff(),
        c3 in arb_coeff(),
    ) {
        use crgeo::mapping::{jet, jet_project, FormalMap};
        let z = S::var(2, 8, 0);
        let w = S::var(2, 8, 1);
        let f = z.add(&z.mul(&w).scale(&c1)).add(&z.mul(&z).mul(&z).scale(&c2));
        let g = w.add(&w.mul(&w).scale(&c3));
        let h = FormalMap::new(vec![f, g], 1, 1, 1, 1);
        let j4 = jet(&h, 4);
        let j2 = jet(&h, 2);
        prop_assert_eq!(jet_project(&j4, 2), j2);
    }
}
