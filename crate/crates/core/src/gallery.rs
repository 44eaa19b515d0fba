//! Ready-made example manifolds and maps used across the test suites and the
//! command-line examples: quadrics, degenerate models, and a batch of fixed
//! polynomial graphs.

use crate::linalg::SeriesVector;
use crate::manifold::{graph_to_rho, normalize, FormalSubmanifold};
use crate::mapping::FormalMap;
use crate::scalar::GaussianRational as Q;
use crate::series::TruncatedSeries as S;

/// Build a hypersurface-type manifold from a real graph polynomial
/// `Im w = phi(z, z-bar, Re w)` given as terms in the `(z, zbar, s)` ring.
pub fn from_graph(phi: &SeriesVector, n: usize, d: usize) -> FormalSubmanifold {
    let rho = graph_to_rho(phi, n, d);
    normalize(&rho, n, d).expect("gallery graph must normalize")
}

/// Heisenberg hypersurface `Im w = |z|^2` in C^2; Q = tau + 2 i z chi.
pub fn heisenberg(cap: usize) -> FormalSubmanifold {
    let z = S::var(3, cap, 0);
    let zb = S::var(3, cap, 1);
    from_graph(&vec![z.mul(&zb)], 1, 1)
}

/// Flat hypersurface `Im w = 0` in C^2; Q = tau.
pub fn flat_hypersurface(cap: usize) -> FormalSubmanifold {
    from_graph(&vec![S::zero(3, cap)], 1, 1)
}

/// `Im w = |z|^4` in C^2; finite type with a single Hormander number 4,
/// nowhere finitely nondegenerate at 0.
pub fn abs_z4(cap: usize) -> FormalSubmanifold {
    let z = S::var(3, cap, 0);
    let zb = S::var(3, cap, 1);
    let z2 = z.mul(&z);
    let zb2 = zb.mul(&zb);
    from_graph(&vec![z2.mul(&zb2)], 1, 1)
}

/// `Im w = |z1|^2 + Re(z1^2 zbar2)` in C^3: 2-nondegenerate at 0.
pub fn ell2_hypersurface(cap: usize) -> FormalSubmanifold {
    let m = 5; // (z1, z2, zb1, zb2, s)
    let z1 = S::var(m, cap, 0);
    let z2 = S::var(m, cap, 1);
    let zb1 = S::var(m, cap, 2);
    let zb2 = S::var(m, cap, 3);
    let half = Q::from_ratio(1, 2);
    let re_part = z1.mul(&z1).mul(&zb2).add(&zb1.mul(&zb1).mul(&z2)).scale(&half);
    from_graph(&vec![z1.mul(&zb1).add(&re_part)], 2, 1)
}

/// Product-like hypersurface `Im w = |z1|^2` in C^3: finite type but
/// holomorphically degenerate (the z2 direction is free).
pub fn product_c3(cap: usize) -> FormalSubmanifold {
    let m = 5;
    let z1 = S::var(m, cap, 0);
    let zb1 = S::var(m, cap, 2);
    from_graph(&vec![z1.mul(&zb1)], 2, 1)
}

/// Hyperquadric `Im w = |z1|^2 + |z2|^2` in C^3.
pub fn hyperquadric_c3(cap: usize) -> FormalSubmanifold {
    let m = 5;
    let z1 = S::var(m, cap, 0);
    let z2 = S::var(m, cap, 1);
    let zb1 = S::var(m, cap, 2);
    let zb2 = S::var(m, cap, 3);
    from_graph(&vec![z1.mul(&zb1).add(&z2.mul(&zb2))], 2, 1)
}

/// Codimension-2 quadric-quartic in C^3: `Im w1 = |z|^2`, `Im w2 = |z|^4`.
pub fn codim2_c3(cap: usize) -> FormalSubmanifold {
    let m = 4; // (z, zbar, s1, s2)
    let z = S::var(m, cap, 0);
    let zb = S::var(m, cap, 1);
    let q = z.mul(&zb);
    from_graph(&vec![q.clone(), q.mul(&q)], 1, 2)
}

/// Dilation automorphism (z, w) -> (c z, |c|^2 w) of the Heisenberg
/// hypersurface, c a nonzero Gaussian rational.
pub fn heisenberg_dilation(cap: usize, c: &Q) -> FormalMap {
    let m = 2;
    let c_sq = c * &c.conj();
    FormalMap::new(
        vec![S::var(m, cap, 0).scale(c), S::var(m, cap, 1).scale(&c_sq)],
        1,
        1,
        1,
        1,
    )
}

/// Truncated parabolic automorphism (z, w) -> (z, w)/(1 - r w) of the
/// Heisenberg hypersurface, r rational.
pub fn heisenberg_parabolic(cap: usize, r_num: i64, r_den: i64) -> FormalMap {
    let m = 2;
    let r = Q::from_ratio(r_num, r_den);
    let w = S::var(m, cap, 1);
    let rw = w.scale(&r);
    // 1/(1 - r w) as a geometric series.
    let mut u = S::one(m, cap);
    let mut pow = S::one(m, cap);
    for _ in 0..cap {
        pow = pow.mul(&rw);
        if pow.is_zero() {
            break;
        }
        u = u.add(&pow);
    }
    FormalMap::new(vec![S::var(m, cap, 0).mul(&u), w.mul(&u)], 1, 1, 1, 1)
}

/// The CR submersive projection (z1, z2, w) -> (z1, w) from
/// `Im w = |z1|^2` in C^3 onto the Heisenberg hypersurface in C^2.
pub fn product_to_heisenberg(cap: usize) -> FormalMap {
    let m = 3;
    FormalMap::new(vec![S::var(m, cap, 0), S::var(m, cap, 2)], 2, 1, 1, 1)
}

/// Fixed batch of real polynomial graphs of degree <= 4 rounding out the
/// test corpus. Coefficients are arbitrary but frozen.
pub fn assorted_graphs(cap: usize) -> Vec<(String, FormalSubmanifold)> {
    let mut out = Vec::new();
    // n = 1 graphs in (z, zbar, s).
    let m = 3;
    let z = S::var(m, cap, 0);
    let zb = S::var(m, cap, 1);
    let s = S::var(m, cap, 2);
    let zzb = z.mul(&zb);
    // |z|^2 + Re(z^3 zbar)
    let g1 = zzb.add(&z.mul(&z).mul(&z).mul(&zb).add(&zb.mul(&zb).mul(&zb).mul(&z)).scale(&Q::from_ratio(1, 2)));
    out.push(("graph_deg4_mixed".to_string(), from_graph(&vec![g1], 1, 1)));
    // |z|^2 + (Re w) |z|^2
    let g2 = zzb.add(&s.mul(&zzb));
    out.push(("graph_rew_coupled".to_string(), from_graph(&vec![g2], 1, 1)));
    // Re(z^2): flat in disguise (infinite type).
    let g3 = z.mul(&z).add(&zb.mul(&zb)).scale(&Q::from_ratio(1, 2));
    out.push(("graph_re_z2".to_string(), from_graph(&vec![g3], 1, 1)));
    // |z|^2 + |z|^4 + 3/5 (Re w)^2 |z|^2
    let g4 = zzb
        .add(&zzb.mul(&zzb))
        .add(&s.mul(&s).mul(&zzb).scale(&Q::from_ratio(3, 5)));
    out.push(("graph_quartic_tower".to_string(), from_graph(&vec![g4], 1, 1)));
    // 2|z|^2 - Re(z^2 zbar^2) ... wait z^2 zbar^2 is |z|^4, keep a sign mix:
    let g5 = zzb.scale(&Q::from_int(2)).sub(&zzb.mul(&zzb).scale(&Q::from_ratio(1, 3)));
    out.push(("graph_sign_mix".to_string(), from_graph(&vec![g5], 1, 1)));
    // n = 2 graph with a rotation-breaking quartic.
    let m2 = 5;
    let z1 = S::var(m2, cap, 0);
    let z2 = S::var(m2, cap, 1);
    let zb1 = S::var(m2, cap, 2);
    let zb2 = S::var(m2, cap, 3);
    let g6 = z1
        .mul(&zb1)
        .add(&z2.mul(&zb2).scale(&Q::from_int(2)))
        .add(&z1.mul(&z2).mul(&zb1).mul(&zb2).scale(&Q::from_ratio(1, 2)));
    out.push(("graph_c3_quadric_quartic".to_string(), from_graph(&vec![g6], 2, 1)));
    out
}

/// The full named corpus used by the acceptance suites.
pub fn standard_corpus(cap: usize) -> Vec<(String, FormalSubmanifold)> {
    let mut out = vec![
        ("heisenberg".to_string(), heisenberg(cap)),
        ("flat".to_string(), flat_hypersurface(cap)),
        ("abs_z4".to_string(), abs_z4(cap)),
        ("ell2_c3".to_string(), ell2_hypersurface(cap)),
        ("codim2_c3".to_string(), codim2_c3(cap)),
        ("product_c3".to_string(), product_c3(cap)),
        ("hyperquadric_c3".to_string(), hyperquadric_c3(cap)),
    ];
    out.extend(assorted_graphs(cap));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::check_involution;

    #[test]
    fn corpus_builds_and_satisfies_involution() {
        for (name, mfd) in standard_corpus(6) {
            check_involution(&mfd).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn heisenberg_q_shape() {
        let mfd = heisenberg(6);
        let m = 4;
        let z = S::var(m, 6, 0);
        let chi = S::var(m, 6, 2);
        let tau = S::var(m, 6, 3);
        let expect = tau.add(&z.mul(&chi).scale(&Q::from_parts(0, 1, 2, 1)));
        assert_eq!(mfd.q[0], expect);
    }

    #[test]
    fn abs_z4_q_shape() {
        let mfd = abs_z4(8);
        let m = 4;
        let z = S::var(m, 8, 0);
        let chi = S::var(m, 8, 2);
        let tau = S::var(m, 8, 3);
        let z2c2 = z.mul(&z).mul(&chi).mul(&chi);
        let expect = tau.add(&z2c2.scale(&Q::from_parts(0, 1, 2, 1)));
        assert_eq!(mfd.q[0], expect);
    }

    #[test]
    fn parabolic_is_automorphism() {
        use crate::mapping::check_maps_into;
        let cap = 8;
        let mfd = heisenberg(cap);
        for r in [1i64, -1, 2] {
            let h = heisenberg_parabolic(cap, r, if r == 2 { 4 } else { 1 });
            assert!(check_maps_into(&h, &mfd, &mfd).unwrap(), "r = {r}");
        }
    }

    #[test]
    fn product_projection_maps_into() {
        use crate::mapping::{check_maps_into, is_cr_submersive};
        let cap = 8;
        let src = product_c3(cap);
        let dst = heisenberg(cap);
        let h = product_to_heisenberg(cap);
        assert!(check_maps_into(&h, &src, &dst).unwrap());
        assert!(is_cr_submersive(&h, &src, &dst));
    }
}
