//! Iterated Segre mappings, their generic ranks, the diagonal duplication
//! maps, and the rank-based finite type criterion.

use crate::error::CrError;
use crate::linalg::{generic_rank, jacobian, SeriesMatrix, SeriesVector};
use crate::manifold::FormalSubmanifold;
use crate::series::TruncatedSeries;

/// The k-th Segre mapping of a normalized submanifold: N series in the
/// `k*n`-variable ring with block layout `(z, chi^1, z^1, chi^2, ...)`.
#[derive(Clone, Debug)]
pub struct SegreMap {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    pub components: SeriesVector,
}

impl SegreMap {
    pub fn ring_vars(&self) -> usize {
        self.k * self.n
    }

    /// The non-trivial block: the w-components `u^k`.
    pub fn u_components(&self) -> &[TruncatedSeries] {
        &self.components[self.n..]
    }

    /// Coefficient-conjugated components (the arguments are renamed by the
    /// caller through substitution).
    pub fn conjugated(&self) -> SeriesVector {
        self.components.iter().map(|f| f.conjugate()).collect()
    }
}

/// Build `v^k` by the recursion `v^{k+1} = (z, Q(z, conj(v^k)))` from
/// `v^1 = (z, 0)`.
pub fn segre_map(mfd: &FormalSubmanifold, k: usize) -> SegreMap {
    assert!(k >= 1, "the order-0 mapping is the origin; start at 1");
    assert!(mfd.n > 0, "Segre mappings need at least one CR direction");
    let n = mfd.n;
    let cap = mfd.cap;
    let ambient = mfd.ambient();
    let mut current: SeriesVector = {
        // v^1 = (z, 0) in the n-variable ring.
        let mut v: SeriesVector = (0..n).map(|i| TruncatedSeries::var(n, cap, i)).collect();
        v.extend((0..mfd.d).map(|_| TruncatedSeries::zero(n, cap)));
        v
    };
    for step in 2..=k {
        let m_new = step * mfd.n;
        // Conjugate previous map, shifted onto the trailing variables.
        let shift: Vec<usize> = (mfd.n..m_new).collect();
        let prev_bar: SeriesVector = current
            .iter()
            .map(|f| f.conjugate().embed(m_new, &shift))
            .collect();
        let mut subs: Vec<TruncatedSeries> = Vec::with_capacity(2 * ambient);
        for i in 0..mfd.n {
            subs.push(TruncatedSeries::var(m_new, cap, i));
        }
        for _ in 0..mfd.d {
            subs.push(TruncatedSeries::zero(m_new, cap));
        }
        subs.extend(prev_bar.iter().cloned());
        let mut next: SeriesVector = (0..mfd.n)
            .map(|i| TruncatedSeries::var(m_new, cap, i))
            .collect();
        next.extend(mfd.q.iter().map(|qj| qj.compose(&subs)));
        current = next;
    }
    SegreMap {
        k,
        n: mfd.n,
        d: mfd.d,
        components: current,
    }
}

/// Residual of the defining series along consecutive Segre mappings:
/// `rho(v^{k+1}, conj(v^k))`, identically zero for every k.
pub fn segre_residual(mfd: &FormalSubmanifold, k: usize) -> SeriesVector {
    let cap = mfd.cap;
    let upper = segre_map(mfd, k + 1);
    let m_ring = upper.ring_vars();
    let lower_bar: SeriesVector = if k == 0 {
        (0..mfd.ambient())
            .map(|_| TruncatedSeries::zero(m_ring, cap))
            .collect()
    } else {
        let shift: Vec<usize> = (mfd.n..(k + 1) * mfd.n).collect();
        segre_map(mfd, k)
            .components
            .iter()
            .map(|f| f.conjugate().embed(m_ring, &shift))
            .collect()
    };
    let subs: Vec<TruncatedSeries> = upper
        .components
        .iter()
        .cloned()
        .chain(lower_bar.iter().cloned())
        .collect();
    mfd.rho_input.iter().map(|r| r.compose(&subs)).collect()
}

/// Generic rank of the Jacobian of `v^k`.
pub fn segre_rank(mfd: &FormalSubmanifold, k: usize) -> crate::linalg::RankResult {
    generic_rank(&jacobian(&segre_map(mfd, k).components))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteTypeVerdict {
    pub finite: bool,
    /// Minimal k with full-rank Segre mapping, when finite.
    pub k1: Option<usize>,
    /// Ranks observed for k = 1, ..., d + 1.
    pub ranks: Vec<usize>,
    pub truncation_warning: bool,
}

/// Scan `k = 1, ..., d + 1`: finite type iff the rank reaches the ambient
/// dimension, which then persists for larger k.
pub fn finite_type_segre(mfd: &FormalSubmanifold) -> FiniteTypeVerdict {
    let ambient = mfd.ambient();
    let mut ranks = Vec::new();
    let mut k1 = None;
    let mut warning = false;
    for k in 1..=mfd.d + 1 {
        let r = segre_rank(mfd, k);
        ranks.push(r.rank);
        // A full-rank verdict is exact regardless of truncation.
        if r.rank == ambient {
            k1 = Some(k);
            break;
        }
        warning |= r.truncation_warning;
    }
    FiniteTypeVerdict {
        finite: k1.is_some(),
        k1,
        ranks,
        truncation_warning: k1.is_none() && warning,
    }
}

/// The linear duplication map `D_k : C^{kn} -> C^{2kn}` feeding a point of
/// the order-k diagonal into `v^{2k}`. Output slots are either zero (the
/// leading z block) or wired to an input variable: blocks
/// `(0, b_1, ..., b_k, b_{k-1}, ..., b_1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DkMap {
    pub k: usize,
    pub n: usize,
    /// For each of the 2kn output variables: None for zero, or the input
    /// variable index.
    pub pattern: Vec<Option<usize>>,
}

pub fn dk_map(k: usize, n: usize) -> DkMap {
    assert!(k >= 1);
    let mut pattern = Vec::with_capacity(2 * k * n);
    for _ in 0..n {
        pattern.push(None);
    }
    for b in 0..k {
        for i in 0..n {
            pattern.push(Some(b * n + i));
        }
    }
    for b in (0..k.saturating_sub(1)).rev() {
        for i in 0..n {
            pattern.push(Some(b * n + i));
        }
    }
    DkMap { k, n, pattern }
}

impl DkMap {
    /// Substitution vector realizing the map into the kn-variable ring.
    pub fn substitution(&self, cap: usize) -> Vec<TruncatedSeries> {
        let m_in = self.k * self.n;
        self.pattern
            .iter()
            .map(|slot| match slot {
                None => TruncatedSeries::zero(m_in, cap),
                Some(i) => TruncatedSeries::var(m_in, cap, *i),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Lemma413Report {
    pub composition_vanishes: bool,
    pub partial_rank: usize,
    pub full_rank: usize,
    pub ranks_match: bool,
}

impl Lemma413Report {
    pub fn all_ok(&self) -> bool {
        self.composition_vanishes && self.ranks_match
    }
}

/// Check the diagonal identities for `v^{2k}`: the composition with `D_k`
/// vanishes, and the Jacobian restricted to the z block together with the
/// mirrored trailing blocks, evaluated along `D_k`, has exactly the rank of
/// `v^k`.
pub fn check_lemma_413(mfd: &FormalSubmanifold, k: usize) -> Result<Lemma413Report, CrError> {
    let cap = mfd.cap;
    let n = mfd.n;
    let v2k = segre_map(mfd, 2 * k);
    let dk = dk_map(k, n);
    let subs = dk.substitution(cap);
    let composed: SeriesVector = v2k.components.iter().map(|f| f.compose(&subs)).collect();
    let composition_vanishes = composed.iter().all(|f| f.is_zero());
    // Columns: z block plus xi blocks k+1 .. 2k-1 (the slots D_k fills with
    // mirrored variables).
    let jac = jacobian(&v2k.components);
    let mut cols: Vec<usize> = (0..n).collect();
    cols.extend((k + 1) * n..2 * k * n);
    let rows: Vec<Vec<TruncatedSeries>> = (0..jac.rows)
        .map(|i| cols.iter().map(|&c| jac.at(i, c).compose(&subs)).collect())
        .collect();
    let partial = generic_rank(&SeriesMatrix::from_rows(rows));
    let full = segre_rank(mfd, k);
    Ok(Lemma413Report {
        composition_vanishes,
        partial_rank: partial.rank,
        full_rank: full.rank,
        ranks_match: partial.rank == full.rank,
    })
}

/// Componentwise lowest-degree homogeneous part `(z, lowest(u_j))`: its
/// Jacobian rank bounds the Segre rank from below.
pub fn segre_leading_part(v: &SegreMap) -> SeriesVector {
    v.components
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if i < v.n {
                f.clone()
            } else {
                match f.valuation() {
                    Some(val) => f.homogeneous_part(val),
                    None => f.clone(),
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn v1_is_graph_of_zero() {
        for (name, mfd) in gallery::standard_corpus(6) {
            let v1 = segre_map(&mfd, 1);
            for u in v1.u_components() {
                assert!(u.is_zero(), "{name}: v^1 must be (z, 0)");
            }
        }
    }

    #[test]
    fn heisenberg_v2_v4() {
        let mfd = gallery::heisenberg(8);
        let two_i = Q::from_parts(0, 1, 2, 1);
        let v2 = segre_map(&mfd, 2);
        // v^2 = (z, 2 i z chi^1)
        let z = S::var(2, 8, 0);
        let c1 = S::var(2, 8, 1);
        assert_eq!(v2.components[1], z.mul(&c1).scale(&two_i));
        // v^4 = (z, 2i z chi1 - 2i chi1 z1 + 2i z1 chi2)
        let v4 = segre_map(&mfd, 4);
        let m = 4;
        let (z, c1, z1, c2) = (
            S::var(m, 8, 0),
            S::var(m, 8, 1),
            S::var(m, 8, 2),
            S::var(m, 8, 3),
        );
        let expect = z
            .mul(&c1)
            .sub(&c1.mul(&z1))
            .add(&z1.mul(&c2))
            .scale(&two_i);
        assert_eq!(v4.components[1], expect);
    }

    #[test]
    fn segre_residual_vanishes() {
        let mfd = gallery::heisenberg(8);
        for k in 0..=3 {
            for r in segre_residual(&mfd, k) {
                assert!(r.is_zero(), "k = {k}");
            }
        }
    }

    #[test]
    fn ranks_and_verdicts() {
        let heis = gallery::heisenberg(8);
        assert_eq!(segre_rank(&heis, 2).rank, 2);
        let v = finite_type_segre(&heis);
        assert_eq!(v.k1, Some(2));
        assert!(v.finite);

        let flat = gallery::flat_hypersurface(8);
        let vf = finite_type_segre(&flat);
        assert!(!vf.finite);
        assert_eq!(vf.ranks, vec![1, 1]);

        let z4 = gallery::abs_z4(8);
        let vz = finite_type_segre(&z4);
        assert_eq!(vz.k1, Some(2));

        let c2 = gallery::codim2_c3(8);
        let vc = finite_type_segre(&c2);
        assert!(vc.finite);
        assert_eq!(vc.k1, Some(3));
    }

    #[test]
    fn dk_patterns() {
        // D_1(chi^1) = (0, chi^1)
        let d1 = dk_map(1, 1);
        assert_eq!(d1.pattern, vec![None, Some(0)]);
        // D_2(chi^1, z^1) = (0, chi^1, z^1, chi^1)
        let d2 = dk_map(2, 1);
        assert_eq!(d2.pattern, vec![None, Some(0), Some(1), Some(0)]);
        // D_3(chi^1, z^1, chi^2) = (0, chi^1, z^1, chi^2, z^1, chi^1)
        let d3 = dk_map(3, 1);
        assert_eq!(
            d3.pattern,
            vec![None, Some(0), Some(1), Some(2), Some(1), Some(0)]
        );
    }

    #[test]
    fn lemma_413_on_heisenberg() {
        let mfd = gallery::heisenberg(8);
        for k in 1..=2 {
            let rep = check_lemma_413(&mfd, k).unwrap();
            assert!(rep.all_ok(), "k = {k}: {rep:?}");
        }
    }

    #[test]
    fn leading_part_bounds_rank() {
        for (name, mfd) in gallery::standard_corpus(6) {
            if mfd.n == 0 {
                continue;
            }
            let k = 2;
            let v = segre_map(&mfd, k);
            let lead = segre_leading_part(&v);
            let r_lead = generic_rank(&jacobian(&lead)).rank;
            let r_full = segre_rank(&mfd, k).rank;
            assert!(r_lead <= r_full, "{name}");
        }
    }

    #[test]
    fn monotone_ranks() {
        for (name, mfd) in gallery::standard_corpus(6) {
            let mut prev = 0;
            for k in 1..=mfd.d + 2 {
                let r = segre_rank(&mfd, k).rank;
                assert!(r >= prev, "{name} at k = {k}");
                prev = r;
            }
        }
    }
}
