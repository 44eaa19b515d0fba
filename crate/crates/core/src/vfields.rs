//! Tangent formal vector fields of a normalized submanifold, Lie brackets,
//! and the commutator flag that decides finite type and the Hörmander
//! numbers at 0.

use crate::linalg::scalar_rank;
use crate::manifold::FormalSubmanifold;
use crate::scalar::GaussianRational;
use crate::series::TruncatedSeries;

/// Vector field on the double ring: `sum a_i d/dZ_i + b_i d/dzeta_i` with
/// series coefficients.
#[derive(Clone, Debug)]
pub struct FormalVectorField {
    /// d/dZ coefficients, N entries.
    pub a: Vec<TruncatedSeries>,
    /// d/dzeta coefficients, N entries.
    pub b: Vec<TruncatedSeries>,
}

impl FormalVectorField {
    pub fn ambient(&self) -> usize {
        self.a.len()
    }

    pub fn is_type_01(&self) -> bool {
        self.a.iter().all(|f| f.is_zero())
    }

    pub fn is_type_10(&self) -> bool {
        self.b.iter().all(|f| f.is_zero())
    }

    pub fn is_zero(&self) -> bool {
        self.is_type_01() && self.is_type_10()
    }

    /// Apply the field to a double-ring series as a derivation.
    pub fn apply(&self, f: &TruncatedSeries) -> TruncatedSeries {
        let ambient = self.ambient();
        let mut acc = TruncatedSeries::zero(f.m, f.cap.saturating_sub(1));
        for i in 0..ambient {
            if !self.a[i].is_zero() {
                acc = acc.add(&self.a[i].mul(&f.derivative(i)));
            }
            if !self.b[i].is_zero() {
                acc = acc.add(&self.b[i].mul(&f.derivative(ambient + i)));
            }
        }
        acc
    }

    /// Lie bracket; the coefficient cap drops by one.
    pub fn bracket(&self, other: &FormalVectorField) -> FormalVectorField {
        let n = self.ambient();
        assert_eq!(n, other.ambient());
        FormalVectorField {
            a: (0..n)
                .map(|i| self.apply(&other.a[i]).sub(&other.apply(&self.a[i])))
                .collect(),
            b: (0..n)
                .map(|i| self.apply(&other.b[i]).sub(&other.apply(&self.b[i])))
                .collect(),
        }
    }

    /// Coefficient vector at the origin, length 2N.
    pub fn at_zero(&self) -> Vec<GaussianRational> {
        self.a
            .iter()
            .chain(self.b.iter())
            .map(|f| f.eval_at_zero())
            .collect()
    }
}

/// The basis of (0,1) tangent fields in normal coordinates:
/// `L_j = d/dchi_j + sum_k (dQbar_k/dchi_j)(chi, z, w) d/dtau_k`.
pub fn cr_basis(mfd: &FormalSubmanifold) -> Vec<FormalVectorField> {
    let ambient = mfd.ambient();
    let m = mfd.ring_vars();
    let cap = mfd.cap;
    (0..mfd.n)
        .map(|j| {
            let mut b = vec![TruncatedSeries::zero(m, cap); ambient];
            b[j] = TruncatedSeries::one(m, cap);
            for k in 0..mfd.d {
                b[mfd.n + k] = mfd.q_bar[k].derivative(mfd.idx_chi(j));
            }
            FormalVectorField {
                a: vec![TruncatedSeries::zero(m, cap); ambient],
                b,
            }
        })
        .collect()
}

/// The companion tangent fields: the (1,0) basis `tildeL_j`, the transversal
/// fields `T_j`, and the combinations `V_j = tildeL_j - sum Q_{k,z_j} T_k`
/// that act as plain d/dz_j on series in (z, w) only.
pub struct AuxFields {
    pub tilde_l: Vec<FormalVectorField>,
    pub t: Vec<FormalVectorField>,
    pub v: Vec<FormalVectorField>,
}

pub fn aux_fields(mfd: &FormalSubmanifold) -> AuxFields {
    let ambient = mfd.ambient();
    let m = mfd.ring_vars();
    let cap = mfd.cap;
    let zero = || vec![TruncatedSeries::zero(m, cap); ambient];
    let tilde_l: Vec<FormalVectorField> = (0..mfd.n)
        .map(|j| {
            let mut a = zero();
            a[j] = TruncatedSeries::one(m, cap);
            for k in 0..mfd.d {
                a[mfd.n + k] = mfd.q[k].derivative(mfd.idx_z(j));
            }
            FormalVectorField { a, b: zero() }
        })
        .collect();
    let t: Vec<FormalVectorField> = (0..mfd.d)
        .map(|j| {
            let mut a = zero();
            a[mfd.n + j] = TruncatedSeries::one(m, cap);
            let mut b = zero();
            for k in 0..mfd.d {
                b[mfd.n + k] = mfd.q_bar[k].derivative(mfd.idx_w(j));
            }
            FormalVectorField { a, b }
        })
        .collect();
    let v: Vec<FormalVectorField> = (0..mfd.n)
        .map(|j| {
            let mut f = tilde_l[j].clone();
            for k in 0..mfd.d {
                let coeff = mfd.q[k].derivative(mfd.idx_z(j));
                for i in 0..ambient {
                    f.a[i] = f.a[i].sub(&coeff.mul(&t[k].a[i]));
                    f.b[i] = f.b[i].sub(&coeff.mul(&t[k].b[i]));
                }
            }
            f
        })
        .collect();
    AuxFields { tilde_l, t, v }
}

/// Tangency residual of a field against the normal defining series: the
/// reduced application to every component of w - Q. Zero for tangent fields.
pub fn tangency_residual(mfd: &FormalSubmanifold, x: &FormalVectorField) -> Vec<TruncatedSeries> {
    mfd.defining_normal()
        .iter()
        .map(|rho| mfd.reduce_mod_ideal(&x.apply(rho)))
        .collect()
}

/// The commutator flag at 0.
#[derive(Clone, Debug)]
pub struct HormanderFlag {
    /// Commutator lengths at which the evaluated span grows.
    pub m: Vec<usize>,
    /// Dimension jumps at those lengths.
    pub l: Vec<usize>,
    /// The lengths repeated according to multiplicity.
    pub mu: Vec<usize>,
    /// Total excess dimension over the complex tangent space.
    pub r: usize,
    /// Span dimensions at each jump.
    pub e_dims: Vec<usize>,
    pub d0_dim: usize,
    pub g0_dim: usize,
    pub finite_type: bool,
    /// Set when the flag was still growing at the length budget while
    /// r < d, so longer commutators might still close the gap.
    pub inconclusive: bool,
    pub max_length: usize,
}

/// Incremental exact span tracker over Q(i).
struct SpanTracker {
    rows: Vec<Vec<GaussianRational>>,
}

impl SpanTracker {
    fn new() -> Self {
        SpanTracker { rows: Vec::new() }
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Insert a vector; returns true when it enlarged the span.
    fn insert(&mut self, v: Vec<GaussianRational>) -> bool {
        let mut candidate = self.rows.clone();
        candidate.push(v);
        if scalar_rank(&candidate) > self.rows.len() {
            self.rows = candidate;
            true
        } else {
            false
        }
    }
}

/// Evaluate all iterated commutators of the tangent basis fields at 0 up to
/// `max_length` and record where the span grows. Finite type at 0 means the
/// excess r reaches the codimension d.
pub fn hormander_flag(mfd: &FormalSubmanifold, max_length: Option<usize>) -> HormanderFlag {
    let max_length = max_length.unwrap_or(mfd.d + 2).min(mfd.cap);
    let generators: Vec<FormalVectorField> = {
        let mut g = aux_fields(mfd).tilde_l;
        g.extend(cr_basis(mfd));
        g
    };
    let mut span = SpanTracker::new();
    for f in &generators {
        span.insert(f.at_zero());
    }
    let d0_dim = span.dim();
    let mut m = Vec::new();
    let mut l = Vec::new();
    let mut e_dims = Vec::new();
    let mut level: Vec<FormalVectorField> = generators.clone();
    let mut grew_at_last = false;
    for length in 2..=max_length {
        let mut next = Vec::new();
        for g in &generators {
            for f in &level {
                let br = g.bracket(f);
                if !br.is_zero() {
                    next.push(br);
                }
            }
        }
        let before = span.dim();
        for f in &next {
            span.insert(f.at_zero());
        }
        let after = span.dim();
        grew_at_last = after > before;
        if grew_at_last {
            m.push(length);
            l.push(after - before);
            e_dims.push(after);
        }
        level = next;
        if span.dim() == d0_dim + mfd.d {
            break;
        }
        if level.is_empty() {
            grew_at_last = false;
            break;
        }
    }
    let r = span.dim() - d0_dim;
    let mu: Vec<usize> = m
        .iter()
        .zip(&l)
        .flat_map(|(&mj, &lj)| std::iter::repeat(mj).take(lj))
        .collect();
    let finite_type = r == mfd.d;
    HormanderFlag {
        m,
        l,
        mu,
        r,
        e_dims,
        d0_dim,
        g0_dim: d0_dim + r,
        finite_type,
        inconclusive: !finite_type && grew_at_last,
        max_length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn heisenberg_basis_fields() {
        let mfd = gallery::heisenberg(8);
        let basis = cr_basis(&mfd);
        assert_eq!(basis.len(), 1);
        // L = d/dchi - 2 i z d/dtau
        let m = 4;
        assert!(basis[0].is_type_01());
        assert_eq!(basis[0].b[0], S::one(m, 8));
        assert_eq!(
            basis[0].b[1],
            S::var(m, 7, 0).scale(&Q::from_parts(0, 1, -2, 1))
        );
        // Tangency.
        for res in tangency_residual(&mfd, &basis[0]) {
            assert!(res.is_zero());
        }
    }

    #[test]
    fn heisenberg_aux_fields() {
        let mfd = gallery::heisenberg(8);
        let aux = aux_fields(&mfd);
        let m = 4;
        // tildeL = d/dz + 2 i chi d/dw
        assert_eq!(aux.tilde_l[0].a[0], S::one(m, 8));
        assert_eq!(
            aux.tilde_l[0].a[1],
            S::var(m, 7, 2).scale(&Q::from_parts(0, 1, 2, 1))
        );
        // T = d/dw + d/dtau
        assert_eq!(aux.t[0].a[1], S::one(m, 8));
        assert_eq!(aux.t[0].b[1], S::one(m, 7));
        // V = d/dz - 2 i chi d/dtau
        assert_eq!(aux.v[0].a[0], S::one(m, 8));
        assert!(aux.v[0].a[1].is_zero());
        assert_eq!(aux.v[0].b[1], S::var(m, 7, 2).scale(&Q::from_parts(0, 1, -2, 1)));
        for f in aux.tilde_l.iter().chain(&aux.t).chain(&aux.v) {
            for res in tangency_residual(&mfd, f) {
                assert!(res.is_zero());
            }
        }
    }

    #[test]
    fn v_t_act_as_plain_partials() {
        // On series in (z, w) only, V and T reduce to d/dz and d/dw.
        let mfd = gallery::heisenberg(8);
        let aux = aux_fields(&mfd);
        let m = 4;
        let z = S::var(m, 8, 0);
        let w = S::var(m, 8, 1);
        let f = z.mul(&z).mul(&w).add(&w.mul(&w));
        let vf = aux.v[0].apply(&f);
        assert_eq!(vf, f.derivative(0));
        let tf = aux.t[0].apply(&f);
        assert_eq!(tf, f.derivative(1));
    }

    #[test]
    fn bracket_antisymmetry_and_heisenberg_value() {
        let mfd = gallery::heisenberg(8);
        let aux = aux_fields(&mfd);
        let basis = cr_basis(&mfd);
        let br = aux.tilde_l[0].bracket(&basis[0]);
        // [tildeL, L] = -2i (d/dw + d/dtau)
        let m = 4;
        let c = Q::from_parts(0, 1, -2, 1);
        assert_eq!(br.a[1], S::constant(m, 6, c.clone()));
        assert_eq!(br.b[1], S::constant(m, 6, c));
        assert!(br.a[0].is_zero() && br.b[0].is_zero());
        // Antisymmetry.
        let rev = basis[0].bracket(&aux.tilde_l[0]);
        for i in 0..2 {
            assert_eq!(br.a[i], rev.a[i].neg());
            assert_eq!(br.b[i], rev.b[i].neg());
        }
        // [d/dz, d/dchi] = 0.
        assert!(aux.v[0].bracket(&aux.v[0]).is_zero());
    }

    #[test]
    fn jacobi_identity_sample() {
        let mfd = gallery::abs_z4(8);
        let aux = aux_fields(&mfd);
        let basis = cr_basis(&mfd);
        let (x, y, z) = (&aux.tilde_l[0], &basis[0], &aux.t[0]);
        let j1 = x.bracket(&y.bracket(z));
        let j2 = y.bracket(&z.bracket(x));
        let j3 = z.bracket(&x.bracket(y));
        for i in 0..2 {
            assert!(j1.a[i].add(&j2.a[i]).add(&j3.a[i]).is_zero());
            assert!(j1.b[i].add(&j2.b[i]).add(&j3.b[i]).is_zero());
        }
    }

    #[test]
    fn heisenberg_flag() {
        let flag = hormander_flag(&gallery::heisenberg(8), None);
        assert_eq!(flag.m, vec![2]);
        assert_eq!(flag.l, vec![1]);
        assert_eq!(flag.mu, vec![2]);
        assert_eq!(flag.r, 1);
        assert_eq!(flag.d0_dim, 2);
        assert_eq!(flag.g0_dim, 3);
        assert!(flag.finite_type);
    }

    #[test]
    fn flat_flag_infinite() {
        let flag = hormander_flag(&gallery::flat_hypersurface(8), None);
        assert_eq!(flag.r, 0);
        assert!(!flag.finite_type);
        assert!(!flag.inconclusive, "commuting fields terminate the flag");
    }

    #[test]
    fn abs_z4_flag() {
        let flag = hormander_flag(&gallery::abs_z4(8), Some(6));
        assert_eq!(flag.m, vec![4]);
        assert_eq!(flag.r, 1);
        assert!(flag.finite_type);
        // With the default short budget the verdict is inconclusive.
        let short = hormander_flag(&gallery::abs_z4(8), None);
        assert!(!short.finite_type);
    }

    #[test]
    fn codim2_flag() {
        let flag = hormander_flag(&gallery::codim2_c3(8), Some(6));
        assert_eq!(flag.m, vec![2, 4]);
        assert_eq!(flag.l, vec![1, 1]);
        assert_eq!(flag.mu, vec![2, 4]);
        assert_eq!(flag.r, 2);
        assert!(flag.finite_type);
    }
}
