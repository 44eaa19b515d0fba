//! Formal mappings between formal generic submanifolds: the mapping
//! equation in normal coordinates, CR submersivity, jets with their
//! scaled-coordinate split, invertibility, and an independent degree-by-degree
//! solver for the mapping equation used as a cross-check oracle.

use crate::error::CrError;
use crate::linalg::{scalar_rank, solve_scalar_system, SeriesVector};
use crate::manifold::FormalSubmanifold;
use crate::scalar::GaussianRational;
use crate::series::{Exponent, TruncatedSeries};
use std::collections::BTreeMap;
use std::ops::{Mul, Neg};

/// A formal holomorphic map germ `(C^N, 0) -> (C^N', 0)`, components stored
/// in the source variables `(z_1..z_n, w_1..w_d)`. The first `n_dst`
/// components are `F`, the last `d_dst` are `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalMap {
    pub components: SeriesVector,
    pub n_src: usize,
    pub d_src: usize,
    pub n_dst: usize,
    pub d_dst: usize,
}

impl FormalMap {
    pub fn new(components: SeriesVector, n_src: usize, d_src: usize, n_dst: usize, d_dst: usize) -> Self {
        assert_eq!(components.len(), n_dst + d_dst);
        for c in &components {
            assert_eq!(c.m, n_src + d_src);
            assert!(c.eval_at_zero().is_zero(), "formal maps fix the origin");
        }
        FormalMap { components, n_src, d_src, n_dst, d_dst }
    }

    pub fn src_dim(&self) -> usize {
        self.n_src + self.d_src
    }

    pub fn dst_dim(&self) -> usize {
        self.n_dst + self.d_dst
    }

    pub fn cap(&self) -> usize {
        self.components[0].cap
    }

    pub fn identity(n: usize, d: usize, cap: usize) -> Self {
        let m = n + d;
        FormalMap::new(
            (0..m).map(|i| TruncatedSeries::var(m, cap, i)).collect(),
            n,
            d,
            n,
            d,
        )
    }

    pub fn f_components(&self) -> &[TruncatedSeries] {
        &self.components[..self.n_dst]
    }

    pub fn g_components(&self) -> &[TruncatedSeries] {
        &self.components[self.n_dst..]
    }

    /// Composition `self(other(.))`.
    pub fn compose(&self, other: &FormalMap) -> FormalMap {
        assert_eq!(self.src_dim(), other.dst_dim());
        FormalMap::new(
            self.components
                .iter()
                .map(|c| c.compose(&other.components))
                .collect(),
            other.n_src,
            other.d_src,
            self.n_dst,
            self.d_dst,
        )
    }

    /// Coefficientwise conjugate (the companion map on the conjugated
    /// coordinates).
    pub fn conjugate(&self) -> FormalMap {
        FormalMap {
            components: self.components.iter().map(|c| c.conjugate()).collect(),
            ..self.clone()
        }
    }

    /// N' x N matrix of first-order derivatives at 0.
    pub fn linear_part(&self) -> Vec<Vec<GaussianRational>> {
        (0..self.dst_dim())
            .map(|i| {
                (0..self.src_dim())
                    .map(|j| self.components[i].derivative(j).eval_at_zero())
                    .collect()
            })
            .collect()
    }
}

/// Jet of order `k` of a formal map in scaled coordinates: entries are the
/// partial derivatives at 0 (not Taylor coefficients), split into the
/// F-block and the G-block.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub order: usize,
    pub n_src: usize,
    pub d_src: usize,
    pub n_dst: usize,
    pub d_dst: usize,
    /// exponent over (z, w) -> derivative values of F (n_dst entries each)
    pub f_derivs: BTreeMap<Exponent, Vec<GaussianRational>>,
    /// exponent over (z, w) -> derivative values of G (d_dst entries each)
    pub g_derivs: BTreeMap<Exponent, Vec<GaussianRational>>,
}

pub fn factorial_big(e: &Exponent) -> GaussianRational {
    let mut acc = GaussianRational::one();
    for &k in &e.0 {
        for t in 2..=k as i64 {
            acc *= &GaussianRational::from_int(t);
        }
    }
    acc
}

impl Jet {
    /// The components of the split: the second block collects the pure-z
    /// derivatives of G (zero for jets of actual maps between normalized
    /// manifolds), the first block is everything else.
    pub fn lambda_double_prime(&self) -> Vec<GaussianRational> {
        let n = self.n_src;
        let mut out = Vec::new();
        for (e, vals) in &self.g_derivs {
            if e.0[n..].iter().all(|&v| v == 0) {
                out.extend(vals.iter().cloned());
            }
        }
        out
    }

    pub fn lambda_double_prime_is_zero(&self) -> bool {
        self.lambda_double_prime().iter().all(|c| c.is_zero())
    }

    /// Conjugated jet: every derivative value conjugated.
    pub fn conjugate(&self) -> Jet {
        Jet {
            f_derivs: self
                .f_derivs
                .iter()
                .map(|(e, v)| (e.clone(), v.iter().map(|c| c.conj()).collect()))
                .collect(),
            g_derivs: self
                .g_derivs
                .iter()
                .map(|(e, v)| (e.clone(), v.iter().map(|c| c.conj()).collect()))
                .collect(),
            ..self.clone()
        }
    }

    /// Derivative of component `c` (0-based over all N' components) at `e`.
    pub fn deriv(&self, e: &Exponent, comp: usize) -> GaussianRational {
        if comp < self.n_dst {
            self.f_derivs
                .get(e)
                .map(|v| v[comp].clone())
                .unwrap_or_else(GaussianRational::zero)
        } else {
            self.g_derivs
                .get(e)
                .map(|v| v[comp - self.n_dst].clone())
                .unwrap_or_else(GaussianRational::zero)
        }
    }

    /// Realize the jet as the polynomial map with exactly these derivatives.
    pub fn to_polynomial_map(&self, cap: usize) -> FormalMap {
        let m = self.n_src + self.d_src;
        let mut comps = vec![TruncatedSeries::zero(m, cap); self.n_dst + self.d_dst];
        for (e, vals) in self.f_derivs.iter() {
            let fact = factorial_big(e).inv();
            for (i, v) in vals.iter().enumerate() {
                if !v.is_zero() && e.degree() <= cap {
                    comps[i]
                        .terms
                        .insert(e.clone(), v * &fact);
                }
            }
        }
        for (e, vals) in self.g_derivs.iter() {
            let fact = factorial_big(e).inv();
            for (j, v) in vals.iter().enumerate() {
                if !v.is_zero() && e.degree() <= cap {
                    comps[self.n_dst + j]
                        .terms
                        .insert(e.clone(), v * &fact);
                }
            }
        }
        FormalMap::new(comps, self.n_src, self.d_src, self.n_dst, self.d_dst)
    }
}

/// Extract the order-`k` jet of a map: all partial derivatives at 0 of
/// orders 1..=k in scaled coordinates.
pub fn jet(h: &FormalMap, k: usize) -> Jet {
    assert!(k <= h.cap());
    let mut f_derivs: BTreeMap<Exponent, Vec<GaussianRational>> = BTreeMap::new();
    let mut g_derivs: BTreeMap<Exponent, Vec<GaussianRational>> = BTreeMap::new();
    let n_dst = h.n_dst;
    for (i, comp) in h.components.iter().enumerate() {
        for (e, c) in &comp.terms {
            let deg = e.degree();
            if deg == 0 || deg > k {
                continue;
            }
            let val = c * &factorial_big(e);
            if i < n_dst {
                f_derivs
                    .entry(e.clone())
                    .or_insert_with(|| vec![GaussianRational::zero(); n_dst])[i] = val;
            } else {
                g_derivs
                    .entry(e.clone())
                    .or_insert_with(|| vec![GaussianRational::zero(); h.d_dst])[i - n_dst] = val;
            }
        }
    }
    Jet {
        order: k,
        n_src: h.n_src,
        d_src: h.d_src,
        n_dst: h.n_dst,
        d_dst: h.d_dst,
        f_derivs,
        g_derivs,
    }
}

/// Canonical projection to a lower-order jet.
pub fn jet_project(j: &Jet, l: usize) -> Jet {
    assert!(l <= j.order);
    Jet {
        order: l,
        f_derivs: j
            .f_derivs
            .iter()
            .filter(|(e, _)| e.degree() <= l)
            .map(|(e, v)| (e.clone(), v.clone()))
            .collect(),
        g_derivs: j
            .g_derivs
            .iter()
            .filter(|(e, _)| e.degree() <= l)
            .map(|(e, v)| (e.clone(), v.clone()))
            .collect(),
        ..j.clone()
    }
}

/// Embed a source-variable series into the source double ring on the
/// holomorphic slots.
pub fn embed_holo(f: &TruncatedSeries, ambient: usize) -> TruncatedSeries {
    f.embed(2 * ambient, &(0..ambient).collect::<Vec<_>>())
}

/// Embed the conjugate of a source-variable series on the anti-holomorphic
/// slots: realizes F-bar(chi, tau).
pub fn embed_antiholo(f: &TruncatedSeries, ambient: usize) -> TruncatedSeries {
    f.conjugate()
        .embed(2 * ambient, &(ambient..2 * ambient).collect::<Vec<_>>())
}

/// The two residual vectors of the mapping equation for `h : (M,0) -> (M',0)`
/// in normal coordinates, already reduced modulo the respective defining
/// substitution. Both vanish identically iff `h` maps `M` into `M'`.
pub fn maps_into_residuals(
    h: &FormalMap,
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
) -> Result<(SeriesVector, SeriesVector), CrError> {
    if h.n_src != m_src.n || h.d_src != m_src.d || h.n_dst != m_dst.n || h.d_dst != m_dst.d {
        return Err(CrError::DimensionMismatch(format!(
            "map is ({},{}) -> ({},{}) but manifolds are ({},{}) and ({},{})",
            h.n_src, h.d_src, h.n_dst, h.d_dst, m_src.n, m_src.d, m_dst.n, m_dst.d
        )));
    }
    let ambient = m_src.ambient();
    let f_emb: Vec<TruncatedSeries> = h.f_components().iter().map(|c| embed_holo(c, ambient)).collect();
    let g_emb: Vec<TruncatedSeries> = h.g_components().iter().map(|c| embed_holo(c, ambient)).collect();
    let fbar: Vec<TruncatedSeries> = h.f_components().iter().map(|c| embed_antiholo(c, ambient)).collect();
    let gbar: Vec<TruncatedSeries> = h.g_components().iter().map(|c| embed_antiholo(c, ambient)).collect();
    let msrc_ring = 2 * ambient;
    let cap = h.cap().min(m_src.cap);
    let zero = TruncatedSeries::zero(msrc_ring, cap);

    // Q'(F, F-bar, G-bar) in the source double ring.
    let subs_q: Vec<TruncatedSeries> = f_emb
        .iter()
        .cloned()
        .chain((0..m_dst.d).map(|_| zero.clone()))
        .chain(fbar.iter().cloned())
        .chain(gbar.iter().cloned())
        .collect();
    let eq1: SeriesVector = (0..m_dst.d)
        .map(|j| {
            let rhs = m_dst.q[j].compose(&subs_q);
            m_src.reduce_mod_ideal_w(&g_emb[j].sub(&rhs))
        })
        .collect();

    // Conjugate equation: G-bar = Q'-bar(F-bar, F, G) on tau = Q-bar.
    let subs_qbar: Vec<TruncatedSeries> = f_emb
        .iter()
        .cloned()
        .chain(g_emb.iter().cloned())
        .chain(fbar.iter().cloned())
        .chain((0..m_dst.d).map(|_| zero.clone()))
        .collect();
    let eq2: SeriesVector = (0..m_dst.d)
        .map(|j| {
            let rhs = m_dst.q_bar[j].compose(&subs_qbar);
            m_src.reduce_mod_ideal(&gbar[j].sub(&rhs))
        })
        .collect();
    Ok((eq1, eq2))
}

/// Does `h` map `(M, 0)` into `(M', 0)`? Checked on both forms of the
/// mapping equation, coefficientwise up to the cap.
pub fn check_maps_into(
    h: &FormalMap,
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
) -> Result<bool, CrError> {
    let (eq1, eq2) = maps_into_residuals(h, m_src, m_dst)?;
    Ok(eq1.iter().all(|f| f.is_zero()) && eq2.iter().all(|f| f.is_zero()))
}

/// CR submersivity at 0 in normal coordinates: dF/dz(0) has rank n'.
pub fn is_cr_submersive(h: &FormalMap, _m_src: &FormalSubmanifold, m_dst: &FormalSubmanifold) -> bool {
    let rows: Vec<Vec<GaussianRational>> = h
        .f_components()
        .iter()
        .map(|f| (0..h.n_src).map(|j| f.derivative(j).eval_at_zero()).collect())
        .collect();
    scalar_rank(&rows) == m_dst.n
}

/// Invertibility of an equidimensional formal map: dH(0) invertible.
pub fn check_invertible(h: &FormalMap) -> bool {
    if h.src_dim() != h.dst_dim() {
        return false;
    }
    scalar_rank(&h.linear_part()) == h.src_dim()
}

/// For a CR submersive map into a finite-type target, the w-block of the
/// differential is forced to full rank; exposed as a checkable consequence.
pub fn g_w_rank(h: &FormalMap) -> usize {
    let rows: Vec<Vec<GaussianRational>> = h
        .g_components()
        .iter()
        .map(|g| {
            (0..h.d_src)
                .map(|j| g.derivative(h.n_src + j).eval_at_zero())
                .collect()
        })
        .collect();
    scalar_rank(&rows)
}

/// Outcome of the degreewise mapping-equation solver.
#[derive(Clone, Debug)]
pub struct DegreewiseSolution {
    /// A particular extension (free parameters set to zero).
    pub map: FormalMap,
    /// (degree, kernel dimension) for each solved degree with free parameters.
    pub free_dims: Vec<(usize, usize)>,
}

impl DegreewiseSolution {
    pub fn is_unique(&self) -> bool {
        self.free_dims.iter().all(|&(_, k)| k == 0)
    }
}

/// Extend a seed jet to a map satisfying the mapping equation degree by
/// degree, up to `target_degree`. At each degree the unknown derivatives
/// enter the reduced equation linearly; the affine solution set is computed
/// exactly. Returns the particular extension together with the per-degree
/// kernel dimensions, or an error when the seed itself violates the
/// equation.
pub fn solve_maps_degreewise(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    seed: &Jet,
    target_degree: usize,
) -> Result<DegreewiseSolution, CrError> {
    solve_maps_degreewise_branch(m_src, m_dst, seed, target_degree, None)
}

/// Like `solve_maps_degreewise`, but at step `degree` adds the `index`-th
/// kernel basis vector to the particular solution before continuing. Used to
/// probe whether a free direction of one degree slice survives continuation.
pub fn solve_maps_degreewise_branch(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    seed: &Jet,
    target_degree: usize,
    branch: Option<(usize, usize)>,
) -> Result<DegreewiseSolution, CrError> {
    // The residual at degree nu constrains the G-coefficients of degree nu
    // together with the F-coefficients of degree nu - 1 (F enters only
    // through the quadratic part of Q', which adds at least one degree), so
    // the loop runs one degree past the target to pin the top F-block.
    let cap = target_degree + 1;
    assert!(
        m_src.cap >= cap && m_dst.cap >= cap,
        "manifold caps must exceed the target degree"
    );
    let nsrc = m_src.ambient();
    let ndst = m_dst.ambient();
    let mut current = seed.to_polynomial_map(cap);
    // Seed consistency: all residual coefficients of degree <= seed.order
    // must vanish (they only involve seed data).
    let (eq1, _) = maps_into_residuals(&current, m_src, m_dst)?;
    for nu in 1..=seed.order.min(target_degree) {
        for f in &eq1 {
            if !f.homogeneous_part(nu).is_zero() {
                return Err(CrError::InconsistentSeed { degree: nu });
            }
        }
    }
    let mut free_dims = Vec::new();
    for nu in seed.order + 1..=target_degree + 1 {
        // Unknowns entering the degree-nu residual for the first time. The
        // G-block at degree target+1 is solved for consistency but discarded.
        // The residual is only R-linear in the unknowns (conjugated
        // coefficients appear through F-bar and G-bar), so each complex
        // coefficient is split into real and imaginary parts and the system
        // is solved over the rationals.
        let mut unknowns: Vec<(usize, Exponent)> = Vec::new();
        let mut kept: Vec<bool> = Vec::new();
        if nu <= target_degree + 1 {
            for c in m_dst.n..ndst {
                for e in monomials_of_degree(nsrc, nu) {
                    unknowns.push((c, e));
                    kept.push(nu <= target_degree);
                }
            }
        }
        if nu >= 2 && nu - 1 > seed.order && nu - 1 <= target_degree {
            for c in 0..m_dst.n {
                for e in monomials_of_degree(nsrc, nu - 1) {
                    unknowns.push((c, e));
                    kept.push(true);
                }
            }
        }
        if unknowns.is_empty() {
            continue;
        }
        let base_res = residual_parts(&current, m_src, m_dst, nu)?;
        // Two real directions per complex unknown: probe with 1 and with i.
        let mut cols: Vec<Vec<GaussianRational>> = Vec::with_capacity(2 * unknowns.len());
        for (c, e) in &unknowns {
            for probe_val in [GaussianRational::one(), GaussianRational::i()] {
                let mut probe = current.clone();
                probe.components[*c].terms.insert(e.clone(), probe_val);
                let res = residual_parts(&probe, m_src, m_dst, nu)?;
                cols.push(
                    res.iter()
                        .zip(&base_res)
                        .map(|(a, b)| a.clone() - b.clone())
                        .collect(),
                );
            }
        }
        // Linearity spot check: assigning (1 + i) everywhere must reproduce
        // the superposition of the probe columns.
        {
            let mut probe = current.clone();
            for (c, e) in &unknowns {
                probe
                    .components[*c]
                    .terms
                    .insert(e.clone(), GaussianRational::from_parts(1, 1, 1, 1));
            }
            let res = residual_parts(&probe, m_src, m_dst, nu)?;
            for (r, row_val) in res.iter().enumerate() {
                let mut expect = base_res[r].clone();
                for col in &cols {
                    expect += &col[r];
                }
                if expect != *row_val {
                    return Err(CrError::NonlinearSystem);
                }
            }
        }
        // Realify: each complex residual row splits into two rational rows.
        let nrows = base_res.len();
        let mut a: Vec<Vec<GaussianRational>> = Vec::with_capacity(2 * nrows);
        let mut b: Vec<GaussianRational> = Vec::with_capacity(2 * nrows);
        for r in 0..nrows {
            let re_row: Vec<GaussianRational> = cols
                .iter()
                .map(|col| GaussianRational::new(col[r].re.clone(), num::BigRational::from_integer(0.into())))
                .collect();
            let im_row: Vec<GaussianRational> = cols
                .iter()
                .map(|col| GaussianRational::new(col[r].im.clone(), num::BigRational::from_integer(0.into())))
                .collect();
            a.push(re_row);
            b.push(GaussianRational::new(
                base_res[r].re.clone().neg(),
                num::BigRational::from_integer(0.into()),
            ));
            a.push(im_row);
            b.push(GaussianRational::new(
                base_res[r].im.clone().neg(),
                num::BigRational::from_integer(0.into()),
            ));
        }
        let Some((mut particular, kernel)) = solve_scalar_system(&a, &b) else {
            return Err(CrError::InconsistentSeed { degree: nu });
        };
        if let Some((bd, bi)) = branch {
            if bd == nu {
                let dir = kernel.get(bi).ok_or_else(|| {
                    CrError::Input(format!("no kernel direction {bi} at degree {nu}"))
                })?;
                for (p, v) in particular.iter_mut().zip(dir) {
                    *p += v;
                }
            }
        }
        // Free directions are counted on the kept coordinates only: the
        // throwaway G-block beyond the target does not witness non-uniqueness
        // of the truncated extension.
        if !kernel.is_empty() {
            let kept_rows: Vec<Vec<GaussianRational>> = kernel
                .iter()
                .map(|v| {
                    let mut row = Vec::new();
                    for (k, keep) in kept.iter().enumerate() {
                        if *keep {
                            row.push(v[2 * k].clone());
                            row.push(v[2 * k + 1].clone());
                        }
                    }
                    row
                })
                .collect();
            let dim = if kept_rows.is_empty() || kept_rows[0].is_empty() {
                0
            } else {
                scalar_rank(&kept_rows)
            };
            if dim > 0 {
                free_dims.push((nu, dim));
            }
        }
        for (k, (c, e)) in unknowns.iter().enumerate() {
            if !kept[k] {
                continue;
            }
            let val = GaussianRational::new(
                particular[2 * k].re.clone(),
                particular[2 * k + 1].re.clone(),
            );
            if val.is_zero() {
                current.components[*c].terms.remove(e);
            } else {
                current.components[*c].terms.insert(e.clone(), val);
            }
        }
    }
    current.components = current
        .components
        .iter()
        .map(|c| c.truncate(target_degree))
        .collect();
    Ok(DegreewiseSolution { map: current, free_dims })
}

/// Result of probing the free directions of the degreewise solution.
#[derive(Clone, Debug)]
pub struct UniquenessProbe {
    pub base: DegreewiseSolution,
    /// Free directions whose straight-line continuation hits an inconsistent
    /// degree slice before the probe horizon.
    pub dead_branches: usize,
    /// Free directions that continued to the probe horizon: witnesses of a
    /// genuinely non-unique extension at this depth.
    pub surviving_branches: usize,
}

impl UniquenessProbe {
    /// True when the degreewise extension is pinned down at the probe depth:
    /// every free direction of every degree slice dies on continuation.
    pub fn certified_unique(&self) -> bool {
        self.surviving_branches == 0
    }
}

/// Probe every free direction of the degreewise solution up to
/// `target + extra`: a direction "survives" when adding it to the particular
/// solution still extends to the horizon. Persisting families (degenerate
/// manifolds) survive; spurious slice freedom dies within a few degrees.
pub fn probe_uniqueness(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    seed: &Jet,
    target_degree: usize,
    extra: usize,
) -> Result<UniquenessProbe, CrError> {
    let horizon = target_degree + extra;
    let base_ext = solve_maps_degreewise(m_src, m_dst, seed, horizon)?;
    let mut dead = 0;
    let mut surviving = 0;
    for &(nu, dim) in &base_ext.free_dims {
        if nu > target_degree + 1 {
            continue;
        }
        for idx in 0..dim {
            match solve_maps_degreewise_branch(m_src, m_dst, seed, horizon, Some((nu, idx))) {
                Ok(_) => surviving += 1,
                Err(CrError::InconsistentSeed { .. }) => dead += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let base = solve_maps_degreewise(m_src, m_dst, seed, target_degree)?;
    Ok(UniquenessProbe {
        base,
        dead_branches: dead,
        surviving_branches: surviving,
    })
}

/// Structural membership check: the truncations of `h` solve the degreewise
/// slices one degree at a time (G to degree nu, F to degree nu - 1), so `h`
/// lies in every affine solution set the solver produces from its own jet.
pub fn verify_membership_degreewise(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    seed: &Jet,
    target_degree: usize,
    h: &FormalMap,
) -> Result<(), CrError> {
    if &jet(h, seed.order) != seed {
        return Err(CrError::JetMismatch {
            order: seed.order,
            detail: "seed is not the jet of the candidate".into(),
        });
    }
    for nu in seed.order + 1..=target_degree {
        let mut probe = h.clone();
        for (c, comp) in probe.components.iter_mut().enumerate() {
            let bound = if c < m_dst.n { nu - 1 } else { nu };
            *comp = comp.truncate(bound);
            *comp = comp.with_cap(h.cap());
        }
        let (eq1, _) = maps_into_residuals(&probe, m_src, m_dst)?;
        for f in &eq1 {
            if !f.homogeneous_part(nu).is_zero() {
                return Err(CrError::InconsistentSeed { degree: nu });
            }
        }
    }
    Ok(())
}

/// All degree-nu coefficients of the first mapping-equation residual,
/// flattened in a deterministic order.
fn residual_parts(
    h: &FormalMap,
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    nu: usize,
) -> Result<Vec<GaussianRational>, CrError> {
    let (eq1, _) = maps_into_residuals(h, m_src, m_dst)?;
    let mring = 2 * m_src.ambient();
    let mut out = Vec::new();
    for f in &eq1 {
        let part = f.homogeneous_part(nu);
        for e in monomials_of_degree(mring, nu) {
            out.push(part.coeff(&e));
        }
    }
    Ok(out)
}

/// All exponents of total degree exactly `deg` over `m` variables, in
/// graded-lex order.
pub fn monomials_of_degree(m: usize, deg: usize) -> Vec<Exponent> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; m];
    fn rec(m: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Exponent>) {
        if pos == m {
            if left == 0 {
                out.push(Exponent(cur.clone()));
            }
            return;
        }
        if pos + 1 == m {
            cur[pos] = left;
            out.push(Exponent(cur.clone()));
            cur[pos] = 0;
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(m, pos + 1, left - k, cur, out);
        }
        cur[pos] = 0;
    }
    if m == 0 {
        if deg == 0 {
            out.push(Exponent(vec![]));
        }
        return out;
    }
    rec(m, 0, deg as u32, &mut cur, &mut out);
    out.sort();
    out
}

/// All exponents of total degree 1..=deg over `m` variables, graded-lex.
pub fn monomials_up_to(m: usize, deg: usize) -> Vec<Exponent> {
    let mut out = Vec::new();
    for d in 1..=deg {
        out.extend(monomials_of_degree(m, d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    fn heis(cap: usize) -> FormalSubmanifold {
        gallery::heisenberg(cap)
    }

    fn dilation(cap: usize) -> FormalMap {
        // (z, w) -> (2z, 4w)
        let m = 2;
        FormalMap::new(
            vec![
                S::var(m, cap, 0).scale(&Q::from_int(2)),
                S::var(m, cap, 1).scale(&Q::from_int(4)),
            ],
            1,
            1,
            1,
            1,
        )
    }

    #[test]
    fn identity_maps_into() {
        let m = heis(8);
        let id = FormalMap::identity(1, 1, 8);
        assert!(check_maps_into(&id, &m, &m).unwrap());
        assert!(is_cr_submersive(&id, &m, &m));
        assert!(check_invertible(&id));
    }

    #[test]
    fn dilation_maps_into() {
        let m = heis(8);
        let h = dilation(8);
        assert!(check_maps_into(&h, &m, &m).unwrap());
        assert!(is_cr_submersive(&h, &m, &m));
        assert!(check_invertible(&h));
        assert_eq!(g_w_rank(&h), 1);
    }

    #[test]
    fn bad_map_rejected() {
        // (z, w) -> (z, w + z^2) does not preserve the Heisenberg equation.
        let cap = 8;
        let m = heis(cap);
        let z = S::var(2, cap, 0);
        let w = S::var(2, cap, 1);
        let h = FormalMap::new(vec![z.clone(), w.add(&z.mul(&z))], 1, 1, 1, 1);
        assert!(!check_maps_into(&h, &m, &m).unwrap());
    }

    #[test]
    fn jets_and_projection() {
        let cap = 8;
        let h = dilation(cap);
        let j2 = jet(&h, 2);
        let e_z = Exponent(vec![1, 0]);
        let e_w = Exponent(vec![0, 1]);
        assert_eq!(j2.f_derivs.get(&e_z).unwrap()[0], Q::from_int(2));
        assert_eq!(j2.g_derivs.get(&e_w).unwrap()[0], Q::from_int(4));
        assert!(j2.lambda_double_prime_is_zero());
        let j4 = jet(&h, 4);
        assert_eq!(jet_project(&j4, 2), j2);
        // Round trip through the polynomial realization.
        assert_eq!(jet(&j4.to_polynomial_map(cap), 4), j4);
    }

    #[test]
    fn non_submersive_example() {
        // (z, w) -> (z^2, 0) into the flat target has vanishing dF/dz(0).
        let cap = 6;
        let flat = gallery::flat_hypersurface(cap);
        let m = heis(cap);
        let z = S::var(2, cap, 0);
        let h = FormalMap::new(vec![z.mul(&z), S::zero(2, cap)], 1, 1, 1, 1);
        assert!(!is_cr_submersive(&h, &m, &flat));
        let h2 = FormalMap::new(vec![z.clone(), S::zero(2, cap)], 1, 1, 1, 1);
        assert!(is_cr_submersive(&h2, &m, &flat));
        assert!(check_maps_into(&h2, &m, &flat).unwrap());
    }

    #[test]
    fn degreewise_unique_on_heisenberg() {
        // The degree slices condition the extension only loosely on their
        // own; uniqueness of the truncated extension is certified by probing
        // every free direction and watching it die on continuation.
        let cap = 5;
        let m = heis(cap + 5);
        let id = FormalMap::identity(1, 1, cap);
        let seed = jet(&id, 2);
        let probe = probe_uniqueness(&m, &m, &seed, cap, 3).unwrap();
        assert!(probe.certified_unique(), "{probe:?}");
        assert_eq!(probe.base.map, id);
    }

    #[test]
    fn degreewise_nonunique_on_flat() {
        let cap = 4;
        let flat = gallery::flat_hypersurface(cap + 4);
        let id = FormalMap::identity(1, 1, cap);
        let seed = jet(&id, 1);
        let sol = solve_maps_degreewise(&flat, &flat, &seed, cap).unwrap();
        assert!(!sol.is_unique(), "flat extension should have free parameters");
        let probe = probe_uniqueness(&flat, &flat, &seed, cap, 2).unwrap();
        assert!(probe.surviving_branches > 0);
    }

    #[test]
    fn degreewise_contains_original() {
        // The truncations of an actual map solve each degree slice.
        let cap = 8;
        let m = heis(cap);
        let h = gallery::heisenberg_parabolic(cap, 1, 1);
        let seed = jet(&h, 2);
        verify_membership_degreewise(&m, &m, &seed, cap - 2, &h).unwrap();
    }

    #[test]
    fn inconsistent_seed_detected() {
        let cap = 6;
        let m = heis(cap);
        // 1-jet with lambda_z = 1, mu_w = 2 violates the degree-2 equations.
        let id = FormalMap::identity(1, 1, cap);
        let mut seed = jet(&id, 1);
        seed.g_derivs
            .insert(Exponent(vec![0, 1]), vec![Q::from_int(2)]);
        let err = solve_maps_degreewise(&m, &m, &seed, 4);
        assert!(err.is_err());
    }
}

/// Order-zero pushforward compatibility for a CR submersive map: the induced
/// linear map carries the evaluated complex tangent space onto the target's,
/// and pushes generator brackets to the matched target brackets modulo that
/// space.
pub fn pushforward_check(
    h: &FormalMap,
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
) -> bool {
    use crate::vfields::{aux_fields, cr_basis};
    let n = m_src.n;
    let n2 = m_dst.n;
    let ambient2 = m_dst.ambient();
    let a_lin = h.linear_part();
    // d-script-H on constant vectors: (a, b) -> (A a, conj(A) b).
    let push = |v: &[GaussianRational]| -> Vec<GaussianRational> {
        let ambient = m_src.ambient();
        let mut out = vec![GaussianRational::zero(); 2 * ambient2];
        for i in 0..ambient2 {
            for j in 0..ambient {
                out[i] += &(&a_lin[i][j]).mul(&v[j]);
                out[ambient2 + i] += &(&a_lin[i][j].conj()).mul(&v[ambient + j]);
            }
        }
        out
    };
    // Images of the source generators must span the target complex tangent
    // space exactly.
    let src_aux = aux_fields(m_src);
    let src_basis = cr_basis(m_src);
    let dst_aux = aux_fields(m_dst);
    let dst_basis = cr_basis(m_dst);
    let mut images: Vec<Vec<GaussianRational>> = Vec::new();
    for f in src_aux.tilde_l.iter().chain(src_basis.iter()) {
        images.push(push(&f.at_zero()));
    }
    let mut target_span: Vec<Vec<GaussianRational>> = Vec::new();
    for f in dst_aux.tilde_l.iter().chain(dst_basis.iter()) {
        target_span.push(f.at_zero());
    }
    let rk_target = scalar_rank(&target_span);
    let mut joint = target_span.clone();
    joint.extend(images.clone());
    if scalar_rank(&images) != rk_target || scalar_rank(&joint) != rk_target {
        return false;
    }
    // Bracket compatibility modulo the target complex tangent space:
    // the matched combinations use the first-order chain coefficients.
    for i in 0..n {
        for j in 0..n {
            let br = src_aux.tilde_l[i].bracket(&src_basis[j]).at_zero();
            let lhs = push(&br);
            // X' = sum_k dF_k/dz_i(0) tildeL'_k, Y' = sum_l conj(dF_l/dz_j(0)) L'_l.
            let mut rhs = vec![GaussianRational::zero(); 2 * ambient2];
            for k in 0..n2 {
                for l in 0..n2 {
                    let alpha = h.f_components()[k].derivative(i).eval_at_zero();
                    let beta = h.f_components()[l].derivative(j).eval_at_zero().conj();
                    if alpha.is_zero() || beta.is_zero() {
                        continue;
                    }
                    let b = dst_aux.tilde_l[k].bracket(&dst_basis[l]).at_zero();
                    for (t, v) in b.iter().enumerate() {
                        rhs[t] += &(&alpha).mul(&(&beta).mul(v));
                    }
                }
            }
            let diff: Vec<GaussianRational> = lhs
                .iter()
                .zip(&rhs)
                .map(|(a, b)| a.clone() - b.clone())
                .collect();
            let mut with_diff = target_span.clone();
            with_diff.push(diff);
            if scalar_rank(&with_diff) != rk_target {
                return false;
            }
        }
    }
    true
}
