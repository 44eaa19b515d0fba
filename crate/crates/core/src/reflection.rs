//! The basic reflection identity: a universal expression of the derivatives
//! of a CR map through the derivatives of its conjugate, valid modulo the
//! defining ideal of the source.
//!
//! The machinery is materialized in a "slot ring": one formal variable per
//! tangential-derivative chain of the conjugated map components, plus one
//! symbol `q` for the inverse of the first-order slot determinant. The
//! composed series `Theta` and its derivative chains `Psi_alpha` live in this
//! ring with exact rational coefficients; they are built once from the two
//! manifolds and an index choice, and only their evaluations depend on a map.
//! Evaluation substitutes concrete slot values: either honest derivative
//! chains of a given map, or transported jet composites along Segre
//! mappings (see the parametrization module).

use crate::error::CrError;
use crate::linalg::{scalar_rank, SeriesMatrix, SeriesVector};
use crate::manifold::FormalSubmanifold;
use crate::mapping::{
    embed_antiholo, embed_holo, jet, monomials_of_degree, monomials_up_to, FormalMap,
};
use crate::scalar::GaussianRational;
use crate::segre::segre_map;
use crate::series::{Exponent, TruncatedSeries, NO_CAP};
use crate::solve::implicit_solve;
use crate::vfields::{aux_fields, cr_basis, FormalVectorField};
use std::collections::BTreeMap;

/// Which conjugated component a slot differentiates.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SlotComp {
    /// Component of F-bar (0-based).
    F(usize),
    /// Component of G-bar (0-based).
    G(usize),
}

/// A tangential-derivative chain applied to a conjugated map component:
/// `V^{dz} T^{dw} L^{gamma}` with the fields of the source manifold, `gamma`
/// running over the n' fields selected by the index choice.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SlotKey {
    pub dz: Exponent,
    pub dw: Exponent,
    pub gamma: Exponent,
    pub comp: SlotComp,
}

/// The ring of slot variables plus the inverse-determinant symbol.
#[derive(Clone, Debug)]
pub struct SlotRing {
    pub n_src: usize,
    pub d_src: usize,
    pub n_used: usize,
    pub n_dst: usize,
    pub d_dst: usize,
    pub gamma_budget: usize,
    pub chain_budget: usize,
    pub keys: Vec<SlotKey>,
    pub index: BTreeMap<SlotKey, usize>,
}

impl SlotRing {
    pub fn new(
        n_src: usize,
        d_src: usize,
        n_used: usize,
        n_dst: usize,
        d_dst: usize,
        gamma_budget: usize,
        chain_budget: usize,
    ) -> Self {
        let mut keys = Vec::new();
        let mut chains: Vec<(Exponent, Exponent)> = Vec::new();
        for total in 0..=chain_budget {
            for dz_deg in 0..=total {
                for dz in monomials_of_degree(n_src, dz_deg) {
                    for dw in monomials_of_degree(d_src, total - dz_deg) {
                        chains.push((dz.clone(), dw));
                    }
                }
            }
        }
        let mut gammas: Vec<Exponent> = vec![Exponent::zero(n_used)];
        gammas.extend(monomials_up_to(n_used, gamma_budget));
        for (dz, dw) in &chains {
            for g in &gammas {
                for m in 0..n_dst {
                    keys.push(SlotKey {
                        dz: dz.clone(),
                        dw: dw.clone(),
                        gamma: g.clone(),
                        comp: SlotComp::F(m),
                    });
                }
                for j in 0..d_dst {
                    keys.push(SlotKey {
                        dz: dz.clone(),
                        dw: dw.clone(),
                        gamma: g.clone(),
                        comp: SlotComp::G(j),
                    });
                }
            }
        }
        keys.sort();
        let index = keys
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        SlotRing {
            n_src,
            d_src,
            n_used,
            n_dst,
            d_dst,
            gamma_budget,
            chain_budget,
            keys,
        index,
        }
    }

    /// Number of ring variables: all slots plus the q symbol (last).
    pub fn vars(&self) -> usize {
        self.keys.len() + 1
    }

    pub fn q_var(&self) -> usize {
        self.keys.len()
    }

    pub fn var_of(&self, key: &SlotKey) -> usize {
        *self
            .index
            .get(key)
            .unwrap_or_else(|| panic!("slot outside the ring budget: {key:?}"))
    }

    pub fn slot_series(&self, key: &SlotKey) -> TruncatedSeries {
        TruncatedSeries::var(self.vars(), NO_CAP, self.var_of(key))
    }

    pub fn q_series(&self) -> TruncatedSeries {
        TruncatedSeries::var(self.vars(), NO_CAP, self.q_var())
    }

    /// The first-order slot matrix `(L_{j_p} F-bar_l)` as variables.
    pub fn a1_matrix(&self) -> SeriesMatrix {
        SeriesMatrix::from_rows(
            (0..self.n_used)
                .map(|p| {
                    (0..self.n_dst)
                        .map(|l| {
                            self.slot_series(&SlotKey {
                                dz: Exponent::zero(self.n_src),
                                dw: Exponent::zero(self.d_src),
                                gamma: Exponent::unit(self.n_used, p),
                                comp: SlotComp::F(l),
                            })
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Apply a derivation to a series: `sum_i (df/dx_i) * rule(i)`, where
/// `rule(i)` is the image of the i-th variable (None meaning zero).
pub fn derive_series<F>(f: &TruncatedSeries, rule: F) -> TruncatedSeries
where
    F: Fn(usize) -> Option<TruncatedSeries>,
{
    let mut acc = TruncatedSeries::zero(f.m, f.cap);
    for i in 0..f.m {
        if f.is_free_of(i) {
            continue;
        }
        if let Some(img) = rule(i) {
            acc = acc.add(&f.derivative(i).with_cap(f.cap).mul(&img));
        }
    }
    acc
}

/// The solved reflection data of the target manifold: the multi-index and
/// row choices, the implicit solution `S`, and the composed series `Theta`
/// in the slot ring that recovers the F-block of a map from the chains of
/// its conjugate.
#[derive(Clone, Debug)]
pub struct ThetaData {
    pub alphas: Vec<Exponent>,
    pub rows: Vec<usize>,
    /// Implicit solution in the ring (chi', tau', r).
    pub s: SeriesVector,
    /// The u-expressions solved from the chain system, keyed by the grade
    /// order used during construction; exposed for diagnostics.
    pub theta: SeriesVector,
    pub ring: SlotRing,
    pub ell0: usize,
}

/// The universal expansion of `L^beta` applied to the base slot of row `l`:
/// a polynomial identity `b^l_beta = sum_gamma U^l_gamma * B_{gamma,beta}(a)`
/// in the slot ring. `B` does not depend on `l`.
fn chain_coefficients(
    ring: &SlotRing,
    beta_budget: usize,
) -> BTreeMap<Exponent, BTreeMap<Exponent, TruncatedSeries>> {
    // E_beta as a map gamma -> coefficient series. E_0 = { 0 -> 1 }.
    let nv = ring.vars();
    let n_used = ring.n_used;
    let mut table: BTreeMap<Exponent, BTreeMap<Exponent, TruncatedSeries>> = BTreeMap::new();
    let mut e0 = BTreeMap::new();
    e0.insert(Exponent::zero(n_used), TruncatedSeries::one(nv, NO_CAP));
    table.insert(Exponent::zero(n_used), e0);
    // The derivation L_i on slot variables raises gamma; on U symbols it
    // produces U_{gamma + e_m} times the first-order slot a^m_{e_i}.
    let l_rule = |i: usize| {
        move |var: usize, ring: &SlotRing| -> Option<TruncatedSeries> {
            if var == ring.q_var() {
                return None; // q never appears in the chain coefficients
            }
            let key = &ring.keys[var];
            if !key.dz.is_zero() || !key.dw.is_zero() {
                return None;
            }
            let mut g = key.gamma.clone();
            g.0[i] += 1;
            if g.degree() > ring.gamma_budget {
                panic!("chain coefficient escaped the gamma budget");
            }
            Some(ring.slot_series(&SlotKey {
                dz: key.dz.clone(),
                dw: key.dw.clone(),
                gamma: g,
                comp: key.comp.clone(),
            }))
        }
    };
    for beta in monomials_up_to(n_used, beta_budget) {
        // Peel the largest index (the L's commute; the order is canonical).
        let i = (0..n_used).rev().find(|&i| beta.0[i] > 0).unwrap();
        let mut prev = beta.clone();
        prev.0[i] -= 1;
        let lower = table.get(&prev).expect("graded order fills the table");
        let rule = l_rule(i);
        let mut next: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
        for (gamma, coeff) in lower {
            // Product rule: L_i(U_gamma * c) = sum_m U_{gamma+e_m} a^m_{e_i} c
            //                                 + U_gamma * L_i(c).
            for m in 0..ring.n_dst {
                let mut g2 = gamma.clone();
                g2.0[m] += 1;
                let a_slot = ring.slot_series(&SlotKey {
                    dz: Exponent::zero(ring.n_src),
                    dw: Exponent::zero(ring.d_src),
                    gamma: Exponent::unit(n_used, i),
                    comp: SlotComp::F(m),
                });
                let term = a_slot.mul(coeff);
                next.entry(g2)
                    .and_modify(|acc| *acc = acc.add(&term))
                    .or_insert(term);
            }
            let dc = derive_series(coeff, |v| rule(v, ring));
            if !dc.is_zero() {
                next.entry(gamma.clone())
                    .and_modify(|acc| *acc = acc.add(&dc))
                    .or_insert(dc);
            }
        }
        next.retain(|_, v| !v.is_zero());
        table.insert(beta, next);
    }
    table
}

/// Choose the minimal multi-indices and rows with invertible mixed-derivative
/// determinant, then assemble S and Theta.
pub fn build_theta(m_dst: &FormalSubmanifold, ell0: usize) -> Result<ThetaData, CrError> {
    let n2 = m_dst.n;
    let d2 = m_dst.d;
    let cap = m_dst.cap;
    // Candidate pairs (alpha, l) in graded-lex order; the derivative rows
    // d/dz'_k of d^alpha Qbar'_l / dchi'^alpha at 0.
    let mut candidates: Vec<(Exponent, usize, Vec<GaussianRational>)> = Vec::new();
    for alpha in monomials_up_to(n2, ell0) {
        for l in 0..d2 {
            let mut der = m_dst.q_bar[l].clone();
            for (i, &k) in alpha.0.iter().enumerate() {
                for _ in 0..k {
                    der = der.derivative(m_dst.idx_chi(i));
                }
            }
            let row: Vec<GaussianRational> = (0..n2)
                .map(|k| der.derivative(m_dst.idx_z(k)).eval_at_zero())
                .collect();
            candidates.push((alpha.clone(), l, row));
        }
    }
    let chosen = choose_rows(&candidates, n2).ok_or(CrError::NotFinitelyNondegenerate)?;
    let alphas: Vec<Exponent> = chosen.iter().map(|&i| candidates[i].0.clone()).collect();
    let rows: Vec<usize> = chosen.iter().map(|&i| candidates[i].1).collect();

    // S solves Qbar'_{l_j, chi'^{alpha_j}}(chi', X, Q'(X, chi', tau')) = r_j
    // for X. Ring: (chi'(n2), tau'(d2), r(n2), X(n2)).
    let msolve = 2 * n2 + d2 + n2;
    let k_params = 2 * n2 + d2;
    let chi_vars: Vec<TruncatedSeries> =
        (0..n2).map(|i| TruncatedSeries::var(msolve, cap, i)).collect();
    let tau_vars: Vec<TruncatedSeries> = (0..d2)
        .map(|j| TruncatedSeries::var(msolve, cap, n2 + j))
        .collect();
    let r_vars: Vec<TruncatedSeries> = (0..n2)
        .map(|j| TruncatedSeries::var(msolve, cap, n2 + d2 + j))
        .collect();
    let x_vars: Vec<TruncatedSeries> = (0..n2)
        .map(|j| TruncatedSeries::var(msolve, cap, k_params + j))
        .collect();
    // Q'(X, chi', tau') in the solve ring.
    let q_subs: Vec<TruncatedSeries> = x_vars
        .iter()
        .cloned()
        .chain((0..d2).map(|_| TruncatedSeries::zero(msolve, cap)))
        .chain(chi_vars.iter().cloned())
        .chain(tau_vars.iter().cloned())
        .collect();
    let q_at: Vec<TruncatedSeries> = m_dst.q.iter().map(|f| f.compose(&q_subs)).collect();
    let qbar_subs: Vec<TruncatedSeries> = x_vars
        .iter()
        .cloned()
        .chain(q_at.iter().cloned())
        .chain(chi_vars.iter().cloned())
        .chain((0..d2).map(|_| TruncatedSeries::zero(msolve, cap)))
        .collect();
    let system: SeriesVector = alphas
        .iter()
        .zip(&rows)
        .zip(&r_vars)
        .map(|((alpha, &l), r)| {
            let mut der = m_dst.q_bar[l].clone();
            for (i, &k) in alpha.0.iter().enumerate() {
                for _ in 0..k {
                    der = der.derivative(m_dst.idx_chi(i));
                }
            }
            der.compose(&qbar_subs).sub(r)
        })
        .collect();
    let s = implicit_solve(&system, k_params)?;

    // Theta in the slot ring with trivial chain budget.
    let ring = SlotRing::new(0, 0, n2, n2, d2, ell0, 0);
    let u = solve_chain_system(&ring, &alphas, &rows)?;
    let theta = compose_s_on_slots(&s, &ring, &u, n2, d2);
    Ok(ThetaData {
        alphas,
        rows,
        s,
        theta,
        ring,
        ell0,
    })
}

/// Pick n2 candidate indices, scanning index subsets in lexicographic order,
/// whose rows form an invertible matrix.
fn choose_rows(
    candidates: &[(Exponent, usize, Vec<GaussianRational>)],
    n2: usize,
) -> Option<Vec<usize>> {
    let total = candidates.len();
    if total < n2 {
        return None;
    }
    let mut combo: Vec<usize> = (0..n2).collect();
    loop {
        let rows: Vec<Vec<GaussianRational>> =
            combo.iter().map(|&i| candidates[i].2.clone()).collect();
        if scalar_rank(&rows) == n2 {
            return Some(combo);
        }
        let mut i = n2;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if combo[i] != i + total - n2 {
                combo[i] += 1;
                for j in i + 1..n2 {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solve the graded-triangular chain system for the u-values of the chosen
/// rows, entirely inside the slot ring: the inverse of each diagonal block is
/// its adjugate over a constant multiple of a power of det(a1), represented
/// by the q symbol.
fn solve_chain_system(
    ring: &SlotRing,
    alphas: &[Exponent],
    rows: &[usize],
) -> Result<SeriesVector, CrError> {
    let n_used = ring.n_used;
    let nv = ring.vars();
    let max_grade = alphas.iter().map(|a| a.degree()).max().unwrap_or(0);
    let b_table = chain_coefficients(ring, max_grade);
    let det_a1 = ring.a1_matrix().det();
    // Solve per needed row index l: U^{(l)}_gamma for |gamma| <= max_grade.
    let needed_rows: std::collections::BTreeSet<usize> = rows.iter().cloned().collect();
    let mut u_all: BTreeMap<(usize, Exponent), TruncatedSeries> = BTreeMap::new();
    for &l in &needed_rows {
        for grade in 1..=max_grade {
            let gammas = monomials_of_degree(n_used, grade);
            let betas = gammas.clone();
            // M[gi][bi] = B_{gamma, beta}; rhs_b = b-slot - lower-grade part.
            let mat = SeriesMatrix::from_rows(
                gammas
                    .iter()
                    .map(|g| {
                        betas
                            .iter()
                            .map(|b| {
                                b_table
                                    .get(b)
                                    .and_then(|row| row.get(g))
                                    .cloned()
                                    .unwrap_or_else(|| TruncatedSeries::zero(nv, NO_CAP))
                            })
                            .collect()
                    })
                    .collect(),
            );
            let rhs: SeriesVector = betas
                .iter()
                .map(|b| {
                    let mut acc = ring.slot_series(&SlotKey {
                        dz: Exponent::zero(ring.n_src),
                        dw: Exponent::zero(ring.d_src),
                        gamma: b.clone(),
                        comp: SlotComp::G(l),
                    });
                    for (g, coeff) in b_table.get(b).into_iter().flatten() {
                        if g.degree() < grade && g.degree() >= 1 {
                            let u = u_all
                                .get(&(l, g.clone()))
                                .expect("lower grades already solved");
                            acc = acc.sub(&u.mul(coeff));
                        }
                    }
                    acc
                })
                .collect();
            // det(M) must be a constant times a power of det(a1).
            let det_m = mat.det();
            let (pow, cst) = divide_to_constant(&det_m, &det_a1).ok_or_else(|| {
                CrError::RecoveryFailure("chain block determinant is not a det(a1) power".into())
            })?;
            let adj = crate::solve::adjugate(&mat);
            let cst_inv = cst.inv();
            let q_pow = {
                let mut acc = TruncatedSeries::one(nv, NO_CAP);
                for _ in 0..pow {
                    acc = acc.mul(&ring.q_series());
                }
                acc
            };
            for (gi, g) in gammas.iter().enumerate() {
                let mut acc = TruncatedSeries::zero(nv, NO_CAP);
                for (bi, _) in betas.iter().enumerate() {
                    acc = acc.add(&adj.at(gi, bi).mul(&rhs[bi]));
                }
                let val = acc.scale(&cst_inv).mul(&q_pow);
                u_all.insert((l, g.clone()), val);
            }
        }
    }
    Ok(alphas
        .iter()
        .zip(rows)
        .map(|(a, &l)| u_all.get(&(l, a.clone())).unwrap().clone())
        .collect())
}

/// Write `num = c * den^k` for a constant c; None when impossible.
fn divide_to_constant(
    num: &TruncatedSeries,
    den: &TruncatedSeries,
) -> Option<(usize, GaussianRational)> {
    let mut cur = num.clone();
    let mut pow = 0usize;
    loop {
        if cur.terms.len() == 1 {
            if let Some(c) = cur.terms.get(&Exponent::zero(cur.m)) {
                return Some((pow, c.clone()));
            }
        }
        cur = cur.exact_div(den)?;
        pow += 1;
        if pow > 64 {
            return None;
        }
    }
}

/// Compose S on the slot entries: chi' slots get the order-zero F slots,
/// tau' the order-zero G slots, r the solved u-values.
fn compose_s_on_slots(
    s: &SeriesVector,
    ring: &SlotRing,
    u: &SeriesVector,
    n2: usize,
    d2: usize,
) -> SeriesVector {
    let mut subs: Vec<TruncatedSeries> = Vec::with_capacity(2 * n2 + d2);
    for m in 0..n2 {
        subs.push(ring.slot_series(&SlotKey {
            dz: Exponent::zero(ring.n_src),
            dw: Exponent::zero(ring.d_src),
            gamma: Exponent::zero(ring.n_used),
            comp: SlotComp::F(m),
        }));
    }
    for j in 0..d2 {
        subs.push(ring.slot_series(&SlotKey {
            dz: Exponent::zero(ring.n_src),
            dw: Exponent::zero(ring.d_src),
            gamma: Exponent::zero(ring.n_used),
            comp: SlotComp::G(j),
        }));
    }
    subs.extend(u.iter().cloned());
    s.iter()
        .map(|f| f.with_cap(NO_CAP).compose(&subs))
        .collect()
}

/// The full evaluator: the symbolic series for every derivative order up to
/// a budget, for the F and G blocks, together with the operator expansions
/// needed to fill slots from jet composites. Constructed once per
/// (source, target, index choice); evaluation never mutates it.
pub struct PsiEvaluator {
    pub m_src: FormalSubmanifold,
    pub m_dst: FormalSubmanifold,
    /// Indices (0-based) of the source (0,1) fields used by the chains.
    pub jtilde: Vec<usize>,
    pub ell0: usize,
    pub alpha_budget: usize,
    pub ring: SlotRing,
    pub theta: ThetaData,
    /// Symbolic series for d^alpha F and d^alpha G in the slot ring.
    pub psi_f: BTreeMap<Exponent, SeriesVector>,
    pub psi_g: BTreeMap<Exponent, SeriesVector>,
    /// For each slot: the expansion sum_beta c_beta (x) [d^beta conj-H] with
    /// double-ring coefficient series.
    pub expansions: BTreeMap<SlotKey, Vec<(Exponent, TruncatedSeries)>>,
}

impl PsiEvaluator {
    pub fn new(
        m_src: &FormalSubmanifold,
        m_dst: &FormalSubmanifold,
        jtilde: &[usize],
        ell0: usize,
        alpha_budget: usize,
    ) -> Result<Self, CrError> {
        let n = m_src.n;
        let d = m_src.d;
        let n2 = m_dst.n;
        let d2 = m_dst.d;
        if jtilde.len() != n2 || jtilde.iter().any(|&j| j >= n) {
            return Err(CrError::NoValidIndexChoice(format!(
                "need {} strictly increasing indices below {}",
                n2, n
            )));
        }
        let theta0 = build_theta(m_dst, ell0)?;
        let ring = SlotRing::new(n, d, n2, n2, d2, ell0, alpha_budget);
        // Re-embed Theta into the full ring.
        let theta_emb: SeriesVector = theta0
            .theta
            .iter()
            .map(|f| embed_slot_series(f, &theta0.ring, &ring))
            .collect();

        // Symbolic G block at order zero: Q'(Theta, a0, b0).
        let q_subs: Vec<TruncatedSeries> = theta_emb
            .iter()
            .cloned()
            .chain((0..d2).map(|_| TruncatedSeries::zero(ring.vars(), NO_CAP)))
            .chain((0..n2).map(|m| {
                ring.slot_series(&SlotKey {
                    dz: Exponent::zero(n),
                    dw: Exponent::zero(d),
                    gamma: Exponent::zero(n2),
                    comp: SlotComp::F(m),
                })
            }))
            .chain((0..d2).map(|j| {
                ring.slot_series(&SlotKey {
                    dz: Exponent::zero(n),
                    dw: Exponent::zero(d),
                    gamma: Exponent::zero(n2),
                    comp: SlotComp::G(j),
                })
            }))
            .collect();
        let g0: SeriesVector = m_dst
            .q
            .iter()
            .map(|f| f.with_cap(NO_CAP).compose(&q_subs))
            .collect();

        // Derivative chains by the canonical peeling order.
        let mut psi_f: BTreeMap<Exponent, SeriesVector> = BTreeMap::new();
        let mut psi_g: BTreeMap<Exponent, SeriesVector> = BTreeMap::new();
        let ambient = n + d;
        psi_f.insert(Exponent::zero(ambient), theta_emb);
        psi_g.insert(Exponent::zero(ambient), g0);
        for alpha in monomials_up_to(ambient, alpha_budget) {
            // Peel the outermost operator: the smallest z index, else the
            // smallest w index.
            let (var, is_z) = match (0..ambient).find(|&i| alpha.0[i] > 0) {
                Some(i) if i < n => (i, true),
                Some(i) => (i - n, false),
                None => unreachable!(),
            };
            let mut prev = alpha.clone();
            prev.0[if is_z { var } else { n + var }] -= 1;
            for table in [&mut psi_f, &mut psi_g] {
                let lower = table.get(&prev).expect("graded order").clone();
                let image: SeriesVector = lower
                    .iter()
                    .map(|f| apply_chain_derivation(f, &ring, var, is_z))
                    .collect();
                table.insert(alpha.clone(), image);
            }
        }

        // Operator expansions for slot filling.
        let mut expansions = BTreeMap::new();
        for key in &ring.keys {
            expansions.insert(key.clone(), expansion_for(m_src, jtilde, key));
        }
        Ok(PsiEvaluator {
            m_src: m_src.clone(),
            m_dst: m_dst.clone(),
            jtilde: jtilde.to_vec(),
            ell0,
            alpha_budget,
            ring,
            theta: theta0,
            psi_f,
            psi_g,
            expansions,
        })
    }

    /// Evaluate the symbolic series for `d^alpha F` (comp < n') or
    /// `d^alpha G` on concrete slot values.
    pub fn evaluate(&self, alpha: &Exponent, fill: &SlotFill) -> SeriesVector {
        let f = self
            .psi_f
            .get(alpha)
            .unwrap_or_else(|| panic!("alpha {alpha:?} beyond the evaluator budget"));
        let g = self.psi_g.get(alpha).unwrap();
        let subs = fill.substitution(&self.ring);
        f.iter()
            .chain(g.iter())
            .map(|s| s.compose(&subs))
            .collect()
    }
}

/// Embed a series from one slot ring into a larger one by key lookup.
fn embed_slot_series(f: &TruncatedSeries, from: &SlotRing, to: &SlotRing) -> TruncatedSeries {
    let map: Vec<usize> = (0..f.m)
        .map(|v| {
            if v == from.q_var() {
                to.q_var()
            } else {
                let k = &from.keys[v];
                // Keys of the small ring have empty chain exponents.
                to.var_of(&SlotKey {
                    dz: Exponent::zero(to.n_src),
                    dw: Exponent::zero(to.d_src),
                    gamma: k.gamma.clone(),
                    comp: k.comp.clone(),
                })
            }
        })
        .collect();
    f.embed(to.vars(), &map)
}

/// One derivation step on the slot ring: the image of the series under the
/// transversal field (is_z = false) or the combination field (is_z = true)
/// with the given index, acting by slot shifts and the q rule.
fn apply_chain_derivation(
    f: &TruncatedSeries,
    ring: &SlotRing,
    var: usize,
    is_z: bool,
) -> TruncatedSeries {
    let a1 = ring.a1_matrix();
    let det_a1 = a1.det();
    derive_series(f, |v| {
        if v == ring.q_var() {
            // q = 1/det(a1): image = -q^2 * sum d(det)/d(a-slot) * shifted slot.
            let mut img = TruncatedSeries::zero(ring.vars(), NO_CAP);
            for p in 0..ring.n_used {
                for l in 0..ring.n_dst {
                    let slot = SlotKey {
                        dz: Exponent::zero(ring.n_src),
                        dw: Exponent::zero(ring.d_src),
                        gamma: Exponent::unit(ring.n_used, p),
                        comp: SlotComp::F(l),
                    };
                    let cof = det_a1.derivative(ring.var_of(&slot)).with_cap(NO_CAP);
                    if cof.is_zero() {
                        continue;
                    }
                    let mut shifted = slot;
                    if is_z {
                        shifted.dz.0[var] += 1;
                    } else {
                        shifted.dw.0[var] += 1;
                    }
                    img = img.add(&cof.mul(&ring.slot_series(&shifted)));
                }
            }
            let q = ring.q_series();
            Some(q.mul(&q).mul(&img).neg())
        } else {
            let mut key = ring.keys[v].clone();
            if is_z {
                key.dz.0[var] += 1;
            } else {
                key.dw.0[var] += 1;
            }
            Some(ring.slot_series(&key))
        }
    })
}

/// Build the expansion of the chain `V^{dz} T^{dw} L^{gamma}` applied to a
/// conjugated component, as a sum of double-ring coefficient series against
/// derivative placeholders of the conjugated map.
fn expansion_for(
    m_src: &FormalSubmanifold,
    jtilde: &[usize],
    key: &SlotKey,
) -> Vec<(Exponent, TruncatedSeries)> {
    let ambient = m_src.ambient();
    let mring = m_src.ring_vars();
    let cap = m_src.cap;
    let basis = cr_basis(m_src);
    let aux = aux_fields(m_src);
    // Start: the bare component, placeholder beta = 0.
    let mut terms: Vec<(Exponent, TruncatedSeries)> =
        vec![(Exponent::zero(ambient), TruncatedSeries::one(mring, cap))];
    // Innermost-first: L^gamma with the largest index applied first, then
    // T's, then V's, matching the canonical value order.
    let mut ops: Vec<&FormalVectorField> = Vec::new();
    for i in (0..key.gamma.len()).rev() {
        for _ in 0..key.gamma.0[i] {
            ops.push(&basis[jtilde[i]]);
        }
    }
    for j in (0..key.dw.len()).rev() {
        for _ in 0..key.dw.0[j] {
            ops.push(&aux.t[j]);
        }
    }
    for i in (0..key.dz.len()).rev() {
        for _ in 0..key.dz.0[i] {
            ops.push(&aux.v[i]);
        }
    }
    for field in ops {
        let mut next: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
        for (beta, coeff) in &terms {
            // field(c * d^beta Hbar(zeta)) = field(c) * [beta]
            //   + c * sum over zeta-slots of field's zeta-coefficients.
            let fc = field.apply(coeff);
            if !fc.is_zero() {
                next.entry(beta.clone())
                    .and_modify(|a| *a = a.add(&fc))
                    .or_insert(fc);
            }
            for t in 0..ambient {
                let b_coeff = &field.b[t];
                if b_coeff.is_zero() {
                    continue;
                }
                let mut b2 = beta.clone();
                b2.0[t] += 1;
                let term = coeff.mul(b_coeff);
                next.entry(b2)
                    .and_modify(|a| *a = a.add(&term))
                    .or_insert(term);
            }
        }
        terms = next.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    }
    terms
}

/// Concrete slot values in some evaluation ring: one series per slot, plus
/// the inverse-determinant value.
pub struct SlotFill {
    pub values: BTreeMap<SlotKey, TruncatedSeries>,
    pub q_value: TruncatedSeries,
}

impl SlotFill {
    fn substitution(&self, ring: &SlotRing) -> Vec<TruncatedSeries> {
        let mut subs: Vec<TruncatedSeries> = ring
            .keys
            .iter()
            .map(|k| {
                self.values
                    .get(k)
                    .unwrap_or_else(|| panic!("missing slot value {k:?}"))
                    .clone()
            })
            .collect();
        subs.push(self.q_value.clone());
        subs
    }

    /// Fill the slots from an actual map: honest derivative chains of the
    /// conjugated components in the source double ring.
    pub fn from_map(psi: &PsiEvaluator, h: &FormalMap) -> Result<SlotFill, CrError> {
        let m_src = &psi.m_src;
        let ambient = m_src.ambient();
        let basis = cr_basis(m_src);
        let aux = aux_fields(m_src);
        let mut values: BTreeMap<SlotKey, TruncatedSeries> = BTreeMap::new();
        // Memoized recursive evaluation in canonical order.
        fn value_of(
            key: &SlotKey,
            values: &mut BTreeMap<SlotKey, TruncatedSeries>,
            h: &FormalMap,
            psi: &PsiEvaluator,
            basis: &[FormalVectorField],
            aux: &crate::vfields::AuxFields,
            ambient: usize,
        ) -> TruncatedSeries {
            if let Some(v) = values.get(key) {
                return v.clone();
            }
            let val = if let Some(i) = (0..key.dz.len()).find(|&i| key.dz.0[i] > 0) {
                let mut inner = key.clone();
                inner.dz.0[i] -= 1;
                aux.v[i].apply(&value_of(&inner, values, h, psi, basis, aux, ambient))
            } else if let Some(j) = (0..key.dw.len()).find(|&j| key.dw.0[j] > 0) {
                let mut inner = key.clone();
                inner.dw.0[j] -= 1;
                aux.t[j].apply(&value_of(&inner, values, h, psi, basis, aux, ambient))
            } else if let Some(i) = (0..key.gamma.len()).find(|&i| key.gamma.0[i] > 0) {
                let mut inner = key.clone();
                inner.gamma.0[i] -= 1;
                basis[psi.jtilde[i]]
                    .apply(&value_of(&inner, values, h, psi, basis, aux, ambient))
            } else {
                match &key.comp {
                    SlotComp::F(m) => embed_antiholo(&h.f_components()[*m], ambient),
                    SlotComp::G(j) => embed_antiholo(&h.g_components()[*j], ambient),
                }
            };
            values.insert(key.clone(), val.clone());
            val
        }
        for key in &psi.ring.keys {
            value_of(key, &mut values, h, psi, &basis, &aux, ambient);
        }
        // q = 1/det(a1 values); the unit condition is the submersivity
        // determinant for the chosen indices.
        let a1_rows: Vec<Vec<TruncatedSeries>> = (0..psi.ring.n_used)
            .map(|p| {
                (0..psi.ring.n_dst)
                    .map(|l| {
                        values
                            .get(&SlotKey {
                                dz: Exponent::zero(psi.ring.n_src),
                                dw: Exponent::zero(psi.ring.d_src),
                                gamma: Exponent::unit(psi.ring.n_used, p),
                                comp: SlotComp::F(l),
                            })
                            .unwrap()
                            .clone()
                    })
                    .collect()
            })
            .collect();
        let det = SeriesMatrix::from_rows(a1_rows).det();
        if det.eval_at_zero().is_zero() {
            return Err(CrError::NotSubmersive);
        }
        Ok(SlotFill {
            values,
            q_value: det.invert_unit(),
        })
    }
}

/// Evaluate the universal expression for `d^alpha H` on a concrete map: a
/// series in the source double ring that agrees with the actual derivative
/// modulo the defining ideal.
pub fn psi_evaluate(
    psi: &PsiEvaluator,
    alpha: &Exponent,
    h: &FormalMap,
) -> Result<SeriesVector, CrError> {
    let fill = SlotFill::from_map(psi, h)?;
    Ok(psi.evaluate(alpha, &fill))
}

#[derive(Clone, Debug)]
pub struct BasicIdentityReport {
    pub checked_orders: usize,
    pub first_failure: Option<(Exponent, Exponent, GaussianRational)>,
}

impl BasicIdentityReport {
    pub fn ok(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Verify the basic identity for all derivative orders up to `alpha_max`:
/// the difference between the actual derivative of H and its universal
/// expression vanishes after substituting tau = Qbar(chi, z, w).
pub fn check_basic_identity(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    h: &FormalMap,
    jtilde: &[usize],
    ell0: usize,
    alpha_max: usize,
) -> Result<BasicIdentityReport, CrError> {
    let psi = PsiEvaluator::new(m_src, m_dst, jtilde, ell0, alpha_max)?;
    let fill = SlotFill::from_map(&psi, h)?;
    let ambient = m_src.ambient();
    let mut checked = 0;
    let mut alphas = vec![Exponent::zero(ambient)];
    alphas.extend(monomials_up_to(ambient, alpha_max));
    for alpha in &alphas {
        let rhs = psi.evaluate(alpha, &fill);
        for (c, comp) in h.components.iter().enumerate() {
            let mut der = comp.clone();
            for (i, &k) in alpha.0.iter().enumerate() {
                for _ in 0..k {
                    der = der.derivative(i);
                }
            }
            let lhs = embed_holo(&der, ambient);
            let residual = m_src.reduce_mod_ideal(&lhs.sub(&rhs[c]));
            if !residual.is_zero() {
                let (e, v) = residual.terms.iter().next().unwrap();
                return Ok(BasicIdentityReport {
                    checked_orders: checked,
                    first_failure: Some((alpha.clone(), e.clone(), v.clone())),
                });
            }
        }
        checked += 1;
    }
    Ok(BasicIdentityReport {
        checked_orders: checked,
        first_failure: None,
    })
}

/// Default index choice: the first strictly increasing tuple satisfying the
/// first-order determinant condition for the given map.
pub fn choose_jtilde(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    h: &FormalMap,
) -> Result<Vec<usize>, CrError> {
    let n = m_src.n;
    let n2 = m_dst.n;
    if n2 > n {
        return Err(CrError::NoValidIndexChoice(
            "target CR dimension exceeds the source".into(),
        ));
    }
    let lin: Vec<Vec<GaussianRational>> = h
        .f_components()
        .iter()
        .map(|f| (0..n).map(|j| f.derivative(j).eval_at_zero()).collect())
        .collect();
    let mut combo: Vec<usize> = (0..n2).collect();
    loop {
        let rows: Vec<Vec<GaussianRational>> = (0..n2)
            .map(|l| combo.iter().map(|&j| lin[l][j].clone()).collect())
            .collect();
        if scalar_rank(&rows) == n2 {
            return Ok(combo);
        }
        let mut i = n2;
        loop {
            if i == 0 {
                return Err(CrError::NotSubmersive);
            }
            i -= 1;
            if combo[i] != i + n - n2 {
                combo[i] += 1;
                for j in i + 1..n2 {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeterminationVerdict {
    Equal,
    JetMismatch { order: usize },
    ChainFailure { level: usize },
}

/// Jet determination along Segre mappings: two CR submersive maps whose jets
/// of order k0 * ell0 agree are compared by composing their derivatives with
/// the Segre mappings level by level; the final level composed with a
/// full-rank mapping forces equality, which is then confirmed
/// coefficientwise.
pub fn jet_determination(
    m_src: &FormalSubmanifold,
    _m_dst: &FormalSubmanifold,
    h1: &FormalMap,
    h2: &FormalMap,
    k0: usize,
    ell0: usize,
) -> Result<DeterminationVerdict, CrError> {
    let jet_order = (k0 * ell0).max(1);
    if jet(h1, jet_order) != jet(h2, jet_order) {
        return Ok(DeterminationVerdict::JetMismatch { order: jet_order });
    }
    let ambient = m_src.ambient();
    // Level k: the derivative composites agree up to order ell0 (k0 - k).
    for k in 1..=k0 {
        let v = segre_map(m_src, k);
        let budget = ell0 * (k0 - k);
        let mut alphas = vec![Exponent::zero(ambient)];
        alphas.extend(monomials_up_to(ambient, budget));
        for alpha in &alphas {
            for (a, b) in h1.components.iter().zip(&h2.components) {
                let mut da = a.clone();
                let mut db = b.clone();
                for (i, &t) in alpha.0.iter().enumerate() {
                    for _ in 0..t {
                        da = da.derivative(i);
                        db = db.derivative(i);
                    }
                }
                let ca = da.compose(&v.components);
                let cb = db.compose(&v.components);
                if ca != cb {
                    return Ok(DeterminationVerdict::ChainFailure { level: k });
                }
            }
        }
    }
    // Full-rank final Segre mapping propagates equality to the maps.
    let rank = crate::segre::segre_rank(m_src, k0);
    if rank.rank != ambient {
        return Err(CrError::RankDeficiency(format!(
            "Segre mapping at level {k0} has rank {} < {ambient}",
            rank.rank
        )));
    }
    for (a, b) in h1.components.iter().zip(&h2.components) {
        if a != b {
            return Ok(DeterminationVerdict::ChainFailure { level: k0 });
        }
    }
    Ok(DeterminationVerdict::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn theta_choice_and_s_for_heisenberg() {
        let mfd = gallery::heisenberg(8);
        let td = build_theta(&mfd, 1).unwrap();
        assert_eq!(td.alphas, vec![Exponent(vec![1])]);
        assert_eq!(td.rows, vec![0]);
        // S(chi', tau', r) = i r / 2: the equation is -2i X = r.
        let expect = S::var(3, 8, 2).scale(&Q::from_parts(0, 1, 1, 2));
        assert_eq!(td.s[0], expect);
    }

    #[test]
    fn flat_target_has_no_choice() {
        let flat = gallery::flat_hypersurface(8);
        assert!(matches!(
            build_theta(&flat, 2),
            Err(CrError::NotFinitelyNondegenerate)
        ));
    }

    #[test]
    fn theta_vanishes_when_b_slots_vanish() {
        // Substituting zero for every G slot must kill Theta identically.
        let mfd = gallery::heisenberg(8);
        let td = build_theta(&mfd, 1).unwrap();
        let ring = &td.ring;
        let nv = ring.vars();
        // Slot values: a-slots keep their variables, b-slots go to zero,
        // q stays the q variable.
        let subs: Vec<S> = ring
            .keys
            .iter()
            .map(|k| match k.comp {
                SlotComp::F(_) => ring.slot_series(k),
                SlotComp::G(_) => S::zero(nv, NO_CAP),
            })
            .chain(std::iter::once(ring.q_series()))
            .collect();
        for th in &td.theta {
            assert!(th.compose(&subs).is_zero());
        }
    }

    #[test]
    fn theta_recovers_f_for_identity() {
        // Evaluating Theta on the identity's slot data returns F = z on the
        // submanifold.
        let mfd = gallery::heisenberg(8);
        let psi = PsiEvaluator::new(&mfd, &mfd, &[0], 1, 0).unwrap();
        let id = FormalMap::identity(1, 1, 8);
        let fill = SlotFill::from_map(&psi, &id).unwrap();
        let vals = psi.evaluate(&Exponent(vec![0, 0]), &fill);
        // F-part equals z after reduction; here even identically.
        let z = S::var(4, 8, 0);
        let red = mfd.reduce_mod_ideal(&vals[0].sub(&z));
        assert!(red.is_zero(), "{:?}", vals[0]);
    }

    #[test]
    fn basic_identity_identity_and_dilation() {
        let mfd = gallery::heisenberg(8);
        let id = FormalMap::identity(1, 1, 8);
        let rep = check_basic_identity(&mfd, &mfd, &id, &[0], 1, 2).unwrap();
        assert!(rep.ok(), "{:?}", rep.first_failure);
        let dil = gallery::heisenberg_dilation(8, &Q::from_int(2));
        let rep2 = check_basic_identity(&mfd, &mfd, &dil, &[0], 1, 2).unwrap();
        assert!(rep2.ok(), "{:?}", rep2.first_failure);
    }

    #[test]
    fn basic_identity_catches_corruption() {
        let mfd = gallery::heisenberg(8);
        let z = S::var(2, 8, 0);
        let corrupt = FormalMap::new(
            vec![z.clone().add(&z.mul(&z).mul(&z)), S::var(2, 8, 1)],
            1,
            1,
            1,
            1,
        );
        let rep = check_basic_identity(&mfd, &mfd, &corrupt, &[0], 1, 1).unwrap();
        assert!(!rep.ok());
    }

    #[test]
    fn basic_identity_parabolic() {
        let mfd = gallery::heisenberg(8);
        let h = gallery::heisenberg_parabolic(8, 1, 2);
        let rep = check_basic_identity(&mfd, &mfd, &h, &[0], 1, 2).unwrap();
        assert!(rep.ok(), "{:?}", rep.first_failure);
    }

    #[test]
    fn determination_on_heisenberg() {
        let mfd = gallery::heisenberg(8);
        let id = FormalMap::identity(1, 1, 8);
        let v = jet_determination(&mfd, &mfd, &id, &id, 2, 1).unwrap();
        assert_eq!(v, DeterminationVerdict::Equal);
        let dil = gallery::heisenberg_dilation(8, &Q::from_int(2));
        let v2 = jet_determination(&mfd, &mfd, &id, &dil, 2, 1).unwrap();
        assert_eq!(v2, DeterminationVerdict::JetMismatch { order: 2 });
    }
}
