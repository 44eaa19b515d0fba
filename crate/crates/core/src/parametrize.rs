//! Jet parametrization: transporting a finite jet along Segre mappings, the
//! singular inversion of a double Segre mapping, the extraction of the
//! parametrized map from a jet, coefficient recovery against weighted
//! leading parts, and the emission of the polynomial equations cutting out
//! the jets of CR submersive maps.
//!
//! The transport chain runs in two modes sharing the same code path: with a
//! concrete jet the levels are honest series, and with symbolic jet
//! variables the levels live in a ring extended by one variable per jet
//! coordinate and its conjugate plus two inverse-determinant symbols, from
//! which polynomial equations are later cleared.

use crate::error::CrError;
use crate::linalg::{generic_rank, jacobian, scalar_rank, SeriesMatrix, SeriesVector};
use crate::manifold::FormalSubmanifold;
use crate::mapping::{factorial_big, monomials_of_degree, monomials_up_to, FormalMap, Jet};
use crate::reflection::{PsiEvaluator, SlotComp, SlotFill, SlotKey};
use crate::scalar::GaussianRational;
use crate::segre::{dk_map, segre_map, SegreMap};
use crate::series::{Exponent, TruncatedSeries, NO_CAP};
use crate::solve::{singular_implicit_solve, SingularSolution};
use std::collections::BTreeMap;
use std::ops::Mul;

/// Layout of the symbolic jet block appended after the level ring variables.
#[derive(Clone, Debug)]
pub struct JetLayout {
    pub n_src: usize,
    pub d_src: usize,
    pub n_dst: usize,
    pub d_dst: usize,
    pub order: usize,
    /// Jet coordinates carried as variables: every (component, exponent)
    /// except the pure-z G block, which is pinned to zero.
    pub coords: Vec<(usize, Exponent)>,
    pub index: BTreeMap<(usize, Exponent), usize>,
}

impl JetLayout {
    pub fn new(n_src: usize, d_src: usize, n_dst: usize, d_dst: usize, order: usize) -> Self {
        let mut coords = Vec::new();
        for comp in 0..n_dst + d_dst {
            for e in monomials_up_to(n_src + d_src, order) {
                let pure_z_g = comp >= n_dst && e.0[n_src..].iter().all(|&v| v == 0);
                if !pure_z_g {
                    coords.push((comp, e));
                }
            }
        }
        let index = coords
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        JetLayout {
            n_src,
            d_src,
            n_dst,
            d_dst,
            order,
            coords,
            index,
        }
    }

    /// Variables: lambda block, conjugate block, q, q-bar.
    pub fn block_size(&self) -> usize {
        2 * self.coords.len() + 2
    }

    pub fn lambda_var(&self, ring_vars: usize, comp: usize, e: &Exponent) -> Option<usize> {
        self.index
            .get(&(comp, e.clone()))
            .map(|i| ring_vars + *i)
    }

    pub fn lambda_bar_var(&self, ring_vars: usize, comp: usize, e: &Exponent) -> Option<usize> {
        self.index
            .get(&(comp, e.clone()))
            .map(|i| ring_vars + self.coords.len() + *i)
    }

    pub fn q_var(&self, ring_vars: usize) -> usize {
        ring_vars + 2 * self.coords.len()
    }

    pub fn qbar_var(&self, ring_vars: usize) -> usize {
        ring_vars + 2 * self.coords.len() + 1
    }

    /// Conjugate a series in a (ring_vars + block) ring: conjugate the
    /// coefficients and swap the lambda and q halves of the jet block.
    pub fn conj_swap(&self, f: &TruncatedSeries, ring_vars: usize) -> TruncatedSeries {
        let k = self.coords.len();
        let perm: Vec<usize> = (0..f.m)
            .map(|v| {
                if v < ring_vars {
                    v
                } else if v < ring_vars + k {
                    v + k
                } else if v < ring_vars + 2 * k {
                    v - k
                } else if v == ring_vars + 2 * k {
                    ring_vars + 2 * k + 1
                } else {
                    ring_vars + 2 * k
                }
            })
            .collect();
        f.conjugate().permute_vars(&perm)
    }

    /// The determinant polynomial in the lambda variables for an index
    /// choice: det of dF_l/dz_{j_p}(0).
    pub fn p_polynomial(&self, ring_vars: usize, jtilde: &[usize], cap: usize) -> TruncatedSeries {
        let m = ring_vars + self.block_size();
        let n2 = self.n_dst;
        let rows: Vec<Vec<TruncatedSeries>> = (0..n2)
            .map(|l| {
                jtilde
                    .iter()
                    .map(|&j| {
                        let e = Exponent::unit(self.n_src + self.d_src, j);
                        match self.lambda_var(ring_vars, l, &e) {
                            Some(v) => TruncatedSeries::var(m, cap, v),
                            None => TruncatedSeries::zero(m, cap),
                        }
                    })
                    .collect()
            })
            .collect();
        SeriesMatrix::from_rows(rows).det()
    }
}

/// Transport mode: concrete numbers or symbolic jet variables.
enum ChainMode<'a> {
    Concrete(&'a Jet),
    Symbolic(&'a JetLayout),
}

/// One level of the transport: values of the derivative composites along
/// the Segre mapping of that order.
pub struct ChainLevel {
    pub k: usize,
    pub ring_vars: usize,
    pub values: BTreeMap<Exponent, SeriesVector>,
}

/// Jet-consistency equations collected by the symbolic transport: the
/// ring-constant part of every transported derivative must reproduce the jet
/// coordinate itself.
pub struct ChainOutput {
    pub levels: Vec<ChainLevel>,
    pub consistency: Vec<(usize, Exponent, usize, TruncatedSeries)>,
}

fn jet_block_of(mode: &ChainMode) -> usize {
    match mode {
        ChainMode::Concrete(_) => 0,
        ChainMode::Symbolic(layout) => layout.block_size(),
    }
}

/// Run the transport chain to level `k_target`. The jet order must be at
/// least `ell0 * k_target`; level t keeps derivative orders up to
/// `order - t * ell0`.
fn run_chain(
    psi: &PsiEvaluator,
    mode: &ChainMode,
    order: usize,
    k_target: usize,
    cap: usize,
) -> Result<ChainOutput, CrError> {
    let m_src = &psi.m_src;
    let n = m_src.n;
    let ambient = m_src.ambient();
    let ell0 = psi.ell0;
    assert!(order >= ell0 * k_target, "jet order too small for the chain");
    let jb = jet_block_of(mode);
    let mut consistency = Vec::new();

    // Level 0 values: constants (or jet variables) in a ring with zero ring
    // variables and the jet block.
    let mut d_values: BTreeMap<Exponent, SeriesVector> = BTreeMap::new();
    {
        let mut alphas = vec![Exponent::zero(ambient)];
        alphas.extend(monomials_up_to(ambient, order));
        for alpha in alphas {
            let comps: SeriesVector = (0..psi.m_dst.ambient())
                .map(|c| match mode {
                    ChainMode::Concrete(jet) => TruncatedSeries::constant(
                        jb.max(0),
                        cap,
                        if alpha.is_zero() {
                            GaussianRational::zero()
                        } else {
                            jet.deriv(&alpha, c)
                        },
                    ),
                    ChainMode::Symbolic(layout) => {
                        if alpha.is_zero() {
                            TruncatedSeries::zero(jb, cap)
                        } else {
                            match layout.lambda_var(0, c, &alpha) {
                                Some(v) => TruncatedSeries::var(jb, cap, v),
                                None => TruncatedSeries::zero(jb, cap),
                            }
                        }
                    }
                })
                .collect();
            d_values.insert(alpha, comps);
        }
    }

    let mut levels: Vec<ChainLevel> = Vec::new();
    for step in 1..=k_target {
        let ring_prev = (step - 1) * n;
        let ring_now = step * n;
        let m_now = ring_now + jb;
        let budget = order - step * ell0;
        // Conjugated previous values, moved into the current ring with the
        // ring variables shifted by one z block.
        let shift: Vec<usize> = {
            let mut v: Vec<usize> = (0..ring_prev).map(|i| i + n).collect();
            v.extend((0..jb).map(|i| ring_now + i));
            v
        };
        let j_values: BTreeMap<Exponent, SeriesVector> = d_values
            .iter()
            .map(|(beta, comps)| {
                let moved: SeriesVector = comps
                    .iter()
                    .map(|f| {
                        let conj = match mode {
                            ChainMode::Concrete(_) => f.conjugate(),
                            ChainMode::Symbolic(layout) => layout.conj_swap(f, ring_prev),
                        };
                        conj.embed(m_now, &shift)
                    })
                    .collect();
                (beta.clone(), moved)
            })
            .collect();
        // The pair: the Segre mapping of this order on the holomorphic side,
        // its conjugate (the shifted previous mapping) on the other side.
        let v_now = segre_map(m_src, step);
        let pair_up: Vec<usize> = (0..ring_now).collect();
        let z_side: SeriesVector = v_now
            .components
            .iter()
            .map(|f| f.truncate(cap).embed(m_now, &pair_up))
            .collect();
        let zeta_side: SeriesVector = if step == 1 {
            (0..ambient)
                .map(|_| TruncatedSeries::zero(m_now, cap))
                .collect()
        } else {
            let prev = segre_map(m_src, step - 1);
            let sh: Vec<usize> = (n..ring_now).collect();
            prev.components
                .iter()
                .map(|f| f.conjugate().truncate(cap).embed(m_now, &sh))
                .collect()
        };
        let pair_subs: Vec<TruncatedSeries> = z_side
            .iter()
            .cloned()
            .chain(zeta_side.iter().cloned())
            .collect();
        // Fill the slots consumable at this level; the evaluated series only
        // touch chains of order <= budget, so the rest are zeroed.
        let available = order - (step - 1) * ell0;
        let mut values: BTreeMap<SlotKey, TruncatedSeries> = BTreeMap::new();
        for key in &psi.ring.keys {
            let chain_order = key.dz.degree() + key.dw.degree();
            if chain_order > budget || chain_order + key.gamma.degree() > available {
                values.insert(key.clone(), TruncatedSeries::zero(m_now, cap));
                continue;
            }
            let expansion = psi.expansions.get(key).unwrap();
            let mut acc = TruncatedSeries::zero(m_now, cap);
            for (beta, coeff) in expansion {
                let j = j_values
                    .get(beta)
                    .unwrap_or_else(|| panic!("chain consumed order beyond the jet: {beta:?}"));
                let comp_val = match &key.comp {
                    SlotComp::F(mm) => &j[*mm],
                    SlotComp::G(jj) => &j[psi.m_dst.n + *jj],
                };
                if comp_val.is_zero() {
                    continue;
                }
                let c = coeff.truncate(cap.min(coeff.cap)).compose(&pair_subs);
                acc = acc.add(&c.mul(comp_val));
            }
            values.insert(key.clone(), acc);
        }
        // Inverse determinant value.
        let det = {
            let rows: Vec<Vec<TruncatedSeries>> = (0..psi.ring.n_used)
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
            SeriesMatrix::from_rows(rows).det()
        };
        let q_value = match mode {
            ChainMode::Concrete(_) => {
                if det.eval_at_zero().is_zero() {
                    return Err(CrError::NotSubmersive);
                }
                det.invert_unit()
            }
            ChainMode::Symbolic(layout) => {
                // det = P-bar + ring-positive part; 1/det expands against the
                // q-bar symbol.
                let pbar = layout.conj_swap(
                    &layout
                        .p_polynomial(ring_now, &psi.jtilde, cap)
                        .truncate(cap),
                    ring_now,
                );
                let delta = det.sub(&pbar);
                if !delta.is_zero() && delta.terms.keys().any(|e| e.0[..ring_now].iter().all(|&v| v == 0)) {
                    return Err(CrError::RecoveryFailure(
                        "symbolic chain determinant has an unexpected constant block".into(),
                    ));
                }
                let qbar = TruncatedSeries::var(m_now, cap, layout.qbar_var(ring_now));
                let mut acc = TruncatedSeries::one(m_now, cap);
                let mut pow = TruncatedSeries::one(m_now, cap);
                let step_term = delta.mul(&qbar).neg();
                for _ in 0..cap {
                    pow = pow.mul(&step_term);
                    if pow.is_zero() {
                        break;
                    }
                    acc = acc.add(&pow);
                }
                qbar.mul(&acc)
            }
        };
        let fill = SlotFill { values, q_value };
        // Evaluate the transported derivatives.
        let mut new_values: BTreeMap<Exponent, SeriesVector> = BTreeMap::new();
        let mut alphas = vec![Exponent::zero(ambient)];
        alphas.extend(monomials_up_to(ambient, budget));
        for alpha in alphas {
            let mut comps = psi.evaluate(&alpha, &fill);
            if let ChainMode::Symbolic(layout) = mode {
                // Enforce the invariant that the ring-constant block is the
                // jet coordinate itself; the discrepancy is a consistency
                // equation of the jet variety.
                for (c, comp) in comps.iter_mut().enumerate() {
                    let mut const_part = TruncatedSeries::zero(m_now, cap);
                    for (e, coeff) in &comp.terms {
                        if e.0[..ring_now].iter().all(|&v| v == 0) {
                            const_part.terms.insert(e.clone(), coeff.clone());
                        }
                    }
                    let target = if alpha.is_zero() {
                        TruncatedSeries::zero(m_now, cap)
                    } else {
                        match layout.lambda_var(ring_now, c, &alpha) {
                            Some(v) => TruncatedSeries::var(m_now, cap, v),
                            None => TruncatedSeries::zero(m_now, cap),
                        }
                    };
                    let discrepancy = const_part.sub(&target);
                    if !discrepancy.is_zero() {
                        consistency.push((step, alpha.clone(), c, discrepancy.clone()));
                    }
                    *comp = comp.sub(&discrepancy);
                }
            }
            new_values.insert(alpha, comps);
        }
        d_values = new_values;
        levels.push(ChainLevel {
            k: step,
            ring_vars: ring_now,
            values: d_values
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        });
    }
    Ok(ChainOutput {
        levels,
        consistency,
    })
}

/// Transport a concrete jet along the Segre mappings: the result is the
/// value of `H o v^k` for any CR submersive map H with this jet (valid for
/// the index choice). Returned in the `k n`-variable ring.
pub fn xi_map(
    psi: &PsiEvaluator,
    jet0: &Jet,
    k: usize,
    cap: usize,
) -> Result<SeriesVector, CrError> {
    let out = run_chain(psi, &ChainMode::Concrete(jet0), jet0.order, k, cap)?;
    Ok(out
        .levels
        .last()
        .unwrap()
        .values
        .get(&Exponent::zero(psi.m_src.ambient()))
        .unwrap()
        .clone())
}

/// The singular inversion of `v^{2 k1}` along the diagonal: the data
/// recovering `(z, w)` from the mirrored substitution.
pub struct SegreInversion {
    pub k1: usize,
    /// Chosen mirrored variables (indices in the `2 k1 n` ring).
    pub y_vars: Vec<usize>,
    pub delta: TruncatedSeries,
    pub solution: SingularSolution,
    /// Direction with `delta(t * dir)` nonzero.
    pub direction: Vec<GaussianRational>,
}

/// Choose d mirrored variables with full-rank derivative block along the
/// diagonal, solve the singular implicit equation, and fix a direction.
pub fn invert_segre(mfd: &FormalSubmanifold, k1: usize) -> Result<SegreInversion, CrError> {
    let n = mfd.n;
    let d = mfd.d;
    let cap = mfd.cap;
    let v2k = segre_map(mfd, 2 * k1);
    let big = 2 * k1 * n;
    let dk = dk_map(k1, n);
    let dsubs = dk.substitution(cap);
    let mirrored: Vec<usize> = ((k1 + 1) * n..2 * k1 * n).collect();
    let jac = jacobian(&v2k.components);
    let col_of = |var: usize| -> Vec<TruncatedSeries> {
        (n..n + d)
            .map(|row| jac.at(row, var).compose(&dsubs))
            .collect()
    };
    let y_vars = choose_columns(&mirrored, d, |cols| {
        let mat = SeriesMatrix::from_rows(
            (0..d)
                .map(|r| cols.iter().map(|&c| col_of(c)[r].clone()).collect())
                .collect(),
        );
        generic_rank(&mat).rank == d
    })
    .ok_or_else(|| {
        CrError::RankDeficiency("no mirrored block achieves full rank (not finite type?)".into())
    })?;

    // Build u-tilde(x, t, y) = u^{2k1} with the substitution: z block -> t,
    // input blocks -> x, mirrored -> mirror(x) (+ y on the chosen slots).
    let r1 = k1 * n;
    let r2 = n;
    let m_solve = r1 + r2 + d;
    let subs: Vec<TruncatedSeries> = (0..big)
        .map(|var| {
            if var < n {
                // z block -> t variables.
                TruncatedSeries::var(m_solve, cap, r1 + var)
            } else if var < (k1 + 1) * n {
                // input blocks -> x variables.
                TruncatedSeries::var(m_solve, cap, var - n)
            } else {
                // Mirrored: the diagonal value, plus y on chosen slots.
                let src = dk.pattern[var].expect("mirrored slots are wired");
                let base = TruncatedSeries::var(m_solve, cap, src);
                match y_vars.iter().position(|&yv| yv == var) {
                    Some(j) => base.add(&TruncatedSeries::var(m_solve, cap, r1 + r2 + j)),
                    None => base,
                }
            }
        })
        .collect();
    let u_tilde: SeriesVector = v2k.u_components().iter().map(|f| f.compose(&subs)).collect();
    let solution = singular_implicit_solve(&u_tilde, r1, r2)?;
    let delta = solution.delta.clone();
    let direction = find_direction(&delta).ok_or(CrError::SingularInversion)?;
    Ok(SegreInversion {
        k1,
        y_vars,
        delta,
        solution,
        direction,
    })
}

fn choose_columns<F>(candidates: &[usize], d: usize, mut ok: F) -> Option<Vec<usize>>
where
    F: FnMut(&[usize]) -> bool,
{
    let total = candidates.len();
    if total < d {
        return None;
    }
    let mut combo: Vec<usize> = (0..d).collect();
    loop {
        let cols: Vec<usize> = combo.iter().map(|&i| candidates[i]).collect();
        if ok(&cols) {
            return Some(cols);
        }
        let mut i = d;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if combo[i] != i + total - d {
                combo[i] += 1;
                for j in i + 1..d {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Scan small rational directions until `delta(t * dir)` is nonzero.
fn find_direction(delta: &TruncatedSeries) -> Option<Vec<GaussianRational>> {
    let m = delta.m;
    let nu = delta.valuation()?;
    let lead = delta.homogeneous_part(nu);
    let try_dir = |dir: &[GaussianRational]| -> bool {
        let mut acc = GaussianRational::zero();
        for (e, c) in &lead.terms {
            let mut t = c.clone();
            for (v, &k) in dir.iter().zip(&e.0) {
                for _ in 0..k {
                    t *= v;
                }
            }
            acc += &t;
        }
        !acc.is_zero()
    };
    // All-ones, then geometric patterns with growing bases.
    let ones: Vec<GaussianRational> = (0..m).map(|_| GaussianRational::one()).collect();
    if try_dir(&ones) {
        return Some(ones);
    }
    for base in 2..40i64 {
        let mut dir = Vec::with_capacity(m);
        let mut cur = GaussianRational::one();
        for _ in 0..m {
            dir.push(cur.clone());
            cur *= &GaussianRational::from_int(base);
        }
        if try_dir(&dir) {
            return Some(dir);
        }
    }
    None
}

/// The exact left inverse of the weighted composition operator at one
/// weighted degree: pivot rows of `g |-> g o F0` restricted to homogeneous
/// monomials, plus the data needed to check consistency of the remaining
/// rows.
pub struct RecoveryOperator {
    pub weighted_degree: usize,
    pub g_exponents: Vec<Exponent>,
    pub row_monomials: Vec<Exponent>,
    pub matrix: Vec<Vec<GaussianRational>>,
    pub pivot_rows: Vec<usize>,
    pub left_inverse: Vec<Vec<GaussianRational>>,
}

impl RecoveryOperator {
    /// Build the operator for weight nu: columns indexed by the y-monomials
    /// of weighted degree nu, rows by the x-monomials of plain degree nu.
    pub fn build(
        leading: &SeriesVector,
        weights: &[usize],
        nu: usize,
    ) -> Result<RecoveryOperator, CrError> {
        let ncomp = leading.len();
        assert_eq!(ncomp, weights.len());
        let l_vars = leading[0].m;
        let g_exponents: Vec<Exponent> = all_weighted_monomials(ncomp, weights, nu);
        let row_monomials = monomials_of_degree(l_vars, nu);
        let mut columns: Vec<Vec<GaussianRational>> = Vec::with_capacity(g_exponents.len());
        for alpha in &g_exponents {
            // (F0)^alpha
            let mut pow = TruncatedSeries::one(l_vars, NO_CAP);
            for (j, &a) in alpha.0.iter().enumerate() {
                for _ in 0..a {
                    pow = pow.mul(&leading[j].with_cap(NO_CAP));
                }
            }
            columns.push(row_monomials.iter().map(|e| pow.coeff(e)).collect());
        }
        let nrows = row_monomials.len();
        let matrix: Vec<Vec<GaussianRational>> = (0..nrows)
            .map(|r| columns.iter().map(|c| c[r].clone()).collect())
            .collect();
        // Injectivity: column rank must be full.
        if scalar_rank(&matrix) != g_exponents.len() {
            return Err(CrError::RecoveryFailure(format!(
                "composition operator not injective at weight {nu}"
            )));
        }
        // Greedy pivot rows forming an invertible square block.
        let mut pivot_rows = Vec::new();
        let mut chosen: Vec<Vec<GaussianRational>> = Vec::new();
        for r in 0..nrows {
            if pivot_rows.len() == g_exponents.len() {
                break;
            }
            let mut cand = chosen.clone();
            cand.push(matrix[r].clone());
            if scalar_rank(&cand) > chosen.len() {
                chosen = cand;
                pivot_rows.push(r);
            }
        }
        let block: Vec<Vec<GaussianRational>> =
            pivot_rows.iter().map(|&r| matrix[r].clone()).collect();
        let left_inverse = crate::manifold::invert_scalar_matrix(&block)
            .ok_or_else(|| CrError::RecoveryFailure("pivot block inversion".into()))?;
        Ok(RecoveryOperator {
            weighted_degree: nu,
            g_exponents,
            row_monomials,
            matrix,
            pivot_rows,
            left_inverse,
        })
    }

    /// Solve for the weight-nu coefficients from the degree-nu part of the
    /// right-hand side, returning the coefficients and the consistency
    /// residuals of the non-pivot rows (zero when the system is solvable).
    pub fn apply(
        &self,
        rhs: &TruncatedSeries,
    ) -> (Vec<TruncatedSeries>, Vec<TruncatedSeries>) {
        // rhs is a series whose coefficients on the row monomials feed the
        // solve; in the symbolic route rhs coefficients are polynomials in
        // extra variables, so everything stays series-valued.
        let zero_exp_part = |e: &Exponent| -> TruncatedSeries { coefficient_slice(rhs, e) };
        let rows: Vec<TruncatedSeries> = self.row_monomials.iter().map(zero_exp_part).collect();
        let mut g_vals = Vec::with_capacity(self.g_exponents.len());
        for col in 0..self.g_exponents.len() {
            let mut acc = TruncatedSeries::zero(rhs.m, rhs.cap);
            for (t, &r) in self.pivot_rows.iter().enumerate() {
                acc = acc.add(&rows[r].scale(&self.left_inverse[col][t]));
            }
            g_vals.push(acc);
        }
        // Consistency: every row must equal the matrix-recombination.
        let mut residuals = Vec::new();
        for (r, row_val) in rows.iter().enumerate() {
            let mut expect = TruncatedSeries::zero(rhs.m, rhs.cap);
            for (col, g) in g_vals.iter().enumerate() {
                expect = expect.add(&g.scale(&self.matrix[r][col]));
            }
            let res = row_val.sub(&expect);
            if !res.is_zero() {
                residuals.push(res);
            }
        }
        (g_vals, residuals)
    }
}

/// The coefficient of the monomial `e` in the leading ring variables,
/// as a series in the remaining variables (identity on rings without extra
/// variables: then the result is a constant series).
fn coefficient_slice(f: &TruncatedSeries, e: &Exponent) -> TruncatedSeries {
    let l = e.len();
    let mut out = TruncatedSeries::zero(f.m, f.cap);
    for (ee, c) in &f.terms {
        if ee.0[..l] == e.0[..] {
            let mut rest = ee.0.clone();
            rest[..l].fill(0);
            out.terms.insert(Exponent(rest), c.clone());
        }
    }
    out
}

fn all_weighted_monomials(ncomp: usize, weights: &[usize], nu: usize) -> Vec<Exponent> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; ncomp];
    fn rec(
        weights: &[usize],
        pos: usize,
        left: usize,
        cur: &mut Vec<u32>,
        out: &mut Vec<Exponent>,
    ) {
        if pos == weights.len() {
            if left == 0 {
                out.push(Exponent(cur.clone()));
            }
            return;
        }
        let w = weights[pos];
        let max = left / w;
        for k in 0..=max {
            cur[pos] = k as u32;
            rec(weights, pos + 1, left - k * w, cur, out);
        }
        cur[pos] = 0;
    }
    rec(weights, 0, nu, &mut cur, &mut out);
    out.sort();
    out
}

/// Recover the coefficients of `g` from `h = g o F` up to weighted degree
/// `nu_max`, by induction on the weight. `F` must have homogeneous leading
/// parts of the stated weights with jointly full generic rank.
pub fn recover_coefficients(
    f_map: &SeriesVector,
    weights: &[usize],
    h: &TruncatedSeries,
    nu_max: usize,
) -> Result<BTreeMap<Exponent, GaussianRational>, CrError> {
    let leading = leading_parts(f_map, weights)?;
    let ncomp = f_map.len();
    let mut g: BTreeMap<Exponent, GaussianRational> = BTreeMap::new();
    // acc = sum of recovered terms composed with the full F.
    let l_vars = f_map[0].m;
    let cap = h.cap;
    let mut acc = TruncatedSeries::zero(l_vars, cap);
    for nu in 1..=nu_max {
        let op = RecoveryOperator::build(&leading, weights, nu)?;
        if op.g_exponents.is_empty() {
            continue;
        }
        let rhs = h.sub(&acc).homogeneous_part(nu);
        let (vals, residuals) = op.apply(&rhs);
        if !residuals.is_empty() {
            return Err(CrError::RecoveryFailure(format!(
                "inconsistent rows at weight {nu}"
            )));
        }
        let mut partial = TruncatedSeries::zero(ncomp, cap);
        for (alpha, v) in op.g_exponents.iter().zip(&vals) {
            let c = v.eval_at_zero();
            if !c.is_zero() {
                g.insert(alpha.clone(), c.clone());
                partial.terms.insert(alpha.clone(), c);
            }
        }
        if !partial.is_zero() {
            acc = acc.add(&partial.compose(f_map));
        }
    }
    Ok(g)
}

/// The per-component homogeneous leading parts of the stated weights; errors
/// when a component reaches below its weight.
pub fn leading_parts(f_map: &SeriesVector, weights: &[usize]) -> Result<SeriesVector, CrError> {
    f_map
        .iter()
        .zip(weights)
        .map(|(f, &w)| {
            if let Some(v) = f.valuation() {
                if v < w {
                    return Err(CrError::RecoveryFailure(format!(
                        "component valuation {v} below its weight {w}"
                    )));
                }
            }
            Ok(f.homogeneous_part(w))
        })
        .collect()
}

/// The weights of the parametrization target: 1 on the z block and the
/// valuation of each component of `u^{k1}` on the w block.
pub fn parametrization_weights(v: &SegreMap) -> Result<Vec<usize>, CrError> {
    let mut weights = vec![1usize; v.n];
    for u in v.u_components() {
        let val = u
            .valuation()
            .ok_or_else(|| CrError::RecoveryFailure("vanishing Segre component".into()))?;
        weights.push(val);
    }
    Ok(weights)
}

/// Everything fixed by the pair of manifolds and the index choice, reused
/// across parametrization runs.
pub struct Parametrization {
    pub psi: PsiEvaluator,
    pub k1: usize,
    pub ell0: usize,
    /// Manifolds renormalized at the internal cap.
    pub m_src: FormalSubmanifold,
    pub m_dst: FormalSubmanifold,
}

impl Parametrization {
    /// `out_degree` bounds both the degree to which the parametrized map is
    /// produced and the internal caps.
    pub fn new(
        m_src: &FormalSubmanifold,
        m_dst: &FormalSubmanifold,
        jtilde: &[usize],
        ell0: usize,
        out_degree: usize,
    ) -> Result<Parametrization, CrError> {
        let verdict = crate::segre::finite_type_segre(m_src);
        let k1 = verdict.k1.ok_or(CrError::NotFiniteType)?;
        // Leading parts must also reach full rank at k1 for the recovery.
        let k1 = (k1..=m_src.d + 1)
            .find(|&k| {
                let v = segre_map(m_src, k);
                let Ok(weights) = parametrization_weights(&v) else {
                    return false;
                };
                let Ok(lead) = leading_parts(&v.components, &weights) else {
                    return false;
                };
                generic_rank(&jacobian(&lead)).rank == m_src.ambient()
            })
            .ok_or_else(|| {
                CrError::RecoveryFailure("no order with full-rank leading parts".into())
            })?;
        let jet_order = 2 * k1 * ell0;
        // Internal cap: enough for the weighted recovery of every
        // coefficient of plain order <= jet_order, for the scaled division,
        // and for the chain's derivative losses.
        let v_k1 = segre_map(m_src, k1);
        let weights = parametrization_weights(&v_k1)?;
        let wmax = *weights.iter().max().unwrap();
        let recovery_need = jet_order * wmax;
        // The t-division triples the degree per unit of delta valuation; the
        // direction valuation is only known after inversion, so reserve the
        // common case s = 1 and grow on demand in phi_hat.
        let cap_int = recovery_need.max(3 * out_degree) + jet_order + 2;
        let m_src_i = m_src.renormalized(cap_int)?;
        let m_dst_i = m_dst.renormalized(cap_int)?;
        let psi = PsiEvaluator::new(&m_src_i, &m_dst_i, jtilde, ell0, jet_order - ell0)?;
        Ok(Parametrization {
            psi,
            k1,
            ell0,
            m_src: m_src_i,
            m_dst: m_dst_i,
        })
    }

    /// Extend a jet of order `k1 * ell0` to order `2 k1 * ell0` by
    /// transporting it along `v^{k1}` and recovering the higher
    /// coefficients.
    pub fn extend_jet(&self, jet0: &Jet) -> Result<Jet, CrError> {
        let k1 = self.k1;
        let ell0 = self.ell0;
        assert_eq!(jet0.order, k1 * ell0, "seed must have order k1 * ell0");
        let cap = self.m_src.cap;
        let xi = xi_map(&self.psi, jet0, k1, cap)?;
        let v_k1 = segre_map(&self.m_src, k1);
        let weights = parametrization_weights(&v_k1)?;
        let wmax = *weights.iter().max().unwrap();
        let target_order = 2 * k1 * ell0;
        let mut out = jet0.clone();
        out.order = target_order;
        for (c, comp) in xi.iter().enumerate() {
            let g = recover_coefficients(&v_k1.components, &weights, comp, target_order * wmax)?;
            for (e, val) in g {
                if e.degree() > target_order || e.degree() <= jet0.order {
                    continue;
                }
                let deriv = (&val).mul(&factorial_big(&e));
                if deriv.is_zero() {
                    continue;
                }
                if c < self.m_dst.n {
                    out.f_derivs
                        .entry(e.clone())
                        .or_insert_with(|| vec![GaussianRational::zero(); self.m_dst.n])[c] = deriv;
                } else {
                    out.g_derivs
                        .entry(e.clone())
                        .or_insert_with(|| vec![GaussianRational::zero(); self.m_dst.d])
                        [c - self.m_dst.n] = deriv;
                }
            }
        }
        Ok(out)
    }

    /// Produce the parametrized map from a jet of order `2 k1 ell0`: the
    /// transported composite along `v^{2 k1}` is restricted to a line in the
    /// diagonal parameters, the scaled inversion substitutes the fresh
    /// variables, and the constant terms of the divided coefficients
    /// assemble the map. The cancellation of every other term is verified
    /// exactly and failing it flags the jet as not realized by a map.
    pub fn phi_hat(&self, jet_ext: &Jet, out_degree: usize) -> Result<FormalMap, CrError> {
        let k1 = self.k1;
        let n = self.m_src.n;
        let d = self.m_src.d;
        let cap = self.m_src.cap;
        assert_eq!(jet_ext.order, 2 * k1 * self.ell0);
        let xi = xi_map(&self.psi, jet_ext, 2 * k1, cap)?;
        let inv = invert_segre(&self.m_src, k1)?;
        // Gamma-hat ring: (z-hat(n), w-hat(d), t).
        let mg = n + d + 1;
        let tvar = TruncatedSeries::var(mg, cap, n + d);
        // delta-tilde(t) and theta composed on the line.
        let r1 = k1 * n;
        let line: Vec<TruncatedSeries> = (0..r1)
            .map(|i| tvar.scale(&inv.direction[i]))
            .collect();
        let delta_t = inv.delta.compose(&line);
        if delta_t.is_zero() {
            return Err(CrError::SingularInversion);
        }
        let s_val = delta_t.valuation().unwrap();
        let delta_sq = delta_t.mul(&delta_t);
        // theta(x, t', w') with x on the line, t' = z-hat, w' = w-hat.
        let theta_line: SeriesVector = inv
            .solution
            .theta
            .iter()
            .map(|th| {
                let subs: Vec<TruncatedSeries> = line
                    .iter()
                    .cloned()
                    .chain((0..n).map(|i| TruncatedSeries::var(mg, cap, i)))
                    .chain((0..d).map(|j| TruncatedSeries::var(mg, cap, n + j)))
                    .collect();
                th.compose(&subs)
            })
            .collect();
        // Substitute into Xi: z block -> delta^2 z-hat, input blocks -> line,
        // mirrored -> line value (+ delta * theta on chosen slots).
        let dk = dk_map(k1, n);
        let big = 2 * k1 * n;
        let subs: Vec<TruncatedSeries> = (0..big)
            .map(|var| {
                if var < n {
                    delta_sq.mul(&TruncatedSeries::var(mg, cap, var))
                } else if var < (k1 + 1) * n {
                    line[var - n].clone()
                } else {
                    let src = dk.pattern[var].expect("mirrored slots are wired");
                    let base = line[src].clone();
                    match inv.y_vars.iter().position(|&yv| yv == var) {
                        Some(j) => base.add(&delta_t.mul(&theta_line[j])),
                        None => base,
                    }
                }
            })
            .collect();
        let gamma_hat: SeriesVector = xi.iter().map(|f| f.compose(&subs)).collect();
        // Extract the t-coefficients per (z-hat, w-hat) monomial, divide by
        // the scaled determinant power, and keep the constant term.
        let mut comps: SeriesVector =
            vec![TruncatedSeries::zero(n + d, out_degree); self.m_dst.ambient()];
        for (c, gc) in gamma_hat.iter().enumerate() {
            // Collect R(t) per monomial.
            let mut per_mono: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
            for (e, coeff) in &gc.terms {
                let zw = Exponent(e.0[..n + d].to_vec());
                if zw.degree() > out_degree {
                    continue;
                }
                let tdeg = e.0[n + d];
                per_mono
                    .entry(zw)
                    .or_insert_with(|| TruncatedSeries::zero(1, cap))
                    .terms
                    .insert(Exponent(vec![tdeg]), coeff.clone());
            }
            for (zw, r_t) in per_mono {
                let deg = zw.degree();
                let k_pow = 2 * deg;
                // delta_t^(2 deg) in the t ring.
                let mut p = TruncatedSeries::one(1, cap);
                let delta_1d = {
                    let mut s = TruncatedSeries::zero(1, cap);
                    for (e, cc) in &delta_t.terms {
                        s.terms.insert(Exponent(vec![e.0[n + d]]), cc.clone());
                    }
                    s
                };
                for _ in 0..k_pow {
                    p = p.mul(&delta_1d);
                }
                let v_p = k_pow * s_val;
                let lead = p.coeff(&Exponent(vec![v_p as u32]));
                debug_assert!(!lead.is_zero());
                let t0 = (&r_t.coeff(&Exponent(vec![v_p as u32]))).mul(&lead.inv());
                // Cancellation: R(t) must be exactly t0 * delta^(2 deg).
                let residual = r_t.sub(&p.scale(&t0));
                if !residual.is_zero() {
                    return Err(CrError::CancellationFailure(format!(
                        "component {c}, monomial {zw:?}"
                    )));
                }
                if !t0.is_zero() && deg >= 1 {
                    comps[c].terms.insert(zw, t0);
                }
            }
        }
        Ok(FormalMap::new(
            comps,
            self.m_src.n,
            self.m_src.d,
            self.m_dst.n,
            self.m_dst.d,
        ))
    }

    /// The composed pipeline: a jet of order `k1 ell0` determines the map.
    /// Besides the scaled-division cancellation, the produced map must
    /// reproduce the input jet; jets of actual maps do, and the mismatch is
    /// the self-consistency diagnostic for everything else.
    pub fn full_parametrization(&self, jet0: &Jet, out_degree: usize) -> Result<FormalMap, CrError> {
        let ext = self.extend_jet(jet0)?;
        let phi = self.phi_hat(&ext, out_degree)?;
        if out_degree >= jet0.order && crate::mapping::jet(&phi, jet0.order) != *jet0 {
            return Err(CrError::CancellationFailure(
                "parametrized map does not reproduce the input jet".into(),
            ));
        }
        Ok(phi)
    }
}

/// One cleared polynomial equation of the jet variety.
#[derive(Clone, Debug)]
pub struct VarietyEquation {
    /// Polynomial in the jet block variables only (the ring has
    /// 2 * coords + 2 variables; the q symbols are cleared away).
    pub poly: TruncatedSeries,
    pub cleared_q: usize,
    pub cleared_qbar: usize,
    pub kind: &'static str,
}

/// The emitted system for one index choice.
pub struct JetVarietySystem {
    pub jtilde: Vec<usize>,
    pub layout: JetLayout,
    pub equations: Vec<VarietyEquation>,
    /// Pure-z G derivatives are pinned to zero up to the jet order.
    pub lambda_dp_zero: Vec<(usize, Exponent)>,
    /// The exclusion polynomial: jets with P = 0 are outside this chart.
    pub exclusion: TruncatedSeries,
    pub truncation_degree: usize,
}

/// Emit the polynomial equations satisfied exactly by the jets of CR
/// submersive maps, for one index choice: per-level transport consistency,
/// recovery consistency, and the mapping-equation residuals of the candidate
/// map truncated at the stated degree, all with the determinant powers
/// cleared.
pub fn jet_variety_equations(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    jtilde: &[usize],
    ell0: usize,
    truncation_degree: usize,
) -> Result<JetVarietySystem, CrError> {
    let verdict = crate::segre::finite_type_segre(m_src);
    let k1 = verdict.k1.ok_or(CrError::NotFiniteType)?;
    let jet_order = k1 * ell0;
    let n = m_src.n;
    let d = m_src.d;
    let layout = JetLayout::new(n, d, m_dst.n, m_dst.d, jet_order);
    // Internal cap: recovery of coefficients to the truncation degree plus
    // chain losses.
    let v_k1 = segre_map(m_src, k1);
    let weights = parametrization_weights(&v_k1)?;
    let wmax = *weights.iter().max().unwrap();
    let recover_to = truncation_degree.max(jet_order);
    // Total-degree caps count jet-block degrees too, so the ring budget
    // needs headroom for the polynomial degree the jet variables accumulate
    // through the chain and the recovery.
    let ring_need = recover_to * wmax + jet_order + 2;
    let cap_int = 3 * ring_need;
    let m_src_i = m_src.renormalized(cap_int)?;
    let m_dst_i = m_dst.renormalized(cap_int)?;
    let psi = PsiEvaluator::new(&m_src_i, &m_dst_i, jtilde, ell0, jet_order - ell0)?;
    let jb = layout.block_size();
    let mut equations: Vec<VarietyEquation> = Vec::new();

    // Symbolic transport to level k1.
    let chain = run_chain(&psi, &ChainMode::Symbolic(&layout), jet_order, k1, cap_int)?;
    for (_, _, _, disc) in &chain.consistency {
        // The discrepancy lives in a level ring; strip the (empty) ring part.
        let ring_vars = disc.m - jb;
        let stripped = strip_ring(disc, ring_vars, jb);
        push_cleared(&mut equations, &layout, jtilde, stripped, "jet-consistency");
    }
    let xi: SeriesVector = chain
        .levels
        .last()
        .unwrap()
        .values
        .get(&Exponent::zero(m_src.ambient()))
        .unwrap()
        .clone();
    let ring_xi = k1 * n;

    // Recovery: candidate coefficients for 1 <= |beta| <= recover_to, as
    // jet-block polynomials; consistency rows are equations.
    let v_k1_i = segre_map(&m_src_i, k1);
    let weights = parametrization_weights(&v_k1_i)?;
    let leading = leading_parts(&v_k1_i.components, &weights)?;
    // The recovery operates on the xi components in the (ring_xi + jb)
    // ring; the F-powers must be embedded there.
    let f_emb: SeriesVector = v_k1_i
        .components
        .iter()
        .map(|f| f.embed(ring_xi + jb, &(0..ring_xi).collect::<Vec<_>>()))
        .collect();
    let mut candidate: Vec<BTreeMap<Exponent, TruncatedSeries>> =
        vec![BTreeMap::new(); m_dst.ambient()];
    for (c, comp) in xi.iter().enumerate() {
        let mut acc = TruncatedSeries::zero(ring_xi + jb, cap_int);
        let mut got: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
        for nu in 1..=recover_to * wmax {
            // The operator rows are monomials in the ring variables only;
            // the jet block rides along inside the coefficients.
            let op = RecoveryOperator::build(&leading, &weights, nu)?;
            if op.g_exponents.is_empty() {
                continue;
            }
            let rhs = ring_homogeneous_part(&comp.sub(&acc), ring_xi, nu);
            let (vals, residuals) = op.apply(&rhs);
            for res in residuals {
                let stripped = strip_ring_all(&res, ring_xi, jb);
                for eq in stripped {
                    push_cleared(&mut equations, &layout, jtilde, eq, "recovery-consistency");
                }
            }
            let mut partial_exps = Vec::new();
            for (alpha, v) in op.g_exponents.iter().zip(&vals) {
                if alpha.degree() <= recover_to && !v.is_zero() {
                    got.insert(alpha.clone(), v.clone());
                }
                partial_exps.push((alpha.clone(), v.clone()));
            }
            // acc += sum recovered * F^alpha
            for (alpha, v) in partial_exps {
                if v.is_zero() {
                    continue;
                }
                let mut pow = TruncatedSeries::one(ring_xi + jb, cap_int);
                for (j, &a) in alpha.0.iter().enumerate() {
                    for _ in 0..a {
                        pow = pow.mul(&f_emb[j]);
                    }
                }
                acc = acc.add(&pow.mul(&v));
            }
        }
        candidate[c] = got;
    }
    // Low-order self-consistency: the recovered coefficients at orders up to
    // the jet order must reproduce the jet coordinates.
    for (c, got) in candidate.iter().enumerate() {
        for e in monomials_up_to(n + d, jet_order) {
            let recovered = got
                .get(&e)
                .cloned()
                .unwrap_or_else(|| TruncatedSeries::zero(ring_xi + jb, cap_int));
            let scaled = recovered.scale(&factorial_big(&e));
            let target = match layout.lambda_var(ring_xi, c, &e) {
                Some(v) => TruncatedSeries::var(ring_xi + jb, cap_int, v),
                None => TruncatedSeries::zero(ring_xi + jb, cap_int),
            };
            let disc = scaled.sub(&target);
            if !disc.is_zero() {
                let stripped = strip_ring(&disc, ring_xi, jb);
                push_cleared(&mut equations, &layout, jtilde, stripped, "jet-self-consistency");
            }
        }
    }

    // Mapping-equation residuals of the candidate map up to the truncation
    // degree, in the double ring extended by the jet block.
    {
        let mring = 2 * m_src.ambient();
        let m_ext = mring + jb;
        // Ring-degree budget is the truncation degree; every residual factor
        // of positive ring degree carries at most dj jet degrees, so the
        // total-degree cap reserves that headroom.
        let dj: usize = candidate
            .iter()
            .flat_map(|got| got.values())
            .flat_map(|v| v.terms.keys())
            .map(|e| e.0[ring_xi..].iter().map(|&u| u as usize).sum())
            .max()
            .unwrap_or(0)
            .max(1);
        let cap_eq = truncation_degree * (1 + dj) + 1;
        // Build H as series in (z, w) + jet block.
        let hvars = n + d;
        let mut h_comps: SeriesVector =
            vec![TruncatedSeries::zero(hvars + jb, cap_int); m_dst.ambient()];
        for (c, comp) in h_comps.iter_mut().enumerate() {
            for e in monomials_up_to(hvars, recover_to) {
                let coeff: TruncatedSeries = if e.degree() <= jet_order {
                    match layout.lambda_var(hvars, c, &e) {
                        Some(v) => TruncatedSeries::var(hvars + jb, cap_int, v)
                            .scale(&factorial_big(&e).inv()),
                        None => continue,
                    }
                } else {
                    let got = candidate[c].get(&e);
                    match got {
                        Some(v) => {
                            // Recovered values live in the xi ring; move the
                            // jet block over.
                            let map: Vec<usize> = (0..ring_xi + jb)
                                .map(|t| if t < ring_xi { 0 } else { t - ring_xi + hvars })
                                .collect();
                            debug_assert!((0..ring_xi).all(|t| v.is_free_of(t)));
                            v.embed(hvars + jb, &map)
                        }
                        None => continue,
                    }
                };
                if coeff.is_zero() {
                    continue;
                }
                // Multiply the coefficient by the monomial in (z, w).
                let mono = TruncatedSeries::monomial(
                    hvars + jb,
                    cap_int,
                    {
                        let mut v = vec![0u32; hvars + jb];
                        v[..hvars].copy_from_slice(&e.0);
                        Exponent(v)
                    },
                    GaussianRational::one(),
                );
                *comp = comp.add(&mono.mul(&coeff));
            }
        }
        // Move into the extended double ring: holomorphic side on (z, w),
        // conjugate side on (chi, tau) with the jet block swapped.
        let up: Vec<usize> = (0..hvars).chain((0..jb).map(|i| mring + i)).collect();
        let f_emb: SeriesVector = h_comps.iter().map(|f| f.embed(m_ext, &up)).collect();
        let bar_up: Vec<usize> = (m_src.ambient()..mring)
            .chain((0..jb).map(|i| mring + i))
            .collect();
        let fbar_emb: SeriesVector = h_comps
            .iter()
            .map(|f| layout.conj_swap(f, hvars).embed(m_ext, &bar_up))
            .collect();
        // Q'(F, F-bar, G-bar) with slots from the candidate.
        let zero = TruncatedSeries::zero(m_ext, cap_eq);
        let subs_q: Vec<TruncatedSeries> = f_emb[..m_dst.n]
            .iter()
            .cloned()
            .chain((0..m_dst.d).map(|_| zero.clone()))
            .chain(fbar_emb[..m_dst.n].iter().cloned())
            .chain(fbar_emb[m_dst.n..].iter().cloned())
            .collect();
        let src_up: Vec<usize> = (0..mring).collect();
        let q_src: SeriesVector = m_src_i
            .q
            .iter()
            .map(|f| f.truncate(cap_eq).embed(m_ext, &src_up))
            .collect();
        for j in 0..m_dst.d {
            let rhs = m_dst_i.q[j].truncate(cap_eq).compose(&subs_q);
            let residual = f_emb[m_dst.n + j].truncate(cap_eq).sub(&rhs);
            // Reduce w = Q(z, chi, tau).
            let mut subs: Vec<TruncatedSeries> = (0..m_ext)
                .map(|i| TruncatedSeries::var(m_ext, cap_eq, i))
                .collect();
            for t in 0..d {
                subs[n + t] = q_src[t].clone();
            }
            let reduced = residual.compose(&subs);
            // Every (z, chi, tau)-coefficient up to the truncation degree is
            // an equation.
            let mut kept = TruncatedSeries::zero(m_ext, cap_eq);
            for (e, c) in &reduced.terms {
                let rd: u32 = e.0[..mring].iter().sum();
                if (rd as usize) <= truncation_degree {
                    kept.terms.insert(e.clone(), c.clone());
                }
            }
            let eqs = strip_ring_all(&kept, mring, jb);
            for eq in eqs {
                push_cleared(&mut equations, &layout, jtilde, eq, "mapping-equation");
            }
        }
    }

    let lambda_dp_zero: Vec<(usize, Exponent)> = (m_dst.n..m_dst.ambient())
        .flat_map(|c| {
            monomials_up_to(n + d, jet_order)
                .into_iter()
                .filter(|e| e.0[n..].iter().all(|&v| v == 0))
                .map(move |e| (c, e))
        })
        .collect();
    let exclusion = layout.p_polynomial(0, jtilde, cap_int);
    Ok(JetVarietySystem {
        jtilde: jtilde.to_vec(),
        layout,
        equations,
        lambda_dp_zero,
        exclusion,
        truncation_degree,
    })
}

/// Homogeneous part with respect to the ring variables only: jet-block
/// degrees do not count toward the degree.
fn ring_homogeneous_part(f: &TruncatedSeries, ring_vars: usize, nu: usize) -> TruncatedSeries {
    let mut out = TruncatedSeries::zero(f.m, f.cap);
    for (e, c) in &f.terms {
        let rd: u32 = e.0[..ring_vars].iter().sum();
        if rd as usize == nu {
            out.terms.insert(e.clone(), c.clone());
        }
    }
    out
}

/// Extract the jet-block-only part of a series whose ring part vanishes
/// (asserts the rest is zero on the ring variables).
fn strip_ring(f: &TruncatedSeries, ring_vars: usize, jb: usize) -> TruncatedSeries {
    let mut out = TruncatedSeries::zero(jb, NO_CAP);
    for (e, c) in &f.terms {
        assert!(
            e.0[..ring_vars].iter().all(|&v| v == 0),
            "equation carries ring variables"
        );
        out.terms.insert(Exponent(e.0[ring_vars..].to_vec()), c.clone());
    }
    out
}

/// Split a series into one jet-block polynomial per ring monomial.
fn strip_ring_all(f: &TruncatedSeries, ring_vars: usize, jb: usize) -> Vec<TruncatedSeries> {
    let mut by_mono: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
    for (e, c) in &f.terms {
        let ring_part = Exponent(e.0[..ring_vars].to_vec());
        let block_part = Exponent(e.0[ring_vars..].to_vec());
        by_mono
            .entry(ring_part)
            .or_insert_with(|| TruncatedSeries::zero(jb, NO_CAP))
            .terms
            .insert(block_part, c.clone());
    }
    by_mono.into_values().collect()
}

/// Clear the q symbols: multiply by the determinant polynomials to the
/// maximal power present, and substitute.
fn push_cleared(
    equations: &mut Vec<VarietyEquation>,
    layout: &JetLayout,
    jtilde: &[usize],
    eq: TruncatedSeries,
    kind: &'static str,
) {
    if eq.is_zero() {
        return;
    }
    let k = layout.coords.len();
    let qv = 2 * k;
    let qbv = 2 * k + 1;
    let max_q = eq.max_degree_in_var(qv) as usize;
    let max_qb = eq.max_degree_in_var(qbv) as usize;
    // P and P-bar as jet-block polynomials. The determinant uses the
    // first-order lambda variables; rebuild it in the block-only ring.
    let p = layout.p_polynomial(0, jtilde, NO_CAP);
    let pbar = layout.conj_swap(&p, 0);
    let mut out = TruncatedSeries::zero(eq.m, NO_CAP);
    for (e, c) in &eq.terms {
        let dq = e.0[qv] as usize;
        let dqb = e.0[qbv] as usize;
        let mut term = TruncatedSeries::monomial(
            eq.m,
            NO_CAP,
            {
                let mut v = e.0.clone();
                v[qv] = 0;
                v[qbv] = 0;
                Exponent(v)
            },
            c.clone(),
        );
        for _ in 0..max_q - dq {
            term = term.mul(&p);
        }
        for _ in 0..max_qb - dqb {
            term = term.mul(&pbar);
        }
        out = out.add(&term);
    }
    equations.push(VarietyEquation {
        poly: out,
        cleared_q: max_q,
        cleared_qbar: max_qb,
        kind,
    });
}

impl JetVarietySystem {
    /// Evaluate every equation at a concrete jet; the result lists the
    /// violated equations (index, value) and the violated pure-z G
    /// derivatives.
    pub fn evaluate_at(&self, jet: &Jet) -> (Vec<(usize, GaussianRational)>, bool) {
        let k = self.layout.coords.len();
        let mut point = Vec::with_capacity(2 * k + 2);
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp));
        }
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp).conj());
        }
        point.push(GaussianRational::zero());
        point.push(GaussianRational::zero());
        let mut violated = Vec::new();
        for (i, eq) in self.equations.iter().enumerate() {
            let mut acc = GaussianRational::zero();
            for (e, c) in &eq.poly.terms {
                let mut t = c.clone();
                for (v, &kk) in point.iter().zip(&e.0) {
                    for _ in 0..kk {
                        t *= v;
                    }
                }
                acc += &t;
            }
            if !acc.is_zero() {
                violated.push((i, acc));
            }
        }
        let dp_ok = self
            .lambda_dp_zero
            .iter()
            .all(|(c, e)| jet.deriv(e, *c).is_zero());
        (violated, !dp_ok)
    }

    /// Exclusion value: jets with P = 0 lie outside this chart.
    pub fn exclusion_at(&self, jet: &Jet) -> GaussianRational {
        let k = self.layout.coords.len();
        let mut point = Vec::with_capacity(2 * k + 2);
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp));
        }
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp).conj());
        }
        point.push(GaussianRational::zero());
        point.push(GaussianRational::zero());
        let mut acc = GaussianRational::zero();
        for (e, c) in &self.exclusion.terms {
            let mut t = c.clone();
            for (v, &kk) in point.iter().zip(&e.0) {
                for _ in 0..kk {
                    t *= v;
                }
            }
            acc += &t;
        }
        acc
    }

    /// One equation per line, coefficients as exact rational pairs.
    pub fn render(&self) -> String {
        let mut names: Vec<String> = Vec::new();
        for (comp, e) in &self.layout.coords {
            let block = if *comp < self.layout.n_dst {
                format!("F{}", comp + 1)
            } else {
                format!("G{}", comp - self.layout.n_dst + 1)
            };
            names.push(format!("L[{block};{:?}]", e.0));
        }
        for (comp, e) in &self.layout.coords {
            let block = if *comp < self.layout.n_dst {
                format!("F{}", comp + 1)
            } else {
                format!("G{}", comp - self.layout.n_dst + 1)
            };
            names.push(format!("Lbar[{block};{:?}]", e.0));
        }
        names.push("q".into());
        names.push("qbar".into());
        let mut out = String::new();
        for (c, e) in &self.lambda_dp_zero {
            out.push_str(&format!(
                "zero: L[G{};{:?}] = 0\n",
                c - self.layout.n_dst + 1,
                e.0
            ));
        }
        for eq in &self.equations {
            out.push_str(&format!(
                "{} (cleared q^{} qbar^{}): {} = 0\n",
                eq.kind,
                eq.cleared_q,
                eq.cleared_qbar,
                eq.poly.format_with(&names)
            ));
        }
        out.push_str(&format!(
            "exclusion: {} != 0\n",
            self.exclusion.format_with(&names)
        ));
        out
    }
}

/// Emit the systems for every index choice, threading the choice into the
/// clearing step.
pub fn jet_variety_all_charts(
    m_src: &FormalSubmanifold,
    m_dst: &FormalSubmanifold,
    ell0: usize,
    truncation_degree: usize,
) -> Result<Vec<JetVarietySystem>, CrError> {
    let n = m_src.n;
    let n2 = m_dst.n;
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..n2).collect();
    loop {
        out.push(jet_variety_equations(
            m_src,
            m_dst,
            &combo,
            ell0,
            truncation_degree,
        )?);
        let mut i = n2;
        let done = loop {
            if i == 0 {
                break true;
            }
            i -= 1;
            if combo[i] != i + n - n2 {
                combo[i] += 1;
                for j in i + 1..n2 {
                    combo[j] = combo[j - 1] + 1;
                }
                break false;
            }
        };
        if done {
            break;
        }
    }
    Ok(out)
}

impl JetVarietySystem {
    /// Conjugation structure: swapping the two variable halves of an
    /// equation and conjugating its coefficients evaluates, at any jet, to
    /// the conjugate of the original value.
    pub fn conjugation_respected(&self, jet: &Jet) -> bool {
        let k = self.layout.coords.len();
        let mut point = Vec::with_capacity(2 * k + 2);
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp));
        }
        for (comp, e) in &self.layout.coords {
            point.push(jet.deriv(e, *comp).conj());
        }
        point.push(GaussianRational::zero());
        point.push(GaussianRational::zero());
        let eval = |poly: &TruncatedSeries| -> GaussianRational {
            let mut acc = GaussianRational::zero();
            for (e, c) in &poly.terms {
                let mut t = c.clone();
                for (v, &kk) in point.iter().zip(&e.0) {
                    for _ in 0..kk {
                        t *= v;
                    }
                }
                acc += &t;
            }
            acc
        };
        self.equations.iter().all(|eq| {
            let swapped = self.layout.conj_swap(&eq.poly, 0);
            eval(&swapped) == eval(&eq.poly).conj()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::mapping::jet;
    use crate::reflection::PsiEvaluator;
    use crate::scalar::GaussianRational as Q;
    use crate::series::TruncatedSeries as S;

    #[test]
    fn xi_identity_and_dilation() {
        let m = gallery::heisenberg(12);
        let psi = PsiEvaluator::new(&m, &m, &[0], 1, 1).unwrap();
        let id = FormalMap::identity(1, 1, 12);
        let xi = xi_map(&psi, &jet(&id, 2), 2, 12).unwrap();
        let z = S::var(2, 12, 0);
        let c1 = S::var(2, 12, 1);
        assert_eq!(xi[0], z);
        assert_eq!(xi[1], z.mul(&c1).scale(&Q::from_parts(0, 1, 2, 1)));
        let dil = gallery::heisenberg_dilation(12, &Q::from_int(2));
        let xi2 = xi_map(&psi, &jet(&dil, 2), 2, 12).unwrap();
        assert_eq!(xi2[0], z.scale(&Q::from_int(2)));
        assert_eq!(xi2[1], z.mul(&c1).scale(&Q::from_parts(0, 1, 8, 1)));
    }

    #[test]
    fn segre_inversion_heisenberg() {
        let m = gallery::heisenberg(10);
        let inv = invert_segre(&m, 2).unwrap();
        // The chosen mirrored slot is the trailing chi block; the scaled
        // determinant is 2 i z^1.
        assert_eq!(inv.y_vars, vec![3]);
        let z1 = S::var(2, 10, 1);
        assert_eq!(inv.delta, z1.scale(&Q::from_parts(0, 1, 2, 1)));
        assert_eq!(inv.direction, vec![Q::one(), Q::one()]);
    }

    #[test]
    fn segre_inversion_back_substitution() {
        // v^{2 k1} composed with the solved substitution returns (z, w):
        // verified in the scaled variables of the inversion.
        for mfd in [gallery::heisenberg(8), gallery::abs_z4(8)] {
            let k1 = crate::segre::finite_type_segre(&mfd).k1.unwrap();
            let n = mfd.n;
            let d = mfd.d;
            let cap = mfd.cap;
            let inv = invert_segre(&mfd, k1).unwrap();
            let v2k = segre_map(&mfd, 2 * k1);
            let dk = dk_map(k1, n);
            let r1 = k1 * n;
            // Ring (x, t', w').
            let msol = r1 + n + d;
            let delta = inv.delta.embed(msol, &(0..r1).collect::<Vec<_>>());
            let dsq = delta.mul(&delta);
            let theta = &inv.solution.theta;
            let subs: Vec<S> = (0..2 * k1 * n)
                .map(|var| {
                    if var < n {
                        dsq.mul(&S::var(msol, cap, r1 + var))
                    } else if var < (k1 + 1) * n {
                        S::var(msol, cap, var - n)
                    } else {
                        let src = dk.pattern[var].unwrap();
                        let base = S::var(msol, cap, src);
                        match inv.y_vars.iter().position(|&yv| yv == var) {
                            Some(j) => base.add(&delta.mul(&theta[j])),
                            None => base,
                        }
                    }
                })
                .collect();
            // z part: identically delta^2 t'.
            for i in 0..n {
                let lhs = v2k.components[i].compose(&subs);
                assert_eq!(lhs, dsq.mul(&S::var(msol, cap, r1 + i)));
            }
            // u part: delta^2 w'.
            for j in 0..d {
                let lhs = v2k.components[n + j].compose(&subs);
                assert_eq!(lhs, dsq.mul(&S::var(msol, cap, r1 + n + j)));
            }
        }
    }

    #[test]
    fn recovery_roundtrip_and_dependence() {
        let m = gallery::heisenberg(10);
        let v2 = segre_map(&m, 2);
        let weights = parametrization_weights(&v2).unwrap();
        assert_eq!(weights, vec![1, 2]);
        // g = w recovers from h = 2 i z chi1.
        let g = recover_coefficients(&v2.components, &weights, &v2.components[1], 4).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(&Exponent(vec![0, 1])), Some(&Q::one()));
        // Round-trip a mixed g.
        let zc = S::var(2, 10, 0);
        let wc = S::var(2, 10, 1);
        let g_in = zc
            .mul(&zc)
            .scale(&Q::from_parts(1, 2, -1, 3))
            .add(&wc.mul(&zc))
            .add(&wc.mul(&wc).scale(&Q::from_int(3)));
        let h = g_in.compose(&v2.components);
        let rec = recover_coefficients(&v2.components, &weights, &h, 6).unwrap();
        for (e, c) in &g_in.terms {
            assert_eq!(rec.get(e), Some(c));
        }
        // Dependence bound: zeroing h above the weighted degree does not
        // change the low-weight coefficients.
        let h_cut = h.truncate(3);
        let rec_cut = recover_coefficients(&v2.components, &weights, &h_cut.with_cap(10), 3);
        if let Ok(rc) = rec_cut {
            for (e, c) in &g_in.terms {
                if e.weighted_degree(&weights) <= 3 {
                    assert_eq!(rc.get(e), Some(c));
                }
            }
        }
    }

    #[test]
    fn parametrization_reproduces_identity_and_parabolic() {
        let m = gallery::heisenberg(8);
        let par = Parametrization::new(&m, &m, &[0], 1, 6).unwrap();
        let id = FormalMap::identity(1, 1, 8);
        let ext = par.extend_jet(&jet(&id, 2)).unwrap();
        assert_eq!(ext, jet(&id, 4));
        assert_eq!(par.phi_hat(&ext, 6).unwrap(), FormalMap::identity(1, 1, 6));
        let h = gallery::heisenberg_parabolic(8, 1, 1);
        let rebuilt = par.full_parametrization(&jet(&h, 2), 6).unwrap();
        assert_eq!(rebuilt, gallery::heisenberg_parabolic(6, 1, 1));
    }

    #[test]
    fn non_jet_fails_cancellation() {
        let m = gallery::heisenberg(8);
        let par = Parametrization::new(&m, &m, &[0], 1, 4).unwrap();
        // Perturbing the second-order G block trips the scaled-division
        // cancellation directly.
        let mut bad = jet(&FormalMap::identity(1, 1, 8), 2);
        bad.g_derivs.insert(Exponent(vec![0, 2]), vec![Q::one()]);
        assert!(par.full_parametrization(&bad, 4).is_err());
        // Perturbing the mixed G derivative passes the division but fails to
        // reproduce its own jet.
        let mut bad2 = jet(&FormalMap::identity(1, 1, 8), 2);
        bad2.g_derivs.insert(Exponent(vec![1, 1]), vec![Q::one()]);
        assert!(par.full_parametrization(&bad2, 4).is_err());
    }

    #[test]
    fn variety_catches_perturbations() {
        let m = gallery::heisenberg(8);
        let sys = jet_variety_equations(&m, &m, &[0], 1, 3).unwrap();
        let id = FormalMap::identity(1, 1, 8);
        let (viol, dp) = sys.evaluate_at(&jet(&id, 2));
        assert!(viol.is_empty() && !dp);
        assert!(sys.conjugation_respected(&jet(&id, 2)));
        let mut j = jet(&id, 2);
        j.g_derivs.insert(Exponent(vec![1, 1]), vec![Q::one()]);
        let (viol, _) = sys.evaluate_at(&j);
        assert!(!viol.is_empty());
        assert!(sys.conjugation_respected(&j));
    }
}
