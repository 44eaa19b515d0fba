//! Wire formats: exact rational coefficients, graph or direct defining
//! series for submanifolds, and polynomial maps.

use crgeo::error::CrError;
use crgeo::linalg::SeriesVector;
use crgeo::manifold::{graph_to_rho, normalize, symmetrize, FormalSubmanifold};
use crgeo::mapping::FormalMap;
use crgeo::scalar::GaussianRational;
use crgeo::series::{Exponent, TruncatedSeries};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RationalPair {
    /// numerator, denominator
    pub re: [i64; 2],
    #[serde(default = "zero_pair")]
    pub im: [i64; 2],
}

fn zero_pair() -> [i64; 2] {
    [0, 1]
}

impl RationalPair {
    pub fn to_scalar(&self) -> Result<GaussianRational, CrError> {
        if self.re[1] == 0 || self.im[1] == 0 {
            return Err(CrError::Input("zero denominator in coefficient".into()));
        }
        Ok(GaussianRational::from_parts(
            self.re[0], self.re[1], self.im[0], self.im[1],
        ))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphTerm {
    pub coeff: RationalPair,
    pub z: Vec<u32>,
    pub zbar: Vec<u32>,
    #[serde(default)]
    pub rew: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoTerm {
    pub coeff: RationalPair,
    #[serde(rename = "Z")]
    pub z_exp: Vec<u32>,
    pub zeta: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Defining {
    /// Im w_j = phi_j(z, z-bar, Re w)
    Graph { components: Vec<Vec<GraphTerm>> },
    /// Direct defining series rho_j(Z, zeta)
    Rho { components: Vec<Vec<RhoTerm>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldInput {
    pub cap: usize,
    pub n: usize,
    pub d: usize,
    pub defining: Defining,
    /// Optional constant unit multiplying every rho component before the
    /// reality check (never applied silently).
    #[serde(default)]
    pub symmetrize: Option<RationalPair>,
}

impl ManifoldInput {
    pub fn build_rho(&self, cap: usize) -> Result<SeriesVector, CrError> {
        if cap < 2 {
            return Err(CrError::Input("cap must be at least 2".into()));
        }
        let n = self.n;
        let d = self.d;
        let rho = match &self.defining {
            Defining::Graph { components } => {
                if components.len() != d {
                    return Err(CrError::Input(format!(
                        "expected {d} graph components, got {}",
                        components.len()
                    )));
                }
                let mg = 2 * n + d;
                let mut phi: SeriesVector = Vec::with_capacity(d);
                for comp in components {
                    let mut s = TruncatedSeries::zero(mg, cap);
                    for t in comp {
                        if t.z.len() != n || t.zbar.len() != n || (t.rew.len() != d && !t.rew.is_empty()) {
                            return Err(CrError::Input("graph exponent arity mismatch".into()));
                        }
                        let mut e = Vec::with_capacity(mg);
                        e.extend(&t.z);
                        e.extend(&t.zbar);
                        if t.rew.is_empty() {
                            e.extend(std::iter::repeat(0).take(d));
                        } else {
                            e.extend(&t.rew);
                        }
                        let exp = Exponent(e);
                        if exp.degree() > cap {
                            return Err(CrError::Input("term degree exceeds the cap".into()));
                        }
                        let c = t.coeff.to_scalar()?;
                        s.terms.insert(exp, c);
                    }
                    phi.push(s);
                }
                graph_to_rho(&phi, n, d)
            }
            Defining::Rho { components } => {
                if components.len() != d {
                    return Err(CrError::Input(format!(
                        "expected {d} rho components, got {}",
                        components.len()
                    )));
                }
                let ambient = n + d;
                let m = 2 * ambient;
                let mut rho: SeriesVector = Vec::with_capacity(d);
                for comp in components {
                    let mut s = TruncatedSeries::zero(m, cap);
                    for t in comp {
                        if t.z_exp.len() != ambient || t.zeta.len() != ambient {
                            return Err(CrError::Input("rho exponent arity mismatch".into()));
                        }
                        let mut e = Vec::with_capacity(m);
                        e.extend(&t.z_exp);
                        e.extend(&t.zeta);
                        let exp = Exponent(e);
                        if exp.degree() > cap {
                            return Err(CrError::Input("term degree exceeds the cap".into()));
                        }
                        s.terms.insert(exp, t.coeff.to_scalar()?);
                    }
                    rho.push(s);
                }
                rho
            }
        };
        Ok(match &self.symmetrize {
            Some(u) => symmetrize(&rho, &u.to_scalar()?),
            None => rho,
        })
    }

    pub fn build(&self, cap_override: Option<usize>) -> Result<FormalSubmanifold, CrError> {
        let cap = cap_override.unwrap_or(self.cap);
        let rho = self.build_rho(cap)?;
        normalize(&rho, self.n, self.d)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapTerm {
    pub coeff: RationalPair,
    pub exp: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapInput {
    pub n_src: usize,
    pub d_src: usize,
    pub n_dst: usize,
    pub d_dst: usize,
    pub components: Vec<Vec<MapTerm>>,
}

impl MapInput {
    pub fn build(&self, cap: usize) -> Result<FormalMap, CrError> {
        let m = self.n_src + self.d_src;
        if self.components.len() != self.n_dst + self.d_dst {
            return Err(CrError::Input("map component count mismatch".into()));
        }
        let mut comps: SeriesVector = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mut s = TruncatedSeries::zero(m, cap);
            for t in comp {
                if t.exp.len() != m {
                    return Err(CrError::Input("map exponent arity mismatch".into()));
                }
                let exp = Exponent(t.exp.clone());
                if exp.is_zero() {
                    return Err(CrError::Input("maps must fix the origin".into()));
                }
                if exp.degree() <= cap {
                    s.terms.insert(exp, t.coeff.to_scalar()?);
                }
            }
            comps.push(s);
        }
        Ok(FormalMap::new(
            comps, self.n_src, self.d_src, self.n_dst, self.d_dst,
        ))
    }

    pub fn from_map(h: &FormalMap) -> MapInput {
        MapInput {
            n_src: h.n_src,
            d_src: h.d_src,
            n_dst: h.n_dst,
            d_dst: h.d_dst,
            components: h
                .components
                .iter()
                .map(|c| {
                    c.terms
                        .iter()
                        .map(|(e, q)| MapTerm {
                            coeff: rational_pair(q),
                            exp: e.0.clone(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

pub fn rational_pair(q: &GaussianRational) -> RationalPair {
    match q.to_i64_pairs() {
        Some((re, im)) => RationalPair { re, im },
        None => RationalPair {
            re: [0, 1],
            im: [0, 1],
        },
    }
}
