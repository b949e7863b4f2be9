//! Triadic motif extraction.
//!
//! The directed social graph `S` is split into a reciprocal part `B` and a
//! one-way part `U`. Each of the ten motifs is a sum of masked products such
//! as `(UU) ∘ Uᵀ`, evaluated with [`SparseMatrix::matmul_masked`] so the dense
//! product never exists. Motifs feed three channels:
//!
//! * social: `M1..M7`
//! * joint: `M8 + M9` (friends who bought the same item)
//! * purchase: `M10 - joint` (co-purchase without a social tie)
//!
//! All channel matrices keep raw motif counts with a zeroed diagonal.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Largest graph the enumeration oracle accepts.
pub const ORACLE_MAX_NODES: usize = 64;

/// Reciprocal/one-way split of the social graph.
pub fn split_social(social: &SparseMatrix) -> Result<(SparseMatrix, SparseMatrix)> {
    if !social.is_square() {
        return Err(Error::Shape(format!(
            "social matrix must be square, got {}x{}",
            social.n_rows(),
            social.n_cols()
        )));
    }
    let s = social.zero_diagonal().clamp_min_zero().binarize();
    let b = s.hadamard(&s.transpose())?;
    let u = s.sub(&b)?;
    Ok((b, u))
}

/// One `(X Y) ∘ M` term of the motif table.
struct Term<'a>(&'a SparseMatrix, &'a SparseMatrix, &'a SparseMatrix);

fn sum_terms(terms: &[Term<'_>]) -> Result<SparseMatrix> {
    let (n, m) = (terms[0].0.n_rows(), terms[0].1.n_cols());
    terms
        .iter()
        .try_fold(SparseMatrix::zeros(n, m), |acc, Term(x, y, mask)| {
            acc.add(&x.matmul_masked(y, mask)?)
        })
}

fn check_inputs(b: &SparseMatrix, u: &SparseMatrix, r: &SparseMatrix) -> Result<()> {
    let n = b.n_rows();
    if !b.is_square() || u.shape() != (n, n) || r.n_rows() != n {
        return Err(Error::Shape(format!(
            "B {:?}, U {:?} and R {:?} are inconsistent",
            b.shape(),
            u.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Whether motif `k` is symmetrised as `C + Cᵀ` (otherwise `C` is used as is).
pub fn motif_is_symmetrized(k: usize) -> bool {
    matches!(k, 1 | 2 | 3 | 5 | 9)
}

/// Adjacency `A_{M_k}` for motif `k ∈ 1..=10`, with zeroed diagonal.
///
/// `r` is binarized first, so rating scale never changes the counts.
pub fn motif_adjacency(
    k: usize,
    b: &SparseMatrix,
    u: &SparseMatrix,
    r: &SparseMatrix,
) -> Result<SparseMatrix> {
    check_inputs(b, u, r)?;
    let c = match k {
        1..=7 => {
            let ut = u.transpose();
            match k {
                1 => sum_terms(&[Term(u, u, &ut)])?,
                2 => sum_terms(&[Term(b, u, &ut), Term(u, b, &ut), Term(u, u, b)])?,
                3 => sum_terms(&[Term(b, b, u), Term(b, u, b), Term(u, b, b)])?,
                4 => sum_terms(&[Term(b, b, b)])?,
                5 => sum_terms(&[Term(u, u, u), Term(u, &ut, u), Term(&ut, u, u)])?,
                6 => sum_terms(&[Term(u, b, u), Term(b, &ut, &ut), Term(&ut, u, b)])?,
                _ => sum_terms(&[Term(&ut, b, &ut), Term(b, u, u), Term(&ut, u, b)])?,
            }
        }
        8..=10 => {
            let rb = r.binarize();
            let rt = rb.transpose();
            match k {
                8 => rb.matmul_masked(&rt, b)?,
                9 => rb.matmul_masked(&rt, u)?,
                _ => rb.matmul(&rt)?,
            }
        }
        _ => return Err(Error::Domain(format!("motif index {k} outside 1..=10"))),
    };
    let a = if motif_is_symmetrized(k) {
        c.add(&c.transpose())?
    } else {
        c
    };
    Ok(a.zero_diagonal())
}

/// The three channels a user can be related through.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Social,
    Joint,
    Purchase,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Social, Channel::Joint, Channel::Purchase];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Channel::Social => "s",
            Channel::Joint => "j",
            Channel::Purchase => "p",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Channel::Social => "social",
            Channel::Joint => "joint",
            Channel::Purchase => "purchase",
        };
        f.write_str(name)
    }
}

/// Social split, per-motif adjacencies and the three channel adjacencies.
#[derive(Debug, Clone)]
pub struct MotifSet {
    pub bidirectional: SparseMatrix,
    pub unidirectional: SparseMatrix,
    /// `motifs[k - 1]` is `A_{M_k}`.
    pub motifs: Vec<SparseMatrix>,
    pub social: SparseMatrix,
    pub joint: SparseMatrix,
    pub purchase: SparseMatrix,
}

impl MotifSet {
    pub fn channel(&self, c: Channel) -> &SparseMatrix {
        match c {
            Channel::Social => &self.social,
            Channel::Joint => &self.joint,
            Channel::Purchase => &self.purchase,
        }
    }

    /// Node degrees `d(v)` (row sums) of a channel adjacency.
    pub fn degrees(&self, c: Channel) -> Vec<f64> {
        self.channel(c).row_sums()
    }
}

/// Builds every motif adjacency and sums them into channel adjacencies.
pub fn channel_adjacencies(
    b: &SparseMatrix,
    u: &SparseMatrix,
    r: &SparseMatrix,
) -> Result<MotifSet> {
    check_inputs(b, u, r)?;
    let motifs = (1..=10)
        .map(|k| motif_adjacency(k, b, u, r))
        .collect::<Result<Vec<_>>>()?;
    let n = b.n_rows();
    let social = motifs[..7]
        .iter()
        .try_fold(SparseMatrix::zeros(n, n), |acc, m| acc.add(m))?;
    let joint = motifs[7].add(&motifs[8])?;
    let purchase = motifs[9].sub(&joint)?.clamp_min_zero().zero_diagonal();
    Ok(MotifSet {
        bidirectional: b.clone(),
        unidirectional: u.clone(),
        motifs,
        social,
        joint,
        purchase,
    })
}

/// Convenience: split `S` and compute all channels.
pub fn extract_motifs(social: &SparseMatrix, ratings: &SparseMatrix) -> Result<MotifSet> {
    let (b, u) = split_social(social)?;
    channel_adjacencies(&b, &u, ratings)
}

/// Exhaustive counting oracle for motif `k`.
///
/// Works on plain edge lists: every `(u, v)` pair is checked against every
/// intermediate node `w` (or item, for `M8..M10`) with direct membership
/// tests, so it shares no code path with the sparse kernels.
pub fn brute_force_motif_count(
    n_users: usize,
    social_edges: &[(usize, usize)],
    n_items: usize,
    purchases: &[(usize, usize)],
    k: usize,
) -> Result<Array2<f64>> {
    if n_users > ORACLE_MAX_NODES {
        return Err(Error::Domain(format!(
            "oracle limited to {ORACLE_MAX_NODES} nodes, got {n_users}"
        )));
    }
    if !(1..=10).contains(&k) {
        return Err(Error::Domain(format!("motif index {k} outside 1..=10")));
    }
    let mut s = vec![vec![false; n_users]; n_users];
    for &(a, b) in social_edges {
        if a != b {
            s[a][b] = true;
        }
    }
    let bi = |x: usize, y: usize| s[x][y] && s[y][x];
    let uni = |x: usize, y: usize| s[x][y] && !s[y][x];
    let uni_t = |x: usize, y: usize| uni(y, x);
    let mut bought = vec![vec![false; n_items]; n_users];
    for &(usr, item) in purchases {
        bought[usr][item] = true;
    }

    type Rel<'a> = &'a dyn Fn(usize, usize) -> bool;
    // Σ_w X(u,w) Y(w,v) M(u,v)
    let triple = |x: Rel, y: Rel, m: Rel, u: usize, v: usize| -> f64 {
        if !m(u, v) {
            return 0.0;
        }
        (0..n_users).filter(|&w| x(u, w) && y(w, v)).count() as f64
    };
    let shared = |u: usize, v: usize| {
        (0..n_items)
            .filter(|&i| bought[u][i] && bought[v][i])
            .count() as f64
    };

    let mut c = Array2::zeros((n_users, n_users));
    for u in 0..n_users {
        for v in 0..n_users {
            c[[u, v]] = match k {
                1 => triple(&uni, &uni, &uni_t, u, v),
                2 => {
                    triple(&bi, &uni, &uni_t, u, v)
                        + triple(&uni, &bi, &uni_t, u, v)
                        + triple(&uni, &uni, &bi, u, v)
                }
                3 => {
                    triple(&bi, &bi, &uni, u, v)
                        + triple(&bi, &uni, &bi, u, v)
                        + triple(&uni, &bi, &bi, u, v)
                }
                4 => triple(&bi, &bi, &bi, u, v),
                5 => {
                    triple(&uni, &uni, &uni, u, v)
                        + triple(&uni, &uni_t, &uni, u, v)
                        + triple(&uni_t, &uni, &uni, u, v)
                }
                6 => {
                    triple(&uni, &bi, &uni, u, v)
                        + triple(&bi, &uni_t, &uni_t, u, v)
                        + triple(&uni_t, &uni, &bi, u, v)
                }
                7 => {
                    triple(&uni_t, &bi, &uni_t, u, v)
                        + triple(&bi, &uni, &uni, u, v)
                        + triple(&uni_t, &uni, &bi, u, v)
                }
                8 => {
                    if bi(u, v) {
                        shared(u, v)
                    } else {
                        0.0
                    }
                }
                9 => {
                    if uni(u, v) {
                        shared(u, v)
                    } else {
                        0.0
                    }
                }
                _ => shared(u, v),
            };
        }
    }
    let mut a = if motif_is_symmetrized(k) {
        &c + &c.t()
    } else {
        c
    };
    for u in 0..n_users {
        a[[u, u]] = 0.0;
    }
    Ok(a)
}
