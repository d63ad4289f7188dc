//! Lie-theoretic structures: the canonical higher comorphism of a Lie
//! algebra at arbitrary order, graded subspaces with the subalgebroid
//! criterion, and quotient structures induced by graded Lie algebra
//! morphisms.
//!
//! Elements of the order-`k` space of a Lie algebra are represented by
//! coefficient tuples of polynomial curves `t -> sum_j X_j t^j`; in these
//! coordinates the canonical comorphism reads, level by level,
//!
//! ```text
//!   Ydot_l = (l + 1) X_{l+1} - sum_{i+j=l} [X_i, Y_j],    l = 0..k-1.
//! ```

use crate::algebroid::{Algebroid1, AlgebroidError};
use crate::comorphism::{
    constant_span_solve, fine_restriction, Comorphism, ComorphismError, Restriction, SubBundle,
    VBundle, Witnessed,
};
use crate::expr::{rat_int, Poly, Rat, Symbol};
use num_traits::Zero;
use std::fmt;

#[derive(Debug)]
pub enum LieGroupError {
    DimensionMismatch(String),
    /// Construction-time validation failure (shape, antisymmetry, Jacobi,
    /// independence, morphism axioms).
    Invalid(String),
    Comorphism(ComorphismError),
    Algebroid(AlgebroidError),
}

impl fmt::Display for LieGroupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LieGroupError::DimensionMismatch(w) => write!(f, "dimension mismatch: {w}"),
            LieGroupError::Invalid(w) => write!(f, "invalid model: {w}"),
            LieGroupError::Comorphism(e) => write!(f, "{e}"),
            LieGroupError::Algebroid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LieGroupError {}

impl From<ComorphismError> for LieGroupError {
    fn from(e: ComorphismError) -> Self {
        LieGroupError::Comorphism(e)
    }
}

impl From<AlgebroidError> for LieGroupError {
    fn from(e: AlgebroidError) -> Self {
        LieGroupError::Algebroid(e)
    }
}

// ---------------------------------------------------------------------------
// Rational linear-algebra helpers
// ---------------------------------------------------------------------------

pub fn rat_eye(n: usize) -> Vec<Vec<Rat>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { rat_int(1) } else { Rat::zero() })
                .collect()
        })
        .collect()
}

/// Rank of a rational matrix by Gaussian elimination.
pub fn rat_rank(m: &[Vec<Rat>]) -> usize {
    let rows = m.len();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    let mut a = m.to_vec();
    let mut rank = 0usize;
    for col in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        let piv = a[rank][col].clone();
        for x in a[rank].iter_mut() {
            *x = &*x / &piv;
        }
        for r in 0..rows {
            if r != rank && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                let scaled: Vec<Rat> = a[rank].iter().map(|x| x * &f).collect();
                for (x, s) in a[r].iter_mut().zip(scaled.iter()) {
                    *x = &*x - s;
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Block-diagonal assembly of constant rational matrices.
pub fn rat_block_diag(blocks: &[Vec<Vec<Rat>>]) -> Vec<Vec<Rat>> {
    let rows: usize = blocks.iter().map(|b| b.len()).sum();
    let cols: usize = blocks
        .iter()
        .map(|b| b.first().map(|r| r.len()).unwrap_or(0))
        .sum();
    let mut out = vec![vec![Rat::zero(); cols]; rows];
    let mut r0 = 0;
    let mut c0 = 0;
    for b in blocks {
        let bc = b.first().map(|r| r.len()).unwrap_or(0);
        for (i, row) in b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[r0 + i][c0 + j] = v.clone();
            }
        }
        r0 += b.len();
        c0 += bc;
    }
    out
}

fn mat_vec(m: &[Vec<Rat>], v: &[Rat]) -> Vec<Rat> {
    m.iter()
        .map(|row| {
            row.iter()
                .zip(v.iter())
                .fold(Rat::zero(), |acc, (a, b)| acc + a * b)
        })
        .collect()
}

/// Exact membership of a constant vector in the column span of a constant
/// matrix.  Returns the first inconsistent coordinate and its residual.
fn span_member(span: &[Vec<Rat>], v: &[Rat]) -> Result<(), (usize, Rat)> {
    let w: Vec<Poly> = v.iter().map(|x| Poly::constant(x.clone())).collect();
    match constant_span_solve(span, &w) {
        Ok(_) => Ok(()),
        Err((row, resid)) => Err((row, resid.constant_term())),
    }
}

// ---------------------------------------------------------------------------
// Lie algebra models
// ---------------------------------------------------------------------------

/// A finite-dimensional algebra presented by rational structure constants
/// `c[k][i][j]`: the coefficient of `e_k` in `[e_i, e_j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LieAlgebraModel {
    pub name: String,
    pub dim: usize,
    pub c: Vec<Vec<Vec<Rat>>>,
}

impl LieAlgebraModel {
    /// Strict constructor: antisymmetry and the Jacobi identity are required.
    pub fn new(name: &str, c: Vec<Vec<Vec<Rat>>>) -> Result<Self, LieGroupError> {
        let model = Self::new_skew(name, c)?;
        let jac = model.jacobi_check();
        if !jac.pass {
            return Err(LieGroupError::Invalid(format!(
                "Jacobi identity fails: {}",
                jac.witness.unwrap_or_default()
            )));
        }
        Ok(model)
    }

    /// Admit antisymmetric non-Jacobi data (for negative tests).
    pub fn new_skew(name: &str, c: Vec<Vec<Vec<Rat>>>) -> Result<Self, LieGroupError> {
        let n = c.len();
        if c.iter()
            .any(|p| p.len() != n || p.iter().any(|q| q.len() != n))
        {
            return Err(LieGroupError::Invalid(format!(
                "structure constants must form an {n} x {n} x {n} array"
            )));
        }
        let model = LieAlgebraModel {
            name: name.to_string(),
            dim: n,
            c,
        };
        let skew = model.antisymmetry_check();
        if !skew.pass {
            return Err(LieGroupError::Invalid(format!(
                "antisymmetry fails: {}",
                skew.witness.unwrap_or_default()
            )));
        }
        Ok(model)
    }

    /// Build from sparse entries `(k, i, j, value)` (zero-based indices),
    /// auto-completing antisymmetry.  Jacobi is not enforced here so that
    /// deliberately broken models can be loaded and then diagnosed.
    pub fn from_sparse(
        name: &str,
        dim: usize,
        entries: &[(usize, usize, usize, Rat)],
    ) -> Result<Self, LieGroupError> {
        let mut c = vec![vec![vec![Rat::zero(); dim]; dim]; dim];
        let mut set = vec![vec![vec![false; dim]; dim]; dim];
        for (k, i, j, v) in entries {
            if *k >= dim || *i >= dim || *j >= dim {
                return Err(LieGroupError::Invalid(format!(
                    "structure constant index ({k}, {i}, {j}) out of range for dimension {dim}"
                )));
            }
            if i == j && !v.is_zero() {
                return Err(LieGroupError::Invalid(format!(
                    "antisymmetry forces c[{k}][{i}][{j}] = 0"
                )));
            }
            for ((a, b), val) in [((*i, *j), v.clone()), ((*j, *i), -v.clone())] {
                if a == b {
                    continue;
                }
                if set[*k][a][b] && c[*k][a][b] != val {
                    return Err(LieGroupError::Invalid(format!(
                        "conflicting values for c[{k}][{a}][{b}]"
                    )));
                }
                c[*k][a][b] = val;
                set[*k][a][b] = true;
            }
        }
        Self::new_skew(name, c)
    }

    pub fn bracket_vec(&self, u: &[Rat], v: &[Rat]) -> Result<Vec<Rat>, LieGroupError> {
        let n = self.dim;
        if u.len() != n || v.len() != n {
            return Err(LieGroupError::DimensionMismatch(format!(
                "bracket arguments must have dimension {n}"
            )));
        }
        let mut out = vec![Rat::zero(); n];
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            for i in 0..n {
                if u[i].is_zero() {
                    continue;
                }
                for j in 0..n {
                    if self.c[k][i][j].is_zero() || v[j].is_zero() {
                        continue;
                    }
                    out[k] += &self.c[k][i][j] * &u[i] * &v[j];
                }
            }
        }
        Ok(out)
    }

    pub fn antisymmetry_check(&self) -> Witnessed {
        let n = self.dim;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if self.c[k][i][j] != -self.c[k][j][i].clone() {
                        return Witnessed::fail(format!(
                            "c[{k}][{i}][{j}] = {} but c[{k}][{j}][{i}] = {}",
                            self.c[k][i][j], self.c[k][j][i]
                        ));
                    }
                }
            }
        }
        Witnessed::pass()
    }

    /// Brute-force Jacobi identity over all basis triples.
    pub fn jacobi_check(&self) -> Witnessed {
        let n = self.dim;
        let basis = |i: usize| -> Vec<Rat> {
            (0..n)
                .map(|j| if i == j { rat_int(1) } else { Rat::zero() })
                .collect()
        };
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let ei = basis(i);
                    let ej = basis(j);
                    let ek = basis(k);
                    let mut acc = self
                        .bracket_vec(&ei, &self.bracket_vec(&ej, &ek).unwrap())
                        .unwrap();
                    let t2 = self
                        .bracket_vec(&ej, &self.bracket_vec(&ek, &ei).unwrap())
                        .unwrap();
                    let t3 = self
                        .bracket_vec(&ek, &self.bracket_vec(&ei, &ej).unwrap())
                        .unwrap();
                    for l in 0..n {
                        acc[l] += &t2[l] + &t3[l];
                    }
                    if let Some(l) = acc.iter().position(|x| !x.is_zero()) {
                        return Witnessed::fail(format!(
                            "Jacobi fails at basis triple ({i}, {j}, {k}), component {l}: {}",
                            acc[l]
                        ));
                    }
                }
            }
        }
        Witnessed::pass()
    }

    pub fn is_lie(&self) -> Witnessed {
        let skew = self.antisymmetry_check();
        if !skew.pass {
            return skew;
        }
        self.jacobi_check()
    }

    /// The order-one structure over a point: empty base, constant bracket.
    pub fn to_algebroid1(&self, name: &str, fiber: &[Symbol]) -> Result<Algebroid1, LieGroupError> {
        if fiber.len() != self.dim {
            return Err(LieGroupError::DimensionMismatch(format!(
                "fiber chart must have {} symbols",
                self.dim
            )));
        }
        let bracket: Vec<Vec<Vec<Poly>>> = self
            .c
            .iter()
            .map(|p| {
                p.iter()
                    .map(|q| q.iter().map(|v| Poly::constant(v.clone())).collect())
                    .collect()
            })
            .collect();
        Algebroid1::new(name, vec![], fiber.to_vec(), vec![], vec![], bracket)
            .map_err(LieGroupError::from)
    }
}

// ---------------------------------------------------------------------------
// The canonical comorphism of a Lie algebra at order k
// ---------------------------------------------------------------------------

/// Tuple evaluator: `ybar` has `k` algebra elements, `x` has `k + 1`; the
/// result has `k`, with `Ydot_l = (l+1) X_{l+1} - sum_{i+j=l} [X_i, Y_j]`.
pub fn kappa_g_eval(
    g: &LieAlgebraModel,
    k: usize,
    ybar: &[Vec<Rat>],
    x: &[Vec<Rat>],
) -> Result<Vec<Vec<Rat>>, LieGroupError> {
    if ybar.len() != k || x.len() != k + 1 {
        return Err(LieGroupError::DimensionMismatch(format!(
            "order {k} needs {k} base tuples and {} fiber tuples, got {} and {}",
            k + 1,
            ybar.len(),
            x.len()
        )));
    }
    let n = g.dim;
    if ybar.iter().chain(x.iter()).any(|v| v.len() != n) {
        return Err(LieGroupError::DimensionMismatch(format!(
            "all tuple entries must have dimension {n}"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for l in 0..k {
        let mut ydot: Vec<Rat> = x[l + 1]
            .iter()
            .map(|v| v * rat_int((l + 1) as i64))
            .collect();
        for i in 0..=l {
            let br = g.bracket_vec(&x[i], &ybar[l - i])?;
            for (o, b) in ydot.iter_mut().zip(br.iter()) {
                *o -= b;
            }
        }
        out.push(ydot);
    }
    Ok(out)
}

/// The same structure as a weighted comorphism: source fiber chart
/// `X` with jets `0..=k` (weights equal to jets) over an empty base, target
/// base and fiber charts `Y`, `dY` with jets `0..k` (weights jet + 1).
pub fn kappa_g_comorphism(g: &LieAlgebraModel, k: usize) -> Result<Comorphism, LieGroupError> {
    if k == 0 {
        return Err(LieGroupError::Invalid(
            "the order must be at least 1".into(),
        ));
    }
    let n = g.dim;
    let xsym = |i: usize, c: usize| Symbol::jet(&format!("X{}", c + 1), i as u32, i as u32);
    let ysym = |j: usize, c: usize| Symbol::jet(&format!("Y{}", c + 1), j as u32, j as u32 + 1);
    let dysym = |j: usize, c: usize| Symbol::jet(&format!("dY{}", c + 1), j as u32, j as u32 + 1);
    let source = VBundle::new(
        "Tk(g)",
        vec![],
        (0..=k)
            .flat_map(|i| (0..n).map(move |c| xsym(i, c)))
            .collect(),
    );
    let target = VBundle::new(
        "tau_Ek",
        (0..k)
            .flat_map(|j| (0..n).map(move |c| ysym(j, c)))
            .collect(),
        (0..k)
            .flat_map(|j| (0..n).map(move |c| dysym(j, c)))
            .collect(),
    );
    let mut matrix = vec![vec![Poly::zero(); (k + 1) * n]; k * n];
    for l in 0..k {
        for kap in 0..n {
            // the (l+1) X_{l+1} term
            matrix[l * n + kap][(l + 1) * n + kap] = Poly::int((l + 1) as i64);
            // the -[X_i, Y_{l-i}] terms
            for i in 0..=l {
                for b in 0..n {
                    let mut acc = Poly::zero();
                    for cc in 0..n {
                        if g.c[kap][b][cc].is_zero() {
                            continue;
                        }
                        acc = acc.sub(&Poly::symbol(&ysym(l - i, cc)).scale(&g.c[kap][b][cc]));
                    }
                    matrix[l * n + kap][i * n + b] = acc;
                }
            }
        }
    }
    Comorphism::new(source, target, vec![], matrix).map_err(LieGroupError::from)
}

// ---------------------------------------------------------------------------
// Graded subspaces and the subalgebroid criterion
// ---------------------------------------------------------------------------

/// One basis matrix per level `0..k`; `spans[i]` is `n x dim_i` with the basis
/// vectors of `V_i` as columns.
#[derive(Debug, Clone)]
pub struct GradedSubspace {
    pub spans: Vec<Vec<Vec<Rat>>>,
}

impl GradedSubspace {
    pub fn new(spans: Vec<Vec<Vec<Rat>>>) -> Result<Self, LieGroupError> {
        for (i, s) in spans.iter().enumerate() {
            let cols = s.first().map(|r| r.len()).unwrap_or(0);
            if s.iter().any(|r| r.len() != cols) {
                return Err(LieGroupError::Invalid(format!(
                    "basis matrix of V{i} has ragged rows"
                )));
            }
            if rat_rank(s) != cols {
                return Err(LieGroupError::Invalid(format!(
                    "basis columns of V{i} are linearly dependent"
                )));
            }
        }
        Ok(GradedSubspace { spans })
    }

    pub fn order(&self) -> usize {
        self.spans.len()
    }
}

/// Decide whether the graded subspace family defines a subalgebroid of the
/// order-`k` structure of `g`: `V_0` must sit inside every `V_j`, and
/// `[V_0, V_i]` inside `V_j` for every `i <= j`.  The witness names the first
/// failing pair.
pub fn subalgebroid_test(
    g: &LieAlgebraModel,
    k: usize,
    v: &GradedSubspace,
) -> Result<Witnessed, LieGroupError> {
    if v.order() != k {
        return Err(LieGroupError::DimensionMismatch(format!(
            "order {k} needs {k} graded levels, got {}",
            v.order()
        )));
    }
    let n = g.dim;
    if v.spans.iter().any(|s| s.len() != n) {
        return Err(LieGroupError::DimensionMismatch(format!(
            "every level span must have {n} rows"
        )));
    }
    let col =
        |s: &Vec<Vec<Rat>>, c: usize| -> Vec<Rat> { s.iter().map(|r| r[c].clone()).collect() };
    let v0_cols = v.spans[0].first().map(|r| r.len()).unwrap_or(0);
    for j in 1..k {
        for c in 0..v0_cols {
            if let Err((row, resid)) = span_member(&v.spans[j], &col(&v.spans[0], c)) {
                return Ok(Witnessed::fail(format!(
                    "V0 basis column {c} is not contained in V{j}: residual {resid} at coordinate {row}"
                )));
            }
        }
    }
    for i in 0..k {
        let vi_cols = v.spans[i].first().map(|r| r.len()).unwrap_or(0);
        for j in i..k {
            for a in 0..v0_cols {
                for b in 0..vi_cols {
                    let br = g.bracket_vec(&col(&v.spans[0], a), &col(&v.spans[i], b))?;
                    if let Err((row, resid)) = span_member(&v.spans[j], &br) {
                        return Ok(Witnessed::fail(format!(
                            "bracket of V0 column {a} with V{i} column {b} leaves V{j}: \
                             residual {resid} at coordinate {row}"
                        )));
                    }
                }
            }
        }
    }
    Ok(Witnessed::pass())
}

/// The same criterion through the comorphism machinery: restrict the
/// order-`k` comorphism of `g` to the spans (all levels of the source carry
/// `V_0`, level `j` of the target carries `V_j`).
pub fn subalgebroid_restriction(
    g: &LieAlgebraModel,
    k: usize,
    v: &GradedSubspace,
) -> Result<Restriction, LieGroupError> {
    if v.order() != k {
        return Err(LieGroupError::DimensionMismatch(format!(
            "order {k} needs {k} graded levels, got {}",
            v.order()
        )));
    }
    let r = kappa_g_comorphism(g, k)?;
    let d0 = v.spans[0].first().map(|r| r.len()).unwrap_or(0);
    let dims: Vec<usize> = v
        .spans
        .iter()
        .map(|s| s.first().map(|r| r.len()).unwrap_or(0))
        .collect();
    let ssym = |i: usize, c: usize| Symbol::jet(&format!("S{}", c + 1), i as u32, i as u32);
    let usym = |j: usize, c: usize| Symbol::jet(&format!("U{}", c + 1), j as u32, j as u32 + 1);
    let dusym = |j: usize, c: usize| Symbol::jet(&format!("dU{}", c + 1), j as u32, j as u32 + 1);
    let sub1 = SubBundle {
        bundle: VBundle::new(
            "Tk(V0)",
            vec![],
            (0..=k)
                .flat_map(|i| (0..d0).map(move |c| ssym(i, c)))
                .collect(),
        ),
        base_span: vec![],
        fiber_span: rat_block_diag(&vec![v.spans[0].clone(); k + 1]),
    };
    let sub2 = SubBundle {
        bundle: VBundle::new(
            "tau_Fk",
            (0..k)
                .flat_map(|j| (0..dims[j]).map(move |c| usym(j, c)))
                .collect(),
            (0..k)
                .flat_map(|j| (0..dims[j]).map(move |c| dusym(j, c)))
                .collect(),
        ),
        base_span: rat_block_diag(&v.spans),
        fiber_span: rat_block_diag(&v.spans),
    };
    fine_restriction(&r, &sub1, &sub2).map_err(LieGroupError::from)
}

// ---------------------------------------------------------------------------
// Graded Lie algebra models and quotients
// ---------------------------------------------------------------------------

/// A graded Lie algebra `E = g_0 + ... + g_{k-1}` (bracket adds degrees,
/// degrees `>= k` truncate to zero) together with a degree-wise morphism
/// `alpha` from the order-`k-1` lift of `g0`, given by matrices
/// `alpha[i]: g0 -> g_i`.  The total bracket lives on the concatenated basis.
#[derive(Debug, Clone)]
pub struct GradedLieAlgebraModel {
    pub name: String,
    /// Dimensions of the degree components `g_0..g_{k-1}`.
    pub dims: Vec<usize>,
    /// The bracket of the total space, on the degree-concatenated basis.
    pub total: LieAlgebraModel,
    /// `alpha[i]` is `dims[i] x dim(g0)`.
    pub alpha: Vec<Vec<Vec<Rat>>>,
    pub g0: LieAlgebraModel,
}

impl GradedLieAlgebraModel {
    /// Strict constructor: grading, antisymmetry, graded Jacobi, morphism
    /// property, degree-wise surjectivity, and identity in degree zero.
    pub fn new(
        name: &str,
        dims: Vec<usize>,
        total_c: Vec<Vec<Vec<Rat>>>,
        alpha: Vec<Vec<Vec<Rat>>>,
        g0: LieAlgebraModel,
    ) -> Result<Self, LieGroupError> {
        let model = Self::assemble(name, dims, total_c, alpha, g0)?;
        if model.alpha[0] != rat_eye(model.g0.dim) {
            return Err(LieGroupError::Invalid(
                "the degree-zero component of alpha must be the identity".into(),
            ));
        }
        model.validate()?;
        Ok(model)
    }

    /// Like [`GradedLieAlgebraModel::new`] but without requiring the identity
    /// in degree zero, admitting morphisms that quotient the lowest level.
    pub fn new_relaxed(
        name: &str,
        dims: Vec<usize>,
        total_c: Vec<Vec<Vec<Rat>>>,
        alpha: Vec<Vec<Vec<Rat>>>,
        g0: LieAlgebraModel,
    ) -> Result<Self, LieGroupError> {
        let model = Self::assemble(name, dims, total_c, alpha, g0)?;
        model.validate()?;
        Ok(model)
    }

    /// Shape checks only; admits broken data for negative tests.
    pub fn new_unchecked(
        name: &str,
        dims: Vec<usize>,
        total_c: Vec<Vec<Vec<Rat>>>,
        alpha: Vec<Vec<Vec<Rat>>>,
        g0: LieAlgebraModel,
    ) -> Result<Self, LieGroupError> {
        Self::assemble(name, dims, total_c, alpha, g0)
    }

    fn assemble(
        name: &str,
        dims: Vec<usize>,
        total_c: Vec<Vec<Vec<Rat>>>,
        alpha: Vec<Vec<Vec<Rat>>>,
        g0: LieAlgebraModel,
    ) -> Result<Self, LieGroupError> {
        let k = dims.len();
        if k == 0 {
            return Err(LieGroupError::Invalid(
                "at least one degree component".into(),
            ));
        }
        let total_dim: usize = dims.iter().sum();
        if total_c.len() != total_dim {
            return Err(LieGroupError::Invalid(format!(
                "total bracket must be {total_dim}-dimensional"
            )));
        }
        if alpha.len() != k {
            return Err(LieGroupError::Invalid(format!(
                "alpha needs {k} degree matrices"
            )));
        }
        for (i, a) in alpha.iter().enumerate() {
            if a.len() != dims[i] || a.iter().any(|r| r.len() != g0.dim) {
                return Err(LieGroupError::Invalid(format!(
                    "alpha[{i}] must be {} x {}",
                    dims[i], g0.dim
                )));
            }
        }
        let total = LieAlgebraModel {
            name: format!("{name}#total"),
            dim: total_dim,
            c: total_c,
        };
        if total
            .c
            .iter()
            .any(|p| p.len() != total_dim || p.iter().any(|q| q.len() != total_dim))
        {
            return Err(LieGroupError::Invalid(format!(
                "total bracket must be a {total_dim}^3 array"
            )));
        }
        Ok(GradedLieAlgebraModel {
            name: name.to_string(),
            dims,
            total,
            alpha,
            g0,
        })
    }

    fn validate(&self) -> Result<(), LieGroupError> {
        let graded = jacobi_graded_check(self);
        if !graded.pass {
            return Err(LieGroupError::Invalid(graded.witness.unwrap_or_default()));
        }
        for (i, a) in self.alpha.iter().enumerate() {
            if rat_rank(a) != self.dims[i] {
                return Err(LieGroupError::Invalid(format!(
                    "alpha[{i}] is not surjective onto the degree-{i} component"
                )));
            }
        }
        let hom = self.morphism_check();
        if !hom.pass {
            return Err(LieGroupError::Invalid(format!(
                "alpha is not a graded morphism: {}",
                hom.witness.unwrap_or_default()
            )));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total.dim
    }

    fn offset(&self, degree: usize) -> usize {
        self.dims[..degree].iter().sum()
    }

    fn degree_of(&self, index: usize) -> usize {
        let mut acc = 0;
        for (d, &len) in self.dims.iter().enumerate() {
            acc += len;
            if index < acc {
                return d;
            }
        }
        self.dims.len()
    }

    /// Apply `alpha` to a `k`-tuple over `g0`, producing a total-space vector.
    pub fn alpha_apply(&self, tuple: &[Vec<Rat>]) -> Result<Vec<Rat>, LieGroupError> {
        let k = self.order();
        if tuple.len() != k || tuple.iter().any(|v| v.len() != self.g0.dim) {
            return Err(LieGroupError::DimensionMismatch(format!(
                "alpha expects {k} tuples of dimension {}",
                self.g0.dim
            )));
        }
        let mut out = Vec::with_capacity(self.total_dim());
        for (i, t) in tuple.iter().enumerate() {
            out.extend(mat_vec(&self.alpha[i], t));
        }
        Ok(out)
    }

    /// Check that `alpha` intertwines the level-convolution bracket of the
    /// lifted `g0` with the graded bracket of the total space.
    pub fn morphism_check(&self) -> Witnessed {
        let k = self.order();
        let n0 = self.g0.dim;
        let basis = |i: usize| -> Vec<Rat> {
            (0..n0)
                .map(|j| if i == j { rat_int(1) } else { Rat::zero() })
                .collect()
        };
        for i in 0..k {
            for j in 0..k {
                if i + j >= k {
                    continue;
                }
                for a in 0..n0 {
                    for b in 0..n0 {
                        let lhs = mat_vec(
                            &self.alpha[i + j],
                            &self.g0.bracket_vec(&basis(a), &basis(b)).unwrap(),
                        );
                        let mut ea = vec![Rat::zero(); self.total_dim()];
                        for (r, x) in mat_vec(&self.alpha[i], &basis(a)).into_iter().enumerate() {
                            ea[self.offset(i) + r] = x;
                        }
                        let mut eb = vec![Rat::zero(); self.total_dim()];
                        for (r, x) in mat_vec(&self.alpha[j], &basis(b)).into_iter().enumerate() {
                            eb[self.offset(j) + r] = x;
                        }
                        let full = self.total.bracket_vec(&ea, &eb).unwrap();
                        let rhs: Vec<Rat> = full
                            [self.offset(i + j)..self.offset(i + j) + self.dims[i + j]]
                            .to_vec();
                        if lhs != rhs {
                            return Witnessed::fail(format!(
                                "degrees ({i}, {j}), basis pair ({a}, {b}): alpha([a, b]) \
                                 differs from [alpha a, alpha b]"
                            ));
                        }
                    }
                }
            }
        }
        Witnessed::pass()
    }
}

/// Validity of graded data: the bracket respects degrees (entries between
/// degrees `i` and `j` land in degree `i + j`, truncating above the order),
/// is antisymmetric, and satisfies the Jacobi identity.
pub fn jacobi_graded_check(gla: &GradedLieAlgebraModel) -> Witnessed {
    let nn = gla.total_dim();
    for kap in 0..nn {
        for a in 0..nn {
            for b in 0..nn {
                if gla.total.c[kap][a][b].is_zero() {
                    continue;
                }
                let want = gla.degree_of(a) + gla.degree_of(b);
                if gla.degree_of(kap) != want {
                    return Witnessed::fail(format!(
                        "bracket constant c[{kap}][{a}][{b}] violates the grading: \
                         degree {} where {} is required",
                        gla.degree_of(kap),
                        want
                    ));
                }
            }
        }
    }
    let skew = gla.total.antisymmetry_check();
    if !skew.pass {
        return skew;
    }
    gla.total.jacobi_check()
}

/// The order-`k` lift of a Lie algebra as a graded Lie algebra with the
/// level-convolution bracket and the identity morphism.
pub fn tangent_lift_gla(
    g: &LieAlgebraModel,
    k: usize,
) -> Result<GradedLieAlgebraModel, LieGroupError> {
    if k == 0 {
        return Err(LieGroupError::Invalid(
            "the order must be at least 1".into(),
        ));
    }
    let n = g.dim;
    let nn = k * n;
    let mut c = vec![vec![vec![Rat::zero(); nn]; nn]; nn];
    for i in 0..k {
        for j in 0..k {
            if i + j >= k {
                continue;
            }
            for a in 0..n {
                for b in 0..n {
                    for kap in 0..n {
                        c[(i + j) * n + kap][i * n + a][j * n + b] = g.c[kap][a][b].clone();
                    }
                }
            }
        }
    }
    GradedLieAlgebraModel::new(
        &format!("T{}[{}]", k - 1, g.name),
        vec![n; k],
        c,
        vec![rat_eye(n); k],
        g.clone(),
    )
}

/// Evaluate the quotient structure at a pre-image `ytilde` (a `k`-tuple over
/// `g0` presenting the point `alpha(ytilde)`) on `x` (a `k+1`-tuple over
/// `g0`): `alpha(Xbar1) + [alpha(ytilde), alpha(Xbar0)]` in the total space,
/// split by degree.  Independence of the pre-image choice (shifts by the
/// kernel of `alpha`) is a consequence of the morphism property.
pub fn quotient_kappa(
    gla: &GradedLieAlgebraModel,
    ytilde: &[Vec<Rat>],
    x: &[Vec<Rat>],
) -> Result<Vec<Vec<Rat>>, LieGroupError> {
    let k = gla.order();
    let n0 = gla.g0.dim;
    if x.len() != k + 1 || x.iter().any(|v| v.len() != n0) {
        return Err(LieGroupError::DimensionMismatch(format!(
            "x must be a {}-tuple over an algebra of dimension {n0}",
            k + 1
        )));
    }
    let xbar0: Vec<Vec<Rat>> = x[..k].to_vec();
    let xbar1: Vec<Vec<Rat>> = (1..=k)
        .map(|i| x[i].iter().map(|v| v * rat_int(i as i64)).collect())
        .collect();
    let a0 = gla.alpha_apply(&xbar0)?;
    let a1 = gla.alpha_apply(&xbar1)?;
    let y = gla.alpha_apply(ytilde)?;
    let br = gla.total.bracket_vec(&y, &a0)?;
    let flat: Vec<Rat> = a1.iter().zip(br.iter()).map(|(p, q)| p + q).collect();
    Ok((0..k)
        .map(|d| flat[gla.offset(d)..gla.offset(d) + gla.dims[d]].to_vec())
        .collect())
}
