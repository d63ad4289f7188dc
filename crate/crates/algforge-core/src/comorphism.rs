//! Vector-bundle comorphisms in local coordinates.
//!
//! A comorphism `r` from a bundle `sigma1: E1 -> M1` to `sigma2: E2 -> M2`
//! consists of a base map *against* the arrows, `r_base: M2 -> M1`, and a
//! family of linear fiber maps `r_y: (E1)_{r_base(y)} -> (E2)_y` depending
//! polynomially on `y in M2`.  Concretely:
//!
//! * `base_map[j]` is the polynomial (in the target base chart) for the
//!   `j`-th source base coordinate;
//! * `matrix[i][l]` is the polynomial coefficient of the `l`-th source fiber
//!   coordinate in the `i`-th target fiber coordinate.
//!
//! The induced push-forward of sections is
//! `r_hat(s)(y) = r_y(s(r_base(y)))`, a module map along the pullback of
//! functions: `r_hat(f * s) = (f o r_base) * r_hat(s)`.
//!
//! Subbundles are handed around as constant-coefficient spans (never as lists
//! of relations), and all equality checks compare canonical polynomial forms.

use crate::expr::{rat_to_string, Poly, Rat, Symbol};
use num_traits::Zero;
use std::collections::BTreeMap;
use std::fmt;

/// Errors of the comorphism layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComorphismError {
    /// A fiber vector's explicit base point disagrees with the base map.
    BasePointMismatch(String),
    /// Source/target bundles of a composition or check do not line up.
    BundleMismatch(String),
    /// Dimension/shape/chart violations.
    Shape(String),
}

impl fmt::Display for ComorphismError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComorphismError::BasePointMismatch(s) => write!(f, "base point mismatch: {s}"),
            ComorphismError::BundleMismatch(s) => write!(f, "bundle mismatch: {s}"),
            ComorphismError::Shape(s) => write!(f, "shape error: {s}"),
        }
    }
}

impl std::error::Error for ComorphismError {}

/// Outcome of a yes/no check together with a human-readable witness of
/// failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witnessed {
    pub pass: bool,
    pub witness: Option<String>,
}

impl Witnessed {
    pub fn pass() -> Self {
        Witnessed {
            pass: true,
            witness: None,
        }
    }
    pub fn fail(witness: String) -> Self {
        Witnessed {
            pass: false,
            witness: Some(witness),
        }
    }
}

/// A trivialized vector bundle: a base chart and fiber coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VBundle {
    pub name: String,
    pub base: Vec<Symbol>,
    pub fiber: Vec<Symbol>,
}

impl VBundle {
    pub fn new(name: &str, base: Vec<Symbol>, fiber: Vec<Symbol>) -> Self {
        VBundle {
            name: name.to_string(),
            base,
            fiber,
        }
    }

    pub fn rank(&self) -> usize {
        self.fiber.len()
    }

    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    /// Charts agree as symbol lists (names and jets, in order).
    pub fn same_charts(&self, other: &VBundle) -> bool {
        self.base == other.base && self.fiber == other.fiber
    }

    /// The dual bundle: same base, fiber coordinates renamed `p_<name>`.
    pub fn dual(&self) -> VBundle {
        VBundle {
            name: format!("{}*", self.name),
            base: self.base.clone(),
            fiber: self
                .fiber
                .iter()
                .map(|s| Symbol {
                    name: format!("p_{}", s.name),
                    jet: s.jet,
                    weight: s.weight,
                })
                .collect(),
        }
    }
}

/// A fiber vector with its explicit base point (numeric, exact).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiberVector {
    pub base_point: Vec<Rat>,
    pub components: Vec<Rat>,
}

/// The tangent-prefix convention: the differential of symbol `u` under one
/// application of the tangent functor is written `<prefix>u` (same jet).
/// Intermediate weights rise by one; normal-form charts re-assign weights
/// when a construction ends.
pub fn tangent_symbol(prefix: &str, s: &Symbol) -> Symbol {
    Symbol {
        name: format!("{prefix}{}", s.name),
        jet: s.jet,
        weight: s.weight + 1,
    }
}

fn poly_uses_only(p: &Poly, allowed: &[Symbol]) -> Result<(), ComorphismError> {
    for s in p.symbols() {
        if !allowed.contains(&s) {
            return Err(ComorphismError::Shape(format!(
                "polynomial {p} mentions {} outside the target base chart",
                s.to_display()
            )));
        }
    }
    Ok(())
}

/// A vector-bundle comorphism.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comorphism {
    pub source: VBundle,
    pub target: VBundle,
    /// One polynomial per source base symbol, in the target base chart.
    pub base_map: Vec<Poly>,
    /// `target.rank() x source.rank()` polynomials in the target base chart.
    pub matrix: Vec<Vec<Poly>>,
}

impl Comorphism {
    pub fn new(
        source: VBundle,
        target: VBundle,
        base_map: Vec<Poly>,
        matrix: Vec<Vec<Poly>>,
    ) -> Result<Self, ComorphismError> {
        if base_map.len() != source.base_dim() {
            return Err(ComorphismError::Shape(format!(
                "base map has {} components for a {}-dimensional source base",
                base_map.len(),
                source.base_dim()
            )));
        }
        if matrix.len() != target.rank() || matrix.iter().any(|r| r.len() != source.rank()) {
            return Err(ComorphismError::Shape(format!(
                "fiber matrix must be {} x {}",
                target.rank(),
                source.rank()
            )));
        }
        for p in &base_map {
            poly_uses_only(p, &target.base)?;
        }
        for row in &matrix {
            for p in row {
                poly_uses_only(p, &target.base)?;
            }
        }
        Ok(Comorphism {
            source,
            target,
            base_map,
            matrix,
        })
    }

    /// The identity comorphism of a bundle.
    pub fn identity(bundle: &VBundle) -> Self {
        let base_map = bundle.base.iter().map(Poly::symbol).collect();
        let n = bundle.rank();
        let matrix = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { Poly::one() } else { Poly::zero() })
                    .collect()
            })
            .collect();
        Comorphism {
            source: bundle.clone(),
            target: bundle.clone(),
            base_map,
            matrix,
        }
    }

    /// The substitution `source base symbol -> base-map polynomial`.
    pub fn base_subst(&self) -> BTreeMap<Symbol, Poly> {
        self.source
            .base
            .iter()
            .cloned()
            .zip(self.base_map.iter().cloned())
            .collect()
    }

    /// Apply to a fiber vector with explicit base point: the vector must sit
    /// over the image of `y` under the base map.
    pub fn apply(&self, y: &[Rat], v: &FiberVector) -> Result<FiberVector, ComorphismError> {
        if y.len() != self.target.base_dim() {
            return Err(ComorphismError::Shape("target base point dimension".into()));
        }
        if v.components.len() != self.source.rank() {
            return Err(ComorphismError::Shape("source fiber dimension".into()));
        }
        let vals: BTreeMap<Symbol, Rat> = self
            .target
            .base
            .iter()
            .cloned()
            .zip(y.iter().cloned())
            .collect();
        let mut image_base = Vec::with_capacity(self.base_map.len());
        for p in &self.base_map {
            image_base.push(
                p.eval(&vals)
                    .map_err(|e| ComorphismError::Shape(e.to_string()))?,
            );
        }
        if image_base != v.base_point {
            return Err(ComorphismError::BasePointMismatch(format!(
                "vector sits at ({}) but the base map sends y to ({})",
                v.base_point
                    .iter()
                    .map(rat_to_string)
                    .collect::<Vec<_>>()
                    .join(", "),
                image_base
                    .iter()
                    .map(rat_to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let mut comps = Vec::with_capacity(self.target.rank());
        for row in &self.matrix {
            let mut acc = Rat::zero();
            for (entry, x) in row.iter().zip(v.components.iter()) {
                acc += entry
                    .eval(&vals)
                    .map_err(|e| ComorphismError::Shape(e.to_string()))?
                    * x;
            }
            comps.push(acc);
        }
        Ok(FiberVector {
            base_point: y.to_vec(),
            components: comps,
        })
    }

    /// Push a section through: `r_hat(s)(y) = r_y(s(r_base(y)))`.
    /// `s` has one polynomial per source fiber coordinate, over the source
    /// base chart; the result is over the target base chart.
    pub fn section_map(&self, s: &[Poly]) -> Result<Vec<Poly>, ComorphismError> {
        if s.len() != self.source.rank() {
            return Err(ComorphismError::Shape("section has wrong rank".into()));
        }
        let subst = self.base_subst();
        let pulled: Vec<Poly> = s.iter().map(|p| p.substitute(&subst)).collect();
        Ok(self
            .matrix
            .iter()
            .map(|row| {
                row.iter()
                    .zip(pulled.iter())
                    .fold(Poly::zero(), |acc, (entry, comp)| acc.add(&entry.mul(comp)))
            })
            .collect())
    }

    /// Composition `self o earlier` (apply `earlier` first). Base maps
    /// compose contravariantly.
    pub fn compose(&self, earlier: &Comorphism) -> Result<Comorphism, ComorphismError> {
        if !earlier.target.same_charts(&self.source) {
            return Err(ComorphismError::BundleMismatch(format!(
                "cannot compose: {} -> {} after {} -> {}",
                self.source.name, self.target.name, earlier.source.name, earlier.target.name
            )));
        }
        let subst = self.base_subst();
        let base_map: Vec<Poly> = earlier
            .base_map
            .iter()
            .map(|p| p.substitute(&subst))
            .collect();
        let r1: Vec<Vec<Poly>> = earlier
            .matrix
            .iter()
            .map(|row| row.iter().map(|p| p.substitute(&subst)).collect())
            .collect();
        let rows = self.target.rank();
        let mids = self.source.rank();
        let cols = earlier.source.rank();
        let mut matrix = vec![vec![Poly::zero(); cols]; rows];
        #[allow(clippy::needless_range_loop)]
        for i in 0..rows {
            for l in 0..cols {
                let mut acc = Poly::zero();
                for k in 0..mids {
                    acc = acc.add(&self.matrix[i][k].mul(&r1[k][l]));
                }
                matrix[i][l] = acc;
            }
        }
        Comorphism::new(
            earlier.source.clone(),
            self.target.clone(),
            base_map,
            matrix,
        )
    }

    /// Rename symbols across charts and data.
    pub fn rename(&self, map: &BTreeMap<Symbol, Symbol>) -> Comorphism {
        let rename_sym = |s: &Symbol| map.get(s).cloned().unwrap_or_else(|| s.clone());
        let poly_map: BTreeMap<Symbol, Poly> = map
            .iter()
            .map(|(k, v)| (k.clone(), Poly::symbol(v)))
            .collect();
        let rename_bundle = |b: &VBundle| VBundle {
            name: b.name.clone(),
            base: b.base.iter().map(rename_sym).collect(),
            fiber: b.fiber.iter().map(rename_sym).collect(),
        };
        Comorphism {
            source: rename_bundle(&self.source),
            target: rename_bundle(&self.target),
            base_map: self
                .base_map
                .iter()
                .map(|p| p.substitute(&poly_map))
                .collect(),
            matrix: self
                .matrix
                .iter()
                .map(|row| row.iter().map(|p| p.substitute(&poly_map)).collect())
                .collect(),
        }
    }

    /// Tangent functor with an explicit differential prefix.  New base and
    /// fiber symbols `<prefix>u` follow the originals; the base map gains the
    /// total differential of each component, the fiber matrix becomes the
    /// block form `[[R, 0], [DR, R]]`.
    pub fn tangent(&self, prefix: &str) -> Comorphism {
        let lift_bundle = |b: &VBundle| VBundle {
            name: format!("T{}", b.name),
            base: b
                .base
                .iter()
                .cloned()
                .chain(b.base.iter().map(|s| tangent_symbol(prefix, s)))
                .collect(),
            fiber: b
                .fiber
                .iter()
                .cloned()
                .chain(b.fiber.iter().map(|s| tangent_symbol(prefix, s)))
                .collect(),
        };
        let source = lift_bundle(&self.source);
        let target = lift_bundle(&self.target);
        // differential along the target base: D(p) = sum_w dp/dw * <prefix>w
        let differential = |p: &Poly| -> Poly {
            let mut acc = Poly::zero();
            for w in &self.target.base {
                acc = acc.add(&p.diff(w).mul(&Poly::symbol(&tangent_symbol(prefix, w))));
            }
            acc
        };
        let mut base_map = self.base_map.clone();
        base_map.extend(self.base_map.iter().map(differential));
        let r = self.target.rank();
        let c = self.source.rank();
        let mut matrix = vec![vec![Poly::zero(); 2 * c]; 2 * r];
        for i in 0..r {
            for l in 0..c {
                matrix[i][l] = self.matrix[i][l].clone();
                matrix[r + i][l] = differential(&self.matrix[i][l]);
                matrix[r + i][c + l] = self.matrix[i][l].clone();
            }
        }
        Comorphism {
            source,
            target,
            base_map,
            matrix,
        }
    }

    /// Second-order prolongation with prefix naming: charts grow by one and
    /// two applications of the prefix, the base map by its first and second
    /// total differentials, and the fiber matrix becomes the block form
    /// `[[R, 0, 0], [DR, R, 0], [D2R, 2 DR, R]]`.
    pub fn jet2_prolongation(&self, prefix: &str) -> Comorphism {
        let l1 = |s: &Symbol| tangent_symbol(prefix, s);
        let l2 = |s: &Symbol| tangent_symbol(prefix, &tangent_symbol(prefix, s));
        let lift_bundle = |b: &VBundle| VBundle {
            name: format!("T2{}", b.name),
            base: b
                .base
                .iter()
                .cloned()
                .chain(b.base.iter().map(l1))
                .chain(b.base.iter().map(l2))
                .collect(),
            fiber: b
                .fiber
                .iter()
                .cloned()
                .chain(b.fiber.iter().map(l1))
                .chain(b.fiber.iter().map(l2))
                .collect(),
        };
        // chain-rule differential: w -> <prefix>w -> <prefix><prefix>w
        let differential = |p: &Poly| -> Poly {
            let mut acc = Poly::zero();
            for w in &self.target.base {
                acc = acc.add(&p.diff(w).mul(&Poly::symbol(&l1(w))));
                acc = acc.add(&p.diff(&l1(w)).mul(&Poly::symbol(&l2(w))));
            }
            acc
        };
        let mut base_map = self.base_map.clone();
        let d1: Vec<Poly> = self.base_map.iter().map(&differential).collect();
        let d2: Vec<Poly> = d1.iter().map(&differential).collect();
        base_map.extend(d1);
        base_map.extend(d2);
        let r = self.target.rank();
        let c = self.source.rank();
        let mut matrix = vec![vec![Poly::zero(); 3 * c]; 3 * r];
        for i in 0..r {
            for l in 0..c {
                let e = &self.matrix[i][l];
                let de = differential(e);
                let d2e = differential(&de);
                matrix[i][l] = e.clone();
                matrix[r + i][l] = de.clone();
                matrix[r + i][c + l] = e.clone();
                matrix[2 * r + i][l] = d2e;
                matrix[2 * r + i][c + l] = de.scale(&Rat::from_integer(2.into()));
                matrix[2 * r + i][2 * c + l] = e.clone();
            }
        }
        Comorphism {
            source: lift_bundle(&self.source),
            target: lift_bundle(&self.target),
            base_map,
            matrix,
        }
    }

    /// Reparametrize the target base: substitute `param` (old target base
    /// symbol -> polynomial in the new base chart) through all data.
    pub fn substitute_target_base(
        &self,
        new_base: Vec<Symbol>,
        param: &BTreeMap<Symbol, Poly>,
    ) -> Result<Comorphism, ComorphismError> {
        for u in &self.target.base {
            if !param.contains_key(u) {
                return Err(ComorphismError::Shape(format!(
                    "no parametrization for target base symbol {}",
                    u.to_display()
                )));
            }
        }
        let target = VBundle {
            name: self.target.name.clone(),
            base: new_base,
            fiber: self.target.fiber.clone(),
        };
        Comorphism::new(
            self.source.clone(),
            target,
            self.base_map.iter().map(|p| p.substitute(param)).collect(),
            self.matrix
                .iter()
                .map(|row| row.iter().map(|p| p.substitute(param)).collect())
                .collect(),
        )
    }

    /// Weighted-homogeneity check of every defining equation against the
    /// graded weights carried by the chart symbols: base equations must be
    /// homogeneous of the source symbol's weight, and the matrix entry in
    /// target-fiber row of weight `wr` and source-fiber column of weight `wc`
    /// must be homogeneous of weight `wr - wc` (zero when `wr < wc`).
    pub fn check_weighted(&self) -> Witnessed {
        for (u, p) in self.source.base.iter().zip(self.base_map.iter()) {
            if !p.is_homogeneous_of(u.weight) {
                return Witnessed::fail(format!(
                    "base equation for {} is not homogeneous of weight {}: {}",
                    u.to_display(),
                    u.weight,
                    p
                ));
            }
        }
        for (i, row) in self.matrix.iter().enumerate() {
            let wr = self.target.fiber[i].weight;
            for (l, entry) in row.iter().enumerate() {
                let wc = self.source.fiber[l].weight;
                let ok = if wr >= wc {
                    entry.is_homogeneous_of(wr - wc)
                } else {
                    entry.is_zero()
                };
                if !ok {
                    return Witnessed::fail(format!(
                        "matrix entry ({} <- {}) breaks bi-weight homogeneity: {}",
                        self.target.fiber[i].to_display(),
                        self.source.fiber[l].to_display(),
                        entry
                    ));
                }
            }
        }
        Witnessed::pass()
    }

    /// Order reduction of a weighted comorphism: remove every defining
    /// equation (base component, fiber row) and every chart symbol of weight
    /// greater than `j`.  Fails if a surviving equation mentions a removed
    /// symbol (which homogeneity excludes).
    pub fn reduce_order(&self, j: u32) -> Result<Comorphism, ComorphismError> {
        let keep_t_base: Vec<Symbol> = self
            .target
            .base
            .iter()
            .filter(|s| s.weight <= j)
            .cloned()
            .collect();
        let keep = |syms: &[Symbol]| -> Vec<usize> {
            syms.iter()
                .enumerate()
                .filter(|(_, s)| s.weight <= j)
                .map(|(i, _)| i)
                .collect()
        };
        let src_base_idx = keep(&self.source.base);
        let src_fiber_idx = keep(&self.source.fiber);
        let tgt_fiber_idx = keep(&self.target.fiber);
        let source = VBundle {
            name: self.source.name.clone(),
            base: src_base_idx
                .iter()
                .map(|&i| self.source.base[i].clone())
                .collect(),
            fiber: src_fiber_idx
                .iter()
                .map(|&i| self.source.fiber[i].clone())
                .collect(),
        };
        let target = VBundle {
            name: self.target.name.clone(),
            base: keep_t_base.clone(),
            fiber: tgt_fiber_idx
                .iter()
                .map(|&i| self.target.fiber[i].clone())
                .collect(),
        };
        let check_survives = |p: &Poly| -> Result<(), ComorphismError> {
            poly_uses_only(p, &keep_t_base).map_err(|_| {
                ComorphismError::Shape(format!(
                    "equation {p} survives order reduction to {j} but mentions removed symbols"
                ))
            })
        };
        let mut base_map = Vec::new();
        for &i in &src_base_idx {
            check_survives(&self.base_map[i])?;
            base_map.push(self.base_map[i].clone());
        }
        // removed columns must not feed surviving rows
        for &i in &tgt_fiber_idx {
            for (l, entry) in self.matrix[i].iter().enumerate() {
                if !src_fiber_idx.contains(&l) && !entry.is_zero() {
                    return Err(ComorphismError::Shape(format!(
                        "surviving row {} keeps a nonzero entry at removed column {}",
                        self.target.fiber[i].to_display(),
                        self.source.fiber[l].to_display()
                    )));
                }
            }
        }
        let mut matrix = Vec::new();
        for &i in &tgt_fiber_idx {
            let mut row = Vec::new();
            for &l in &src_fiber_idx {
                check_survives(&self.matrix[i][l])?;
                row.push(self.matrix[i][l].clone());
            }
            matrix.push(row);
        }
        Comorphism::new(source, target, base_map, matrix)
    }
}

/// A vector-bundle morphism `phi: E -> E'` covering `phi_base: M -> M'`:
/// `base_map[j]` is the polynomial (over the source base) for the `j`-th
/// target base coordinate, and `matrix` is `rank' x rank` over the source
/// base with `Y' = matrix(x) * Y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VBMorphism {
    pub source: VBundle,
    pub target: VBundle,
    pub base_map: Vec<Poly>,
    pub matrix: Vec<Vec<Poly>>,
}

impl VBMorphism {
    pub fn new(
        source: VBundle,
        target: VBundle,
        base_map: Vec<Poly>,
        matrix: Vec<Vec<Poly>>,
    ) -> Result<Self, ComorphismError> {
        if base_map.len() != target.base_dim() {
            return Err(ComorphismError::Shape("morphism base map dimension".into()));
        }
        if matrix.len() != target.rank() || matrix.iter().any(|r| r.len() != source.rank()) {
            return Err(ComorphismError::Shape("morphism matrix shape".into()));
        }
        for p in base_map.iter().chain(matrix.iter().flatten()) {
            poly_uses_only(p, &source.base)?;
        }
        Ok(VBMorphism {
            source,
            target,
            base_map,
            matrix,
        })
    }

    /// Tangent prolongation of the morphism, with the same prefix convention
    /// as [`Comorphism::tangent`].
    pub fn tangent(&self, prefix: &str) -> VBMorphism {
        let lift_bundle = |b: &VBundle| VBundle {
            name: format!("T{}", b.name),
            base: b
                .base
                .iter()
                .cloned()
                .chain(b.base.iter().map(|s| tangent_symbol(prefix, s)))
                .collect(),
            fiber: b
                .fiber
                .iter()
                .cloned()
                .chain(b.fiber.iter().map(|s| tangent_symbol(prefix, s)))
                .collect(),
        };
        let differential = |p: &Poly| -> Poly {
            let mut acc = Poly::zero();
            for w in &self.source.base {
                acc = acc.add(&p.diff(w).mul(&Poly::symbol(&tangent_symbol(prefix, w))));
            }
            acc
        };
        let mut base_map = self.base_map.clone();
        base_map.extend(self.base_map.iter().map(differential));
        let r = self.target.rank();
        let c = self.source.rank();
        let mut matrix = vec![vec![Poly::zero(); 2 * c]; 2 * r];
        for i in 0..r {
            for l in 0..c {
                matrix[i][l] = self.matrix[i][l].clone();
                matrix[r + i][l] = differential(&self.matrix[i][l]);
                matrix[r + i][c + l] = self.matrix[i][l].clone();
            }
        }
        VBMorphism {
            source: lift_bundle(&self.source),
            target: lift_bundle(&self.target),
            base_map,
            matrix,
        }
    }
}

/// The dual of a comorphism: a plain vector-bundle morphism
/// `E2* -> E1*` covering the base map, with the transposed matrix.
/// The pairing identity `< dual(r)(eta), v > = < eta, r_y(v) >` holds by
/// construction and is exercised in tests; dualizing twice returns the
/// original data over the double-dual charts.
pub fn dualize(r: &Comorphism) -> VBMorphism {
    let rows = r.source.rank();
    let cols = r.target.rank();
    let mut matrix = vec![vec![Poly::zero(); cols]; rows];
    #[allow(clippy::needless_range_loop)]
    for i in 0..rows {
        for j in 0..cols {
            matrix[i][j] = r.matrix[j][i].clone();
        }
    }
    VBMorphism {
        source: r.target.dual(),
        target: r.source.dual(),
        base_map: r.base_map.clone(),
        matrix,
    }
}

/// The dual of a vector-bundle morphism, as a comorphism.
pub fn dualize_morphism(m: &VBMorphism) -> Comorphism {
    let rows = m.source.rank();
    let cols = m.target.rank();
    let mut matrix = vec![vec![Poly::zero(); cols]; rows];
    #[allow(clippy::needless_range_loop)]
    for i in 0..rows {
        for j in 0..cols {
            matrix[i][j] = m.matrix[j][i].clone();
        }
    }
    Comorphism {
        source: m.target.dual(),
        target: m.source.dual(),
        base_map: m.base_map.clone(),
        matrix,
    }
}

/// Morphism of comorphisms: given `phi1: E1 -> E1'`, `phi2: E2 -> E2'` and
/// comorphisms `r: sigma1 -> sigma2`, `rp: sigma1' -> sigma2'`, check the two
/// defining identities
///
/// * base maps commute: `rp_base o phi2_base = phi1_base o r_base`,
/// * fibers intertwine: `F2(y) R(y) = R'(phi2_base(y)) F1(r_base(y))`,
///
/// as polynomial identities over the base of `sigma2`.
pub fn zm_morphism_check(
    phi1: &VBMorphism,
    phi2: &VBMorphism,
    r: &Comorphism,
    rp: &Comorphism,
) -> Result<Witnessed, ComorphismError> {
    if !r.source.same_charts(&phi1.source)
        || !r.target.same_charts(&phi2.source)
        || !rp.source.same_charts(&phi1.target)
        || !rp.target.same_charts(&phi2.target)
    {
        return Err(ComorphismError::BundleMismatch(
            "morphism-of-comorphisms data does not line up".into(),
        ));
    }
    // substitutions into M2' and M1 data
    let phi2_subst: BTreeMap<Symbol, Poly> = rp
        .target
        .base
        .iter()
        .cloned()
        .zip(phi2.base_map.iter().cloned())
        .collect();
    let r_subst = r.base_subst();

    // base squares: rp.base_map (per M1'-symbol, in M2') o phi2 vs
    //               phi1.base_map (per M1'-symbol, in M1) o r.base_map
    for (j, u) in rp.source.base.iter().enumerate() {
        let lhs = rp.base_map[j].substitute(&phi2_subst);
        let rhs = phi1.base_map[j].substitute(&r_subst);
        let resid = lhs.sub(&rhs);
        if !resid.is_zero() {
            return Ok(Witnessed::fail(format!(
                "base maps do not commute at {}: residual {}",
                u.to_display(),
                resid
            )));
        }
    }

    // fiber squares
    let rank1 = r.source.rank();
    let rank2 = r.target.rank();
    let rank2p = rp.target.rank();
    let rank1p = rp.source.rank();
    // lhs = F2 * R  (rank2' x rank1)
    let mut lhs = vec![vec![Poly::zero(); rank1]; rank2p];
    #[allow(clippy::needless_range_loop)]
    for i in 0..rank2p {
        for l in 0..rank1 {
            let mut acc = Poly::zero();
            for k in 0..rank2 {
                acc = acc.add(&phi2.matrix[i][k].mul(&r.matrix[k][l]));
            }
            lhs[i][l] = acc;
        }
    }
    // rhs = R'(phi2(y)) * F1(r(y))  (rank2' x rank1)
    let rp_mat: Vec<Vec<Poly>> = rp
        .matrix
        .iter()
        .map(|row| row.iter().map(|p| p.substitute(&phi2_subst)).collect())
        .collect();
    let f1_mat: Vec<Vec<Poly>> = phi1
        .matrix
        .iter()
        .map(|row| row.iter().map(|p| p.substitute(&r_subst)).collect())
        .collect();
    #[allow(clippy::needless_range_loop)]
    for i in 0..rank2p {
        for l in 0..rank1 {
            let mut acc = Poly::zero();
            for k in 0..rank1p {
                acc = acc.add(&rp_mat[i][k].mul(&f1_mat[k][l]));
            }
            let resid = lhs[i][l].sub(&acc);
            if !resid.is_zero() {
                return Ok(Witnessed::fail(format!(
                    "fiber squares fail at ({} <- {}): residual {}",
                    rp.target.fiber[i].to_display(),
                    r.source.fiber[l].to_display(),
                    resid
                )));
            }
        }
    }
    Ok(Witnessed::pass())
}

/// A subbundle presented by constant-coefficient spans: the base locus is the
/// linear span of `base_span`'s columns, the fiber the span of
/// `fiber_span`'s columns.  `bundle` carries the charts of the restricted
/// object (parameters of the spans).
#[derive(Debug, Clone)]
pub struct SubBundle {
    pub bundle: VBundle,
    /// `old_base_dim x new_base_dim`, constant.
    pub base_span: Vec<Vec<Rat>>,
    /// `old_rank x new_rank`, constant.
    pub fiber_span: Vec<Vec<Rat>>,
}

impl SubBundle {
    /// The full bundle as a subbundle of itself.
    pub fn full(bundle: &VBundle) -> Self {
        let eye = |n: usize| -> Vec<Vec<Rat>> {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                Rat::from_integer(1.into())
                            } else {
                                Rat::zero()
                            }
                        })
                        .collect()
                })
                .collect()
        };
        SubBundle {
            bundle: bundle.clone(),
            base_span: eye(bundle.base_dim()),
            fiber_span: eye(bundle.rank()),
        }
    }
}

/// Result of a fine restriction: either the restricted comorphism or a
/// witness of why the restriction does not exist.
#[derive(Debug, Clone)]
pub enum Restriction {
    Restricted(Comorphism),
    Fails { witness: String },
}

/// Try to restrict `r: sigma1 -> sigma2` to subbundles of source and target.
/// The restriction exists iff the base map sends the target sub-locus into
/// the source sub-locus and each restricted fiber map sends the source span
/// into the target span, both as exact polynomial identities.
pub fn fine_restriction(
    r: &Comorphism,
    sub1: &SubBundle,
    sub2: &SubBundle,
) -> Result<Restriction, ComorphismError> {
    if sub1.base_span.len() != r.source.base_dim()
        || sub1.fiber_span.len() != r.source.rank()
        || sub2.base_span.len() != r.target.base_dim()
        || sub2.fiber_span.len() != r.target.rank()
    {
        return Err(ComorphismError::Shape("subbundle span shapes".into()));
    }
    // parametrization of the target sub-locus
    let mut param: BTreeMap<Symbol, Poly> = BTreeMap::new();
    for (k, u) in r.target.base.iter().enumerate() {
        let mut p = Poly::zero();
        for (j, s) in sub2.bundle.base.iter().enumerate() {
            p = p.add(&Poly::symbol(s).scale(&sub2.base_span[k][j]));
        }
        param.insert(u.clone(), p);
    }
    // base containment: solve base_map o param = base_span1 * c
    let w: Vec<Poly> = r.base_map.iter().map(|p| p.substitute(&param)).collect();
    let new_base_map = match constant_span_solve(&sub1.base_span, &w) {
        Ok(c) => c,
        Err((row, resid)) => {
            return Ok(Restriction::Fails {
                witness: format!(
                    "base map leaves the source sub-locus at component {} ({}): residual {}",
                    row,
                    r.source
                        .base
                        .get(row)
                        .map(|s| s.to_display())
                        .unwrap_or_default(),
                    resid
                ),
            })
        }
    };
    // fiber containment: columns of R|param * S1 must lie in span(S2)
    let rmat: Vec<Vec<Poly>> = r
        .matrix
        .iter()
        .map(|row| row.iter().map(|p| p.substitute(&param)).collect())
        .collect();
    let new_rank1 = sub1.fiber_span.first().map(|r| r.len()).unwrap_or(0);
    let new_rank2 = sub2.fiber_span.first().map(|r| r.len()).unwrap_or(0);
    let mut new_matrix = vec![vec![Poly::zero(); new_rank1]; new_rank2];
    for col in 0..new_rank1 {
        // m = R * (col-th basis vector of S1)
        let mut m: Vec<Poly> = Vec::with_capacity(r.target.rank());
        for row in &rmat {
            let mut acc = Poly::zero();
            for (l, entry) in row.iter().enumerate() {
                acc = acc.add(&entry.scale(&sub1.fiber_span[l][col]));
            }
            m.push(acc);
        }
        match constant_span_solve(&sub2.fiber_span, &m) {
            Ok(c) => {
                for (i, p) in c.into_iter().enumerate() {
                    new_matrix[i][col] = p;
                }
            }
            Err((row, resid)) => {
                return Ok(Restriction::Fails {
                    witness: format!(
                        "fiber image of source span column {} leaves the target span at {} : residual {}",
                        col,
                        r.target.fiber.get(row).map(|s| s.to_display()).unwrap_or_default(),
                        resid
                    ),
                })
            }
        }
    }
    let restricted = Comorphism::new(
        sub1.bundle.clone(),
        sub2.bundle.clone(),
        new_base_map,
        new_matrix,
    )?;
    Ok(Restriction::Restricted(restricted))
}

/// The canonical flip of a manifold `N` with chart `syms`, as a comorphism
/// from the tangent prolongation of `tau_N` to the tangent bundle of `TN`.
///
/// Conventions: the inner tangent lift uses `inner` as prefix (so `TN` has
/// coordinates `(u, <inner>u)`), the outer differential uses jets shifted by
/// the `outer` prefix.  With `inner = "v"` and `outer = "w"`, the flip reads
/// `(u, vu, wu, wvu) -> (u, wu, vu, wvu)`.
pub fn flip(syms: &[Symbol], inner: &str, outer: &str) -> Comorphism {
    let v = |s: &Symbol| tangent_symbol(inner, s);
    let w = |s: &Symbol| tangent_symbol(outer, s);
    let n = syms.len();
    // source bundle: T(tau_N): TTN -> TN with base (u, wu), fiber (vu, wvu)
    let source = VBundle {
        name: "T(tau)".into(),
        base: syms.iter().cloned().chain(syms.iter().map(w)).collect(),
        fiber: syms
            .iter()
            .map(v)
            .chain(syms.iter().map(|s| w(&v(s))))
            .collect(),
    };
    // target bundle: tau_TN: TTN -> TN with base (u, vu), fiber (wu, wvu)
    let target = VBundle {
        name: "tau_T".into(),
        base: syms.iter().cloned().chain(syms.iter().map(v)).collect(),
        fiber: syms
            .iter()
            .map(w)
            .chain(syms.iter().map(|s| w(&v(s))))
            .collect(),
    };
    // base map: u -> u, wu -> vu
    let mut base_map: Vec<Poly> = syms.iter().map(Poly::symbol).collect();
    base_map.extend(syms.iter().map(|s| Poly::symbol(&v(s))));
    // matrix: row wu picks column vu, row wvu picks column wvu
    let mut matrix = vec![vec![Poly::zero(); 2 * n]; 2 * n];
    for i in 0..n {
        matrix[i][i] = Poly::one();
        matrix[n + i][n + i] = Poly::one();
    }
    Comorphism {
        source,
        target,
        base_map,
        matrix,
    }
}

// ---------------------------------------------------------------------------
// Exact linear algebra helpers
// ---------------------------------------------------------------------------

/// Solve `B * c = w` for `c`, where `B` is a constant rational matrix
/// (rows x cols) and `w` a vector of polynomials.  Returns the coefficient
/// polynomials, or the index of the first inconsistent row with its residual
/// polynomial.  `B` need not be square; the system must be uniquely solvable
/// on its column space (full column rank).
pub fn constant_span_solve(b: &[Vec<Rat>], w: &[Poly]) -> Result<Vec<Poly>, (usize, Poly)> {
    let rows = b.len();
    let cols = b.first().map(|r| r.len()).unwrap_or(0);
    // Gauss-Jordan elimination over the rationals, carrying the polynomial
    // right-hand side along
    let mut a: Vec<Vec<Rat>> = b.to_vec();
    let mut rhs: Vec<Poly> = w.to_vec();
    let mut row_origin: Vec<usize> = (0..rows).collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
    let mut next_row = 0usize;
    for col in 0..cols {
        let mut piv = None;
        for r in next_row..rows {
            if !a[r][col].is_zero() {
                piv = Some(r);
                break;
            }
        }
        let Some(p) = piv else { continue };
        a.swap(next_row, p);
        rhs.swap(next_row, p);
        row_origin.swap(next_row, p);
        let pivval = a[next_row][col].clone();
        for x in a[next_row].iter_mut() {
            *x = &*x / &pivval;
        }
        rhs[next_row] = rhs[next_row].scale(&(Rat::from_integer(1.into()) / &pivval));
        for r in 0..rows {
            if r != next_row && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                let scaled: Vec<Rat> = a[next_row].iter().map(|x| x * &factor).collect();
                for (x, s) in a[r].iter_mut().zip(scaled.iter()) {
                    *x = &*x - s;
                }
                let sub = rhs[next_row].scale(&factor);
                rhs[r] = rhs[r].sub(&sub);
            }
        }
        pivots.push((next_row, col));
        next_row += 1;
        if next_row == rows {
            break;
        }
    }
    // rows without pivots must have zero rhs
    for r in next_row..rows {
        if !rhs[r].is_zero() {
            return Err((row_origin[r], rhs[r].clone()));
        }
    }
    // columns without pivots: the span basis is rank-deficient; treat the
    // missing coefficients as zero (solution may not be unique, any exact
    // representative certifies membership)
    let mut c = vec![Poly::zero(); cols];
    for (row, col) in pivots {
        c[col] = rhs[row].clone();
    }
    Ok(c)
}

/// Determinant of a square polynomial matrix (expansion by minors; intended
/// for small ranks).
pub fn poly_det(m: &[Vec<Poly>]) -> Poly {
    let n = m.len();
    if n == 0 {
        return Poly::one();
    }
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Poly::zero();
    for (j, entry) in m[0].iter().enumerate() {
        if entry.is_zero() {
            continue;
        }
        let minor: Vec<Vec<Poly>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, p)| p.clone())
                    .collect()
            })
            .collect();
        let term = entry.mul(&poly_det(&minor));
        acc = if j % 2 == 0 {
            acc.add(&term)
        } else {
            acc.sub(&term)
        };
    }
    acc
}

/// Invert a square rational matrix; `None` if singular.
pub fn invert_rat(m: &[Vec<Rat>]) -> Option<Vec<Vec<Rat>>> {
    let n = m.len();
    let one = Rat::from_integer(1.into());
    let mut a = m.to_vec();
    let mut inv: Vec<Vec<Rat>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { one.clone() } else { Rat::zero() })
                .collect()
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        inv.swap(col, piv);
        let pv = a[col][col].clone();
        for x in a[col].iter_mut() {
            *x = &*x / &pv;
        }
        for x in inv[col].iter_mut() {
            *x = &*x / &pv;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                let arow: Vec<Rat> = a[col].iter().map(|x| x * &f).collect();
                let irow: Vec<Rat> = inv[col].iter().map(|x| x * &f).collect();
                for (x, s) in a[r].iter_mut().zip(arow.iter()) {
                    *x = &*x - s;
                }
                for (x, s) in inv[r].iter_mut().zip(irow.iter()) {
                    *x = &*x - s;
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat_int, Poly, Symbol};

    fn r3() -> Vec<Symbol> {
        (1..=3).map(|a| Symbol::new(&format!("x{a}"), 0)).collect()
    }

    #[test]
    fn flip_interchanges_coordinates() {
        // (x, vx, wx, wvx) -> (x, wx, vx, wvx): base map sends wx -> vx and
        // the fiber matrix routes vu-columns to wu-rows.
        let syms = r3();
        let f = flip(&syms, "v", "w");
        assert_eq!(f.base_map[0], Poly::symbol(&syms[0]));
        assert_eq!(f.base_map[3], Poly::symbol(&tangent_symbol("v", &syms[0])));
        // row wx1 has a single 1 at column vx1
        assert_eq!(f.matrix[0][0], Poly::one());
        assert!(f.matrix[0][1].is_zero());
        assert_eq!(f.matrix[3][3], Poly::one());
    }

    #[test]
    fn flip_twice_is_identity() {
        let syms = r3();
        let f = flip(&syms, "v", "w");
        // rename the target chart of the first copy to the source chart of
        // the second: swap the roles of v and w
        let mut map = BTreeMap::new();
        for s in &syms {
            let vs = tangent_symbol("v", s);
            let ws = tangent_symbol("w", s);
            map.insert(vs.clone(), ws.clone());
            map.insert(ws, vs);
        }
        let f2 = f.rename(&map);
        let composite = f.compose(&f2).unwrap();
        // composite must be the identity relation on its charts
        for (j, u) in composite.source.base.iter().enumerate() {
            assert_eq!(composite.base_map[j], Poly::symbol(u));
        }
        for i in 0..composite.matrix.len() {
            for l in 0..composite.matrix[i].len() {
                if i == l {
                    assert_eq!(composite.matrix[i][l], Poly::one());
                } else {
                    assert!(composite.matrix[i][l].is_zero());
                }
            }
        }
    }

    #[test]
    fn section_map_is_module_map() {
        // r_hat(f s) = (f o base) r_hat(s) for a nontrivial comorphism
        let x = Symbol::new("x", 0);
        let u = Symbol::new("u", 0);
        let e1 = VBundle::new("E1", vec![x.clone()], vec![Symbol::new("a", 1)]);
        let e2 = VBundle::new("E2", vec![u.clone()], vec![Symbol::new("b", 1)]);
        // base map x = u^2, matrix [u]
        let r = Comorphism::new(
            e1,
            e2,
            vec![Poly::symbol(&u).pow(2)],
            vec![vec![Poly::symbol(&u)]],
        )
        .unwrap();
        let s = vec![Poly::symbol(&x)]; // s(x) = x e
        let f = Poly::symbol(&x).add(&Poly::one()); // f = x + 1
        let fs = vec![f.mul(&s[0])];
        let lhs = r.section_map(&fs).unwrap();
        let rhs = {
            let pulled_f = f.substitute(&r.base_subst());
            r.section_map(&s)
                .unwrap()
                .iter()
                .map(|p| p.mul(&pulled_f))
                .collect::<Vec<_>>()
        };
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn apply_checks_base_point() {
        let x = Symbol::new("x", 0);
        let u = Symbol::new("u", 0);
        let e1 = VBundle::new("E1", vec![x], vec![Symbol::new("a", 1)]);
        let e2 = VBundle::new("E2", vec![u.clone()], vec![Symbol::new("b", 1)]);
        let r = Comorphism::new(
            e1,
            e2,
            vec![Poly::symbol(&u).pow(2)],
            vec![vec![Poly::symbol(&u)]],
        )
        .unwrap();
        let y = vec![rat_int(3)];
        let good = FiberVector {
            base_point: vec![rat_int(9)],
            components: vec![rat_int(2)],
        };
        let out = r.apply(&y, &good).unwrap();
        assert_eq!(out.components, vec![rat_int(6)]);
        let bad = FiberVector {
            base_point: vec![rat_int(8)],
            components: vec![rat_int(2)],
        };
        assert!(matches!(
            r.apply(&y, &bad),
            Err(ComorphismError::BasePointMismatch(_))
        ));
    }

    #[test]
    fn dualize_is_involutive_and_pairs() {
        let x = Symbol::new("x", 0);
        let u = Symbol::new("u", 0);
        let e1 = VBundle::new(
            "E1",
            vec![x],
            vec![Symbol::new("a1", 1), Symbol::new("a2", 1)],
        );
        let e2 = VBundle::new("E2", vec![u.clone()], vec![Symbol::new("b", 1)]);
        let r = Comorphism::new(
            e1,
            e2,
            vec![Poly::symbol(&u)],
            vec![vec![Poly::symbol(&u), Poly::one()]],
        )
        .unwrap();
        let star = dualize(&r);
        let back = dualize_morphism(&star);
        assert_eq!(back.base_map, r.base_map);
        assert_eq!(back.matrix, r.matrix);
        // numeric pairing check at u = 5: <r*(eta), v> = <eta, r(v)>
        let uval = rat_int(5);
        let v = vec![rat_int(2), rat_int(7)];
        let eta = vec![rat_int(4)];
        // r(v) = [5*2 + 7] = 17, <eta, r(v)> = 68
        // r*(eta) = [5*4, 1*4] = (20, 4), <.,v> = 40 + 28 = 68
        let vals: BTreeMap<Symbol, Rat> = [(Symbol::new("u", 0), uval)].into_iter().collect();
        let rv: Rat = r.matrix[0]
            .iter()
            .zip(v.iter())
            .map(|(p, c)| p.eval(&vals).unwrap() * c)
            .sum();
        let lhs: Rat = eta[0].clone() * rv;
        let rstar_eta: Vec<Rat> = star
            .matrix
            .iter()
            .map(|row| row[0].eval(&vals).unwrap() * &eta[0])
            .collect();
        let rhs: Rat = rstar_eta.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn constant_span_solve_detects_membership() {
        // span of (1,1,0) and (0,1,1) in Q^3
        let b = vec![
            vec![rat_int(1), rat_int(0)],
            vec![rat_int(1), rat_int(1)],
            vec![rat_int(0), rat_int(1)],
        ];
        let t = Symbol::new("t", 0);
        // w = (t, t+3, 3) = t*(1,1,0) + 3*(0,1,1): member
        let w = vec![
            Poly::symbol(&t),
            Poly::symbol(&t).add(&Poly::int(3)),
            Poly::int(3),
        ];
        let c = constant_span_solve(&b, &w).unwrap();
        assert_eq!(c[0], Poly::symbol(&t));
        assert_eq!(c[1], Poly::int(3));
        // w = (t, 0, 0): not a member
        let bad = vec![Poly::symbol(&t), Poly::zero(), Poly::zero()];
        assert!(constant_span_solve(&b, &bad).is_err());
    }

    #[test]
    fn reduce_order_drops_heavy_equations() {
        // weighted chart: target base (x wt0, y wt1), source base (x wt0,
        // xd wt1), fibers with weights 0 and 1; entries consistent
        let x = Symbol::new("x", 0);
        let xd = Symbol::jet("x", 1, 1);
        let y = Symbol::new("y", 1);
        let vx = Symbol {
            name: "vx".into(),
            jet: 0,
            weight: 0,
        };
        let vy = Symbol {
            name: "vy".into(),
            jet: 0,
            weight: 1,
        };
        let a = Symbol {
            name: "a".into(),
            jet: 0,
            weight: 0,
        };
        let ad = Symbol {
            name: "a".into(),
            jet: 1,
            weight: 1,
        };
        let source = VBundle::new("S", vec![x.clone(), xd.clone()], vec![a, ad]);
        let target = VBundle::new("T", vec![x.clone(), y.clone()], vec![vx, vy]);
        let r = Comorphism::new(
            source,
            target,
            vec![Poly::symbol(&x), Poly::symbol(&y)],
            vec![
                vec![Poly::one(), Poly::zero()],
                vec![Poly::symbol(&y), Poly::one()],
            ],
        )
        .unwrap();
        assert!(r.check_weighted().pass);
        let red = r.reduce_order(0).unwrap();
        assert_eq!(red.source.base.len(), 1);
        assert_eq!(red.source.fiber.len(), 1);
        assert_eq!(red.target.fiber.len(), 1);
        assert_eq!(red.matrix[0][0], Poly::one());
    }
}
