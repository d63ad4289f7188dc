//! Anchored brackets in local coordinates and their structure comorphisms.
//!
//! An order-1 object is a bundle `E -> M` with two anchor matrices
//! `QL, QR: m x n` (polynomials over the base chart) and bracket structure
//! functions `C[k][i][j]` -- the coefficient of `e_k` in `[e_i, e_j]`.  The
//! bracket of arbitrary polynomial sections is
//!
//! `[a, b]^k = rhoL(a)(b^k) - rhoR(b)(a^k) + C^k_{ij} a^i b^j`,
//!
//! which satisfies the Leibniz rules
//! `[a, f b] = f [a, b] + rhoL(a)(f) b` and
//! `[f a, b] = f [a, b] - rhoR(b)(f) a`.
//!
//! The structure comorphism `kappa_of` packages the same data as a
//! comorphism from the tangent prolongation `T sigma: TE -> TM` to
//! `tau_E: TE -> E`; `algebroid_of` inverts it and fails loudly on data that
//! is not in normal form.

use crate::comorphism::{
    zm_morphism_check, Comorphism, ComorphismError, VBMorphism, VBundle, Witnessed,
};
use crate::expr::{ExprError, Poly, Symbol};

use std::fmt;

/// Errors of the algebroid layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlgebroidError {
    Shape(String),
    /// Structure-comorphism data whose jet block is not the identity (or is
    /// otherwise outside the normal form).
    NotCoreIdentity(String),
    Expr(ExprError),
    Comorphism(ComorphismError),
}

impl fmt::Display for AlgebroidError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgebroidError::Shape(s) => write!(f, "shape error: {s}"),
            AlgebroidError::NotCoreIdentity(s) => {
                write!(f, "not in normal form (core block): {s}")
            }
            AlgebroidError::Expr(e) => write!(f, "{e}"),
            AlgebroidError::Comorphism(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AlgebroidError {}

impl From<ComorphismError> for AlgebroidError {
    fn from(e: ComorphismError) -> Self {
        AlgebroidError::Comorphism(e)
    }
}

impl From<ExprError> for AlgebroidError {
    fn from(e: ExprError) -> Self {
        AlgebroidError::Expr(e)
    }
}

/// The total differential along first jets of the chart `base`:
/// `D(p) = sum_a dp/dx^a * x^a.d1`.
pub fn jet_differential(p: &Poly, base: &[Symbol]) -> Poly {
    let mut acc = Poly::zero();
    for x in base {
        acc = acc.add(&p.diff(x).mul(&Poly::symbol(&x.shift_jet())));
    }
    acc
}

/// Apply the vector field with components `vf` (over the chart `base`) to a
/// function.
pub fn apply_vector_field(vf: &[Poly], base: &[Symbol], f: &Poly) -> Poly {
    vf.iter()
        .zip(base.iter())
        .fold(Poly::zero(), |acc, (comp, x)| {
            acc.add(&comp.mul(&f.diff(x)))
        })
}

/// An anchored bracket on a trivialized bundle, order 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Algebroid1 {
    pub name: String,
    /// Base chart (weight 0).
    pub base: Vec<Symbol>,
    /// Fiber chart (weight 1).
    pub fiber: Vec<Symbol>,
    /// Left anchor `QL[a][i]`, `m x n` over the base.
    pub anchor_left: Vec<Vec<Poly>>,
    /// Right anchor `QR[a][i]`, `m x n` over the base.
    pub anchor_right: Vec<Vec<Poly>>,
    /// Structure functions `C[k][i][j]`: coefficient of `e_k` in `[e_i, e_j]`.
    pub bracket: Vec<Vec<Vec<Poly>>>,
}

impl Algebroid1 {
    pub fn new(
        name: &str,
        base: Vec<Symbol>,
        fiber: Vec<Symbol>,
        anchor_left: Vec<Vec<Poly>>,
        anchor_right: Vec<Vec<Poly>>,
        bracket: Vec<Vec<Vec<Poly>>>,
    ) -> Result<Self, AlgebroidError> {
        let m = base.len();
        let n = fiber.len();
        let check_mat = |mat: &Vec<Vec<Poly>>, what: &str| -> Result<(), AlgebroidError> {
            if mat.len() != m || mat.iter().any(|r| r.len() != n) {
                return Err(AlgebroidError::Shape(format!("{what} must be {m} x {n}")));
            }
            Ok(())
        };
        check_mat(&anchor_left, "left anchor")?;
        check_mat(&anchor_right, "right anchor")?;
        if bracket.len() != n
            || bracket
                .iter()
                .any(|p| p.len() != n || p.iter().any(|q| q.len() != n))
        {
            return Err(AlgebroidError::Shape(format!(
                "bracket table must be {n} x {n} x {n}"
            )));
        }
        for p in anchor_left
            .iter()
            .chain(anchor_right.iter())
            .flatten()
            .chain(bracket.iter().flatten().flatten())
        {
            for s in p.symbols() {
                if !base.contains(&s) {
                    return Err(AlgebroidError::Shape(format!(
                        "structure function {p} mentions {} outside the base chart",
                        s.to_display()
                    )));
                }
            }
        }
        Ok(Algebroid1 {
            name: name.to_string(),
            base,
            fiber,
            anchor_left,
            anchor_right,
            bracket,
        })
    }

    pub fn rank(&self) -> usize {
        self.fiber.len()
    }

    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    /// The underlying bundle `E -> M`.
    pub fn sigma_bundle(&self) -> VBundle {
        VBundle::new(&self.name, self.base.clone(), self.fiber.clone())
    }

    /// The tangent algebroid of a manifold chart: `E = TM` with fiber
    /// coordinates `v<name>`, identity anchors, zero bracket.
    pub fn tangent_algebroid(name: &str, chart: &[Symbol]) -> Algebroid1 {
        let m = chart.len();
        let fiber: Vec<Symbol> = chart
            .iter()
            .map(|s| Symbol {
                name: format!("v{}", s.name),
                jet: s.jet,
                weight: 1,
            })
            .collect();
        let eye: Vec<Vec<Poly>> = (0..m)
            .map(|a| {
                (0..m)
                    .map(|i| if a == i { Poly::one() } else { Poly::zero() })
                    .collect()
            })
            .collect();
        let zero_br = vec![vec![vec![Poly::zero(); m]; m]; m];
        Algebroid1 {
            name: name.to_string(),
            base: chart.to_vec(),
            fiber,
            anchor_left: eye.clone(),
            anchor_right: eye,
            bracket: zero_br,
        }
    }

    /// Components of the anchor image of a section (a vector field on the
    /// base): `rho(a)^b = sum_i Q[b][i] a^i`.
    pub fn anchor_vf(&self, left: bool, sec: &[Poly]) -> Vec<Poly> {
        let q = if left {
            &self.anchor_left
        } else {
            &self.anchor_right
        };
        q.iter()
            .map(|row| {
                row.iter()
                    .zip(sec.iter())
                    .fold(Poly::zero(), |acc, (c, a)| acc.add(&c.mul(a)))
            })
            .collect()
    }

    /// The bracket of two polynomial sections.
    pub fn bracket_of(&self, a: &[Poly], b: &[Poly]) -> Vec<Poly> {
        let n = self.rank();
        assert_eq!(a.len(), n, "section rank");
        assert_eq!(b.len(), n, "section rank");
        let rho_l_a = self.anchor_vf(true, a);
        let rho_r_b = self.anchor_vf(false, b);
        (0..n)
            .map(|k| {
                let mut acc = apply_vector_field(&rho_l_a, &self.base, &b[k])
                    .sub(&apply_vector_field(&rho_r_b, &self.base, &a[k]));
                for i in 0..n {
                    for j in 0..n {
                        acc = acc.add(&self.bracket[k][i][j].mul(&a[i]).mul(&b[j]));
                    }
                }
                acc
            })
            .collect()
    }

    /// Leibniz rules in both slots for given sections and function.
    pub fn leibniz_check(&self, a: &[Poly], b: &[Poly], f: &Poly) -> Witnessed {
        let fb: Vec<Poly> = b.iter().map(|p| p.mul(f)).collect();
        let fa: Vec<Poly> = a.iter().map(|p| p.mul(f)).collect();
        let lhs1 = self.bracket_of(a, &fb);
        let rho_l_a_f = apply_vector_field(&self.anchor_vf(true, a), &self.base, f);
        let base1 = self.bracket_of(a, b);
        for k in 0..self.rank() {
            let rhs = base1[k].mul(f).add(&rho_l_a_f.mul(&b[k]));
            let resid = lhs1[k].sub(&rhs);
            if !resid.is_zero() {
                return Witnessed::fail(format!(
                    "left Leibniz fails in component {k}: residual {resid}"
                ));
            }
        }
        let lhs2 = self.bracket_of(&fa, b);
        let rho_r_b_f = apply_vector_field(&self.anchor_vf(false, b), &self.base, f);
        for k in 0..self.rank() {
            let rhs = base1[k].mul(f).sub(&rho_r_b_f.mul(&a[k]));
            let resid = lhs2[k].sub(&rhs);
            if !resid.is_zero() {
                return Witnessed::fail(format!(
                    "right Leibniz fails in component {k}: residual {resid}"
                ));
            }
        }
        Witnessed::pass()
    }

    /// Basis section `e_i`.
    pub fn basis_section(&self, i: usize) -> Vec<Poly> {
        (0..self.rank())
            .map(|j| if i == j { Poly::one() } else { Poly::zero() })
            .collect()
    }

    /// The Jacobiator on basis sections:
    /// `J(e_i, e_j, e_k) = [e_i,[e_j,e_k]] + [e_j,[e_k,e_i]] + [e_k,[e_i,e_j]]`.
    pub fn jacobiator(&self, i: usize, j: usize, k: usize) -> Vec<Poly> {
        let e = |i| self.basis_section(i);
        let t1 = self.bracket_of(&e(i), &self.bracket_of(&e(j), &e(k)));
        let t2 = self.bracket_of(&e(j), &self.bracket_of(&e(k), &e(i)));
        let t3 = self.bracket_of(&e(k), &self.bracket_of(&e(i), &e(j)));
        (0..self.rank())
            .map(|l| t1[l].add(&t2[l]).add(&t3[l]))
            .collect()
    }

    /// Both anchors agree and the bracket table is antisymmetric.
    pub fn is_skew(&self) -> Witnessed {
        for (a, (l, r)) in self
            .anchor_left
            .iter()
            .zip(self.anchor_right.iter())
            .enumerate()
        {
            for (i, (pl, pr)) in l.iter().zip(r.iter()).enumerate() {
                if pl != pr {
                    return Witnessed::fail(format!(
                        "anchors differ at base {a}, section {i}: {pl} vs {pr}"
                    ));
                }
            }
        }
        let n = self.rank();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let resid = self.bracket[k][i][j].add(&self.bracket[k][j][i]);
                    if !resid.is_zero() {
                        return Witnessed::fail(format!(
                            "bracket table not antisymmetric at [{i},{j}] -> {k}: residual {resid}"
                        ));
                    }
                }
            }
        }
        Witnessed::pass()
    }

    /// Skew plus anchor compatibility:
    /// `rho([e_i, e_j]) = [rho(e_i), rho(e_j)]` as vector fields.
    pub fn is_almost_lie(&self) -> Witnessed {
        let skew = self.is_skew();
        if !skew.pass {
            return skew;
        }
        let n = self.rank();
        let m = self.base_dim();
        let q = &self.anchor_left;
        for i in 0..n {
            for j in 0..n {
                for a in 0..m {
                    // [rho e_i, rho e_j]^a
                    let mut comm = Poly::zero();
                    for b in 0..m {
                        comm = comm
                            .add(&q[b][i].mul(&q[a][j].diff(&self.base[b])))
                            .sub(&q[b][j].mul(&q[a][i].diff(&self.base[b])));
                    }
                    let mut anch = Poly::zero();
                    for k in 0..n {
                        anch = anch.add(&q[a][k].mul(&self.bracket[k][i][j]));
                    }
                    let resid = anch.sub(&comm);
                    if !resid.is_zero() {
                        return Witnessed::fail(format!(
                            "anchor of [e_{i}, e_{j}] differs from the field bracket in component {a}: residual {resid}"
                        ));
                    }
                }
            }
        }
        Witnessed::pass()
    }

    /// Almost Lie plus Jacobi on basis triples.
    pub fn is_lie(&self) -> Witnessed {
        let al = self.is_almost_lie();
        if !al.pass {
            return al;
        }
        let n = self.rank();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let jac = self.jacobiator(i, j, k);
                    for (l, p) in jac.iter().enumerate() {
                        if !p.is_zero() {
                            return Witnessed::fail(format!(
                                "Jacobiator J(e_{i}, e_{j}, e_{k}) has component {l}: {p}"
                            ));
                        }
                    }
                }
            }
        }
        Witnessed::pass()
    }

    /// The opposite structure: anchors swapped, bracket arguments reversed
    /// with a sign.
    pub fn transpose(&self) -> Algebroid1 {
        let n = self.rank();
        let mut bracket = vec![vec![vec![Poly::zero(); n]; n]; n];
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    bracket[k][i][j] = self.bracket[k][j][i].neg();
                }
            }
        }
        Algebroid1 {
            name: format!("{}^op", self.name),
            base: self.base.clone(),
            fiber: self.fiber.clone(),
            anchor_left: self.anchor_right.clone(),
            anchor_right: self.anchor_left.clone(),
            bracket,
        }
    }

    /// The structure comorphism from `T sigma: TE -> TM` to `tau_E: TE -> E`.
    ///
    /// Charts: the source uses first jets (`x, x.d1; y, y.d1`), the target
    /// uses `d`-prefixed fiber coordinates over the chart of `E`.  Graded
    /// weights: jet order on the source side; on the target side `x` and
    /// `dx` have weight 0, `y` and `dy` weight 1.
    pub fn kappa_of(&self) -> Result<Comorphism, AlgebroidError> {
        let m = self.base_dim();
        let n = self.rank();
        let x: Vec<Symbol> = self
            .base
            .iter()
            .map(|s| Symbol {
                weight: 0,
                ..s.clone()
            })
            .collect();
        let xd: Vec<Symbol> = x.iter().map(|s| s.shift_jet()).collect();
        let y0: Vec<Symbol> = self
            .fiber
            .iter()
            .map(|s| Symbol {
                weight: 0,
                ..s.clone()
            })
            .collect();
        let yd: Vec<Symbol> = self
            .fiber
            .iter()
            .map(|s| Symbol {
                name: s.name.clone(),
                jet: s.jet + 1,
                weight: 1,
            })
            .collect();
        let y1: Vec<Symbol> = self
            .fiber
            .iter()
            .map(|s| Symbol {
                weight: 1,
                ..s.clone()
            })
            .collect();
        let dpfx = |s: &Symbol, w: u32| Symbol {
            name: format!("d{}", s.name),
            jet: s.jet,
            weight: w,
        };
        let dx: Vec<Symbol> = self.base.iter().map(|s| dpfx(s, 0)).collect();
        let dy: Vec<Symbol> = self.fiber.iter().map(|s| dpfx(s, 1)).collect();
        // collision guard: all target chart symbols distinct
        {
            let mut all: Vec<&Symbol> = Vec::new();
            for s in x.iter().chain(y1.iter()).chain(dx.iter()).chain(dy.iter()) {
                if all.contains(&s) {
                    return Err(AlgebroidError::Shape(format!(
                        "chart collision at {} when building the structure comorphism",
                        s.to_display()
                    )));
                }
                all.push(s);
            }
        }
        let source = VBundle::new(
            "T(sigma)",
            x.iter().cloned().chain(xd.iter().cloned()).collect(),
            y0.iter().cloned().chain(yd.iter().cloned()).collect(),
        );
        let target = VBundle::new(
            "tau_E",
            x.iter().cloned().chain(y1.iter().cloned()).collect(),
            dx.iter().cloned().chain(dy.iter().cloned()).collect(),
        );
        // base map: x -> x, x.d1 -> QL * y
        let mut base_map: Vec<Poly> = x.iter().map(Poly::symbol).collect();
        for a in 0..m {
            let mut p = Poly::zero();
            for i in 0..n {
                p = p.add(&self.anchor_left[a][i].mul(&Poly::symbol(&y1[i])));
            }
            base_map.push(p);
        }
        // matrix: dx-rows [QR | 0]; dy-rows [C y | I]
        let mut matrix = vec![vec![Poly::zero(); 2 * n]; m + n];
        for a in 0..m {
            for i in 0..n {
                matrix[a][i] = self.anchor_right[a][i].clone();
            }
        }
        for k in 0..n {
            for j in 0..n {
                let mut p = Poly::zero();
                for i in 0..n {
                    p = p.add(&self.bracket[k][i][j].mul(&Poly::symbol(&y1[i])));
                }
                matrix[m + k][j] = p;
            }
            matrix[m + k][n + k] = Poly::one();
        }
        Comorphism::new(source, target, base_map, matrix).map_err(AlgebroidError::from)
    }

    /// Tangent lift of the structure to `TE -> TM` in jet coordinates:
    /// anchors `[[Q, 0], [DQ, Q]]`, bracket generated by
    /// `[Te_i, Te_j] = C^k_{ij} Te_k + D(C^k_{ij}) Ve_k`,
    /// `[Te_i, Ve_j] = [Ve_i, Te_j] = C^k_{ij} Ve_k`, `[Ve, Ve] = 0`.
    pub fn lifted_algebroid1(&self) -> Algebroid1 {
        let m = self.base_dim();
        let n = self.rank();
        let base: Vec<Symbol> = self
            .base
            .iter()
            .map(|s| Symbol {
                weight: 0,
                ..s.clone()
            })
            .chain(self.base.iter().map(|s| {
                Symbol {
                    weight: 0,
                    ..s.clone()
                }
                .shift_jet()
            }))
            .collect();
        let fiber: Vec<Symbol> = self
            .fiber
            .iter()
            .cloned()
            .chain(self.fiber.iter().map(|s| s.shift_jet()))
            .collect();
        let lift_anchor = |q: &Vec<Vec<Poly>>| -> Vec<Vec<Poly>> {
            let mut out = vec![vec![Poly::zero(); 2 * n]; 2 * m];
            for a in 0..m {
                for i in 0..n {
                    out[a][i] = q[a][i].clone();
                    out[m + a][i] = jet_differential(&q[a][i], &self.base);
                    out[m + a][n + i] = q[a][i].clone();
                }
            }
            out
        };
        let mut bracket = vec![vec![vec![Poly::zero(); 2 * n]; 2 * n]; 2 * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let c = &self.bracket[k][i][j];
                    bracket[k][i][j] = c.clone();
                    bracket[n + k][i][j] = jet_differential(c, &self.base);
                    bracket[n + k][i][n + j] = c.clone();
                    bracket[n + k][n + i][j] = c.clone();
                }
            }
        }
        Algebroid1 {
            name: format!("T{}", self.name),
            base,
            fiber,
            anchor_left: lift_anchor(&self.anchor_left),
            anchor_right: lift_anchor(&self.anchor_right),
            bracket,
        }
    }
}

/// Recover the structure data from a comorphism in normal form (the inverse
/// of [`Algebroid1::kappa_of`]).
pub fn algebroid_of(kappa: &Comorphism) -> Result<Algebroid1, AlgebroidError> {
    let src_base = kappa.source.base_dim();
    let src_rank = kappa.source.rank();
    if src_base % 2 != 0 || src_rank % 2 != 0 {
        return Err(AlgebroidError::Shape(
            "source charts of a structure comorphism must pair jets".into(),
        ));
    }
    let m = src_base / 2;
    let n = src_rank / 2;
    if kappa.target.base_dim() != m + n || kappa.target.rank() != m + n {
        return Err(AlgebroidError::Shape(format!(
            "target charts must have dimension {} + {}",
            m, n
        )));
    }
    let x: Vec<Symbol> = kappa.target.base[..m].to_vec();
    let y: Vec<Symbol> = kappa.target.base[m..].to_vec();
    // the first halves of the source charts carry the underlying base chart;
    // the second halves are its tangent directions under any naming scheme
    for a in 0..m {
        if kappa.source.base[a] != x[a] {
            return Err(AlgebroidError::Shape(format!(
                "source base symbol {} does not match the target base chart",
                kappa.source.base[a].to_display()
            )));
        }
    }
    let linear_in_y = |p: &Poly, what: &str| -> Result<Vec<Poly>, AlgebroidError> {
        // decompose p = sum_i coeff_i * y^i with coeff_i over x only
        let mut coeffs = Vec::with_capacity(n);
        let mut recomposed = Poly::zero();
        for yi in &y {
            let c = p.diff(yi);
            for s in c.symbols() {
                if y.contains(&s) {
                    return Err(AlgebroidError::NotCoreIdentity(format!(
                        "{what} is not linear in the fiber chart: {p}"
                    )));
                }
            }
            recomposed = recomposed.add(&c.mul(&Poly::symbol(yi)));
            coeffs.push(c);
        }
        if recomposed != *p {
            return Err(AlgebroidError::NotCoreIdentity(format!(
                "{what} is not fiberwise linear without constant part: {p}"
            )));
        }
        Ok(coeffs)
    };
    // base map: identity on x, then QL * y
    let mut ql = vec![vec![Poly::zero(); n]; m];
    for a in 0..m {
        if kappa.base_map[a] != Poly::symbol(&x[a]) {
            return Err(AlgebroidError::NotCoreIdentity(format!(
                "base component {} is not the identity chart map",
                kappa.source.base[a].to_display()
            )));
        }
        ql[a] = linear_in_y(&kappa.base_map[m + a], "anchor block of the base map")?;
    }
    // dx-rows: [QR | 0] with QR over x only
    let mut qr = vec![vec![Poly::zero(); n]; m];
    for a in 0..m {
        for i in 0..n {
            let p = &kappa.matrix[a][i];
            for s in p.symbols() {
                if y.contains(&s) {
                    return Err(AlgebroidError::NotCoreIdentity(format!(
                        "right-anchor entry depends on the fiber chart: {p}"
                    )));
                }
            }
            qr[a][i] = p.clone();
            if !kappa.matrix[a][n + i].is_zero() {
                return Err(AlgebroidError::NotCoreIdentity(
                    "anchor rows must not involve fiber jets".into(),
                ));
            }
        }
    }
    // dy-rows: [C y | I]
    let mut bracket = vec![vec![vec![Poly::zero(); n]; n]; n];
    for k in 0..n {
        for j in 0..n {
            let coeffs = linear_in_y(&kappa.matrix[m + k][j], "bracket block")?;
            for i in 0..n {
                bracket[k][i][j] = coeffs[i].clone();
            }
            let expected = if j == k { Poly::one() } else { Poly::zero() };
            if kappa.matrix[m + k][n + j] != expected {
                return Err(AlgebroidError::NotCoreIdentity(format!(
                    "jet block entry ({k}, {j}) is {} instead of {}",
                    kappa.matrix[m + k][n + j],
                    expected
                )));
            }
        }
    }
    let base: Vec<Symbol> = x
        .iter()
        .map(|s| Symbol {
            weight: 0,
            ..s.clone()
        })
        .collect();
    let fiber: Vec<Symbol> = y
        .iter()
        .map(|s| Symbol {
            weight: 1,
            ..s.clone()
        })
        .collect();
    Algebroid1::new("recovered", base, fiber, ql, qr, bracket)
}

/// Check that a bundle morphism intertwines two structures, phrased through
/// the structure comorphisms: the tangent prolongations of the morphism along
/// both bundle structures must form a morphism of comorphisms from one
/// structure comorphism to the other.
pub fn morphism_check(
    a1: &Algebroid1,
    a2: &Algebroid1,
    phi: &VBMorphism,
) -> Result<Witnessed, AlgebroidError> {
    if !phi.source.same_charts(&a1.sigma_bundle()) || !phi.target.same_charts(&a2.sigma_bundle()) {
        return Err(AlgebroidError::Shape(
            "morphism data does not connect the two bundles".into(),
        ));
    }
    let kappa1 = a1.kappa_of()?;
    let kappa2 = a2.kappa_of()?;
    let m1 = a1.base_dim();
    let n1 = a1.rank();
    let m2 = a2.base_dim();
    let n2 = a2.rank();
    let phi_base = &phi.base_map; // m2 polys over x1
    let phi_fib = &phi.matrix; // n2 x n1 over x1
                               // tangent prolongation along the sigma-structures, in jet coordinates
    let mut base1: Vec<Poly> = phi_base.clone();
    base1.extend(phi_base.iter().map(|p| jet_differential(p, &a1.base)));
    let mut mat1 = vec![vec![Poly::zero(); 2 * n1]; 2 * n2];
    for j in 0..n2 {
        for i in 0..n1 {
            mat1[j][i] = phi_fib[j][i].clone();
            mat1[n2 + j][i] = jet_differential(&phi_fib[j][i], &a1.base);
            mat1[n2 + j][n1 + i] = phi_fib[j][i].clone();
        }
    }
    let phi1 = VBMorphism::new(kappa1.source.clone(), kappa2.source.clone(), base1, mat1)?;
    // tangent prolongation along the tau-structures: the full Jacobian of
    // (x, y) -> (phi_base(x), phi_fib(x) y)
    let y1syms: Vec<Symbol> = kappa1.target.base[m1..].to_vec();
    let mut base2: Vec<Poly> = phi_base.clone();
    for j in 0..n2 {
        let mut p = Poly::zero();
        for i in 0..n1 {
            p = p.add(&phi_fib[j][i].mul(&Poly::symbol(&y1syms[i])));
        }
        base2.push(p);
    }
    let mut mat2 = vec![vec![Poly::zero(); m1 + n1]; m2 + n2];
    for b in 0..m2 {
        for a in 0..m1 {
            mat2[b][a] = phi_base[b].diff(&a1.base[a]);
        }
    }
    for j in 0..n2 {
        for a in 0..m1 {
            let mut p = Poly::zero();
            for i in 0..n1 {
                p = p.add(
                    &phi_fib[j][i]
                        .diff(&a1.base[a])
                        .mul(&Poly::symbol(&y1syms[i])),
                );
            }
            mat2[m2 + j][a] = p;
        }
        for i in 0..n1 {
            mat2[m2 + j][m1 + i] = phi_fib[j][i].clone();
        }
    }
    let phi2 = VBMorphism::new(kappa1.target.clone(), kappa2.target.clone(), base2, mat2)?;
    zm_morphism_check(&phi1, &phi2, &kappa1, &kappa2).map_err(AlgebroidError::from)
}

/// Check that a comorphism between the underlying bundles respects two
/// structures: both anchors are related through the base map, and the section
/// map intertwines the brackets on basis pairs.
pub fn algebroidal_relation_check(
    r: &Comorphism,
    a1: &Algebroid1,
    a2: &Algebroid1,
) -> Result<Witnessed, AlgebroidError> {
    // base charts must agree as symbols (polynomials are substituted through
    // them); fiber coordinates only need matching ranks -- they are labels
    // for the same basis sections
    if r.source.base != a1.base
        || r.source.rank() != a1.rank()
        || r.target.base != a2.base
        || r.target.rank() != a2.rank()
    {
        return Err(AlgebroidError::Shape(
            "comorphism does not connect the two bundles".into(),
        ));
    }
    let m1 = a1.base_dim();
    let n1 = a1.rank();
    let subst = r.base_subst();
    for (left, label) in [(true, "left"), (false, "right")] {
        let q1 = if left {
            &a1.anchor_left
        } else {
            &a1.anchor_right
        };
        let q2 = if left {
            &a2.anchor_left
        } else {
            &a2.anchor_right
        };
        for i in 0..n1 {
            // X2 = rho2(r_hat(e_i)) on M2
            let col: Vec<Poly> = (0..r.target.rank())
                .map(|j| r.matrix[j][i].clone())
                .collect();
            let x2: Vec<Poly> = q2
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(col.iter())
                        .fold(Poly::zero(), |acc, (q, c)| acc.add(&q.mul(c)))
                })
                .collect();
            for b in 0..m1 {
                let lhs = q1[b][i].substitute(&subst);
                let rhs = apply_vector_field(&x2, &a2.base, &r.base_map[b]);
                let resid = lhs.sub(&rhs);
                if !resid.is_zero() {
                    return Ok(Witnessed::fail(format!(
                        "{label} anchors are not related at section {i}, base component {b}: residual {resid}"
                    )));
                }
            }
        }
    }
    for i in 0..n1 {
        for j in 0..n1 {
            let br1: Vec<Poly> = (0..n1).map(|k| self_bracket(a1, k, i, j)).collect();
            let lhs = r.section_map(&br1)?;
            let ei: Vec<Poly> = r.section_map(&a1.basis_section(i))?;
            let ej: Vec<Poly> = r.section_map(&a1.basis_section(j))?;
            let rhs = a2.bracket_of(&ei, &ej);
            for (k, (l, rr)) in lhs.iter().zip(rhs.iter()).enumerate() {
                let resid = l.sub(rr);
                if !resid.is_zero() {
                    return Ok(Witnessed::fail(format!(
                        "brackets are not intertwined at pair ({i}, {j}), component {k}: residual {resid}"
                    )));
                }
            }
        }
    }
    Ok(Witnessed::pass())
}

fn self_bracket(a: &Algebroid1, k: usize, i: usize, j: usize) -> Poly {
    a.bracket[k][i][j].clone()
}

/// A rank-3 example over the line that is almost Lie but not Lie:
/// `rho(e_1) = rho(e_2) = 0`, `rho(e_3) = d/dx`, `[e_1, e_2] = x e_1`, all
/// other basis brackets zero.  The Jacobiator of `(e_1, e_2, e_3)` equals
/// `e_1`.
pub fn almost_lie_not_lie_example() -> Algebroid1 {
    let x = Symbol::new("x", 0);
    let fiber: Vec<Symbol> = (1..=3).map(|i| Symbol::new(&format!("y{i}"), 1)).collect();
    let ql = vec![vec![Poly::zero(), Poly::zero(), Poly::one()]];
    let mut bracket = vec![vec![vec![Poly::zero(); 3]; 3]; 3];
    bracket[0][0][1] = Poly::symbol(&x);
    bracket[0][1][0] = Poly::symbol(&x).neg();
    Algebroid1::new("al-not-lie", vec![x], fiber, ql.clone(), ql, bracket).unwrap()
}
