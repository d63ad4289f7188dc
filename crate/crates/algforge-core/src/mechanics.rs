//! Variational calculus on second-order almost-Lie structures.
//!
//! The entry points come in two groups. The symbolic group produces residual
//! systems with exact boundary terms: [`el_prolong2`] differentiates a
//! Lagrangian on the prolongation of an almost-Lie order-one structure,
//! [`euler_poincare2`] specializes to a Lie algebra over a point,
//! [`standard_el2`] is the classical second-order operator on a manifold
//! chart, and [`reduced_example_el`] covers a three-coordinate reduced chart
//! with a first-order constraint. Curves enter through [`CurvePoly`];
//! [`admissibility_residual`] and [`admissible_variation`] implement the
//! compatibility equations and the variation fields, and [`ibp_check`]
//! certifies the integration-by-parts identity on polynomial data.
//!
//! The numeric group integrates the residual systems: [`integrate_rk4`]
//! assembles the equations into a first-order system (solving for the leading
//! jets, exactly when the leading matrix is constant) and runs a classical
//! Runge-Kutta scheme; [`conservation_check`] and [`residual_monitor`] audit
//! the resulting trajectories.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::algebroid::Algebroid1;
use crate::expr::{rat, ExprError, Poly, Rat, Symbol};
use crate::higher::{prolong2, HigherError, HA2};
use crate::liegroup::LieAlgebraModel;

/// Jet-order bound for total time derivatives of symbolic data.
const JET_BOUND: u32 = 32;

/// Errors of the variational and numerical layer.
#[derive(Debug)]
pub enum MechanicsError {
    /// A curve fails its admissibility equations; carries the witness.
    NotAdmissible(String),
    /// The order-one structure is not almost-Lie.
    NotAlmostLie(String),
    /// Mismatched dimensions or malformed symbolic input.
    Shape(String),
    /// The leading-jet coefficient matrix cannot be inverted.
    SingularLeadingMatrix(String),
    /// The numerical state left the finite floating-point range.
    NonFiniteState(String),
    /// A symbolic operation failed.
    Expr(ExprError),
    /// A second-order structure operation failed.
    Higher(HigherError),
}

impl fmt::Display for MechanicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanicsError::NotAdmissible(w) => write!(f, "curve is not admissible: {w}"),
            MechanicsError::NotAlmostLie(w) => write!(f, "not almost-Lie: {w}"),
            MechanicsError::Shape(w) => write!(f, "shape error: {w}"),
            MechanicsError::SingularLeadingMatrix(w) => {
                write!(f, "singular leading matrix: {w}")
            }
            MechanicsError::NonFiniteState(w) => write!(f, "non-finite state: {w}"),
            MechanicsError::Expr(e) => write!(f, "expression error: {e}"),
            MechanicsError::Higher(e) => write!(f, "order-two error: {e}"),
        }
    }
}

impl std::error::Error for MechanicsError {}

impl From<ExprError> for MechanicsError {
    fn from(e: ExprError) -> Self {
        MechanicsError::Expr(e)
    }
}

impl From<HigherError> for MechanicsError {
    fn from(e: HigherError) -> Self {
        MechanicsError::Higher(e)
    }
}

/// A polynomial Lagrangian over a jet chart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lagrangian {
    pub l: Poly,
}

impl Lagrangian {
    pub fn new(l: Poly) -> Self {
        Lagrangian { l }
    }
}

/// A polynomial curve: one component per chart coordinate, every component a
/// polynomial in the single time symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurvePoly {
    pub t: Symbol,
    pub components: Vec<Poly>,
}

impl CurvePoly {
    pub fn new(t: Symbol, components: Vec<Poly>) -> Result<Self, MechanicsError> {
        if t.jet != 0 {
            return Err(MechanicsError::Shape(
                "the time symbol must have jet order zero".into(),
            ));
        }
        for (k, p) in components.iter().enumerate() {
            for s in p.symbols() {
                if s != t {
                    return Err(MechanicsError::Shape(format!(
                        "curve component {k} mentions {}; only the time symbol {} is allowed",
                        s.to_display(),
                        t.to_display()
                    )));
                }
            }
        }
        Ok(CurvePoly { t, components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Componentwise time derivative.
    pub fn derivative(&self) -> CurvePoly {
        CurvePoly {
            t: self.t.clone(),
            components: self.components.iter().map(|p| p.diff(&self.t)).collect(),
        }
    }
}

/// A variational residual system over a jet chart.
///
/// `residuals` are the equations of motion (one per weight-one direction),
/// `boundary_term` is the exact total-derivative remainder of the integration
/// by parts (a polynomial in the chart jets and the `generators`),
/// `admissibility` couples the base variables to the fiber variables (empty
/// when the base is a point or the chart is holonomic), and `vars` lists the
/// dynamical variables at jet order zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ELSystem {
    pub residuals: Vec<Poly>,
    pub boundary_term: Poly,
    pub admissibility: Vec<Poly>,
    pub vars: Vec<Symbol>,
    pub generators: Vec<Symbol>,
}

/// Fresh variation-generator symbols `xi1, xi2, ...`, prefixed with
/// underscores until they avoid every chart name.
fn fresh_generators(n: usize, avoid: &[Symbol]) -> Vec<Symbol> {
    (0..n)
        .map(|i| {
            let mut name = format!("xi{}", i + 1);
            while avoid.iter().any(|s| s.name == name) {
                name.insert(0, '_');
            }
            Symbol::jet(&name, 0, 1)
        })
        .collect()
}

/// Total time derivative on a pure jet tower: every symbol steps to its next
/// jet.
fn dt_jet(p: &Poly) -> Result<Poly, MechanicsError> {
    Ok(p.total_derivative(JET_BOUND)?)
}

/// The admissibility residuals of a curve in the total space of a
/// second-order structure: the first and second time derivatives of the base
/// components minus the first and second anchor combinations,
/// `x' - Q^a_i y^i` and `x'' - (1/2 Q^a_{ij} y^i y^j + Q^a_mu z^mu)`,
/// evaluated along the curve. The result has `2 m` entries for an
/// `m`-dimensional base (none over a point).
pub fn admissibility_residual(ha: &HA2, gamma: &CurvePoly) -> Result<Vec<Poly>, MechanicsError> {
    let m = ha.base_dim();
    let n = ha.rank1();
    let p = ha.rank2();
    if gamma.components.len() != m + n + p {
        return Err(MechanicsError::Shape(format!(
            "the curve must have {} components (base {m}, first level {n}, second level {p}), got {}",
            m + n + p,
            gamma.components.len()
        )));
    }
    let t = &gamma.t;
    let mut sub: BTreeMap<Symbol, Poly> = BTreeMap::new();
    for (a, s) in ha.base.iter().enumerate() {
        sub.insert(s.clone(), gamma.components[a].clone());
    }
    let xs = &gamma.components[..m];
    let ys = &gamma.components[m..m + n];
    let zs = &gamma.components[m + n..];
    let mut out = Vec::with_capacity(2 * m);
    for a in 0..m {
        let mut rhs = Poly::zero();
        for i in 0..n {
            rhs = rhs.add(&ha.q_a_i[a][i].substitute(&sub).mul(&ys[i]));
        }
        out.push(xs[a].diff(t).sub(&rhs));
    }
    let half = rat(1, 2);
    for a in 0..m {
        let mut rhs = Poly::zero();
        for i in 0..n {
            for j in 0..n {
                rhs = rhs.add(
                    &ha.q_a_ij[a][i][j]
                        .substitute(&sub)
                        .mul(&ys[i])
                        .mul(&ys[j])
                        .scale(&half),
                );
            }
        }
        for mu in 0..p {
            rhs = rhs.add(&ha.q_a_mu[a][mu].substitute(&sub).mul(&zs[mu]));
        }
        out.push(xs[a].diff(t).diff(t).sub(&rhs));
    }
    Ok(out)
}

/// The admissible variation of an admissible curve generated by a curve of
/// fiber directions: the structure comorphism is evaluated along the curve
/// and applied to the generator together with its first and second time
/// derivatives. The result is the full curve in the tangent chart: the
/// original components followed by the variation components (base, first
/// level, second level).
pub fn admissible_variation(
    ha: &HA2,
    gamma: &CurvePoly,
    a_curve: &CurvePoly,
) -> Result<CurvePoly, MechanicsError> {
    let m = ha.base_dim();
    let n = ha.rank1();
    let p = ha.rank2();
    if a_curve.components.len() != n {
        return Err(MechanicsError::Shape(format!(
            "the generator must have {n} components, got {}",
            a_curve.components.len()
        )));
    }
    if a_curve.t != gamma.t {
        return Err(MechanicsError::Shape(
            "the curve and the generator must share the time symbol".into(),
        ));
    }
    let resid = admissibility_residual(ha, gamma)?;
    for (k, r) in resid.iter().enumerate() {
        if !r.is_zero() {
            return Err(MechanicsError::NotAdmissible(format!(
                "admissibility residual {k} of the curve is {r}"
            )));
        }
    }
    let kappa = ha.kappa2_of()?;
    let mut sub: BTreeMap<Symbol, Poly> = BTreeMap::new();
    for (s, comp) in kappa.target.base.iter().zip(gamma.components.iter()) {
        sub.insert(s.clone(), comp.clone());
    }
    let t = &gamma.t;
    let xi = &a_curve.components;
    let xi1: Vec<Poly> = xi.iter().map(|q| q.diff(t)).collect();
    let xi2: Vec<Poly> = xi1.iter().map(|q| q.diff(t)).collect();
    let mut delta = Vec::with_capacity(m + n + p);
    for r in 0..m + n + p {
        let mut acc = Poly::zero();
        for i in 0..n {
            acc = acc.add(&kappa.matrix[r][i].substitute(&sub).mul(&xi[i]));
            acc = acc.add(&kappa.matrix[r][n + i].substitute(&sub).mul(&xi1[i]));
            acc = acc.add(&kappa.matrix[r][2 * n + i].substitute(&sub).mul(&xi2[i]));
        }
        delta.push(acc);
    }
    let mut components = gamma.components.clone();
    components.extend(delta);
    Ok(CurvePoly {
        t: gamma.t.clone(),
        components,
    })
}

/// Variational residuals of a second-order Lagrangian on the prolongation of
/// an almost-Lie order-one structure.
///
/// The Lagrangian may mention the base chart at jet order zero and the fiber
/// chart up to jet order one (the first fiber jet plays the role of the
/// second-level coordinate along admissible curves). Writing `Q` for the
/// anchor, `Q^k_{ij}` for the structure functions and
/// `F_k = d/dt(dL/dy^{k,1}) - dL/dy^k`, the residual along the fiber
/// direction `i` is
///
/// ```text
/// Q^a_i dL/dx^a + d/dt(F_i) - Q^k_{ji} y^j F_k ,
/// ```
///
/// the total time derivative acting through `x' = Q y` on the base and the
/// jet shift on the fiber tower. The boundary term is
/// `dL/dy^{i,1} (xi^{i,1} + Q^i_{jk} y^j xi^k) - F_i xi^i`, and the
/// admissibility equations are `x' - Q y`.
pub fn el_prolong2(a: &Algebroid1, lag: &Lagrangian) -> Result<ELSystem, MechanicsError> {
    let al = a.is_almost_lie();
    if !al.pass {
        return Err(MechanicsError::NotAlmostLie(al.witness.unwrap_or_default()));
    }
    let m = a.base_dim();
    let n = a.rank();
    let xs = &a.base;
    let ys = &a.fiber;
    for s in lag.l.symbols() {
        let on_base = xs.iter().any(|x| x.name == s.name);
        let on_fiber = ys.iter().any(|y| y.name == s.name);
        let ok = (on_base && s.jet == 0) || (on_fiber && s.jet <= 1);
        if !ok {
            return Err(MechanicsError::Shape(format!(
                "the Lagrangian may mention base coordinates at jet zero and fiber coordinates up to jet one; found {}",
                s.to_display()
            )));
        }
    }
    let q = &a.anchor_left;
    let dt = |p: &Poly| -> Result<Poly, MechanicsError> {
        let mut rules: BTreeMap<Symbol, Poly> = BTreeMap::new();
        for s in p.symbols() {
            if s.jet == 0 {
                if let Some(aidx) = xs.iter().position(|x| x.name == s.name) {
                    let mut rhs = Poly::zero();
                    for (i, ysym) in ys.iter().enumerate() {
                        rhs = rhs.add(&q[aidx][i].mul(&Poly::symbol(ysym)));
                    }
                    rules.insert(s.clone(), rhs);
                    continue;
                }
            }
            rules.insert(s.clone(), Poly::symbol(&s.shift_jet()));
        }
        Ok(p.derive(&rules)?)
    };
    let lx: Vec<Poly> = xs.iter().map(|x| lag.l.diff(x)).collect();
    let ly0: Vec<Poly> = ys.iter().map(|y| lag.l.diff(y)).collect();
    let ly1: Vec<Poly> = ys.iter().map(|y| lag.l.diff(&y.shift_jet())).collect();
    let mut f = Vec::with_capacity(n);
    for k in 0..n {
        f.push(dt(&ly1[k])?.sub(&ly0[k]));
    }
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = dt(&f[i])?;
        for aidx in 0..m {
            r = r.add(&q[aidx][i].mul(&lx[aidx]));
        }
        for k in 0..n {
            for j in 0..n {
                r = r.sub(&a.bracket[k][j][i].mul(&Poly::symbol(&ys[j])).mul(&f[k]));
            }
        }
        residuals.push(r);
    }
    let avoid: Vec<Symbol> = xs.iter().cloned().chain(ys.iter().cloned()).collect();
    let gens = fresh_generators(n, &avoid);
    let mut boundary = Poly::zero();
    for i in 0..n {
        let mut dyi = Poly::symbol(&gens[i].shift_jet());
        for j in 0..n {
            for k in 0..n {
                dyi = dyi.add(
                    &a.bracket[i][j][k]
                        .mul(&Poly::symbol(&ys[j]))
                        .mul(&Poly::symbol(&gens[k])),
                );
            }
        }
        boundary = boundary
            .add(&ly1[i].mul(&dyi))
            .sub(&f[i].mul(&Poly::symbol(&gens[i])));
    }
    let mut admissibility = Vec::with_capacity(m);
    for (aidx, xsym) in xs.iter().enumerate() {
        let mut row = Poly::symbol(&xsym.shift_jet());
        for (i, ysym) in ys.iter().enumerate() {
            row = row.sub(&q[aidx][i].mul(&Poly::symbol(ysym)));
        }
        admissibility.push(row);
    }
    let vars: Vec<Symbol> = xs.iter().cloned().chain(ys.iter().cloned()).collect();
    Ok(ELSystem {
        residuals,
        boundary_term: boundary,
        admissibility,
        vars,
        generators: gens,
    })
}

/// Second-order variational residuals on a Lie algebra over a point,
/// computed directly from the structure constants.
///
/// The Lagrangian lives on the chart `(a, a')` of the fiber symbols and
/// their first jets. Writing `M_k = d/dt(dl/da^{k,1}) - dl/da^k`, the
/// residual along the direction `i` is `d/dt(M_i) - c^k_{ji} a^j M_k`, the
/// dual-representation term pairing the momentum against the bracket. The
/// boundary term matches the general prolongation formula specialized to a
/// point base.
pub fn euler_poincare2(
    g: &LieAlgebraModel,
    fiber: &[Symbol],
    lag: &Lagrangian,
) -> Result<ELSystem, MechanicsError> {
    let n = g.dim;
    if fiber.len() != n {
        return Err(MechanicsError::Shape(format!(
            "the fiber chart must have {n} symbols, got {}",
            fiber.len()
        )));
    }
    for (i, s) in fiber.iter().enumerate() {
        if s.jet != 0 {
            return Err(MechanicsError::Shape(format!(
                "fiber symbol {} must have jet order zero",
                s.to_display()
            )));
        }
        if fiber[..i].iter().any(|r| r.name == s.name) {
            return Err(MechanicsError::Shape(format!(
                "duplicate fiber name {}",
                s.name
            )));
        }
    }
    for s in lag.l.symbols() {
        let on_fiber = fiber.iter().any(|y| y.name == s.name);
        if !(on_fiber && s.jet <= 1) {
            return Err(MechanicsError::Shape(format!(
                "the Lagrangian may mention the fiber chart up to jet one; found {}",
                s.to_display()
            )));
        }
    }
    let ly0: Vec<Poly> = fiber.iter().map(|y| lag.l.diff(y)).collect();
    let ly1: Vec<Poly> = fiber.iter().map(|y| lag.l.diff(&y.shift_jet())).collect();
    let mut mom = Vec::with_capacity(n);
    for k in 0..n {
        mom.push(dt_jet(&ly1[k])?.sub(&ly0[k]));
    }
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = dt_jet(&mom[i])?;
        for k in 0..n {
            for j in 0..n {
                if !g.c[k][j][i].is_zero() {
                    r = r.sub(
                        &Poly::constant(g.c[k][j][i].clone())
                            .mul(&Poly::symbol(&fiber[j]))
                            .mul(&mom[k]),
                    );
                }
            }
        }
        residuals.push(r);
    }
    let gens = fresh_generators(n, fiber);
    let mut boundary = Poly::zero();
    for i in 0..n {
        let mut dyi = Poly::symbol(&gens[i].shift_jet());
        for j in 0..n {
            for k in 0..n {
                if !g.c[i][j][k].is_zero() {
                    dyi = dyi.add(
                        &Poly::constant(g.c[i][j][k].clone())
                            .mul(&Poly::symbol(&fiber[j]))
                            .mul(&Poly::symbol(&gens[k])),
                    );
                }
            }
        }
        boundary = boundary
            .add(&ly1[i].mul(&dyi))
            .sub(&mom[i].mul(&Poly::symbol(&gens[i])));
    }
    Ok(ELSystem {
        residuals,
        boundary_term: boundary,
        admissibility: Vec::new(),
        vars: fiber.to_vec(),
        generators: gens,
    })
}

/// The classical second-order operator on a manifold chart: for a Lagrangian
/// in the chart jets up to order two, the residual along `x^a` is
///
/// ```text
/// d^2/dt^2(dL/dx^{a,2}) - d/dt(dL/dx^{a,1}) + dL/dx^a ,
/// ```
///
/// with the exact boundary term
/// `dL/dx^{a,2} xi^{a,1} + (dL/dx^{a,1} - d/dt(dL/dx^{a,2})) xi^a`.
pub fn standard_el2(chart: &[Symbol], lag: &Lagrangian) -> Result<ELSystem, MechanicsError> {
    for (i, s) in chart.iter().enumerate() {
        if s.jet != 0 {
            return Err(MechanicsError::Shape(format!(
                "chart symbol {} must have jet order zero",
                s.to_display()
            )));
        }
        if chart[..i].iter().any(|r| r.name == s.name) {
            return Err(MechanicsError::Shape(format!(
                "duplicate chart name {}",
                s.name
            )));
        }
    }
    for s in lag.l.symbols() {
        let on_chart = chart.iter().any(|x| x.name == s.name);
        if !(on_chart && s.jet <= 2) {
            return Err(MechanicsError::Shape(format!(
                "the Lagrangian may mention the chart up to jet two; found {}",
                s.to_display()
            )));
        }
    }
    let n = chart.len();
    let mut residuals = Vec::with_capacity(n);
    let mut pieces = Vec::with_capacity(n);
    for x in chart {
        let x1 = x.shift_jet();
        let x2 = x1.shift_jet();
        let l0 = lag.l.diff(x);
        let l1 = lag.l.diff(&x1);
        let l2 = lag.l.diff(&x2);
        let dl2 = dt_jet(&l2)?;
        residuals.push(dt_jet(&dl2)?.sub(&dt_jet(&l1)?).add(&l0));
        pieces.push((l1, l2, dl2));
    }
    let gens = fresh_generators(n, chart);
    let mut boundary = Poly::zero();
    for (i, (l1, l2, dl2)) in pieces.iter().enumerate() {
        boundary = boundary
            .add(&l2.mul(&Poly::symbol(&gens[i].shift_jet())))
            .add(&l1.sub(dl2).mul(&Poly::symbol(&gens[i])));
    }
    Ok(ELSystem {
        residuals,
        boundary_term: boundary,
        admissibility: Vec::new(),
        vars: chart.to_vec(),
        generators: gens,
    })
}

/// The variational residuals of the three-coordinate reduced chart
/// `(y1, x2, y2)` of weights `(1, 2, 2)`: for a Lagrangian in these
/// coordinates the two residuals are
///
/// ```text
/// d^2/dt^2(dl/dx2)    and    d^2/dt^2(dl/dy2) - d/dt(dl/dy1) ,
/// ```
///
/// on the formal jet towers, together with the admissibility constraint
/// `y1' - y2` coupling the two lower coordinates. The boundary term is the
/// one induced by the underlying holonomic picture.
pub fn reduced_example_el(lag: &Lagrangian) -> Result<ELSystem, MechanicsError> {
    let y1 = Symbol::jet("y1", 0, 1);
    let x2 = Symbol::jet("x2", 0, 2);
    let y2 = Symbol::jet("y2", 0, 2);
    let chart = [y1.clone(), x2.clone(), y2.clone()];
    for s in lag.l.symbols() {
        let on_chart = chart.iter().any(|c| c.name == s.name);
        if !(on_chart && s.jet == 0) {
            return Err(MechanicsError::Shape(format!(
                "the reduced Lagrangian may mention y1, x2, y2 at jet zero; found {}",
                s.to_display()
            )));
        }
    }
    let l_y1 = lag.l.diff(&y1);
    let l_x2 = lag.l.diff(&x2);
    let l_y2 = lag.l.diff(&y2);
    let res1 = dt_jet(&dt_jet(&l_x2)?)?;
    let res2 = dt_jet(&dt_jet(&l_y2)?)?.sub(&dt_jet(&l_y1)?);
    let admissibility = vec![Poly::symbol(&y1.shift_jet()).sub(&Poly::symbol(&y2))];
    let gens = fresh_generators(2, &chart);
    let boundary = l_x2
        .mul(&Poly::symbol(&gens[0].shift_jet()))
        .sub(&dt_jet(&l_x2)?.mul(&Poly::symbol(&gens[0])))
        .add(&l_y2.mul(&Poly::symbol(&gens[1].shift_jet())))
        .add(&l_y1.sub(&dt_jet(&l_y2)?).mul(&Poly::symbol(&gens[1])));
    Ok(ELSystem {
        residuals: vec![res1, res2],
        boundary_term: boundary,
        admissibility,
        vars: chart.to_vec(),
        generators: gens,
    })
}

/// Rewrite a residual system over a vector Lie group through the position
/// primitive: every jet of a dynamical variable steps up by one. Over a
/// vector group the reconstruction of a group curve from its velocity curve
/// is literal antidifferentiation, so the equations of motion for the
/// velocity variable become equations one order higher for the position
/// curve, carrying one extra initial value.
pub fn vector_group_position_form(sys: &ELSystem) -> ELSystem {
    let shift = |p: &Poly| -> Poly {
        let mut map: BTreeMap<Symbol, Poly> = BTreeMap::new();
        for s in p.symbols() {
            if sys.vars.iter().any(|v| v.name == s.name) {
                map.insert(s.clone(), Poly::symbol(&s.shift_jet()));
            }
        }
        p.substitute(&map)
    };
    ELSystem {
        residuals: sys.residuals.iter().map(&shift).collect(),
        boundary_term: shift(&sys.boundary_term),
        admissibility: sys.admissibility.iter().map(&shift).collect(),
        vars: sys.vars.clone(),
        generators: sys.generators.clone(),
    }
}

/// Certify the integration-by-parts identity on polynomial data.
///
/// `gamma` is a curve in the total second-order chart of the prolongation of
/// `a` (base, fiber, fiber derivative), `xi` a polynomial generator curve.
/// The curve must be admissible and its second-level components must be the
/// time derivatives of its first-level ones. The pairing of the differential
/// of the Lagrangian with the admissible variation is compared against the
/// residual pairing plus the time derivative of the boundary term; the
/// returned value is the largest absolute coefficient of the difference,
/// zero exactly when the identity holds.
pub fn ibp_check(
    a: &Algebroid1,
    lag: &Lagrangian,
    gamma: &CurvePoly,
    xi: &CurvePoly,
) -> Result<Rat, MechanicsError> {
    let ha = prolong2(a)?;
    let m = ha.base_dim();
    let n = ha.rank1();
    if gamma.components.len() != m + 2 * n {
        return Err(MechanicsError::Shape(format!(
            "the curve must have {} components, got {}",
            m + 2 * n,
            gamma.components.len()
        )));
    }
    let t = &gamma.t;
    for i in 0..n {
        let r = gamma.components[m + n + i].sub(&gamma.components[m + i].diff(t));
        if !r.is_zero() {
            return Err(MechanicsError::NotAdmissible(format!(
                "second-level component {i} must be the derivative of the first-level one; difference {r}"
            )));
        }
    }
    let var = admissible_variation(&ha, gamma, xi)?;
    let chart = m + 2 * n;
    let dx = &var.components[chart..chart + m];
    let dy = &var.components[chart + m..chart + m + n];
    let dz = &var.components[chart + m + n..];
    let mut subl: BTreeMap<Symbol, Poly> = BTreeMap::new();
    for (aidx, s) in a.base.iter().enumerate() {
        subl.insert(s.clone(), gamma.components[aidx].clone());
    }
    for (i, s) in a.fiber.iter().enumerate() {
        subl.insert(s.clone(), gamma.components[m + i].clone());
        subl.insert(s.shift_jet(), gamma.components[m + n + i].clone());
    }
    let mut lhs = Poly::zero();
    for (aidx, s) in a.base.iter().enumerate() {
        lhs = lhs.add(&lag.l.diff(s).substitute(&subl).mul(&dx[aidx]));
    }
    for (i, s) in a.fiber.iter().enumerate() {
        lhs = lhs.add(&lag.l.diff(s).substitute(&subl).mul(&dy[i]));
        lhs = lhs.add(&lag.l.diff(&s.shift_jet()).substitute(&subl).mul(&dz[i]));
    }
    let sys = el_prolong2(a, lag)?;
    let curve_sub = |p: &Poly| -> Result<Poly, MechanicsError> {
        let mut map: BTreeMap<Symbol, Poly> = BTreeMap::new();
        for s in p.symbols() {
            let comp = if let Some(i) = a.base.iter().position(|x| x.name == s.name) {
                gamma.components[i].clone()
            } else if let Some(i) = a.fiber.iter().position(|y| y.name == s.name) {
                gamma.components[m + i].clone()
            } else if let Some(i) = sys.generators.iter().position(|g| g.name == s.name) {
                xi.components[i].clone()
            } else {
                return Err(MechanicsError::Shape(format!(
                    "unexpected symbol {} in the residual system",
                    s.to_display()
                )));
            };
            let mut d = comp;
            for _ in 0..s.jet {
                d = d.diff(t);
            }
            map.insert(s.clone(), d);
        }
        Ok(p.substitute(&map))
    };
    let mut rhs = Poly::zero();
    for (i, r) in sys.residuals.iter().enumerate() {
        rhs = rhs.add(&curve_sub(r)?.mul(&xi.components[i]));
    }
    rhs = rhs.add(&curve_sub(&sys.boundary_term)?.diff(t));
    let diffp = lhs.sub(&rhs);
    let mut maxc = Rat::zero();
    for (_, c) in diffp.terms() {
        let abs = c.abs();
        if abs > maxc {
            maxc = abs;
        }
    }
    Ok(maxc)
}

/// A numerically integrated trajectory on a uniform time grid.
#[derive(Debug, Clone)]
pub struct NumTrajectory {
    pub h: f64,
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl NumTrajectory {
    /// Comma-separated table: a time column followed by one column per state
    /// slot.
    pub fn csv(&self, slots: &[Symbol]) -> String {
        let mut out = String::from("t");
        for s in slots {
            out.push(',');
            out.push_str(&s.to_display());
        }
        out.push('\n');
        for (i, t) in self.grid.iter().enumerate() {
            out.push_str(&format!("{t:.12e}"));
            for v in &self.states[i] {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// The first-order assembly of a residual system: equations (residuals plus
/// admissibility) solved for the leading jets of the dynamical variables.
struct OdeAssembly {
    orders: Vec<u32>,
    slots: Vec<Symbol>,
    tops: Vec<Symbol>,
    equations: Vec<Poly>,
    amat: Vec<Vec<Poly>>,
    bvec: Vec<Poly>,
    const_inv: Option<Vec<Vec<f64>>>,
}

fn rat_inverse(a: &[Vec<Rat>]) -> Option<Vec<Vec<Rat>>> {
    let n = a.len();
    let mut m: Vec<Vec<Rat>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..n).map(|j| if i == j { Rat::one() } else { Rat::zero() }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let d = m[col][col].clone();
        for x in m[col].iter_mut() {
            *x = &*x / &d;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let fac = m[r][col].clone();
                for c2 in 0..2 * n {
                    let sub = &m[col][c2] * &fac;
                    m[r][c2] = &m[r][c2] - &sub;
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[n..].to_vec()).collect())
}

fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| {
            a[r][col]
                .abs()
                .partial_cmp(&a[s][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        let mag = a[piv][col].abs();
        if !mag.is_finite() || mag < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let fac = a[r][col] / a[col][col];
            for c2 in col..n {
                a[r][c2] -= fac * a[col][c2];
            }
            b[r] -= fac * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}

fn assemble(sys: &ELSystem) -> Result<OdeAssembly, MechanicsError> {
    if sys.vars.is_empty() {
        return Err(MechanicsError::Shape(
            "the system has no dynamical variables".into(),
        ));
    }
    for (i, v) in sys.vars.iter().enumerate() {
        if v.jet != 0 {
            return Err(MechanicsError::Shape(format!(
                "dynamical variable {} must have jet order zero",
                v.to_display()
            )));
        }
        if sys.vars[..i].iter().any(|w| w.name == v.name) {
            return Err(MechanicsError::Shape(format!(
                "duplicate variable name {}",
                v.name
            )));
        }
    }
    let equations: Vec<Poly> = sys
        .residuals
        .iter()
        .chain(sys.admissibility.iter())
        .cloned()
        .collect();
    if equations.len() != sys.vars.len() {
        return Err(MechanicsError::Shape(format!(
            "{} equations for {} variables; the jet system must be square",
            equations.len(),
            sys.vars.len()
        )));
    }
    let mut orders = vec![0u32; sys.vars.len()];
    for e in &equations {
        for s in e.symbols() {
            match sys.vars.iter().position(|v| v.name == s.name) {
                Some(i) => {
                    if s.jet > orders[i] {
                        orders[i] = s.jet;
                    }
                }
                None => {
                    return Err(MechanicsError::Shape(format!(
                        "equation symbol {} is not a jet of any dynamical variable",
                        s.to_display()
                    )))
                }
            }
        }
    }
    for (i, &r) in orders.iter().enumerate() {
        if r == 0 {
            return Err(MechanicsError::Shape(format!(
                "variable {} never appears differentiated; the system determines no motion for it",
                sys.vars[i].name
            )));
        }
    }
    let tops: Vec<Symbol> = sys
        .vars
        .iter()
        .zip(&orders)
        .map(|(v, &r)| Symbol::jet(&v.name, r, v.weight + r))
        .collect();
    let is_top = |s: &Symbol| tops.iter().any(|t| t == s);
    let mut amat = Vec::with_capacity(equations.len());
    let mut bvec = Vec::with_capacity(equations.len());
    for e in &equations {
        if e.degree_in(is_top).unwrap_or(0) > 1 {
            return Err(MechanicsError::Shape(format!(
                "equation {e} is not linear in the leading jets"
            )));
        }
        let row: Vec<Poly> = tops.iter().map(|tp| e.linear_coefficient(tp)).collect();
        let mut b = e.clone();
        for (tp, c) in tops.iter().zip(&row) {
            b = b.sub(&c.mul(&Poly::symbol(tp)));
        }
        if b.symbols().iter().any(is_top) {
            return Err(MechanicsError::Shape(format!(
                "equation {e} is not affine in the leading jets"
            )));
        }
        amat.push(row);
        bvec.push(b);
    }
    let mut slots = Vec::new();
    for (v, &r) in sys.vars.iter().zip(&orders) {
        for j in 0..r {
            slots.push(Symbol::jet(&v.name, j, v.weight + j));
        }
    }
    let all_const = amat.iter().flatten().all(|p| p.is_constant());
    let const_inv = if all_const {
        let a_rat: Vec<Vec<Rat>> = amat
            .iter()
            .map(|row| row.iter().map(|p| p.constant_term()).collect())
            .collect();
        match rat_inverse(&a_rat) {
            Some(inv) => Some(
                inv.iter()
                    .map(|row| row.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect())
                    .collect(),
            ),
            None => {
                return Err(MechanicsError::SingularLeadingMatrix(
                    "the constant leading-jet matrix is not invertible".into(),
                ))
            }
        }
    } else {
        None
    };
    Ok(OdeAssembly {
        orders,
        slots,
        tops,
        equations,
        amat,
        bvec,
        const_inv,
    })
}

impl OdeAssembly {
    fn rhs(&self, state: &[f64], t: f64) -> Result<Vec<f64>, MechanicsError> {
        let mut vals: BTreeMap<Symbol, f64> = BTreeMap::new();
        for (s, &v) in self.slots.iter().zip(state) {
            vals.insert(s.clone(), v);
        }
        let nv = self.orders.len();
        let mut bneg = vec![0.0; nv];
        for (e, bp) in self.bvec.iter().enumerate() {
            bneg[e] = -bp.eval_f64(&vals)?;
        }
        let u: Vec<f64> = if let Some(inv) = &self.const_inv {
            (0..nv)
                .map(|i| (0..nv).map(|j| inv[i][j] * bneg[j]).sum())
                .collect()
        } else {
            let a: Vec<Vec<f64>> = self
                .amat
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|p| p.eval_f64(&vals))
                        .collect::<Result<Vec<f64>, _>>()
                })
                .collect::<Result<Vec<Vec<f64>>, _>>()?;
            lu_solve(a, bneg).ok_or_else(|| {
                MechanicsError::SingularLeadingMatrix(format!(
                    "the leading-jet matrix is numerically singular at t = {t}"
                ))
            })?
        };
        let mut out = Vec::with_capacity(state.len());
        let mut off = 0usize;
        for (vi, &r) in self.orders.iter().enumerate() {
            let r = r as usize;
            for j in 0..r {
                if j + 1 < r {
                    out.push(state[off + j + 1]);
                } else {
                    out.push(u[vi]);
                }
            }
            off += r;
        }
        Ok(out)
    }
}

/// The state layout of a residual system: the jets of every dynamical
/// variable below its leading order, in variable-major order. Initial data
/// for [`integrate_rk4`] and conserved quantities for [`conservation_check`]
/// refer to these slots.
pub fn state_symbols(sys: &ELSystem) -> Result<Vec<Symbol>, MechanicsError> {
    Ok(assemble(sys)?.slots)
}

/// Integrate a residual system with the classical fourth-order Runge-Kutta
/// scheme on the uniform grid `0, h, ..., T`. The equations are solved for
/// the leading jets at every stage; when the leading matrix is constant it
/// is inverted once over the rationals.
pub fn integrate_rk4(
    sys: &ELSystem,
    y0: &[f64],
    h: f64,
    t_end: f64,
) -> Result<NumTrajectory, MechanicsError> {
    let ode = assemble(sys)?;
    if y0.len() != ode.slots.len() {
        return Err(MechanicsError::Shape(format!(
            "initial data must provide {} values ({}), got {}",
            ode.slots.len(),
            ode.slots
                .iter()
                .map(|s| s.to_display())
                .collect::<Vec<_>>()
                .join(", "),
            y0.len()
        )));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(MechanicsError::Shape(
            "the step size must be positive and finite".into(),
        ));
    }
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(MechanicsError::Shape(
            "the final time must be positive and finite".into(),
        ));
    }
    let steps_f = t_end / h;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(MechanicsError::Shape(format!(
            "the step size {h} does not divide the final time {t_end}"
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(MechanicsError::NonFiniteState(
            "the initial state is not finite".into(),
        ));
    }
    let finite = |v: &[f64], t: f64| -> Result<(), MechanicsError> {
        if v.iter().any(|x| !x.is_finite()) {
            Err(MechanicsError::NonFiniteState(format!(
                "the state left the finite floating-point range near t = {t}"
            )))
        } else {
            Ok(())
        }
    };
    let mut states = Vec::with_capacity(steps + 1);
    let mut grid = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    states.push(y.clone());
    grid.push(0.0);
    for step in 0..steps {
        let t = step as f64 * h;
        let k1 = ode.rhs(&y, t)?;
        finite(&k1, t)?;
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let k2 = ode.rhs(&y2, t + 0.5 * h)?;
        finite(&k2, t)?;
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let k3 = ode.rhs(&y3, t + 0.5 * h)?;
        finite(&k3, t)?;
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let k4 = ode.rhs(&y4, t + h)?;
        finite(&k4, t)?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        finite(&y, t + h)?;
        states.push(y.clone());
        grid.push((step + 1) as f64 * h);
    }
    Ok(NumTrajectory { h, grid, states })
}

/// Audit a trajectory against its defining equations: the leading jets are
/// reconstructed by central differences of the stored state and every
/// equation of the system is evaluated on the grid interior. Returns the
/// largest absolute value found.
pub fn residual_monitor(sys: &ELSystem, traj: &NumTrajectory) -> Result<f64, MechanicsError> {
    let ode = assemble(sys)?;
    if traj.states.len() < 3 {
        return Err(MechanicsError::Shape(
            "the trajectory is too short for a finite-difference audit".into(),
        ));
    }
    let mut last_slot = Vec::with_capacity(ode.orders.len());
    let mut off = 0usize;
    for &r in &ode.orders {
        last_slot.push(off + r as usize - 1);
        off += r as usize;
    }
    let mut worst = 0.0f64;
    for i in 1..traj.states.len() - 1 {
        let mut vals: BTreeMap<Symbol, f64> = BTreeMap::new();
        for (s, &v) in ode.slots.iter().zip(&traj.states[i]) {
            vals.insert(s.clone(), v);
        }
        for (vi, tp) in ode.tops.iter().enumerate() {
            let ls = last_slot[vi];
            let d = (traj.states[i + 1][ls] - traj.states[i - 1][ls]) / (2.0 * traj.h);
            vals.insert(tp.clone(), d);
        }
        for e in &ode.equations {
            let v = e.eval_f64(&vals)?.abs();
            if v > worst {
                worst = v;
            }
        }
    }
    Ok(worst)
}

/// The largest deviation of a polynomial state function from its initial
/// value along a trajectory. The quantity may mention exactly the state
/// slots of the system.
pub fn conservation_check(
    q: &Poly,
    sys: &ELSystem,
    traj: &NumTrajectory,
) -> Result<f64, MechanicsError> {
    let ode = assemble(sys)?;
    for s in q.symbols() {
        if !ode.slots.contains(&s) {
            return Err(MechanicsError::Shape(format!(
                "the quantity mentions {} outside the state slots",
                s.to_display()
            )));
        }
    }
    if traj.states.is_empty() {
        return Err(MechanicsError::Shape("the trajectory is empty".into()));
    }
    let eval_at = |st: &[f64]| -> Result<f64, MechanicsError> {
        let mut vals: BTreeMap<Symbol, f64> = BTreeMap::new();
        for (s, &v) in ode.slots.iter().zip(st) {
            vals.insert(s.clone(), v);
        }
        Ok(q.eval_f64(&vals)?)
    };
    let q0 = eval_at(&traj.states[0])?;
    let mut worst = 0.0f64;
    for st in &traj.states[1..] {
        let d = (eval_at(st)? - q0).abs();
        if d > worst {
            worst = d;
        }
    }
    Ok(worst)
}

/// Render a trajectory as CSV with one residual column per system equation
/// and the running value of each named state function.  Header:
/// `t,<slots...>,residual1..residualN,<names...>`.  Residuals are audited by
/// finite differences of the leading slots: central in the interior,
/// second-order one-sided at the two endpoints.
pub fn trajectory_table(
    sys: &ELSystem,
    traj: &NumTrajectory,
    conserved: &[(String, Poly)],
) -> Result<String, MechanicsError> {
    let ode = assemble(sys)?;
    let npts = traj.states.len();
    if npts < 3 {
        return Err(MechanicsError::Shape(
            "the trajectory is too short for a finite-difference audit".into(),
        ));
    }
    for (_, q) in conserved {
        for s in q.symbols() {
            if !ode.slots.contains(&s) {
                return Err(MechanicsError::Shape(format!(
                    "the quantity mentions {} outside the state slots",
                    s.to_display()
                )));
            }
        }
    }
    let mut last_slot = Vec::with_capacity(ode.orders.len());
    let mut off = 0usize;
    for &r in &ode.orders {
        last_slot.push(off + r as usize - 1);
        off += r as usize;
    }
    let mut out = String::from("t");
    for s in &ode.slots {
        out.push(',');
        out.push_str(&s.to_display());
    }
    for e in 1..=ode.equations.len() {
        out.push_str(&format!(",residual{e}"));
    }
    for (name, _) in conserved {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let h = traj.h;
    for (i, t) in traj.grid.iter().enumerate() {
        let mut vals: BTreeMap<Symbol, f64> = BTreeMap::new();
        for (s, &v) in ode.slots.iter().zip(&traj.states[i]) {
            vals.insert(s.clone(), v);
        }
        for (vi, tp) in ode.tops.iter().enumerate() {
            let ls = last_slot[vi];
            let d = if i == 0 {
                (-3.0 * traj.states[0][ls] + 4.0 * traj.states[1][ls] - traj.states[2][ls])
                    / (2.0 * h)
            } else if i + 1 == npts {
                (3.0 * traj.states[i][ls] - 4.0 * traj.states[i - 1][ls] + traj.states[i - 2][ls])
                    / (2.0 * h)
            } else {
                (traj.states[i + 1][ls] - traj.states[i - 1][ls]) / (2.0 * h)
            };
            vals.insert(tp.clone(), d);
        }
        out.push_str(&format!("{t:.12e}"));
        for v in &traj.states[i] {
            out.push_str(&format!(",{v:.12e}"));
        }
        for e in &ode.equations {
            out.push_str(&format!(",{:.12e}", e.eval_f64(&vals)?));
        }
        for (_, q) in conserved {
            out.push_str(&format!(",{:.12e}", q.eval_f64(&vals)?));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat_int;

    fn t_sym() -> Symbol {
        Symbol::new("t", 0)
    }

    /// Polynomial in the time symbol with the given integer coefficients,
    /// `coeffs[k]` multiplying `t^k`.
    fn tpoly(coeffs: &[i64]) -> Poly {
        let t = Poly::symbol(&t_sym());
        coeffs
            .iter()
            .enumerate()
            .fold(Poly::zero(), |acc, (k, &c)| {
                acc.add(&t.pow(k as u32).scale(&rat_int(c)))
            })
    }

    fn so3() -> LieAlgebraModel {
        LieAlgebraModel::from_sparse(
            "so3",
            3,
            &[
                (2, 0, 1, rat_int(1)),
                (0, 1, 2, rat_int(1)),
                (1, 2, 0, rat_int(1)),
            ],
        )
        .unwrap()
    }

    fn afib() -> Vec<Symbol> {
        vec![
            Symbol::jet("a1", 0, 1),
            Symbol::jet("a2", 0, 1),
            Symbol::jet("a3", 0, 1),
        ]
    }

    fn sym(name: &str, jet: u32) -> Symbol {
        Symbol::jet(name, jet, jet)
    }

    fn rigid_body_lagrangian() -> Lagrangian {
        // l = 1/2 (a1')^2 + 1/2 (a2')^2 + (a3')^2, the inertia (1, 1, 2)
        let half = rat(1, 2);
        Lagrangian::new(
            Poly::symbol(&sym("a1", 1))
                .pow(2)
                .scale(&half)
                .add(&Poly::symbol(&sym("a2", 1)).pow(2).scale(&half))
                .add(&Poly::symbol(&sym("a3", 1)).pow(2)),
        )
    }

    fn rigid_body_system() -> ELSystem {
        euler_poincare2(&so3(), &afib(), &rigid_body_lagrangian()).unwrap()
    }

    #[test]
    fn admissibility_of_tangent_lifts() {
        let x = Symbol::new("x", 0);
        let ha = HA2::tangent2("T2R", &[x]);
        // the holonomic lift of t^2 is admissible
        let g = CurvePoly::new(
            t_sym(),
            vec![tpoly(&[0, 0, 1]), tpoly(&[0, 2]), tpoly(&[2])],
        )
        .unwrap();
        let r = admissibility_residual(&ha, &g).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|p| p.is_zero()));
        // zeroing the second-level slot breaks the second equation by 2
        let gbad = CurvePoly::new(
            t_sym(),
            vec![tpoly(&[0, 0, 1]), tpoly(&[0, 2]), Poly::zero()],
        )
        .unwrap();
        let rbad = admissibility_residual(&ha, &gbad).unwrap();
        assert!(rbad[0].is_zero());
        assert_eq!(rbad[1], Poly::int(2));
        // a structure over a point has no admissibility equations
        let alg = so3().to_algebroid1("so3E", &afib()).unwrap();
        let ha3 = prolong2(&alg).unwrap();
        let g3 = CurvePoly::new(t_sym(), (0..6).map(|k| tpoly(&[k, 1])).collect()).unwrap();
        assert!(admissibility_residual(&ha3, &g3).unwrap().is_empty());
    }

    #[test]
    fn variations_on_the_tangent_structure_shuffle_the_generator() {
        let x = Symbol::new("x", 0);
        let ha = HA2::tangent2("T2R", &[x]);
        let g = CurvePoly::new(
            t_sym(),
            vec![tpoly(&[0, 0, 1]), tpoly(&[0, 2]), tpoly(&[2])],
        )
        .unwrap();
        let xi = CurvePoly::new(t_sym(), vec![tpoly(&[0, 0, 0, 1])]).unwrap();
        let v = admissible_variation(&ha, &g, &xi).unwrap();
        assert_eq!(v.components.len(), 6);
        assert_eq!(v.components[3], tpoly(&[0, 0, 0, 1]));
        assert_eq!(v.components[4], tpoly(&[0, 0, 3]));
        assert_eq!(v.components[5], tpoly(&[0, 6]));
        // a non-admissible curve is refused with the residual as witness
        let gbad = CurvePoly::new(
            t_sym(),
            vec![tpoly(&[0, 0, 1]), tpoly(&[0, 2]), Poly::zero()],
        )
        .unwrap();
        assert!(matches!(
            admissible_variation(&ha, &gbad, &xi),
            Err(MechanicsError::NotAdmissible(_))
        ));
    }

    #[test]
    fn variations_on_a_lie_algebra_prolongation_match_the_bracket_formula() {
        let g = so3();
        let alg = g.to_algebroid1("so3E", &afib()).unwrap();
        let ha = prolong2(&alg).unwrap();
        let t = t_sym();
        let ys = [tpoly(&[0, 1]), tpoly(&[0, 0, 1]), tpoly(&[1, 1])];
        let zs: Vec<Poly> = ys.iter().map(|p| p.diff(&t)).collect();
        let mut comps = ys.to_vec();
        comps.extend(zs.iter().cloned());
        let gamma = CurvePoly::new(t.clone(), comps).unwrap();
        let xis = [tpoly(&[0, 0, 0, 1]), tpoly(&[0, 1]), tpoly(&[2])];
        let xi = CurvePoly::new(t.clone(), xis.to_vec()).unwrap();
        let v = admissible_variation(&ha, &gamma, &xi).unwrap();
        let xid: Vec<Poly> = xis.iter().map(|p| p.diff(&t)).collect();
        let xidd: Vec<Poly> = xid.iter().map(|p| p.diff(&t)).collect();
        let br = |u: &[Poly], w: &[Poly]| -> Vec<Poly> {
            (0..3)
                .map(|k| {
                    let mut acc = Poly::zero();
                    for i in 0..3 {
                        for j in 0..3 {
                            acc = acc.add(&u[i].mul(&w[j]).scale(&g.c[k][i][j]));
                        }
                    }
                    acc
                })
                .collect()
        };
        // delta y = xi' + [y, xi], delta z = xi'' + [y, xi'] + [z, xi]
        let by = br(&ys, &xis);
        let b1 = br(&ys, &xid);
        let b2 = br(&zs, &xis);
        for k in 0..3 {
            assert_eq!(
                v.components[6 + k],
                xid[k].add(&by[k]),
                "first-level variation {k}"
            );
            assert_eq!(
                v.components[9 + k],
                xidd[k].add(&b1[k]).add(&b2[k]),
                "second-level variation {k}"
            );
        }
    }

    #[test]
    fn classical_second_order_pairs() {
        let x = Symbol::new("x", 0);
        let half = rat(1, 2);
        let x2 = Poly::symbol(&sym("x", 2));
        let lag = Lagrangian::new(x2.pow(2).scale(&half));
        let sys = standard_el2(std::slice::from_ref(&x), &lag).unwrap();
        assert_eq!(sys.residuals, vec![Poly::symbol(&sym("x", 4))]);
        let xi = &sys.generators[0];
        let expected_b = x2
            .mul(&Poly::symbol(&xi.shift_jet()))
            .sub(&Poly::symbol(&sym("x", 3)).mul(&Poly::symbol(xi)));
        assert_eq!(sys.boundary_term, expected_b);
        let x1 = Poly::symbol(&sym("x", 1));
        let lag1 = Lagrangian::new(x1.pow(2).scale(&half));
        let sys1 = standard_el2(&[x], &lag1).unwrap();
        assert_eq!(sys1.residuals, vec![Poly::symbol(&sym("x", 2)).neg()]);
    }

    #[test]
    fn prolongation_residuals_reduce_to_the_classical_pair_on_a_tangent_structure() {
        let x1 = Symbol::new("x1", 0);
        let x2s = Symbol::new("x2", 0);
        let alg = Algebroid1::tangent_algebroid("TR2", &[x1.clone(), x2s.clone()]);
        let v1 = alg.fiber[0].clone();
        let v2 = alg.fiber[1].clone();
        // L = 1/2 (vx1')^2 + x2 (vx1)^2 + vx2' vx1
        let lagp = Poly::symbol(&v1.shift_jet())
            .pow(2)
            .scale(&rat(1, 2))
            .add(&Poly::symbol(&x2s).mul(&Poly::symbol(&v1).pow(2)))
            .add(&Poly::symbol(&v2.shift_jet()).mul(&Poly::symbol(&v1)));
        let sys = el_prolong2(&alg, &Lagrangian::new(lagp.clone())).unwrap();
        assert_eq!(sys.admissibility.len(), 2);
        assert_eq!(
            sys.admissibility[0],
            Poly::symbol(&sym("x1", 1)).sub(&Poly::symbol(&v1))
        );
        // the classical picture substitutes v^(j) -> x^(j+1)
        let mut map = BTreeMap::new();
        for (vs, xs_) in alg.fiber.iter().zip(alg.base.iter()) {
            for j in 0..2u32 {
                map.insert(
                    Symbol::jet(&vs.name, j, 0),
                    Poly::symbol(&Symbol::jet(&xs_.name, j + 1, j + 1)),
                );
            }
        }
        let std_sys = standard_el2(&alg.base, &Lagrangian::new(lagp.substitute(&map))).unwrap();
        let relabel = |p: &Poly| -> Poly {
            let mut mm = BTreeMap::new();
            for s in p.symbols() {
                if let Some(k) = alg.fiber.iter().position(|v| v.name == s.name) {
                    mm.insert(
                        s.clone(),
                        Poly::symbol(&Symbol::jet(&alg.base[k].name, s.jet + 1, s.jet + 1)),
                    );
                }
            }
            p.substitute(&mm)
        };
        for i in 0..2 {
            assert_eq!(
                relabel(&sys.residuals[i]),
                std_sys.residuals[i],
                "residual {i}"
            );
        }
        assert_eq!(relabel(&sys.boundary_term), std_sys.boundary_term);
        // a Lagrangian depending only on the base pairs through the anchor
        let sysx = el_prolong2(&alg, &Lagrangian::new(Poly::symbol(&x1).pow(3))).unwrap();
        assert_eq!(
            sysx.residuals[0],
            Poly::symbol(&x1).pow(2).scale(&rat_int(3))
        );
        assert!(sysx.residuals[1].is_zero());
    }

    #[test]
    fn non_almost_lie_structures_are_rejected() {
        let x = Symbol::new("x", 0);
        // anchor fields d/dx and x d/dx do not commute, bracket is zero
        let alg = Algebroid1 {
            name: "bad".into(),
            base: vec![x.clone()],
            fiber: vec![Symbol::jet("u", 0, 1), Symbol::jet("v", 0, 1)],
            anchor_left: vec![vec![Poly::one(), Poly::symbol(&x)]],
            anchor_right: vec![vec![Poly::one(), Poly::symbol(&x)]],
            bracket: vec![vec![vec![Poly::zero(); 2]; 2]; 2],
        };
        assert!(matches!(
            el_prolong2(&alg, &Lagrangian::new(Poly::zero())),
            Err(MechanicsError::NotAlmostLie(_))
        ));
    }

    #[test]
    fn the_point_base_specialization_agrees_with_the_prolongation_operator() {
        let g = so3();
        let fib = afib();
        // a generic quadratic Lagrangian mixing positions and velocities
        let lag = Lagrangian::new(
            Poly::symbol(&sym("a1", 1))
                .pow(2)
                .scale(&rat(1, 2))
                .add(&Poly::symbol(&sym("a2", 1)).pow(2).scale(&rat(1, 2)))
                .add(&Poly::symbol(&sym("a3", 1)).pow(2))
                .add(&Poly::symbol(&sym("a1", 0)).mul(&Poly::symbol(&sym("a2", 1))))
                .add(&Poly::symbol(&sym("a2", 0)).pow(2).scale(&rat(1, 4)))
                .add(&Poly::symbol(&sym("a3", 0)).mul(&Poly::symbol(&sym("a1", 1)))),
        );
        let ep = euler_poincare2(&g, &fib, &lag).unwrap();
        let alg = g.to_algebroid1("so3E", &fib).unwrap();
        let el = el_prolong2(&alg, &lag).unwrap();
        assert_eq!(ep.residuals, el.residuals);
        assert_eq!(ep.boundary_term, el.boundary_term);
        assert_eq!(ep.generators, el.generators);
        assert!(ep.admissibility.is_empty() && el.admissibility.is_empty());
        assert_eq!(ep.vars, el.vars);
    }

    #[test]
    fn point_base_residual_examples() {
        // flat one-dimensional case: l = 1/2 (a')^2 gives a third-order residual
        let ab = LieAlgebraModel::from_sparse("ab1", 1, &[]).unwrap();
        let a = Symbol::jet("a", 0, 1);
        let lag = Lagrangian::new(Poly::symbol(&a.shift_jet()).pow(2).scale(&rat(1, 2)));
        let ep = euler_poincare2(&ab, std::slice::from_ref(&a), &lag).unwrap();
        assert_eq!(ep.residuals, vec![Poly::symbol(&sym("a", 3))]);
        // the rigid-body form: I a''' minus the dual pairing of I a'' with a
        let sys = rigid_body_system();
        let p = |name: &str, jet: u32| Poly::symbol(&sym(name, jet));
        let expected = vec![
            p("a1", 3)
                .sub(&p("a2", 2).mul(&p("a3", 0)))
                .add(&p("a3", 2).mul(&p("a2", 0)).scale(&rat_int(2))),
            p("a2", 3)
                .sub(&p("a3", 2).mul(&p("a1", 0)).scale(&rat_int(2)))
                .add(&p("a1", 2).mul(&p("a3", 0))),
            p("a3", 3)
                .scale(&rat_int(2))
                .sub(&p("a1", 2).mul(&p("a2", 0)))
                .add(&p("a2", 2).mul(&p("a1", 0))),
        ];
        assert_eq!(sys.residuals, expected);
        // linear velocity dependence: the third-order terms cancel
        let g = so3();
        let lag_lin = Lagrangian::new(
            Poly::symbol(&sym("a1", 0))
                .mul(&Poly::symbol(&sym("a1", 1)))
                .add(&Poly::symbol(&sym("a2", 1)).mul(&Poly::symbol(&sym("a3", 0)))),
        );
        let sys_lin = euler_poincare2(&g, &afib(), &lag_lin).unwrap();
        for r in &sys_lin.residuals {
            assert!(
                r.symbols().iter().all(|s| s.jet <= 2),
                "unexpected jet order in {r}"
            );
        }
        // an exact total derivative has vanishing residuals
        let lag_td = Lagrangian::new(Poly::symbol(&sym("a1", 1)));
        let sys_td = euler_poincare2(&g, &afib(), &lag_td).unwrap();
        assert!(sys_td.residuals.iter().all(|p| p.is_zero()));
    }

    #[test]
    fn the_reduced_chart_matches_the_invariant_classical_picture() {
        let y1 = Symbol::jet("y1", 0, 1);
        let x2 = Symbol::jet("x2", 0, 2);
        let y2 = Symbol::jet("y2", 0, 2);
        let lag = Lagrangian::new(
            Poly::symbol(&x2)
                .pow(2)
                .scale(&rat(1, 2))
                .add(&Poly::symbol(&y2).pow(2).scale(&rat(1, 2)))
                .add(&Poly::symbol(&y1).mul(&Poly::symbol(&x2)))
                .add(&Poly::symbol(&y1).pow(3).scale(&rat(1, 3))),
        );
        let sys = reduced_example_el(&lag).unwrap();
        assert_eq!(
            sys.admissibility,
            vec![Poly::symbol(&Symbol::jet("y1", 1, 2)).sub(&Poly::symbol(&y2))]
        );
        // residuals on the formal towers
        let expected1 =
            Poly::symbol(&Symbol::jet("x2", 2, 4)).add(&Poly::symbol(&Symbol::jet("y1", 2, 3)));
        let expected2 = Poly::symbol(&Symbol::jet("y2", 2, 4))
            .sub(&Poly::symbol(&Symbol::jet("x2", 1, 3)))
            .sub(
                &Poly::symbol(&y1)
                    .mul(&Poly::symbol(&Symbol::jet("y1", 1, 2)))
                    .scale(&rat_int(2)),
            );
        assert_eq!(sys.residuals, vec![expected1, expected2]);
        // the invariant classical Lagrangian substitutes y1 -> y', x2 -> x'', y2 -> y''
        let xsym = Symbol::new("x", 0);
        let ysym = Symbol::new("y", 0);
        let mut to_std = BTreeMap::new();
        to_std.insert(y1.clone(), Poly::symbol(&sym("y", 1)));
        to_std.insert(x2.clone(), Poly::symbol(&sym("x", 2)));
        to_std.insert(y2.clone(), Poly::symbol(&sym("y", 2)));
        let std_sys =
            standard_el2(&[xsym, ysym], &Lagrangian::new(lag.l.substitute(&to_std))).unwrap();
        // the jet relabeling y1 -> y^(1+j), x2 -> x^(2+j), y2 -> y^(2+j)
        let relabel = |p: &Poly| -> Poly {
            let mut mm = BTreeMap::new();
            for s in p.symbols() {
                let target = match s.name.as_str() {
                    "y1" => Symbol::jet("y", s.jet + 1, s.jet + 1),
                    "x2" => Symbol::jet("x", s.jet + 2, s.jet + 2),
                    "y2" => Symbol::jet("y", s.jet + 2, s.jet + 2),
                    _ => continue,
                };
                mm.insert(s.clone(), Poly::symbol(&target));
            }
            p.substitute(&mm)
        };
        assert_eq!(relabel(&sys.residuals[0]), std_sys.residuals[0]);
        assert_eq!(relabel(&sys.residuals[1]), std_sys.residuals[1]);
    }

    #[test]
    fn integration_by_parts_is_exact() {
        // the tangent structure over the line with L = 1/2 (v')^2
        let x = Symbol::new("x", 0);
        let alg = Algebroid1::tangent_algebroid("TR", std::slice::from_ref(&x));
        let v = alg.fiber[0].clone();
        let lag = Lagrangian::new(Poly::symbol(&v.shift_jet()).pow(2).scale(&rat(1, 2)));
        let t = t_sym();
        let gx = tpoly(&[1, -1, 2, 1]);
        let gy = gx.diff(&t);
        let gz = gy.diff(&t);
        let gamma = CurvePoly::new(t.clone(), vec![gx, gy, gz]).unwrap();
        let xi = CurvePoly::new(t.clone(), vec![tpoly(&[0, -3, 1])]).unwrap();
        assert!(ibp_check(&alg, &lag, &gamma, &xi).unwrap().is_zero());
        // the rotation algebra with a generic quadratic Lagrangian
        let g = so3();
        let alg3 = g.to_algebroid1("so3E", &afib()).unwrap();
        let lag3 = Lagrangian::new(
            Poly::symbol(&sym("a1", 1))
                .pow(2)
                .scale(&rat(1, 2))
                .add(&Poly::symbol(&sym("a2", 1)).pow(2).scale(&rat(1, 2)))
                .add(&Poly::symbol(&sym("a3", 1)).pow(2))
                .add(&Poly::symbol(&sym("a1", 0)).mul(&Poly::symbol(&sym("a2", 1))))
                .add(&Poly::symbol(&sym("a2", 0)).pow(2).scale(&rat(1, 4)))
                .add(&Poly::symbol(&sym("a3", 0)).mul(&Poly::symbol(&sym("a1", 1)))),
        );
        let ys = [tpoly(&[0, 1, 1]), tpoly(&[1, 0, 2]), tpoly(&[0, 2, 1])];
        let zs: Vec<Poly> = ys.iter().map(|p| p.diff(&t)).collect();
        let mut comps = ys.to_vec();
        comps.extend(zs);
        let gamma3 = CurvePoly::new(t.clone(), comps).unwrap();
        let xi3 = CurvePoly::new(
            t.clone(),
            vec![tpoly(&[1, 1]), tpoly(&[0, 0, 1]), tpoly(&[2, 0, 0, 1])],
        )
        .unwrap();
        assert!(ibp_check(&alg3, &lag3, &gamma3, &xi3).unwrap().is_zero());
        // a curve whose second level is not the derivative of the first is refused
        let bad = CurvePoly::new(
            t.clone(),
            vec![
                tpoly(&[0, 1]),
                tpoly(&[0, 1]),
                tpoly(&[0, 1]),
                tpoly(&[1]),
                tpoly(&[1]),
                tpoly(&[0]),
            ],
        )
        .unwrap();
        assert!(matches!(
            ibp_check(&alg3, &lag3, &bad, &xi3),
            Err(MechanicsError::NotAdmissible(_))
        ));
    }

    #[test]
    fn the_position_form_of_the_flat_system_integrates_the_cubic_exactly() {
        let ab = LieAlgebraModel::from_sparse("ab1", 1, &[]).unwrap();
        let a = Symbol::jet("a", 0, 1);
        let lag = Lagrangian::new(Poly::symbol(&a.shift_jet()).pow(2).scale(&rat(1, 2)));
        let ep = euler_poincare2(&ab, std::slice::from_ref(&a), &lag).unwrap();
        assert_eq!(ep.residuals, vec![Poly::symbol(&sym("a", 3))]);
        let pos = vector_group_position_form(&ep);
        assert_eq!(pos.residuals, vec![Poly::symbol(&sym("a", 4))]);
        let slots = state_symbols(&pos).unwrap();
        assert_eq!(
            slots,
            vec![sym("a", 0), sym("a", 1), sym("a", 2), sym("a", 3)]
        );
        // position, velocity and acceleration start at zero; the jerk starts
        // at 6, so the position curve is exactly t^3
        let traj = integrate_rk4(&pos, &[0.0, 0.0, 0.0, 6.0], 1e-3, 1.0).unwrap();
        let last = traj.states.last().unwrap();
        assert_eq!(traj.states.len(), 1001);
        assert!(
            (last[0] - 1.0).abs() <= 1e-8,
            "position at the final time: {}",
            last[0]
        );
        // the top jet is constant along the motion
        let q = Poly::symbol(&sym("a", 3));
        assert!(conservation_check(&q, &pos, &traj).unwrap() <= 1e-8);
    }

    #[test]
    fn the_integrator_converges_at_fourth_order() {
        let sys = rigid_body_system();
        let y0 = [0.3, 0.1, 0.2, -0.2, 0.4, -0.1, 0.5, -0.3, 0.25];
        let reference = integrate_rk4(&sys, &y0, 6.25e-4, 1.0).unwrap();
        let rf = reference.states.last().unwrap().clone();
        let err = |h: f64| -> f64 {
            let tr = integrate_rk4(&sys, &y0, h, 1.0).unwrap();
            tr.states
                .last()
                .unwrap()
                .iter()
                .zip(&rf)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "halving the step scales the error by {ratio}"
        );
    }

    #[test]
    fn the_rigid_body_run_conserves_the_symmetry_pairing() {
        let sys = rigid_body_system();
        let y0 = [0.3, 0.1, 0.2, -0.2, 0.4, -0.1, 0.5, -0.3, 0.25];
        let traj = integrate_rk4(&sys, &y0, 1e-3, 1.0).unwrap();
        // pairing with the vertical rotation: (a1' a2 - a2' a1) - 2 a3''
        let q = Poly::symbol(&sym("a1", 1))
            .mul(&Poly::symbol(&sym("a2", 0)))
            .sub(&Poly::symbol(&sym("a2", 1)).mul(&Poly::symbol(&sym("a1", 0))))
            .sub(&Poly::symbol(&sym("a3", 2)).scale(&rat_int(2)));
        assert!(conservation_check(&q, &sys, &traj).unwrap() <= 1e-6);
        assert!(residual_monitor(&sys, &traj).unwrap() <= 1e-6);
    }

    #[test]
    fn degenerate_leading_matrices_and_blowups_are_reported() {
        let x1 = Symbol::new("x1", 0);
        let x2 = Symbol::new("x2", 0);
        let s = Poly::symbol(&sym("x1", 2)).add(&Poly::symbol(&sym("x2", 2)));
        let lag = Lagrangian::new(s.pow(2).scale(&rat(1, 2)));
        let sys = standard_el2(&[x1, x2], &lag).unwrap();
        assert!(matches!(
            integrate_rk4(&sys, &[0.0; 8], 0.1, 1.0),
            Err(MechanicsError::SingularLeadingMatrix(_))
        ));
        // L = 1/2 x'^2 + 1/2 x^6 drives x'' = 3 x^5, which blows up
        let x = Symbol::new("x", 0);
        let lagb = Lagrangian::new(
            Poly::symbol(&sym("x", 1))
                .pow(2)
                .scale(&rat(1, 2))
                .add(&Poly::symbol(&x).pow(6).scale(&rat(1, 2))),
        );
        let sysb = standard_el2(&[x], &lagb).unwrap();
        assert!(matches!(
            integrate_rk4(&sysb, &[2.0, 5.0], 0.05, 5.0),
            Err(MechanicsError::NonFiniteState(_))
        ));
    }

    #[test]
    fn state_dependent_leading_matrices_use_the_numeric_solve() {
        let x = Symbol::new("x", 0);
        // L = 1/2 (1 + x^2) x'^2: the leading coefficient depends on the state
        let energy = Poly::one()
            .add(&Poly::symbol(&x).pow(2))
            .mul(&Poly::symbol(&sym("x", 1)).pow(2))
            .scale(&rat(1, 2));
        let sys = standard_el2(std::slice::from_ref(&x), &Lagrangian::new(energy.clone())).unwrap();
        let traj = integrate_rk4(&sys, &[1.0, 1.0], 1e-3, 1.0).unwrap();
        assert!(conservation_check(&energy, &sys, &traj).unwrap() <= 1e-8);
    }

    #[test]
    fn shape_errors_are_reported() {
        // a curve component mentioning a non-time symbol is refused
        assert!(matches!(
            CurvePoly::new(t_sym(), vec![Poly::symbol(&Symbol::new("x", 0))]),
            Err(MechanicsError::Shape(_))
        ));
        // wrong initial-data length
        let sys = rigid_body_system();
        assert!(matches!(
            integrate_rk4(&sys, &[0.0; 3], 0.1, 1.0),
            Err(MechanicsError::Shape(_))
        ));
        // a conserved-quantity candidate outside the state slots is refused
        let traj = integrate_rk4(&sys, &[0.1; 9], 0.1, 1.0).unwrap();
        let q = Poly::symbol(&Symbol::new("b", 0));
        assert!(matches!(
            conservation_check(&q, &sys, &traj),
            Err(MechanicsError::Shape(_))
        ));
        // a Lagrangian outside the allowed chart is refused
        let g = so3();
        let badl = Lagrangian::new(Poly::symbol(&sym("a1", 2)));
        assert!(matches!(
            euler_poincare2(&g, &afib(), &badl),
            Err(MechanicsError::Shape(_))
        ));
        // a step that does not divide the horizon is refused
        assert!(matches!(
            integrate_rk4(&sys, &[0.1; 9], 0.3, 1.0),
            Err(MechanicsError::Shape(_))
        ));
    }
}
