//! Second-order algebroids in normal form.
//!
//! An order-two structure lives on a graded bundle with base chart `x`
//! (weight 0), first-level fiber chart `y` (weight 1) and second-level fiber
//! chart `z` (weight 2).  It is stored through the polynomial families of its
//! structure comorphism, pinned to the normal form below.  The comorphism
//! goes from the second-order jet prolongation of the weight-one bundle
//! (source charts `x, x.d1, x.d2; y, y.d1, y.d2`, graded by jet order) to the
//! tangent-style bundle of the total space (target base `x, y, z`, target
//! fiber `dx, dy, dz` with weights 0, 1, 2):
//!
//! ```text
//!   base:  x^a    -> x^a
//!          x.d1^a -> Q^a_i y^i
//!          x.d2^a -> 1/2 Q^a_{ij} y^i y^j + Q^a_mu z^mu
//!   rows:  dx^a   =  Q'^a_i  * (y^i column)
//!          dy^k   =  (Q^k_{ij} y^i) * (y^j column) + (y.d1^k column)
//!          dz^mu  =  (Q^mu_{nu k} z^nu + 1/2 Q^mu_{ij,k} y^i y^j) * (y^k column)
//!                    + (Q^mu_{ij} y^i) * (y.d1^j column)
//!                    + Q^mu_i * (y.d2^i column)
//! ```
//!
//! Matrix entries are polynomials over the target base; `Q^a_{ij}` and
//! `Q^mu_{ij,k}` are symmetric in `(i, j)`.  The prolongation of an
//! almost-Lie order-one structure produces such data with `Q^mu_i` the
//! identity; general data (including non-strong examples, where `Q^mu_i` is
//! not invertible) is accepted everywhere.

use crate::algebroid::{algebroid_of, apply_vector_field, Algebroid1, AlgebroidError};
use crate::comorphism::{
    fine_restriction, flip, poly_det, zm_morphism_check, Comorphism, ComorphismError, Restriction,
    SubBundle, VBMorphism, VBundle, Witnessed,
};
use crate::expr::{rat, Poly, Rat, Symbol};
use num_traits::Zero;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub enum HigherError {
    /// The order-one input fails the almost-Lie axioms.
    NotAlmostLie(String),
    /// Dimensions or index families do not fit together.
    Shape(String),
    /// A comorphism does not have the pinned normal-form shape.
    NormalForm(String),
    /// The dependent target row of the prolongation is not the prescribed
    /// combination of the kept rows.
    DependentRow(String),
    Algebroid(AlgebroidError),
    Comorphism(ComorphismError),
}

impl fmt::Display for HigherError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HigherError::NotAlmostLie(w) => write!(f, "not almost-Lie: {w}"),
            HigherError::Shape(w) => write!(f, "shape error: {w}"),
            HigherError::NormalForm(w) => write!(f, "normal form violated: {w}"),
            HigherError::DependentRow(w) => write!(f, "dependent row mismatch: {w}"),
            HigherError::Algebroid(e) => write!(f, "{e}"),
            HigherError::Comorphism(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HigherError {}

impl From<AlgebroidError> for HigherError {
    fn from(e: AlgebroidError) -> Self {
        HigherError::Algebroid(e)
    }
}

impl From<ComorphismError> for HigherError {
    fn from(e: ComorphismError) -> Self {
        HigherError::Comorphism(e)
    }
}

/// An order-two algebroid in normal form: the nine polynomial families of its
/// structure comorphism, all over the base chart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HA2 {
    pub name: String,
    /// Base chart `x` (weight 0), `m` symbols.
    pub base: Vec<Symbol>,
    /// Weight-one fiber chart `y`, `n` symbols.
    pub fiber1: Vec<Symbol>,
    /// Weight-two fiber chart `z`, `p` symbols.
    pub fiber2: Vec<Symbol>,
    /// `Q^a_i`, `m x n`: left anchor of the order-one part.
    pub q_a_i: Vec<Vec<Poly>>,
    /// `Q^a_{ij}`, `m x n x n`, symmetric in `(i, j)`.
    pub q_a_ij: Vec<Vec<Vec<Poly>>>,
    /// `Q^a_mu`, `m x p`: second-level anchor block.
    pub q_a_mu: Vec<Vec<Poly>>,
    /// `Q'^a_i`, `m x n`: right anchor of the order-one part.
    pub qp_a_i: Vec<Vec<Poly>>,
    /// `Q^k_{ij}`, `n x n x n`: order-one structure functions.
    pub q_k_ij: Vec<Vec<Vec<Poly>>>,
    /// `Q^mu_i`, `p x n`: the strength block.
    pub q_mu_i: Vec<Vec<Poly>>,
    /// `Q^mu_{ij}`, `p x n x n`.
    pub q_mu_ij: Vec<Vec<Vec<Poly>>>,
    /// `Q^mu_{nu i}`, `p x p x n`.
    pub q_mu_nu_i: Vec<Vec<Vec<Poly>>>,
    /// `Q^mu_{ij,k}`, `p x n x n x n`, symmetric in `(i, j)`.
    pub q_mu_ij_k: Vec<Vec<Vec<Vec<Poly>>>>,
}

fn eye_poly(n: usize) -> Vec<Vec<Poly>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Poly::one() } else { Poly::zero() })
                .collect()
        })
        .collect()
}

impl HA2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        base: Vec<Symbol>,
        fiber1: Vec<Symbol>,
        fiber2: Vec<Symbol>,
        q_a_i: Vec<Vec<Poly>>,
        q_a_ij: Vec<Vec<Vec<Poly>>>,
        q_a_mu: Vec<Vec<Poly>>,
        qp_a_i: Vec<Vec<Poly>>,
        q_k_ij: Vec<Vec<Vec<Poly>>>,
        q_mu_i: Vec<Vec<Poly>>,
        q_mu_ij: Vec<Vec<Vec<Poly>>>,
        q_mu_nu_i: Vec<Vec<Vec<Poly>>>,
        q_mu_ij_k: Vec<Vec<Vec<Vec<Poly>>>>,
    ) -> Result<Self, HigherError> {
        let m = base.len();
        let n = fiber1.len();
        let p = fiber2.len();
        let dims2 = |f: &Vec<Vec<Poly>>, r: usize, c: usize, what: &str| {
            if f.len() != r || f.iter().any(|row| row.len() != c) {
                Err(HigherError::Shape(format!("{what} must be {r} x {c}")))
            } else {
                Ok(())
            }
        };
        let dims3 = |f: &Vec<Vec<Vec<Poly>>>, r: usize, c: usize, d: usize, what: &str| {
            if f.len() != r
                || f.iter()
                    .any(|p2| p2.len() != c || p2.iter().any(|p1| p1.len() != d))
            {
                Err(HigherError::Shape(format!(
                    "{what} must be {r} x {c} x {d}"
                )))
            } else {
                Ok(())
            }
        };
        dims2(&q_a_i, m, n, "Q^a_i")?;
        dims3(&q_a_ij, m, n, n, "Q^a_ij")?;
        dims2(&q_a_mu, m, p, "Q^a_mu")?;
        dims2(&qp_a_i, m, n, "Q'^a_i")?;
        dims3(&q_k_ij, n, n, n, "Q^k_ij")?;
        dims2(&q_mu_i, p, n, "Q^mu_i")?;
        dims3(&q_mu_ij, p, n, n, "Q^mu_ij")?;
        dims3(&q_mu_nu_i, p, p, n, "Q^mu_nu_i")?;
        if q_mu_ij_k.len() != p
            || q_mu_ij_k.iter().any(|f3| {
                f3.len() != n
                    || f3
                        .iter()
                        .any(|f2| f2.len() != n || f2.iter().any(|f1| f1.len() != n))
            })
        {
            return Err(HigherError::Shape(format!(
                "Q^mu_ij,k must be {p} x {n} x {n} x {n}"
            )));
        }
        for a in 0..m {
            for i in 0..n {
                for j in 0..n {
                    if q_a_ij[a][i][j] != q_a_ij[a][j][i] {
                        return Err(HigherError::Shape(format!(
                            "Q^a_ij must be symmetric; entry ({a}, {i}, {j}) is not"
                        )));
                    }
                }
            }
        }
        for mu in 0..p {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if q_mu_ij_k[mu][i][j][k] != q_mu_ij_k[mu][j][i][k] {
                            return Err(HigherError::Shape(format!(
                                "Q^mu_ij,k must be symmetric in (i, j); entry ({mu}, {i}, {j}, {k}) is not"
                            )));
                        }
                    }
                }
            }
        }
        let everything = q_a_i
            .iter()
            .chain(q_a_mu.iter())
            .chain(qp_a_i.iter())
            .chain(q_mu_i.iter())
            .flatten()
            .chain(q_a_ij.iter().flatten().flatten())
            .chain(q_k_ij.iter().flatten().flatten())
            .chain(q_mu_ij.iter().flatten().flatten())
            .chain(q_mu_nu_i.iter().flatten().flatten())
            .chain(q_mu_ij_k.iter().flatten().flatten().flatten());
        for poly in everything {
            for s in poly.symbols() {
                if !base.contains(&s) {
                    return Err(HigherError::Shape(format!(
                        "structure function {poly} mentions {} outside the base chart",
                        s.to_display()
                    )));
                }
            }
        }
        let base: Vec<Symbol> = base
            .into_iter()
            .map(|s| Symbol { weight: 0, ..s })
            .collect();
        let fiber1: Vec<Symbol> = fiber1
            .into_iter()
            .map(|s| Symbol { weight: 1, ..s })
            .collect();
        let fiber2: Vec<Symbol> = fiber2
            .into_iter()
            .map(|s| Symbol { weight: 2, ..s })
            .collect();
        Ok(HA2 {
            name: name.to_string(),
            base,
            fiber1,
            fiber2,
            q_a_i,
            q_a_ij,
            q_a_mu,
            qp_a_i,
            q_k_ij,
            q_mu_i,
            q_mu_ij,
            q_mu_nu_i,
            q_mu_ij_k,
        })
    }

    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    pub fn rank1(&self) -> usize {
        self.fiber1.len()
    }

    pub fn rank2(&self) -> usize {
        self.fiber2.len()
    }

    /// The order-two tangent structure of a manifold chart: `y = v<name>`,
    /// `z = z1, z2, ...`, identity anchor blocks, vanishing cubic families.
    pub fn tangent2(name: &str, chart: &[Symbol]) -> HA2 {
        let m = chart.len();
        let fiber1: Vec<Symbol> = chart
            .iter()
            .map(|s| Symbol {
                name: format!("v{}", s.name),
                jet: s.jet,
                weight: 1,
            })
            .collect();
        let fiber2: Vec<Symbol> = (0..m)
            .map(|i| Symbol {
                name: format!("z{}", i + 1),
                jet: 0,
                weight: 2,
            })
            .collect();
        HA2 {
            name: name.to_string(),
            base: chart.to_vec(),
            fiber1,
            fiber2,
            q_a_i: eye_poly(m),
            q_a_ij: vec![vec![vec![Poly::zero(); m]; m]; m],
            q_a_mu: eye_poly(m),
            qp_a_i: eye_poly(m),
            q_k_ij: vec![vec![vec![Poly::zero(); m]; m]; m],
            q_mu_i: eye_poly(m),
            q_mu_ij: vec![vec![vec![Poly::zero(); m]; m]; m],
            q_mu_nu_i: vec![vec![vec![Poly::zero(); m]; m]; m],
            q_mu_ij_k: vec![vec![vec![vec![Poly::zero(); m]; m]; m]; m],
        }
    }

    /// The structure comorphism in normal form, with jet-graded source charts
    /// and weight-graded target charts.
    pub fn kappa2_of(&self) -> Result<Comorphism, HigherError> {
        let m = self.base_dim();
        let n = self.rank1();
        let p = self.rank2();
        let x = &self.base;
        let y = &self.fiber1;
        let z = &self.fiber2;
        let jet_up = |s: &Symbol| Symbol {
            name: s.name.clone(),
            jet: s.jet + 1,
            weight: s.weight + 1,
        };
        let x0: Vec<Symbol> = x
            .iter()
            .map(|s| Symbol {
                weight: 0,
                ..s.clone()
            })
            .collect();
        let x1: Vec<Symbol> = x0.iter().map(&jet_up).collect();
        let x2: Vec<Symbol> = x1.iter().map(&jet_up).collect();
        let y0: Vec<Symbol> = y
            .iter()
            .map(|s| Symbol {
                weight: 0,
                ..s.clone()
            })
            .collect();
        let y1j: Vec<Symbol> = y0.iter().map(&jet_up).collect();
        let y2j: Vec<Symbol> = y1j.iter().map(&jet_up).collect();
        let dpfx = |s: &Symbol| Symbol {
            name: format!("d{}", s.name),
            jet: s.jet,
            weight: s.weight,
        };
        let dx: Vec<Symbol> = x0.iter().map(&dpfx).collect();
        let dy: Vec<Symbol> = y.iter().map(&dpfx).collect();
        let dz: Vec<Symbol> = z.iter().map(&dpfx).collect();
        // collision guard on the target chart
        {
            let mut seen: Vec<&Symbol> = Vec::new();
            for s in x0
                .iter()
                .chain(y.iter())
                .chain(z.iter())
                .chain(dx.iter())
                .chain(dy.iter())
                .chain(dz.iter())
            {
                if seen.contains(&s) {
                    return Err(HigherError::Shape(format!(
                        "chart collision at {} when building the structure comorphism",
                        s.to_display()
                    )));
                }
                seen.push(s);
            }
        }
        let source = VBundle::new(
            "T2(sigma1)",
            x0.iter()
                .cloned()
                .chain(x1.iter().cloned())
                .chain(x2.iter().cloned())
                .collect(),
            y0.iter()
                .cloned()
                .chain(y1j.iter().cloned())
                .chain(y2j.iter().cloned())
                .collect(),
        );
        let target = VBundle::new(
            "tau_E2",
            x0.iter()
                .cloned()
                .chain(y.iter().cloned())
                .chain(z.iter().cloned())
                .collect(),
            dx.iter()
                .cloned()
                .chain(dy.iter().cloned())
                .chain(dz.iter().cloned())
                .collect(),
        );
        let half = rat(1, 2);
        // base map
        let mut base_map: Vec<Poly> = x0.iter().map(Poly::symbol).collect();
        for a in 0..m {
            let mut pl = Poly::zero();
            for i in 0..n {
                pl = pl.add(&self.q_a_i[a][i].mul(&Poly::symbol(&y[i])));
            }
            base_map.push(pl);
        }
        for a in 0..m {
            let mut pl = Poly::zero();
            for i in 0..n {
                for j in 0..n {
                    pl = pl.add(
                        &self.q_a_ij[a][i][j]
                            .mul(&Poly::symbol(&y[i]))
                            .mul(&Poly::symbol(&y[j]))
                            .scale(&half),
                    );
                }
            }
            for mu in 0..p {
                pl = pl.add(&self.q_a_mu[a][mu].mul(&Poly::symbol(&z[mu])));
            }
            base_map.push(pl);
        }
        // matrix: rows (dx, dy, dz) x columns (y, y.d1, y.d2)
        let mut matrix = vec![vec![Poly::zero(); 3 * n]; m + n + p];
        for a in 0..m {
            for i in 0..n {
                matrix[a][i] = self.qp_a_i[a][i].clone();
            }
        }
        for k in 0..n {
            for j in 0..n {
                let mut pl = Poly::zero();
                for i in 0..n {
                    pl = pl.add(&self.q_k_ij[k][i][j].mul(&Poly::symbol(&y[i])));
                }
                matrix[m + k][j] = pl;
            }
            matrix[m + k][n + k] = Poly::one();
        }
        for mu in 0..p {
            for k in 0..n {
                let mut pl = Poly::zero();
                for nu in 0..p {
                    pl = pl.add(&self.q_mu_nu_i[mu][nu][k].mul(&Poly::symbol(&z[nu])));
                }
                for i in 0..n {
                    for j in 0..n {
                        pl = pl.add(
                            &self.q_mu_ij_k[mu][i][j][k]
                                .mul(&Poly::symbol(&y[i]))
                                .mul(&Poly::symbol(&y[j]))
                                .scale(&half),
                        );
                    }
                }
                matrix[m + n + mu][k] = pl;
            }
            for j in 0..n {
                let mut pl = Poly::zero();
                for i in 0..n {
                    pl = pl.add(&self.q_mu_ij[mu][i][j].mul(&Poly::symbol(&y[i])));
                }
                matrix[m + n + mu][n + j] = pl;
            }
            for i in 0..n {
                matrix[m + n + mu][2 * n + i] = self.q_mu_i[mu][i].clone();
            }
        }
        Comorphism::new(source, target, base_map, matrix).map_err(HigherError::from)
    }

    /// Forget the second level: the order-one structure `(Q, Q', Q^k_{ij})`.
    pub fn reduce_to_order1(&self) -> Result<Algebroid1, HigherError> {
        Algebroid1::new(
            &format!("{}@1", self.name),
            self.base.clone(),
            self.fiber1.clone(),
            self.q_a_i.clone(),
            self.qp_a_i.clone(),
            self.q_k_ij.clone(),
        )
        .map_err(HigherError::from)
    }
}

/// Read the nine families back off a normal-form comorphism, validating the
/// pinned shape along the way.
pub fn ha2_of(kappa: &Comorphism) -> Result<HA2, HigherError> {
    if kappa.source.base_dim() % 3 != 0 || kappa.source.rank() % 3 != 0 {
        return Err(HigherError::NormalForm(
            "source charts must stack three jet levels".into(),
        ));
    }
    let m = kappa.source.base_dim() / 3;
    let n = kappa.source.rank() / 3;
    if kappa.target.base_dim() < m + n {
        return Err(HigherError::NormalForm("target base too small".into()));
    }
    let p = kappa.target.base_dim() - m - n;
    if kappa.target.rank() != m + n + p {
        return Err(HigherError::NormalForm(format!(
            "target fiber must have rank {}",
            m + n + p
        )));
    }
    let x: Vec<Symbol> = kappa.target.base[..m].to_vec();
    let y: Vec<Symbol> = kappa.target.base[m..m + n].to_vec();
    let z: Vec<Symbol> = kappa.target.base[m + n..].to_vec();
    let over_x_only = |pl: &Poly, what: &str| -> Result<(), HigherError> {
        for s in pl.symbols() {
            if y.contains(&s) || z.contains(&s) {
                return Err(HigherError::NormalForm(format!(
                    "{what} must not depend on the fiber charts: {pl}"
                )));
            }
        }
        Ok(())
    };
    // decompose p = sum_i coeff_i y^i with coefficients over x only
    let linear_in_y = |pl: &Poly, what: &str| -> Result<Vec<Poly>, HigherError> {
        let mut coeffs = Vec::with_capacity(n);
        let mut recomposed = Poly::zero();
        for yi in &y {
            let c = pl.diff(yi);
            over_x_only(&c, what)?;
            recomposed = recomposed.add(&c.mul(&Poly::symbol(yi)));
            coeffs.push(c);
        }
        if recomposed != *pl {
            return Err(HigherError::NormalForm(format!(
                "{what} is not fiberwise linear without constant part: {pl}"
            )));
        }
        Ok(coeffs)
    };
    // decompose p = 1/2 sum_{ij} S_{ij} y^i y^j + sum_mu L_mu z^mu
    let quad_plus_z = |pl: &Poly, what: &str| -> Result<(Vec<Vec<Poly>>, Vec<Poly>), HigherError> {
        let mut quad = vec![vec![Poly::zero(); n]; n];
        let mut lin = Vec::with_capacity(p);
        let mut recomposed = Poly::zero();
        let half = rat(1, 2);
        for (i, yi) in y.iter().enumerate() {
            for (j, yj) in y.iter().enumerate() {
                let c = pl.diff(yi).diff(yj);
                over_x_only(&c, what)?;
                recomposed =
                    recomposed.add(&c.mul(&Poly::symbol(yi)).mul(&Poly::symbol(yj)).scale(&half));
                quad[i][j] = c;
            }
        }
        for zmu in &z {
            let c = pl.diff(zmu);
            over_x_only(&c, what)?;
            recomposed = recomposed.add(&c.mul(&Poly::symbol(zmu)));
            lin.push(c);
        }
        if recomposed != *pl {
            return Err(HigherError::NormalForm(format!(
                "{what} is not (quadratic in y) + (linear in z): {pl}"
            )));
        }
        Ok((quad, lin))
    };
    // base map
    let mut q_a_i = vec![vec![Poly::zero(); n]; m];
    let mut q_a_ij = vec![vec![vec![Poly::zero(); n]; n]; m];
    let mut q_a_mu = vec![vec![Poly::zero(); p]; m];
    for a in 0..m {
        if kappa.base_map[a] != Poly::symbol(&x[a]) {
            return Err(HigherError::NormalForm(format!(
                "base component {} is not the identity chart map",
                kappa.source.base[a].to_display()
            )));
        }
        q_a_i[a] = linear_in_y(&kappa.base_map[m + a], "the first-level anchor block")?;
        let (quad, lin) = quad_plus_z(&kappa.base_map[2 * m + a], "the second-level anchor block")?;
        q_a_ij[a] = quad;
        q_a_mu[a] = lin;
    }
    // dx rows
    let mut qp_a_i = vec![vec![Poly::zero(); n]; m];
    for a in 0..m {
        for i in 0..n {
            let e = &kappa.matrix[a][i];
            over_x_only(e, "the right-anchor block")?;
            qp_a_i[a][i] = e.clone();
        }
        for l in n..3 * n {
            if !kappa.matrix[a][l].is_zero() {
                return Err(HigherError::NormalForm(
                    "dx rows must not involve fiber jets".into(),
                ));
            }
        }
    }
    // dy rows
    let mut q_k_ij = vec![vec![vec![Poly::zero(); n]; n]; n];
    for k in 0..n {
        for j in 0..n {
            let coeffs = linear_in_y(&kappa.matrix[m + k][j], "the order-one bracket block")?;
            for i in 0..n {
                q_k_ij[k][i][j] = coeffs[i].clone();
            }
            let expected = if j == k { Poly::one() } else { Poly::zero() };
            if kappa.matrix[m + k][n + j] != expected {
                return Err(HigherError::NormalForm(format!(
                    "dy-row jet block entry ({k}, {j}) is {} instead of {}",
                    kappa.matrix[m + k][n + j],
                    expected
                )));
            }
            if !kappa.matrix[m + k][2 * n + j].is_zero() {
                return Err(HigherError::NormalForm(
                    "dy rows must not involve second fiber jets".into(),
                ));
            }
        }
    }
    // dz rows
    let mut q_mu_i = vec![vec![Poly::zero(); n]; p];
    let mut q_mu_ij = vec![vec![vec![Poly::zero(); n]; n]; p];
    let mut q_mu_nu_i = vec![vec![vec![Poly::zero(); n]; p]; p];
    let mut q_mu_ij_k = vec![vec![vec![vec![Poly::zero(); n]; n]; n]; p];
    let half = rat(1, 2);
    for mu in 0..p {
        for k in 0..n {
            let e = &kappa.matrix[m + n + mu][k];
            let mut recomposed = Poly::zero();
            for (nu, znu) in z.iter().enumerate() {
                let c = e.diff(znu);
                over_x_only(&c, "the z-linear block of a dz row")?;
                q_mu_nu_i[mu][nu][k] = c.clone();
                recomposed = recomposed.add(&c.mul(&Poly::symbol(znu)));
            }
            for (i, yi) in y.iter().enumerate() {
                for (j, yj) in y.iter().enumerate() {
                    let c = e.diff(yi).diff(yj);
                    over_x_only(&c, "the cubic block of a dz row")?;
                    q_mu_ij_k[mu][i][j][k] = c.clone();
                    recomposed = recomposed
                        .add(&c.mul(&Poly::symbol(yi)).mul(&Poly::symbol(yj)).scale(&half));
                }
            }
            if recomposed != *e {
                return Err(HigherError::NormalForm(format!(
                    "dz-row entry at a y column is not (quadratic in y) + (linear in z): {e}"
                )));
            }
        }
        for j in 0..n {
            let coeffs = linear_in_y(
                &kappa.matrix[m + n + mu][n + j],
                "the mixed block of a dz row",
            )?;
            for i in 0..n {
                q_mu_ij[mu][i][j] = coeffs[i].clone();
            }
        }
        for i in 0..n {
            let e = &kappa.matrix[m + n + mu][2 * n + i];
            over_x_only(e, "the strength block")?;
            q_mu_i[mu][i] = e.clone();
        }
    }
    HA2::new(
        "recovered",
        x,
        y,
        z,
        q_a_i,
        q_a_ij,
        q_a_mu,
        qp_a_i,
        q_k_ij,
        q_mu_i,
        q_mu_ij,
        q_mu_nu_i,
        q_mu_ij_k,
    )
}

/// Prolong an almost-Lie order-one structure to order two.
///
/// The construction composes the canonical flip of the total space with the
/// tangent prolongation of the order-one structure comorphism, restricts the
/// target to the second-order locus `dx = Q y`, restricts the source to the
/// holonomic second jets, and drops the dependent target rows after checking
/// that they are the prescribed combinations of the kept ones.
pub fn prolong2(a: &Algebroid1) -> Result<HA2, HigherError> {
    let al = a.is_almost_lie();
    if !al.pass {
        return Err(HigherError::NotAlmostLie(al.witness.unwrap_or_default()));
    }
    let m = a.base_dim();
    let n = a.rank();
    let kappa = a.kappa_of()?;
    // tangent prolongation and the flip of the total space
    let tk = kappa.tangent("w");
    let e_chart: Vec<Symbol> = kappa.target.base.clone(); // (x, y)
    let fe = flip(&e_chart, "d", "w");
    let c = fe.compose(&tk)?;

    // new target chart (x, y, z) and the parametrization of the second-order
    // locus dx = Q y, dy = z inside the old target base (x, y, dx, dy)
    let x0: Vec<Symbol> = kappa.target.base[..m].to_vec();
    let y1: Vec<Symbol> = kappa.target.base[m..].to_vec();
    let z: Vec<Symbol> = (0..n)
        .map(|i| Symbol {
            name: format!("z{}", i + 1),
            jet: 0,
            weight: 2,
        })
        .collect();
    for s in &z {
        if x0.iter().any(|t| t == s) || y1.iter().any(|t| t == s) {
            return Err(HigherError::Shape(format!(
                "fresh second-level name {} collides with the input charts",
                s.to_display()
            )));
        }
    }
    let mut new_base: Vec<Symbol> = x0.clone();
    new_base.extend(y1.iter().cloned());
    new_base.extend(z.iter().cloned());
    let mut param: BTreeMap<Symbol, Poly> = BTreeMap::new();
    for s in x0.iter().chain(y1.iter()) {
        param.insert(s.clone(), Poly::symbol(s));
    }
    for a_idx in 0..m {
        let mut pl = Poly::zero();
        for i in 0..n {
            pl = pl.add(&a.anchor_left[a_idx][i].mul(&Poly::symbol(&y1[i])));
        }
        param.insert(c.target.base[m + n + a_idx].clone(), pl);
    }
    for i in 0..n {
        param.insert(c.target.base[2 * m + n + i].clone(), Poly::symbol(&z[i]));
    }
    let c = c.substitute_target_base(new_base, &param)?;

    // source restriction to holonomic second jets: the base components over
    // (x, x.d1, wx, wx.d1) must satisfy wx = x.d1, and the fiber columns over
    // (y, y.d1, wy, wy.d1) merge into the jet stack (y, y.d1, y.d2)
    for a_idx in 0..m {
        let resid = c.base_map[2 * m + a_idx].sub(&c.base_map[m + a_idx]);
        if !resid.is_zero() {
            return Err(HigherError::Shape(format!(
                "holonomic source locus is broken at base component {a_idx}: residual {resid}"
            )));
        }
    }
    let jet_up = |s: &Symbol| Symbol {
        name: s.name.clone(),
        jet: s.jet + 1,
        weight: s.weight + 1,
    };
    let sx0: Vec<Symbol> = kappa.source.base[..m].to_vec();
    let sx1: Vec<Symbol> = kappa.source.base[m..].to_vec();
    let sx2: Vec<Symbol> = sx1.iter().map(&jet_up).collect();
    let sy0: Vec<Symbol> = kappa.source.fiber[..n].to_vec();
    let sy1: Vec<Symbol> = kappa.source.fiber[n..].to_vec();
    let sy2: Vec<Symbol> = sy1.iter().map(&jet_up).collect();
    let source = VBundle::new(
        "T2(sigma1)",
        sx0.iter()
            .cloned()
            .chain(sx1.iter().cloned())
            .chain(sx2.iter().cloned())
            .collect(),
        sy0.iter()
            .cloned()
            .chain(sy1.iter().cloned())
            .chain(sy2.iter().cloned())
            .collect(),
    );
    let mut base_map: Vec<Poly> = Vec::with_capacity(3 * m);
    base_map.extend(c.base_map[..2 * m].iter().cloned());
    base_map.extend(c.base_map[3 * m..4 * m].iter().cloned());
    let rows = 2 * m + 2 * n;
    let mut merged = vec![vec![Poly::zero(); 3 * n]; rows];
    #[allow(clippy::needless_range_loop)]
    for r in 0..rows {
        for i in 0..n {
            merged[r][i] = c.matrix[r][i].clone();
            merged[r][n + i] = c.matrix[r][n + i].add(&c.matrix[r][2 * n + i]);
            merged[r][2 * n + i] = c.matrix[r][3 * n + i].clone();
        }
    }

    // dependent target rows: on the second-order locus the rows for the inner
    // differentials are fixed by the kept rows; check and drop them
    for a_idx in 0..m {
        let mut coef_x: Vec<Poly> = Vec::with_capacity(m);
        for b in 0..m {
            let mut pl = Poly::zero();
            for i in 0..n {
                pl = pl.add(
                    &a.anchor_left[a_idx][i]
                        .diff(&x0[b])
                        .mul(&Poly::symbol(&y1[i])),
                );
            }
            coef_x.push(pl);
        }
        for col in 0..3 * n {
            let mut rhs = Poly::zero();
            for b in 0..m {
                rhs = rhs.add(&coef_x[b].mul(&merged[b][col]));
            }
            for i in 0..n {
                rhs = rhs.add(&a.anchor_left[a_idx][i].mul(&merged[m + i][col]));
            }
            let resid = merged[m + n + a_idx][col].sub(&rhs);
            if !resid.is_zero() {
                return Err(HigherError::DependentRow(format!(
                    "row {} against column {}: residual {}",
                    c.target.fiber[m + n + a_idx].to_display(),
                    source.fiber[col].to_display(),
                    resid
                )));
            }
        }
    }
    let dpfx = |s: &Symbol| Symbol {
        name: format!("d{}", s.name),
        jet: s.jet,
        weight: s.weight,
    };
    let dx: Vec<Symbol> = x0.iter().map(&dpfx).collect();
    let dy: Vec<Symbol> = y1.iter().map(&dpfx).collect();
    let dz: Vec<Symbol> = z.iter().map(&dpfx).collect();
    let target = VBundle::new(
        "tau_E2",
        c.target.base.clone(),
        dx.iter()
            .cloned()
            .chain(dy.iter().cloned())
            .chain(dz.iter().cloned())
            .collect(),
    );
    let mut matrix: Vec<Vec<Poly>> = Vec::with_capacity(m + 2 * n);
    for r in 0..m + n {
        matrix.push(merged[r].clone());
    }
    for r in 2 * m + n..2 * m + 2 * n {
        matrix.push(merged[r].clone());
    }
    let kappa2 = Comorphism::new(source, target, base_map, matrix)?;
    let weighted = kappa2.check_weighted();
    if !weighted.pass {
        return Err(HigherError::Shape(format!(
            "prolongation breaks bi-weight homogeneity: {}",
            weighted.witness.unwrap_or_default()
        )));
    }
    let ha2 = ha2_of(&kappa2)?;
    for mu in 0..n {
        for i in 0..n {
            let expected = if mu == i { Poly::one() } else { Poly::zero() };
            if ha2.q_mu_i[mu][i] != expected {
                return Err(HigherError::Shape(
                    "prolongation must have the identity strength block".into(),
                ));
            }
        }
    }
    Ok(HA2 {
        name: format!("T2[{}]", a.name),
        ..ha2
    })
}

/// The canonical order-two flip of a manifold chart, as a comorphism from the
/// second-order prolongation of the tangent bundle structure to the tangent
/// bundle of the second-order space.  With jet-graded charts on both sides it
/// is the identity relabeling.
pub fn flip2_manifold(chart: &[Symbol]) -> Comorphism {
    let m = chart.len();
    let jet_up = |s: &Symbol| Symbol {
        name: s.name.clone(),
        jet: s.jet + 1,
        weight: s.weight + 1,
    };
    let x0: Vec<Symbol> = chart
        .iter()
        .map(|s| Symbol {
            weight: 0,
            ..s.clone()
        })
        .collect();
    let x1: Vec<Symbol> = x0.iter().map(&jet_up).collect();
    let x2: Vec<Symbol> = x1.iter().map(&jet_up).collect();
    let v = |s: &Symbol, w: u32| Symbol {
        name: format!("v{}", s.name),
        jet: s.jet,
        weight: w,
    };
    let base: Vec<Symbol> = x0
        .iter()
        .cloned()
        .chain(x1.iter().cloned())
        .chain(x2.iter().cloned())
        .collect();
    let fiber: Vec<Symbol> = x0
        .iter()
        .map(|s| v(s, 0))
        .chain(x1.iter().map(|s| v(s, 1)))
        .chain(x2.iter().map(|s| v(s, 2)))
        .collect();
    let source = VBundle::new("T2(tau)", base.clone(), fiber.clone());
    let target = VBundle::new("tau_T2", base.clone(), fiber);
    let base_map: Vec<Poly> = base.iter().map(Poly::symbol).collect();
    Comorphism {
        source,
        target,
        base_map,
        matrix: eye_poly(3 * m),
    }
}

/// Derivative along stacked chart levels: each symbol of one level is sent to
/// the matching symbol of the next level.
pub fn chain_differential(p: &Poly, levels: &[Vec<Symbol>]) -> Poly {
    let mut acc = Poly::zero();
    for w in levels.windows(2) {
        for (s, t) in w[0].iter().zip(w[1].iter()) {
            acc = acc.add(&p.diff(s).mul(&Poly::symbol(t)));
        }
    }
    acc
}

/// Lift a section (components over the level-0 chart) into the order-two jet
/// stack.  Level 2 is the full jet `(s, Ds, D^2 s)`; the lower levels are the
/// shifted lifts `(0, s/2, Ds)` and `(0, 0, s)` whose brackets follow the
/// factorial pattern exercised by [`lie_check2`].
pub fn lift_section2(
    sec: &[Poly],
    levels: &[Vec<Symbol>],
    level: u32,
) -> Result<Vec<Poly>, HigherError> {
    let n = sec.len();
    let d1: Vec<Poly> = sec.iter().map(|p| chain_differential(p, levels)).collect();
    let zeros = |k: usize| vec![Poly::zero(); k];
    let mut out = Vec::with_capacity(3 * n);
    match level {
        2 => {
            let d2: Vec<Poly> = d1.iter().map(|p| chain_differential(p, levels)).collect();
            out.extend(sec.iter().cloned());
            out.extend(d1);
            out.extend(d2);
        }
        1 => {
            let half = rat(1, 2);
            out.extend(zeros(n));
            out.extend(sec.iter().map(|p| p.scale(&half)));
            out.extend(d1);
        }
        0 => {
            out.extend(zeros(2 * n));
            out.extend(sec.iter().cloned());
        }
        _ => {
            return Err(HigherError::Shape(format!(
                "lift level {level} out of range"
            )))
        }
    }
    Ok(out)
}

/// Commutator of two polynomial vector fields presented by their components
/// over a chart.
pub fn vf_bracket(xs: &[Poly], ys: &[Poly], chart: &[Symbol]) -> Vec<Poly> {
    (0..chart.len())
        .map(|c| apply_vector_field(xs, chart, &ys[c]).sub(&apply_vector_field(ys, chart, &xs[c])))
        .collect()
}

/// Order-two skew check: the two order-one anchor blocks agree and the
/// order-one bracket block is antisymmetric.  This is exactly the skew
/// condition of the order-one reduction.
pub fn is_skew2(ha2: &HA2) -> Result<Witnessed, HigherError> {
    Ok(ha2.reduce_to_order1()?.is_skew())
}

/// Order-two almost-Lie check: both order-one anchors agree and the square of
/// the structure comorphism against the order-two flip of the base, over the
/// second-order prolongations of the anchor, commutes.
pub fn al_check2(ha2: &HA2) -> Result<Witnessed, HigherError> {
    let skew = is_skew2(ha2)?;
    if !skew.pass {
        return Ok(skew);
    }
    let m = ha2.base_dim();
    let n = ha2.rank1();
    let p = ha2.rank2();
    let r = ha2.kappa2_of()?;
    let rp = flip2_manifold(&ha2.base);
    let x0: Vec<Symbol> = r.source.base[..m].to_vec();
    let x1: Vec<Symbol> = r.source.base[m..2 * m].to_vec();
    let x2: Vec<Symbol> = r.source.base[2 * m..].to_vec();
    let levels = vec![x0.clone(), x1, x2];
    // phi1: the second-order jet prolongation of the anchor over the identity
    let base1: Vec<Poly> = r.source.base.iter().map(Poly::symbol).collect();
    let mut mat1 = vec![vec![Poly::zero(); 3 * n]; 3 * m];
    for a in 0..m {
        for i in 0..n {
            let q = &ha2.q_a_i[a][i];
            let dq = chain_differential(q, &levels);
            let d2q = chain_differential(&dq, &levels);
            mat1[a][i] = q.clone();
            mat1[m + a][i] = dq.clone();
            mat1[m + a][n + i] = q.clone();
            mat1[2 * m + a][i] = d2q;
            mat1[2 * m + a][n + i] = dq.scale(&Rat::from_integer(2.into()));
            mat1[2 * m + a][2 * n + i] = q.clone();
        }
    }
    let phi1 = VBMorphism::new(r.source.clone(), rp.source.clone(), base1, mat1)?;
    // phi2: the tangent morphism of the order-two anchor (x, y, z) -> T2M
    let y1: Vec<Symbol> = r.target.base[m..m + n].to_vec();
    let z2: Vec<Symbol> = r.target.base[m + n..].to_vec();
    let half = rat(1, 2);
    let mut base2: Vec<Poly> = x0.iter().map(Poly::symbol).collect();
    for a in 0..m {
        let mut pl = Poly::zero();
        for i in 0..n {
            pl = pl.add(&ha2.q_a_i[a][i].mul(&Poly::symbol(&y1[i])));
        }
        base2.push(pl);
    }
    for a in 0..m {
        let mut pl = Poly::zero();
        for i in 0..n {
            for j in 0..n {
                pl = pl.add(
                    &ha2.q_a_ij[a][i][j]
                        .mul(&Poly::symbol(&y1[i]))
                        .mul(&Poly::symbol(&y1[j]))
                        .scale(&half),
                );
            }
        }
        for mu in 0..p {
            pl = pl.add(&ha2.q_a_mu[a][mu].mul(&Poly::symbol(&z2[mu])));
        }
        base2.push(pl);
    }
    let chart2 = &r.target.base;
    let mut mat2 = vec![vec![Poly::zero(); chart2.len()]; 3 * m];
    #[allow(clippy::needless_range_loop)]
    for row in 0..3 * m {
        for (col, s) in chart2.iter().enumerate() {
            mat2[row][col] = base2[row].diff(s);
        }
    }
    let phi2 = VBMorphism::new(r.target.clone(), rp.target.clone(), base2, mat2)?;
    zm_morphism_check(&phi1, &phi2, &r, &rp).map_err(HigherError::from)
}

/// Order-two Lie check: the images of the lifted basis sections under the
/// structure comorphism must bracket, as vector fields on the total space,
/// following the factorial pattern
/// `[l_(2-a) s, l_(2-b) t] = (c_(a+b) / (c_a c_b)) l_(2-a-b) [s, t]`
/// with `c_g = 2! / (2-g)!`, the bracket vanishing when `a + b > 2`.
pub fn lie_check2(ha2: &HA2) -> Result<Witnessed, HigherError> {
    let m = ha2.base_dim();
    let n = ha2.rank1();
    let kappa2 = ha2.kappa2_of()?;
    let a1 = ha2.reduce_to_order1()?;
    let x0: Vec<Symbol> = kappa2.source.base[..m].to_vec();
    let x1: Vec<Symbol> = kappa2.source.base[m..2 * m].to_vec();
    let x2: Vec<Symbol> = kappa2.source.base[2 * m..].to_vec();
    let levels = vec![x0, x1, x2];
    let chart = &kappa2.target.base;
    let c_of = |g: u32| -> Rat {
        match g {
            0 => Rat::from_integer(1.into()),
            1 => Rat::from_integer(2.into()),
            _ => Rat::from_integer(2.into()),
        }
    };
    for la in (0..=2u32).rev() {
        for lb in (0..=2u32).rev() {
            let alpha = 2 - la;
            let beta = 2 - lb;
            for i in 0..n {
                for j in 0..n {
                    let si = a1.basis_section(i);
                    let sj = a1.basis_section(j);
                    let xa = kappa2.section_map(&lift_section2(&si, &levels, la)?)?;
                    let xb = kappa2.section_map(&lift_section2(&sj, &levels, lb)?)?;
                    let comm = vf_bracket(&xa, &xb, chart);
                    let expected: Vec<Poly> = if alpha + beta > 2 {
                        vec![Poly::zero(); chart.len()]
                    } else {
                        let br = a1.bracket_of(&si, &sj);
                        let lifted = lift_section2(&br, &levels, 2 - alpha - beta)?;
                        let factor = c_of(alpha + beta) / (c_of(alpha) * c_of(beta));
                        kappa2
                            .section_map(&lifted)?
                            .iter()
                            .map(|p| p.scale(&factor))
                            .collect()
                    };
                    for (c_idx, s) in chart.iter().enumerate() {
                        let resid = comm[c_idx].sub(&expected[c_idx]);
                        if !resid.is_zero() {
                            return Ok(Witnessed::fail(format!(
                                "lift levels ({la}, {lb}), sections ({i}, {j}), \
                                 component {}: residual {}",
                                s.to_display(),
                                resid
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(Witnessed::pass())
}

/// Verdict on the strength block `Q^mu_i`.
#[derive(Debug, Clone)]
pub struct StrongReport {
    pub strong: bool,
    /// Whether the verdict is exact (constant determinant) or sampled.
    pub symbolic: bool,
    pub detail: String,
}

/// Decide whether the structure is strong, i.e. whether `Q^mu_i` is an
/// invertible square block.  A constant determinant gives an exact verdict;
/// otherwise the determinant is sampled at seeded rational points and the
/// verdict is marked as pointwise only.
pub fn is_strong(ha2: &HA2, seed: u64) -> StrongReport {
    let n = ha2.rank1();
    let p = ha2.rank2();
    if n != p {
        return StrongReport {
            strong: false,
            symbolic: true,
            detail: format!("strength block is {p} x {n}, not square"),
        };
    }
    let det = poly_det(&ha2.q_mu_i);
    if det.is_zero() {
        return StrongReport {
            strong: false,
            symbolic: true,
            detail: "determinant of the strength block vanishes identically".into(),
        };
    }
    if det.is_constant() {
        return StrongReport {
            strong: true,
            symbolic: true,
            detail: format!("constant determinant {det}"),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..8 {
        let values: BTreeMap<Symbol, Rat> = ha2
            .base
            .iter()
            .map(|s| {
                (
                    s.clone(),
                    Rat::from_integer(rng.gen_range(-5i64..=5).into()),
                )
            })
            .collect();
        if let Ok(v) = det.eval(&values) {
            if !v.is_zero() {
                return StrongReport {
                    strong: true,
                    symbolic: false,
                    detail: format!(
                        "pointwise only: determinant {det} is nonzero at sample {trial}"
                    ),
                };
            }
        }
    }
    StrongReport {
        strong: false,
        symbolic: false,
        detail: format!("pointwise only: determinant {det} vanished at all sampled points"),
    }
}

/// Outcome of restricting an order-two structure to constant spans of the two
/// fiber levels.
#[derive(Debug, Clone)]
pub enum SubHa2Outcome {
    Closed {
        ha2: HA2,
        almost_lie: Witnessed,
        lie: Witnessed,
    },
    NotClosed {
        witness: String,
    },
}

/// Restrict the structure comorphism to constant spans `span1` (old rank1 x
/// new rank1) and `span2` (old rank2 x new rank2) of the fiber levels, over
/// the full base.  When the restriction exists, the families are re-read off
/// the restricted comorphism and the order-two axioms are re-checked.
pub fn sub_ha_check(
    ha2: &HA2,
    span1: &[Vec<Rat>],
    span2: &[Vec<Rat>],
) -> Result<SubHa2Outcome, HigherError> {
    let m = ha2.base_dim();
    let n = ha2.rank1();
    let p = ha2.rank2();
    if span1.len() != n || span2.len() != p {
        return Err(HigherError::Shape(
            "span row counts must match the fiber ranks".into(),
        ));
    }
    let n_new = span1.first().map(|r| r.len()).unwrap_or(0);
    let p_new = span2.first().map(|r| r.len()).unwrap_or(0);
    if span1.iter().any(|r| r.len() != n_new) || span2.iter().any(|r| r.len() != p_new) {
        return Err(HigherError::Shape(
            "span rows must have uniform length".into(),
        ));
    }
    let kappa2 = ha2.kappa2_of()?;
    let jet_up = |s: &Symbol| Symbol {
        name: s.name.clone(),
        jet: s.jet + 1,
        weight: s.weight + 1,
    };
    let s0: Vec<Symbol> = (0..n_new)
        .map(|i| Symbol {
            name: format!("s{}", i + 1),
            jet: 0,
            weight: 0,
        })
        .collect();
    let s1: Vec<Symbol> = s0.iter().map(&jet_up).collect();
    let s2: Vec<Symbol> = s1.iter().map(&jet_up).collect();
    let t0: Vec<Symbol> = (0..p_new)
        .map(|i| Symbol {
            name: format!("t{}", i + 1),
            jet: 0,
            weight: 2,
        })
        .collect();
    let zero_block = |r: usize, c: usize| vec![vec![Rat::zero(); c]; r];
    let eye_rat = |k: usize| -> Vec<Vec<Rat>> {
        (0..k)
            .map(|i| {
                (0..k)
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
    let block_diag = |blocks: Vec<Vec<Vec<Rat>>>| -> Vec<Vec<Rat>> {
        let rows: usize = blocks.iter().map(|b| b.len()).sum();
        let cols: usize = blocks
            .iter()
            .map(|b| b.first().map(|r| r.len()).unwrap_or(0))
            .sum();
        let mut out = zero_block(rows, cols);
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
    };
    // source side: full base, the span repeated on all three jet levels
    let sub1 = SubBundle {
        bundle: VBundle::new(
            "T2(sub)",
            kappa2.source.base.clone(),
            s0.iter()
                .cloned()
                .chain(s1.iter().cloned())
                .chain(s2.iter().cloned())
                .collect(),
        ),
        base_span: eye_rat(3 * m),
        fiber_span: block_diag(vec![span1.to_vec(), span1.to_vec(), span1.to_vec()]),
    };
    // target side: base (x, span1-parameters, span2-parameters), fiber alike
    let ys: Vec<Symbol> = s0
        .iter()
        .map(|s| Symbol {
            weight: 1,
            ..s.clone()
        })
        .collect();
    let dpfx = |s: &Symbol| Symbol {
        name: format!("d{}", s.name),
        jet: s.jet,
        weight: s.weight,
    };
    let x0: Vec<Symbol> = kappa2.target.base[..m].to_vec();
    let sub2 = SubBundle {
        bundle: VBundle::new(
            "tau_sub",
            x0.iter()
                .cloned()
                .chain(ys.iter().cloned())
                .chain(t0.iter().cloned())
                .collect(),
            x0.iter()
                .map(&dpfx)
                .chain(ys.iter().map(&dpfx))
                .chain(t0.iter().map(&dpfx))
                .collect(),
        ),
        base_span: block_diag(vec![eye_rat(m), span1.to_vec(), span2.to_vec()]),
        fiber_span: block_diag(vec![eye_rat(m), span1.to_vec(), span2.to_vec()]),
    };
    match fine_restriction(&kappa2, &sub1, &sub2)? {
        Restriction::Fails { witness } => Ok(SubHa2Outcome::NotClosed { witness }),
        Restriction::Restricted(k) => {
            let sub = ha2_of(&k)?;
            let sub = HA2 {
                name: format!("{}|sub", ha2.name),
                ..sub
            };
            let almost_lie = al_check2(&sub)?;
            let lie = lie_check2(&sub)?;
            Ok(SubHa2Outcome::Closed {
                ha2: sub,
                almost_lie,
                lie,
            })
        }
    }
}

/// The lifted order-one structure on the order-two prolongations of the total
/// and base spaces.  The structure comorphism is obtained from the
/// second-order prolongation of the order-one structure comorphism by the
/// canonical flips, which in stacked-level coordinates are index shuffles.
pub fn lift_algebroid2(a: &Algebroid1) -> Result<Algebroid1, HigherError> {
    let m = a.base_dim();
    let n = a.rank();
    let kappa = a.kappa_of()?;
    let k2 = kappa.jet2_prolongation("u");
    // regroup from (level | family) to (family | level) on all four charts
    let sb = |new: usize| -> usize {
        // source base: families (x: m, x-jet: m) per level
        let fam = new / (3 * m);
        let rest = new % (3 * m);
        let level = rest / m;
        let a_idx = rest % m;
        level * 2 * m + fam * m + a_idx
    };
    let sf = |new: usize| -> usize {
        let fam = new / (3 * n);
        let rest = new % (3 * n);
        let level = rest / n;
        let i = rest % n;
        level * 2 * n + fam * n + i
    };
    let tb = |new: usize| -> usize {
        // target base: families (x: m, y: n) per level
        if new < 3 * m {
            let level = new / m;
            let a_idx = new % m;
            level * (m + n) + a_idx
        } else {
            let level = (new - 3 * m) / n;
            let i = (new - 3 * m) % n;
            level * (m + n) + m + i
        }
    };
    let tf = tb; // target fiber groups (dx: m, dy: n) the same way
    let source = VBundle::new(
        "T(pi2)",
        (0..6 * m).map(|i| k2.source.base[sb(i)].clone()).collect(),
        (0..6 * n).map(|i| k2.source.fiber[sf(i)].clone()).collect(),
    );
    let target = VBundle::new(
        "tau_T2E",
        (0..3 * (m + n))
            .map(|i| k2.target.base[tb(i)].clone())
            .collect(),
        (0..3 * (m + n))
            .map(|i| k2.target.fiber[tf(i)].clone())
            .collect(),
    );
    let base_map: Vec<Poly> = (0..6 * m).map(|i| k2.base_map[sb(i)].clone()).collect();
    let matrix: Vec<Vec<Poly>> = (0..3 * (m + n))
        .map(|r| {
            (0..6 * n)
                .map(|c| k2.matrix[tf(r)][sf(c)].clone())
                .collect()
        })
        .collect();
    let k_lift = Comorphism::new(source, target, base_map, matrix)?;
    let lifted = algebroid_of(&k_lift)?;
    Ok(Algebroid1 {
        name: format!("T2{}", a.name),
        ..lifted
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::almost_lie_not_lie_example;
    use crate::expr::rat_int;

    fn sym(name: &str) -> Symbol {
        Symbol::new(name, 0)
    }

    /// Rank-two structure over one base coordinate with a base-dependent
    /// bracket: anchors send `e1 -> d/dx`, `e2 -> x d/dx`, and
    /// `[e1, e2] = (1 + x) e1 - e2`.  Almost-Lie, and Lie for rank reasons.
    fn affine_line() -> Algebroid1 {
        let x = sym("x");
        let e: Vec<Symbol> = vec![Symbol::new("y1", 1), Symbol::new("y2", 1)];
        let q = vec![vec![Poly::one(), Poly::symbol(&x)]];
        let mut c = vec![vec![vec![Poly::zero(); 2]; 2]; 2];
        let one_plus_x = Poly::one().add(&Poly::symbol(&x));
        c[0][0][1] = one_plus_x.clone();
        c[0][1][0] = one_plus_x.neg();
        c[1][0][1] = Poly::int(-1);
        c[1][1][0] = Poly::one();
        Algebroid1::new("aff", vec![x], e, q.clone(), q, c).unwrap()
    }

    fn so3() -> Algebroid1 {
        let e: Vec<Symbol> = (1..=3).map(|i| Symbol::new(&format!("y{i}"), 1)).collect();
        let mut c = vec![vec![vec![Poly::zero(); 3]; 3]; 3];
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            c[k][i][j] = Poly::one();
            c[k][j][i] = Poly::int(-1);
        }
        Algebroid1::new("so3", vec![], e, vec![], vec![], c).unwrap()
    }

    #[test]
    fn tangent_prolongation_is_the_order_two_shuffle() {
        let chart = vec![sym("x1"), sym("x2")];
        let a = Algebroid1::tangent_algebroid("TR2", &chart);
        let ha2 = prolong2(&a).unwrap();
        let expected = HA2::tangent2("T2R2", &chart);
        assert_eq!(ha2.base, expected.base);
        assert_eq!(ha2.fiber1, expected.fiber1);
        assert_eq!(ha2.fiber2, expected.fiber2);
        assert_eq!(ha2.q_a_i, expected.q_a_i);
        assert_eq!(ha2.q_a_ij, expected.q_a_ij);
        assert_eq!(ha2.q_a_mu, expected.q_a_mu);
        assert_eq!(ha2.qp_a_i, expected.qp_a_i);
        assert_eq!(ha2.q_k_ij, expected.q_k_ij);
        assert_eq!(ha2.q_mu_i, expected.q_mu_i);
        assert_eq!(ha2.q_mu_ij, expected.q_mu_ij);
        assert_eq!(ha2.q_mu_nu_i, expected.q_mu_nu_i);
        assert_eq!(ha2.q_mu_ij_k, expected.q_mu_ij_k);
        assert!(ha2.kappa2_of().unwrap().check_weighted().pass);
    }

    #[test]
    fn prolonged_families_match_the_structure_derivatives() {
        let a = affine_line();
        let ha2 = prolong2(&a).unwrap();
        let m = 1;
        let n = 2;
        // second-level base block: Q^a_ij = sum_b (d_b Q^a_i Q^b_j + d_b Q^a_j Q^b_i)
        for a_idx in 0..m {
            for i in 0..n {
                for j in 0..n {
                    let mut expect = Poly::zero();
                    for b in 0..m {
                        expect = expect.add(
                            &a.anchor_left[a_idx][i]
                                .diff(&a.base[b])
                                .mul(&a.anchor_left[b][j]),
                        );
                        expect = expect.add(
                            &a.anchor_left[a_idx][j]
                                .diff(&a.base[b])
                                .mul(&a.anchor_left[b][i]),
                        );
                    }
                    assert_eq!(
                        ha2.q_a_ij[a_idx][i][j], expect,
                        "Q^a_ij at ({a_idx},{i},{j})"
                    );
                }
            }
        }
        assert_eq!(ha2.q_a_mu, a.anchor_left, "Q^a_mu");
        assert_eq!(ha2.q_k_ij, a.bracket, "Q^k_ij");
        assert_eq!(ha2.q_mu_ij, a.bracket, "Q^mu_ij");
        // Q^mu_nu_i = C^mu_{nu i}
        for mu in 0..n {
            for nu in 0..n {
                for i in 0..n {
                    assert_eq!(ha2.q_mu_nu_i[mu][nu][i], a.bracket[mu][nu][i]);
                }
            }
        }
        // Q^mu_ij,k = sum_b (d_b C^mu_{jk} Q^b_i + d_b C^mu_{ik} Q^b_j)
        for mu in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut expect = Poly::zero();
                        for b in 0..m {
                            expect = expect.add(
                                &a.bracket[mu][j][k]
                                    .diff(&a.base[b])
                                    .mul(&a.anchor_left[b][i]),
                            );
                            expect = expect.add(
                                &a.bracket[mu][i][k]
                                    .diff(&a.base[b])
                                    .mul(&a.anchor_left[b][j]),
                            );
                        }
                        assert_eq!(
                            ha2.q_mu_ij_k[mu][i][j][k], expect,
                            "Q^mu_ij,k at ({mu},{i},{j},{k})"
                        );
                    }
                }
            }
        }
        assert_eq!(ha2.q_mu_i, eye_poly(n), "strength block");
    }

    #[test]
    fn order_reduction_recovers_the_order_one_structure() {
        let a = affine_line();
        let ha2 = prolong2(&a).unwrap();
        let back = ha2.reduce_to_order1().unwrap();
        assert_eq!(back.anchor_left, a.anchor_left);
        assert_eq!(back.anchor_right, a.anchor_right);
        assert_eq!(back.bracket, a.bracket);
        // comorphism level: reducing the weighted order drops the second level
        let kappa2 = ha2.kappa2_of().unwrap();
        let kappa1 = a.kappa_of().unwrap();
        let reduced = kappa2.reduce_order(1).unwrap();
        assert_eq!(reduced.base_map, kappa1.base_map);
        assert_eq!(reduced.matrix, kappa1.matrix);
        assert_eq!(reduced.source.base, kappa1.source.base);
        assert_eq!(reduced.target.fiber, kappa1.target.fiber);
        // reducing to order zero keeps the right-anchor relation only
        let order0 = kappa2.reduce_order(0).unwrap();
        assert_eq!(order0.base_map, vec![Poly::symbol(&a.base[0])]);
        assert_eq!(
            order0.matrix,
            vec![vec![Poly::one(), Poly::symbol(&a.base[0])]]
        );
    }

    #[test]
    fn roundtrip_reads_back_generic_families() {
        // generic shapes: p != n, non-identity strength block, all families
        let x = sym("x");
        let y: Vec<Symbol> = vec![Symbol::new("y1", 1), Symbol::new("y2", 1)];
        let z = vec![Symbol::jet("z1", 0, 2)];
        let xp = Poly::symbol(&x);
        let ha2 = HA2::new(
            "generic",
            vec![x.clone()],
            y,
            z,
            vec![vec![Poly::one(), xp.clone()]],
            vec![vec![
                vec![Poly::zero(), xp.clone()],
                vec![xp.clone(), Poly::int(3)],
            ]],
            vec![vec![xp.clone()]],
            vec![vec![xp.clone(), Poly::int(2)]],
            vec![
                vec![vec![Poly::zero(), xp.clone()], vec![xp.neg(), Poly::zero()]],
                vec![
                    vec![Poly::zero(), Poly::one()],
                    vec![Poly::int(-1), Poly::zero()],
                ],
            ],
            vec![vec![xp.clone(), Poly::int(5)]],
            vec![vec![
                vec![Poly::one(), xp.clone()],
                vec![Poly::zero(), xp.clone()],
            ]],
            vec![vec![vec![xp.clone(), Poly::zero()]]],
            vec![vec![
                vec![
                    vec![xp.clone(), Poly::zero()],
                    vec![Poly::one(), Poly::zero()],
                ],
                vec![
                    vec![Poly::one(), Poly::zero()],
                    vec![Poly::zero(), xp.clone()],
                ],
            ]],
        )
        .unwrap();
        let kappa2 = ha2.kappa2_of().unwrap();
        assert!(kappa2.check_weighted().pass);
        let back = ha2_of(&kappa2).unwrap();
        assert_eq!(
            HA2 {
                name: ha2.name.clone(),
                ..back
            },
            ha2
        );
    }

    #[test]
    fn almost_lie_square_accepts_and_rejects() {
        let ha2 = prolong2(&affine_line()).unwrap();
        assert!(al_check2(&ha2).unwrap().pass);
        let ha2_so3 = prolong2(&so3()).unwrap();
        assert!(al_check2(&ha2_so3).unwrap().pass);
        // a skew perturbation of the order-one bracket breaks the square
        let mut bad = ha2.clone();
        bad.q_k_ij[0][0][1] = bad.q_k_ij[0][0][1].add(&Poly::one());
        bad.q_k_ij[0][1][0] = bad.q_k_ij[0][1][0].sub(&Poly::one());
        let verdict = al_check2(&bad).unwrap();
        assert!(!verdict.pass);
        assert!(verdict.witness.is_some());
    }

    #[test]
    fn lie_square_detects_the_jacobiator() {
        let ha2 = prolong2(&affine_line()).unwrap();
        assert!(lie_check2(&ha2).unwrap().pass);
        let ha2_so3 = prolong2(&so3()).unwrap();
        assert!(lie_check2(&ha2_so3).unwrap().pass);
        let bad = prolong2(&almost_lie_not_lie_example()).unwrap();
        let verdict = lie_check2(&bad).unwrap();
        assert!(!verdict.pass);
        assert!(verdict.witness.unwrap().contains("residual"));
    }

    #[test]
    fn lifted_structure_brackets_follow_the_level_pattern() {
        let a = affine_line();
        let lifted = lift_algebroid2(&a).unwrap();
        let m = 1;
        let n = 2;
        assert_eq!(lifted.base_dim(), 3 * m);
        assert_eq!(lifted.rank(), 3 * n);
        // the base chart stacks the levels (x, ux, uux)
        let levels: Vec<Vec<Symbol>> = (0..3).map(|l| vec![lifted.base[l].clone()]).collect();
        let dq = |p: &Poly| chain_differential(p, &levels);
        // anchor blocks [[Q, 0, 0], [DQ, Q, 0], [D2Q, 2 DQ, Q]]
        for i in 0..n {
            let q = &a.anchor_left[0][i];
            // structure functions of the lift live over the level-0 chart,
            // so compare against the level-renamed original
            let q0 = q.substitute(
                &[(a.base[0].clone(), Poly::symbol(&lifted.base[0]))]
                    .into_iter()
                    .collect(),
            );
            assert_eq!(lifted.anchor_left[0][i], q0);
            assert_eq!(lifted.anchor_left[1][i], dq(&q0));
            assert_eq!(lifted.anchor_left[1][n + i], q0);
            assert_eq!(lifted.anchor_left[2][i], dq(&dq(&q0)));
            assert_eq!(
                lifted.anchor_left[2][n + i],
                dq(&q0).scale(&Rat::from_integer(2.into()))
            );
            assert_eq!(lifted.anchor_left[2][2 * n + i], q0);
        }
        // bracket blocks by level: with eps^0 = level-2 lifts, eps^1, eps^2,
        // [eps0, eps0] = C eps0 + DC eps1 + D2C eps2, [eps0, eps1] = C eps1 +
        // 2 DC eps2, [eps1, eps1] = 2 C eps2, [eps0, eps2] = C eps2
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let c0 = a.bracket[k][i][j].substitute(
                        &[(a.base[0].clone(), Poly::symbol(&lifted.base[0]))]
                            .into_iter()
                            .collect(),
                    );
                    assert_eq!(lifted.bracket[k][i][j], c0);
                    assert_eq!(lifted.bracket[n + k][i][j], dq(&c0));
                    assert_eq!(lifted.bracket[2 * n + k][i][j], dq(&dq(&c0)));
                    assert_eq!(lifted.bracket[n + k][n + i][j], c0);
                    assert_eq!(
                        lifted.bracket[2 * n + k][n + i][j],
                        dq(&c0).scale(&Rat::from_integer(2.into()))
                    );
                    assert_eq!(
                        lifted.bracket[2 * n + k][n + i][n + j],
                        c0.scale(&Rat::from_integer(2.into()))
                    );
                    assert_eq!(lifted.bracket[2 * n + k][2 * n + i][j], c0);
                    assert_eq!(lifted.bracket[k][n + i][j], Poly::zero());
                    assert_eq!(lifted.bracket[k][2 * n + i][2 * n + j], Poly::zero());
                }
            }
        }
        // the factorial identity for the lifted bracket of lifted sections
        let c_of = |g: u32| -> Rat { Rat::from_integer(if g == 0 { 1.into() } else { 2.into() }) };
        for la in 0..=2u32 {
            for lb in 0..=2u32 {
                let alpha = 2 - la;
                let beta = 2 - lb;
                for i in 0..n {
                    for j in 0..n {
                        let si = a.basis_section(i);
                        let sj = a.basis_section(j);
                        let lift = |s: &[Poly], lev: u32| -> Vec<Poly> {
                            let s0: Vec<Poly> = s
                                .iter()
                                .map(|p| {
                                    p.substitute(
                                        &[(a.base[0].clone(), Poly::symbol(&lifted.base[0]))]
                                            .into_iter()
                                            .collect(),
                                    )
                                })
                                .collect();
                            lift_section2(&s0, &levels, lev).unwrap()
                        };
                        let got = lifted.bracket_of(&lift(&si, la), &lift(&sj, lb));
                        let expected: Vec<Poly> = if alpha + beta > 2 {
                            vec![Poly::zero(); 3 * n]
                        } else {
                            let br = a.bracket_of(&si, &sj);
                            let factor = c_of(alpha + beta) / (c_of(alpha) * c_of(beta));
                            lift(&br, 2 - alpha - beta)
                                .iter()
                                .map(|p| p.scale(&factor))
                                .collect()
                        };
                        assert_eq!(got, expected, "levels ({la}, {lb}), pair ({i}, {j})");
                    }
                }
            }
        }
    }

    #[test]
    fn strength_report_grades_certainty() {
        let strong = prolong2(&affine_line()).unwrap();
        let rep = is_strong(&strong, 7);
        assert!(rep.strong && rep.symbolic);

        let x = sym("x");
        let y = vec![Symbol::new("y1", 1)];
        let z = vec![Symbol::jet("z1", 0, 2)];
        let zeros3 = vec![vec![vec![Poly::zero()]]];
        let make = |block: Poly| {
            HA2::new(
                "probe",
                vec![x.clone()],
                y.clone(),
                z.clone(),
                vec![vec![Poly::one()]],
                zeros3.clone(),
                vec![vec![Poly::one()]],
                vec![vec![Poly::one()]],
                zeros3.clone(),
                vec![vec![block]],
                zeros3.clone(),
                zeros3.clone(),
                vec![vec![vec![vec![Poly::zero()]]]],
            )
            .unwrap()
        };
        let pointwise = is_strong(&make(Poly::symbol(&x)), 7);
        assert!(pointwise.strong && !pointwise.symbolic);
        assert!(pointwise.detail.contains("pointwise only"));
        let degenerate = is_strong(&make(Poly::zero()), 7);
        assert!(!degenerate.strong && degenerate.symbolic);
    }

    #[test]
    fn sub_structures_close_or_witness() {
        let ha2 = prolong2(&so3()).unwrap();
        // the line through e3 is an abelian subalgebra: closes, stays Lie
        let span_e3: Vec<Vec<Rat>> = vec![vec![Rat::zero()], vec![Rat::zero()], vec![rat_int(1)]];
        match sub_ha_check(&ha2, &span_e3, &span_e3).unwrap() {
            SubHa2Outcome::Closed {
                ha2: sub,
                almost_lie,
                lie,
            } => {
                assert_eq!(sub.rank1(), 1);
                assert!(almost_lie.pass);
                assert!(lie.pass);
            }
            SubHa2Outcome::NotClosed { witness } => panic!("should close: {witness}"),
        }
        // the plane through e1, e2 brackets out of itself
        let span_plane: Vec<Vec<Rat>> = vec![
            vec![rat_int(1), Rat::zero()],
            vec![Rat::zero(), rat_int(1)],
            vec![Rat::zero(), Rat::zero()],
        ];
        match sub_ha_check(&ha2, &span_plane, &span_plane).unwrap() {
            SubHa2Outcome::Closed { .. } => panic!("the plane must not close"),
            SubHa2Outcome::NotClosed { witness } => {
                assert!(witness.contains("residual"));
            }
        }
    }

    #[test]
    fn the_order_two_skew_predicate_compares_the_anchor_blocks() {
        let t2 = HA2::tangent2("t", &[sym("x")]);
        assert!(is_skew2(&t2).unwrap().pass);
        let mut bad = t2;
        bad.qp_a_i[0][0] = Poly::int(2);
        let w = is_skew2(&bad).unwrap();
        assert!(!w.pass);
        assert!(w.witness.is_some());
    }
}
