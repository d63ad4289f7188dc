//! Graded coordinate charts and jet prolongations.
//!
//! A [`GradedChart`] is a single global polynomial chart: base symbols of
//! weight 0 and fiber symbols of weights `1..=order`.  A [`JetChart`] is the
//! chart of a higher tangent/jet prolongation: every origin symbol acquires
//! jets `0..=order`, with the adapted weight rule `weight(u.dk) = weight(u) + k`
//! replaced, for doubly graded charts, by an explicit bi-weight table
//! `(linear degree, graded weight)` stored per symbol (never inferred).

use crate::expr::{ExprError, Poly, Symbol};
use std::collections::BTreeMap;
use std::fmt;

/// Errors produced by the graded layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GradedError {
    /// A doubly graded operation was applied to a chart without a bi-weight
    /// table.
    NotDoublyGraded(String),
    /// Underlying symbolic failure (jet overflow, parse, missing symbol).
    Expr(ExprError),
    /// A homogeneity requirement failed; carries a witness description.
    Inhomogeneous(String),
}

impl fmt::Display for GradedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradedError::NotDoublyGraded(s) => write!(f, "not doubly graded: {s}"),
            GradedError::Expr(e) => write!(f, "{e}"),
            GradedError::Inhomogeneous(s) => write!(f, "inhomogeneous: {s}"),
        }
    }
}

impl std::error::Error for GradedError {}

impl From<ExprError> for GradedError {
    fn from(e: ExprError) -> Self {
        GradedError::Expr(e)
    }
}

/// A graded chart: weight-0 base symbols plus fiber symbols of weights
/// `1..=order`.  The chart is global (polynomial data only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedChart {
    pub base: Vec<Symbol>,
    pub fiber: Vec<Symbol>,
    pub order: u32,
}

impl GradedChart {
    /// Build and validate: base symbols must have weight 0, fiber symbols
    /// weights in `1..=order`; `(name, jet)` pairs must be unique.
    pub fn new(base: Vec<Symbol>, fiber: Vec<Symbol>, order: u32) -> Result<Self, GradedError> {
        for b in &base {
            if b.weight != 0 {
                return Err(GradedError::Inhomogeneous(format!(
                    "base symbol {} has weight {}",
                    b.to_display(),
                    b.weight
                )));
            }
        }
        for s in &fiber {
            if s.weight == 0 || s.weight > order {
                return Err(GradedError::Inhomogeneous(format!(
                    "fiber symbol {} has weight {} outside 1..={}",
                    s.to_display(),
                    s.weight,
                    order
                )));
            }
        }
        let chart = GradedChart { base, fiber, order };
        let all = chart.symbols();
        for (i, a) in all.iter().enumerate() {
            for b in all.iter().skip(i + 1) {
                if a == b {
                    return Err(GradedError::Inhomogeneous(format!(
                        "duplicate symbol {}",
                        a.to_display()
                    )));
                }
            }
        }
        Ok(chart)
    }

    /// A purely base chart (order 0, no fibers).
    pub fn base_only(base: Vec<Symbol>) -> Self {
        GradedChart {
            base,
            fiber: Vec::new(),
            order: 0,
        }
    }

    /// All symbols, base first.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut v = self.base.clone();
        v.extend(self.fiber.iter().cloned());
        v
    }

    /// Fiber symbols of one particular weight, in declaration order.
    pub fn fiber_of_weight(&self, w: u32) -> Vec<Symbol> {
        self.fiber
            .iter()
            .filter(|s| s.weight == w)
            .cloned()
            .collect()
    }

    /// Drop every fiber symbol of weight greater than `j`.
    ///
    /// Reductions compose: reducing to `j` then to `i <= j` equals reducing
    /// to `i` directly.
    pub fn reduce(&self, j: u32) -> GradedChart {
        GradedChart {
            base: self.base.clone(),
            fiber: self
                .fiber
                .iter()
                .filter(|s| s.weight <= j)
                .cloned()
                .collect(),
            order: j.min(self.order),
        }
    }

    /// Keep only the top-weight fiber symbols and relabel them to weight 1
    /// (the top core of the graded bundle, viewed as an ordinary vector
    /// bundle over the base).
    pub fn top_core(&self) -> GradedChart {
        let fiber: Vec<Symbol> = self
            .fiber
            .iter()
            .filter(|s| s.weight == self.order)
            .map(|s| Symbol {
                name: s.name.clone(),
                jet: s.jet,
                weight: 1,
            })
            .collect();
        GradedChart {
            base: self.base.clone(),
            fiber,
            order: 1,
        }
    }
}

/// The weight assignment of a chart, as a standalone lookup.
#[derive(Debug, Clone, Default)]
pub struct WeightField {
    weights: BTreeMap<Symbol, u32>,
}

impl WeightField {
    pub fn of_chart(chart: &GradedChart) -> Self {
        let mut weights = BTreeMap::new();
        for s in chart.symbols() {
            weights.insert(s.clone(), s.weight);
        }
        WeightField { weights }
    }

    pub fn weight(&self, s: &Symbol) -> Option<u32> {
        self.weights.get(s).copied()
    }
}

/// Jet prolongation of a chart: symbols `u.dk` for `k = 0..=order` over every
/// origin symbol `u`, with weight `weight(u) + k`, plus an optional explicit
/// bi-weight table for doubly graded charts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetChart {
    pub origin: GradedChart,
    pub order: u32,
    pub symbols: Vec<Symbol>,
    /// Explicit `(linear degree, graded weight)` pairs; present only for
    /// doubly graded charts, and always stored (never inferred).
    pub bi_weights: Option<BTreeMap<Symbol, (u32, u32)>>,
}

impl JetChart {
    /// Jets of every symbol of `origin`, adapted weights.
    pub fn of(origin: &GradedChart, order: u32) -> Self {
        let mut symbols = Vec::new();
        for u in origin.symbols() {
            for k in 0..=order {
                symbols.push(Symbol {
                    name: u.name.clone(),
                    jet: k,
                    weight: u.weight + k,
                });
            }
        }
        JetChart {
            origin: origin.clone(),
            order,
            symbols,
            bi_weights: None,
        }
    }

    /// Attach an explicit bi-weight table (doubly graded chart).
    pub fn with_bi_weights(mut self, table: BTreeMap<Symbol, (u32, u32)>) -> Self {
        self.bi_weights = Some(table);
        self
    }

    pub fn bi_weight(&self, s: &Symbol) -> Result<(u32, u32), GradedError> {
        let table = self.bi_weights.as_ref().ok_or_else(|| {
            GradedError::NotDoublyGraded(format!("no bi-weights for {}", s.to_display()))
        })?;
        table.get(s).copied().ok_or_else(|| {
            GradedError::NotDoublyGraded(format!(
                "symbol {} not in bi-weight table",
                s.to_display()
            ))
        })
    }

    /// A vector-bundle chart (weight-1 relabeling) for each positive shift
    /// appearing in the core of a doubly graded chart: the symbols of
    /// bi-weight `(1, j)` for `j >= 1`, grouped by `j`.
    pub fn core_decomposition(&self) -> Result<Vec<(u32, Vec<Symbol>)>, GradedError> {
        let table = self.bi_weights.as_ref().ok_or_else(|| {
            GradedError::NotDoublyGraded("core decomposition needs a bi-weight table".into())
        })?;
        let mut by_shift: BTreeMap<u32, Vec<Symbol>> = BTreeMap::new();
        for s in &self.symbols {
            if let Some(&(lin, grad)) = table.get(s) {
                if lin == 1 && grad >= 1 {
                    by_shift.entry(grad).or_default().push(s.clone());
                }
            }
        }
        Ok(by_shift.into_iter().collect())
    }
}

/// The adapted chart of the order-`k` tangent/jet prolongation of an
/// `m`-dimensional base: symbols `x{a}.d{alpha}` with weight `alpha`,
/// `a = 1..=m`, `alpha = 0..=k`.  Contains `m * (k + 1)` symbols.
pub fn adapted_chart(m: usize, k: u32) -> JetChart {
    let base: Vec<Symbol> = (1..=m).map(|a| Symbol::new(&format!("x{a}"), 0)).collect();
    JetChart::of(&GradedChart::base_only(base), k)
}

/// The `alpha`-th lift of a base function `f` to the order-`k` jet chart:
/// the `alpha`-th total derivative `D^alpha f`.  The result is homogeneous
/// of weight `alpha` in the adapted grading.
pub fn lift_function(f: &Poly, alpha: u32, k: u32) -> Result<Poly, GradedError> {
    if alpha > k {
        return Err(GradedError::Expr(ExprError::JetOverflow(format!(
            "lift order {alpha} exceeds jet order {k}"
        ))));
    }
    let mut out = f.clone();
    for _ in 0..alpha {
        out = out.total_derivative(k)?;
    }
    if !out.is_homogeneous_of(alpha) {
        return Err(GradedError::Inhomogeneous(format!(
            "lift of {f} at order {alpha} is not homogeneous: {out}"
        )));
    }
    Ok(out)
}

/// Jet prolongation of a polynomial base transition map
/// `x'{a} = phi{a}(x)`: the jet of weight `alpha` of the new chart is
/// `D^alpha(phi{a})` expressed in the old jet chart.
///
/// Returns, for each component `a` and each `alpha = 0..=k`, the polynomial
/// for `x'{a}.d{alpha}`.
pub fn lift_transition(phi: &[Poly], k: u32) -> Result<Vec<Vec<Poly>>, GradedError> {
    let mut out = Vec::with_capacity(phi.len());
    for component in phi {
        let mut jets = Vec::with_capacity(k as usize + 1);
        let mut cur = component.clone();
        jets.push(cur.clone());
        for _ in 0..k {
            cur = cur.total_derivative(k)?;
            jets.push(cur.clone());
        }
        out.push(jets);
    }
    Ok(out)
}
