//! Exact symbolic core: sparse multivariate polynomials over big rationals,
//! with jet-graded symbols.
//!
//! A [`Symbol`] is identified by its `name` together with its jet order
//! (`x1.d2` is the second formal time derivative of `x1`).  Identity and
//! ordering use only `(name, jet)`; the `weight` field is graded-chart
//! metadata carried along for homogeneity bookkeeping and never takes part
//! in comparisons.
//!
//! A [`Poly`] is a sparse map from monomials to nonzero rational
//! coefficients.  All arithmetic is exact.  The text grammar is
//!
//! ```text
//! expr     := ['+'|'-'] term (('+'|'-') term)*
//! term     := factor ('*' factor)*
//! factor   := rational | symbol ['^' uint]
//! rational := uint ['/' uint]
//! symbol   := ident ['.' 'd' uint]
//! ident    := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! Printing is canonical (terms in monomial order) and round-trips through
//! the parser.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Exact rational scalar used throughout the crate.
pub type Rat = BigRational;

/// Convenience: rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Convenience: rational `n/d`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Errors produced by the symbolic layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprError {
    /// Evaluation or derivation met a symbol with no assigned value/rule.
    MissingSymbol(String),
    /// A total derivative would exceed the jet order bound of the chart.
    JetOverflow(String),
    /// The text grammar was violated.
    Parse(String),
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprError::MissingSymbol(s) => write!(f, "missing symbol: {s}"),
            ExprError::JetOverflow(s) => write!(f, "jet order overflow: {s}"),
            ExprError::Parse(s) => write!(f, "parse error: {s}"),
        }
    }
}

impl std::error::Error for ExprError {}

/// A coordinate symbol: a name, a jet order and a graded weight.
///
/// Equality, ordering and hashing use `(name, jet)` only; within a chart
/// that pair is unique and the weight is immutable metadata.
#[derive(Debug, Clone)]
pub struct Symbol {
    pub name: String,
    pub jet: u32,
    pub weight: u32,
}

impl Symbol {
    /// Base symbol (jet 0) of the given weight.
    pub fn new(name: &str, weight: u32) -> Self {
        Symbol {
            name: name.to_string(),
            jet: 0,
            weight,
        }
    }

    /// Symbol with an explicit jet order and weight.
    pub fn jet(name: &str, jet: u32, weight: u32) -> Self {
        Symbol {
            name: name.to_string(),
            jet,
            weight,
        }
    }

    /// The next jet of this symbol; by default the weight also rises by 1
    /// (the adapted-chart rule for jet prolongations).
    pub fn shift_jet(&self) -> Symbol {
        Symbol {
            name: self.name.clone(),
            jet: self.jet + 1,
            weight: self.weight + 1,
        }
    }

    /// Printable form (`name` or `name.dJET`).
    pub fn to_display(&self) -> String {
        if self.jet == 0 {
            self.name.clone()
        } else {
            format!("{}.d{}", self.name, self.jet)
        }
    }

    /// LaTeX form: trailing digits of the name become a subscript, the jet
    /// order a parenthesized superscript.
    pub fn to_latex(&self) -> String {
        let stem_len = self
            .name
            .trim_end_matches(|c: char| c.is_ascii_digit())
            .len();
        let (stem, digits) = self.name.split_at(stem_len);
        let base = if digits.is_empty() {
            stem.to_string()
        } else {
            format!("{stem}_{{{digits}}}")
        };
        if self.jet == 0 {
            base
        } else {
            format!("{base}^{{({})}}", self.jet)
        }
    }
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.jet == other.jet
    }
}
impl Eq for Symbol {}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.name, self.jet).cmp(&(&other.name, other.jet))
    }
}
impl std::hash::Hash for Symbol {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.name.hash(state);
        self.jet.hash(state);
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_display())
    }
}

/// A monomial: product of symbols with positive integer exponents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Monomial(pub BTreeMap<Symbol, u32>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(BTreeMap::new())
    }

    pub fn symbol(s: &Symbol) -> Self {
        let mut m = BTreeMap::new();
        m.insert(s.clone(), 1);
        Monomial(m)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.0.clone();
        for (s, e) in &other.0 {
            *out.entry(s.clone()).or_insert(0) += e;
        }
        Monomial(out)
    }

    /// Total graded weight of this monomial (sum of exponent-weighted
    /// symbol weights).
    pub fn weight(&self) -> u32 {
        self.0.iter().map(|(s, e)| s.weight * e).sum()
    }

    /// Total degree in the symbols selected by `pred`.
    pub fn degree_in<F: Fn(&Symbol) -> bool>(&self, pred: F) -> u32 {
        self.0
            .iter()
            .filter(|(s, _)| pred(s))
            .map(|(_, e)| *e)
            .sum()
    }
}

/// Sparse polynomial with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, Rat>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Poly::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> Self {
        let mut p = Poly::zero();
        if !c.is_zero() {
            p.terms.insert(Monomial::one(), c);
        }
        p
    }

    pub fn int(n: i64) -> Self {
        Poly::constant(rat_int(n))
    }

    pub fn symbol(s: &Symbol) -> Self {
        let mut p = Poly::zero();
        p.terms.insert(Monomial::symbol(s), Rat::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    /// The constant term.
    pub fn constant_term(&self) -> Rat {
        self.terms
            .get(&Monomial::one())
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    /// True if the polynomial is a constant (including zero).
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|m| m.is_one())
    }

    fn insert_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get() + &c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.insert_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), -c.clone()))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Rat) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(m, k)| (m.clone(), k * c)).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.insert_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut out = Poly::one();
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// All distinct symbols appearing in the polynomial.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut set: BTreeMap<Symbol, ()> = BTreeMap::new();
        for m in self.terms.keys() {
            for s in m.0.keys() {
                set.insert(s.clone(), ());
            }
        }
        set.into_keys().collect()
    }

    /// Partial derivative with respect to one symbol.
    pub fn diff(&self, s: &Symbol) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            if let Some(&e) = m.0.get(s) {
                let mut reduced = m.0.clone();
                if e == 1 {
                    reduced.remove(s);
                } else {
                    reduced.insert(s.clone(), e - 1);
                }
                out.insert_term(Monomial(reduced), c * rat_int(e as i64));
            }
        }
        out
    }

    /// Exact evaluation at a rational point. Every symbol that occurs must
    /// have a value.
    pub fn eval(&self, values: &BTreeMap<Symbol, Rat>) -> Result<Rat, ExprError> {
        let mut acc = Rat::zero();
        for (m, c) in &self.terms {
            let mut prod = c.clone();
            for (s, e) in &m.0 {
                let v = values
                    .get(s)
                    .ok_or_else(|| ExprError::MissingSymbol(s.to_display()))?;
                for _ in 0..*e {
                    prod *= v;
                }
            }
            acc += prod;
        }
        Ok(acc)
    }

    /// Floating-point evaluation (for the numeric integrator).
    pub fn eval_f64(&self, values: &BTreeMap<Symbol, f64>) -> Result<f64, ExprError> {
        let mut acc = 0.0f64;
        for (m, c) in &self.terms {
            let mut prod = c.to_f64().unwrap_or(f64::NAN);
            for (s, e) in &m.0 {
                let v = values
                    .get(s)
                    .ok_or_else(|| ExprError::MissingSymbol(s.to_display()))?;
                prod *= v.powi(*e as i32);
            }
            acc += prod;
        }
        Ok(acc)
    }

    /// Simultaneous substitution of polynomials for symbols. Symbols not in
    /// the map are left untouched.
    pub fn substitute(&self, map: &BTreeMap<Symbol, Poly>) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let mut term = Poly::constant(c.clone());
            for (s, e) in &m.0 {
                let factor = match map.get(s) {
                    Some(p) => p.pow(*e),
                    None => Poly::symbol(s).pow(*e),
                };
                term = term.mul(&factor);
            }
            out = out.add(&term);
        }
        out
    }

    /// Apply a derivation defined by its action on symbols:
    /// `D(p) = sum_s (dp/ds) * rules[s]`, requiring a rule for every symbol
    /// that occurs in `p`.
    pub fn derive(&self, rules: &BTreeMap<Symbol, Poly>) -> Result<Poly, ExprError> {
        let mut out = Poly::zero();
        for s in self.symbols() {
            let rule = rules
                .get(&s)
                .ok_or_else(|| ExprError::MissingSymbol(s.to_display()))?;
            out = out.add(&self.diff(&s).mul(rule));
        }
        Ok(out)
    }

    /// Formal total (time) derivative: every symbol's jet order is shifted
    /// up by one (`x.dk -> x.d(k+1)`, weight rises by one). Errors with
    /// [`ExprError::JetOverflow`] if a symbol already sits at `max_jet`.
    pub fn total_derivative(&self, max_jet: u32) -> Result<Poly, ExprError> {
        let mut rules: BTreeMap<Symbol, Poly> = BTreeMap::new();
        for s in self.symbols() {
            if s.jet >= max_jet {
                return Err(ExprError::JetOverflow(format!(
                    "{} at jet bound {max_jet}",
                    s.to_display()
                )));
            }
            rules.insert(s.clone(), Poly::symbol(&s.shift_jet()));
        }
        self.derive(&rules)
    }

    /// Graded weight of the polynomial, if homogeneous. `None` for the zero
    /// polynomial and for inhomogeneous sums.
    pub fn weight_of(&self) -> Option<u32> {
        let mut it = self.terms.keys();
        let first = it.next()?.weight();
        for m in it {
            if m.weight() != first {
                return None;
            }
        }
        Some(first)
    }

    /// True if every term has graded weight `w` (the zero polynomial is
    /// homogeneous of every weight).
    pub fn is_homogeneous_of(&self, w: u32) -> bool {
        self.terms.keys().all(|m| m.weight() == w)
    }

    /// Degree in the symbols selected by `pred`, or `None` for the zero
    /// polynomial.
    pub fn degree_in<F: Fn(&Symbol) -> bool + Copy>(&self, pred: F) -> Option<u32> {
        self.terms.keys().map(|m| m.degree_in(pred)).max()
    }

    /// True if the polynomial is fiberwise linear in the symbols selected by
    /// `pred`: every term has degree exactly one in them.
    pub fn is_linear_in<F: Fn(&Symbol) -> bool + Copy>(&self, pred: F) -> bool {
        self.terms.keys().all(|m| m.degree_in(pred) == 1)
    }

    /// Coefficient polynomial of `s` (collecting terms linear in `s`,
    /// dividing out `s`). Terms of degree != 1 in `s` are ignored.
    pub fn linear_coefficient(&self, s: &Symbol) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            if m.0.get(s) == Some(&1) {
                let mut reduced = m.0.clone();
                reduced.remove(s);
                out.insert_term(Monomial(reduced), c.clone());
            }
        }
        out
    }

    /// Canonical text form; parses back to the same polynomial.
    pub fn to_display(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let abs = c.abs();
            if i == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let mut factors: Vec<String> = Vec::new();
            if !abs.is_one() || m.is_one() {
                factors.push(rat_display(&abs));
            }
            for (s, e) in &m.0 {
                if *e == 1 {
                    factors.push(s.to_display());
                } else {
                    factors.push(format!("{}^{}", s.to_display(), e));
                }
            }
            out.push_str(&factors.join("*"));
        }
        out
    }

    /// LaTeX rendering of the polynomial.
    pub fn to_latex(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let abs = c.abs();
            if i == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let coeff = if abs.is_one() && !m.is_one() {
                String::new()
            } else if abs.denom().is_one() {
                format!("{}", abs.numer())
            } else {
                format!("\\tfrac{{{}}}{{{}}}", abs.numer(), abs.denom())
            };
            out.push_str(&coeff);
            for (s, e) in &m.0 {
                if !out.ends_with(' ') && !coeff.is_empty() {
                    out.push_str("\\,");
                }
                if *e == 1 {
                    out.push_str(&s.to_latex());
                } else if s.jet == 0 {
                    out.push_str(&format!("{}^{{{}}}", s.to_latex(), e));
                } else {
                    out.push_str(&format!("\\left({}\\right)^{{{}}}", s.to_latex(), e));
                }
                out.push(' ');
            }
            while out.ends_with(' ') {
                out.pop();
            }
        }
        out
    }

    /// Parse against an explicit symbol table: each `(name, jet)` mentioned
    /// in the text must match a symbol in `table` (weights are taken from
    /// the table).
    pub fn parse(text: &str, table: &[Symbol]) -> Result<Poly, ExprError> {
        let lookup = |name: &str, jet: u32| -> Option<Symbol> {
            table
                .iter()
                .find(|s| s.name == name && s.jet == jet)
                .cloned()
        };
        parse_with(text, &lookup)
    }

    /// Parse with automatic jet symbols: base names map to weights via
    /// `base_weights`, and `name.dk` receives weight `base + k`.
    pub fn parse_jet(text: &str, base_weights: &BTreeMap<String, u32>) -> Result<Poly, ExprError> {
        let lookup = |name: &str, jet: u32| -> Option<Symbol> {
            base_weights
                .get(name)
                .map(|w| Symbol::jet(name, jet, *w + jet))
        };
        parse_with(text, &lookup)
    }
}

fn rat_display(r: &Rat) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Pretty form of a rational for witnesses/reports.
pub fn rat_to_string(r: &Rat) -> String {
    rat_display(r)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor {
            chars: src.chars().collect(),
            pos: 0,
            src,
        }
    }
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }
    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }
    fn bump(&mut self) -> Option<char> {
        self.skip_ws();
        let c = self.chars.get(self.pos).copied();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Parse(format!("{msg} at position {} in {:?}", self.pos, self.src))
    }
    fn uint(&mut self) -> Result<BigInt, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected digits"));
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<BigInt>().map_err(|_| self.err("bad integer"))
    }
    fn ident(&mut self) -> Result<String, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphabetic() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
            while self.pos < self.chars.len()
                && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
            {
                self.pos += 1;
            }
            Ok(self.chars[start..self.pos].iter().collect())
        } else {
            Err(self.err("expected identifier"))
        }
    }
}

fn parse_with<F>(text: &str, lookup: &F) -> Result<Poly, ExprError>
where
    F: Fn(&str, u32) -> Option<Symbol>,
{
    let mut cur = Cursor::new(text);
    let mut acc = Poly::zero();
    let mut sign = Rat::one();
    match cur.peek() {
        Some('+') => {
            cur.bump();
        }
        Some('-') => {
            cur.bump();
            sign = -sign;
        }
        Some(_) => {}
        None => return Err(cur.err("empty expression")),
    }
    loop {
        let term = parse_term(&mut cur, lookup)?;
        acc = acc.add(&term.scale(&sign));
        match cur.peek() {
            Some('+') => {
                cur.bump();
                sign = Rat::one();
            }
            Some('-') => {
                cur.bump();
                sign = -Rat::one();
            }
            Some(_) => return Err(cur.err("expected '+' or '-'")),
            None => break,
        }
    }
    Ok(acc)
}

fn parse_term<F>(cur: &mut Cursor, lookup: &F) -> Result<Poly, ExprError>
where
    F: Fn(&str, u32) -> Option<Symbol>,
{
    let mut acc = parse_factor(cur, lookup)?;
    while cur.peek() == Some('*') {
        cur.bump();
        let f = parse_factor(cur, lookup)?;
        acc = acc.mul(&f);
    }
    Ok(acc)
}

fn parse_factor<F>(cur: &mut Cursor, lookup: &F) -> Result<Poly, ExprError>
where
    F: Fn(&str, u32) -> Option<Symbol>,
{
    match cur.peek() {
        Some(c) if c.is_ascii_digit() => {
            let numer = cur.uint()?;
            let mut denom = BigInt::one();
            if cur.peek() == Some('/') {
                cur.bump();
                denom = cur.uint()?;
                if denom.is_zero() {
                    return Err(cur.err("zero denominator"));
                }
            }
            Ok(Poly::constant(Rat::new(numer, denom)))
        }
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            let name = cur.ident()?;
            let mut jet = 0u32;
            // A '.' introduces a jet suffix `.dN`.
            if cur.peek() == Some('.') {
                cur.bump();
                let suffix = cur.ident()?;
                if let Some(digits) = suffix.strip_prefix('d') {
                    jet = digits
                        .parse::<u32>()
                        .map_err(|_| cur.err("bad jet suffix"))?;
                } else {
                    return Err(cur.err("expected jet suffix .dN"));
                }
            }
            let sym = lookup(&name, jet).ok_or_else(|| {
                ExprError::Parse(format!(
                    "unknown symbol {}{}",
                    name,
                    if jet > 0 {
                        format!(".d{jet}")
                    } else {
                        String::new()
                    }
                ))
            })?;
            let mut p = Poly::symbol(&sym);
            if cur.peek() == Some('^') {
                cur.bump();
                let e = cur
                    .uint()?
                    .to_u32()
                    .ok_or_else(|| cur.err("exponent too large"))?;
                p = p.pow(e);
            }
            Ok(p)
        }
        _ => Err(cur.err("expected factor")),
    }
}

// ---------------------------------------------------------------------------
// Operator sugar
// ---------------------------------------------------------------------------

impl std::ops::Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        Poly::add(self, rhs)
    }
}
impl std::ops::Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        Poly::sub(self, rhs)
    }
}
impl std::ops::Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        Poly::mul(self, rhs)
    }
}
impl std::ops::Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly::neg(self)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_display())
    }
}
