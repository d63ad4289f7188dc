//! Model files and reports: the TOML schema and command drivers shared by
//! the `algforge` binary and the C interface.
//!
//! A model file is a single TOML document with up to six sections —
//! `[chart]`, `[algebroid]`, `[ha2]`, `[liealgebra]`, `[lagrangian]`,
//! `[curves]` — describing one problem.  Loading is strict: unknown keys are
//! rejected everywhere, rationals are written as strings (`"3/4"`) or
//! integers, and all indices in files are 1-based (the library is 0-based).
//!
//! Structure functions are stored sparsely: each family is a table of dotted
//! keys `Q.<indices> = "polynomial"`, omitted entries are zero, and the
//! symmetric families of the order-2 normal form (`q_a_ij` and `q_mu_ij_k`,
//! both in their `(i, j)` pair) store the upper triangle `i <= j` only and
//! are symmetrized on load.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::value::Table;
use toml::Value;

use crate::algebroid::{Algebroid1, AlgebroidError};
use crate::comorphism::Restriction;
use crate::expr::{rat_int, rat_to_string, ExprError, Poly, Rat, Symbol};
use crate::higher::{al_check2, is_skew2, is_strong, lie_check2, prolong2, HigherError, HA2};
use crate::liegroup::{
    kappa_g_eval, subalgebroid_restriction, subalgebroid_test, GradedSubspace, LieAlgebraModel,
    LieGroupError,
};
use crate::mechanics::{
    conservation_check, el_prolong2, euler_poincare2, integrate_rk4, reduced_example_el,
    residual_monitor, standard_el2, state_symbols, trajectory_table, vector_group_position_form,
    ELSystem, Lagrangian, MechanicsError,
};

/// Default seed for the randomized inputs of the `leibniz` check and the
/// pointwise fallback of the `strong` check (overridden by `ALGFORGE_SEED`).
pub const DEFAULT_SEED: u64 = 201;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum ModelError {
    Io(std::io::Error),
    /// TOML syntax error.
    Parse(String),
    /// Schema violation: unknown key, wrong type, bad index, bad value.
    Schema(String),
    /// A command needs a section the file does not provide.
    MissingSection(String),
    Expr(ExprError),
    Algebroid(AlgebroidError),
    Higher(HigherError),
    LieGroup(LieGroupError),
    Mechanics(MechanicsError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Io(e) => write!(f, "io: {e}"),
            ModelError::Parse(s) => write!(f, "toml: {s}"),
            ModelError::Schema(s) => write!(f, "schema: {s}"),
            ModelError::MissingSection(s) => write!(f, "the model file has no [{s}] section"),
            ModelError::Expr(e) => write!(f, "{e}"),
            ModelError::Algebroid(e) => write!(f, "{e}"),
            ModelError::Higher(e) => write!(f, "{e}"),
            ModelError::LieGroup(e) => write!(f, "{e}"),
            ModelError::Mechanics(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}
impl From<ExprError> for ModelError {
    fn from(e: ExprError) -> Self {
        ModelError::Expr(e)
    }
}
impl From<AlgebroidError> for ModelError {
    fn from(e: AlgebroidError) -> Self {
        ModelError::Algebroid(e)
    }
}
impl From<HigherError> for ModelError {
    fn from(e: HigherError) -> Self {
        ModelError::Higher(e)
    }
}
impl From<LieGroupError> for ModelError {
    fn from(e: LieGroupError) -> Self {
        ModelError::LieGroup(e)
    }
}
impl From<MechanicsError> for ModelError {
    fn from(e: MechanicsError) -> Self {
        ModelError::Mechanics(e)
    }
}

/// The process exit code a failed command should use: `2` for usage, file,
/// and schema problems, `1` for domain failures (violated preconditions,
/// singular or non-finite numerics).  Passing checks exit `0`; failing
/// checks exit `1` via their report, not through this classification.
pub fn exit_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Higher(HigherError::NotAlmostLie(_)) => 1,
        ModelError::Mechanics(m) => match m {
            MechanicsError::NotAlmostLie(_)
            | MechanicsError::NotAdmissible(_)
            | MechanicsError::SingularLeadingMatrix(_)
            | MechanicsError::NonFiniteState(_) => 1,
            MechanicsError::Higher(HigherError::NotAlmostLie(_)) => 1,
            _ => 2,
        },
        _ => 2,
    }
}

fn schema(msg: impl Into<String>) -> ModelError {
    ModelError::Schema(msg.into())
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Result of one command: a named verdict with an optional witness and a
/// list of auxiliary key/value details.  The human and JSON renderings carry
/// exactly the same information; `timing_ms` comes last in both so golden
/// comparisons can strip it.
#[derive(Debug, Clone)]
pub struct Report {
    pub check: String,
    pub pass: bool,
    pub witness: Option<String>,
    pub details: Vec<(String, String)>,
    pub timing_ms: u128,
}

impl Report {
    pub fn new(check: &str, pass: bool, witness: Option<String>) -> Self {
        Report {
            check: check.to_string(),
            pass,
            witness,
            details: Vec::new(),
            timing_ms: 0,
        }
    }

    pub fn with_detail(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.details.push((key.to_string(), value.to_string()));
        self
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "pass"
        } else {
            "fail"
        }
    }

    pub fn human(&self) -> String {
        let mut out = format!("check: {}\nverdict: {}\n", self.check, self.verdict());
        if let Some(w) = &self.witness {
            out.push_str(&format!("witness: {w}\n"));
        }
        for (k, v) in &self.details {
            out.push_str(&format!("{k}: {v}\n"));
        }
        out.push_str(&format!("timing_ms: {}\n", self.timing_ms));
        out
    }

    pub fn json(&self) -> String {
        let jstr = |s: &str| serde_json::Value::String(s.to_string()).to_string();
        let mut out = format!(
            "{{\"check\": {}, \"verdict\": {}, \"witness\": {}",
            jstr(&self.check),
            jstr(self.verdict()),
            match &self.witness {
                Some(w) => jstr(w),
                None => "null".to_string(),
            }
        );
        out.push_str(", \"details\": {");
        for (i, (k, v)) in self.details.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{}: {}", jstr(k), jstr(v)));
        }
        out.push_str(&format!("}}, \"timing_ms\": {}}}", self.timing_ms));
        out
    }
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// `[chart]`: a graded chart with a base (weight 0) and fiber coordinates of
/// weights 1 and 2 (declaration order preserved within each weight).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChartSec {
    pub base: Vec<Symbol>,
    pub fiber1: Vec<Symbol>,
    pub fiber2: Vec<Symbol>,
}

/// `[liealgebra]`: structure constants plus the optional extras used by the
/// Lie-group family of commands.
#[derive(Debug, Clone)]
pub struct LieAlgSec {
    pub model: LieAlgebraModel,
    /// Weight-1 fiber names for the variational commands (default `a1..an`).
    pub fiber: Vec<Symbol>,
    /// Order for `kappa-eval`/`subalg`/`lift` (default 2).
    pub order: usize,
    /// Graded subspace levels for `subalg`.
    pub v: Option<GradedSubspace>,
}

/// `[lagrangian]`: the polynomial text and the optional default form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagrangianSec {
    pub l: String,
    pub form: Option<ElForm>,
}

/// `[curves]`: numeric initial data and named state functions to monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvesSec {
    pub initial: Option<Vec<f64>>,
    pub conserved: Vec<(String, String)>,
}

/// A parsed model file.
#[derive(Debug, Clone, Default)]
pub struct ModelFile {
    pub chart: Option<ChartSec>,
    pub algebroid: Option<Algebroid1>,
    pub ha2: Option<HA2>,
    pub liealgebra: Option<LieAlgSec>,
    pub lagrangian: Option<LagrangianSec>,
    pub curves: Option<CurvesSec>,
}

impl ModelFile {
    pub fn require_chart(&self) -> Result<&ChartSec, ModelError> {
        self.chart
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("chart".into()))
    }
    pub fn require_algebroid(&self) -> Result<&Algebroid1, ModelError> {
        self.algebroid
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("algebroid".into()))
    }
    pub fn require_ha2(&self) -> Result<&HA2, ModelError> {
        self.ha2
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("ha2".into()))
    }
    pub fn require_liealgebra(&self) -> Result<&LieAlgSec, ModelError> {
        self.liealgebra
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("liealgebra".into()))
    }
    pub fn require_lagrangian(&self) -> Result<&LagrangianSec, ModelError> {
        self.lagrangian
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("lagrangian".into()))
    }
    pub fn require_curves(&self) -> Result<&CurvesSec, ModelError> {
        self.curves
            .as_ref()
            .ok_or_else(|| ModelError::MissingSection("curves".into()))
    }
}

// ---------------------------------------------------------------------------
// TOML value helpers
// ---------------------------------------------------------------------------

fn tbl<'a>(v: &'a Value, what: &str) -> Result<&'a Table, ModelError> {
    v.as_table()
        .ok_or_else(|| schema(format!("{what} must be a table")))
}

fn expect_keys(t: &Table, allowed: &[&str], what: &str) -> Result<(), ModelError> {
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(schema(format!(
                "unknown key `{k}` in {what} (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn str_of<'a>(v: &'a Value, what: &str) -> Result<&'a str, ModelError> {
    v.as_str()
        .ok_or_else(|| schema(format!("{what} must be a string")))
}

fn usize_of(v: &Value, what: &str) -> Result<usize, ModelError> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as usize),
        _ => Err(schema(format!("{what} must be a non-negative integer"))),
    }
}

fn f64_of(v: &Value, what: &str) -> Result<f64, ModelError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(schema(format!("{what} must be a number"))),
    }
}

fn rat_of(v: &Value, what: &str) -> Result<Rat, ModelError> {
    match v {
        Value::Integer(i) => Ok(rat_int(*i)),
        Value::String(s) => s
            .trim()
            .parse::<Rat>()
            .map_err(|_| schema(format!("{what}: cannot read {s:?} as a rational `p/q`"))),
        Value::Float(_) => Err(schema(format!(
            "{what}: write rationals as strings (\"3/4\"), not floats"
        ))),
        _ => Err(schema(format!(
            "{what} must be a rational string or an integer"
        ))),
    }
}

fn poly_of(v: &Value, table: &[Symbol], what: &str) -> Result<Poly, ModelError> {
    match v {
        Value::String(s) => Poly::parse(s, table).map_err(|e| schema(format!("{what}: {e}"))),
        Value::Integer(i) => Ok(Poly::int(*i)),
        _ => Err(schema(format!(
            "{what} must be a polynomial string or an integer"
        ))),
    }
}

fn ident_ok(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Walk a sparse family table: `depth` levels of tables keyed by 1-based
/// indices under the single allowed key `Q`, leaves returned with their
/// (still 1-based) index paths in file order.
fn sparse_entries<'a>(
    v: &'a Value,
    depth: usize,
    what: &str,
) -> Result<Vec<(Vec<usize>, &'a Value)>, ModelError> {
    let t = tbl(v, what)?;
    expect_keys(t, &["Q"], what)?;
    let mut out = Vec::new();
    let Some(q) = t.get("Q") else {
        return Ok(out);
    };
    fn walk<'a>(
        v: &'a Value,
        depth: usize,
        path: &mut Vec<usize>,
        what: &str,
        out: &mut Vec<(Vec<usize>, &'a Value)>,
    ) -> Result<(), ModelError> {
        if depth == 0 {
            out.push((path.clone(), v));
            return Ok(());
        }
        let t = v.as_table().ok_or_else(|| {
            schema(format!(
                "{what}: expected {depth} more dotted index levels under Q"
            ))
        })?;
        for (k, sub) in t {
            let idx: usize =
                k.parse().ok().filter(|i| *i >= 1).ok_or_else(|| {
                    schema(format!("{what}: index `{k}` is not a positive integer"))
                })?;
            path.push(idx);
            walk(sub, depth - 1, path, what, out)?;
            path.pop();
        }
        Ok(())
    }
    walk(q, depth, &mut Vec::new(), what, &mut out)?;
    Ok(out)
}

fn check_bounds(path: &[usize], dims: &[usize], what: &str) -> Result<Vec<usize>, ModelError> {
    path.iter()
        .zip(dims.iter())
        .enumerate()
        .map(|(pos, (&i, &d))| {
            if i > d {
                Err(schema(format!(
                    "{what}: index {i} in position {} exceeds the dimension {d}",
                    pos + 1
                )))
            } else {
                Ok(i - 1)
            }
        })
        .collect()
}

fn family2(
    v: Option<&Value>,
    rows: usize,
    cols: usize,
    base: &[Symbol],
    what: &str,
) -> Result<Vec<Vec<Poly>>, ModelError> {
    let mut out = vec![vec![Poly::zero(); cols]; rows];
    let Some(v) = v else { return Ok(out) };
    for (path, leaf) in sparse_entries(v, 2, what)? {
        let ix = check_bounds(&path, &[rows, cols], what)?;
        out[ix[0]][ix[1]] = poly_of(leaf, base, what)?;
    }
    Ok(out)
}

fn family3(
    v: Option<&Value>,
    dims: [usize; 3],
    sym_last_two: bool,
    base: &[Symbol],
    what: &str,
) -> Result<Vec<Vec<Vec<Poly>>>, ModelError> {
    let mut out = vec![vec![vec![Poly::zero(); dims[2]]; dims[1]]; dims[0]];
    let Some(v) = v else { return Ok(out) };
    for (path, leaf) in sparse_entries(v, 3, what)? {
        let ix = check_bounds(&path, &dims, what)?;
        let p = poly_of(leaf, base, what)?;
        if sym_last_two {
            if ix[1] > ix[2] {
                return Err(schema(format!(
                    "{what} is symmetric: store the upper triangle only (got {}.{}.{})",
                    path[0], path[1], path[2]
                )));
            }
            out[ix[0]][ix[2]][ix[1]] = p.clone();
        }
        out[ix[0]][ix[1]][ix[2]] = p;
    }
    Ok(out)
}

fn family4(
    v: Option<&Value>,
    dims: [usize; 4],
    sym_middle_two: bool,
    base: &[Symbol],
    what: &str,
) -> Result<Vec<Vec<Vec<Vec<Poly>>>>, ModelError> {
    let mut out = vec![vec![vec![vec![Poly::zero(); dims[3]]; dims[2]]; dims[1]]; dims[0]];
    let Some(v) = v else { return Ok(out) };
    for (path, leaf) in sparse_entries(v, 4, what)? {
        let ix = check_bounds(&path, &dims, what)?;
        let p = poly_of(leaf, base, what)?;
        if sym_middle_two {
            if ix[1] > ix[2] {
                return Err(schema(format!(
                    "{what} is symmetric in its middle pair: store the upper triangle only \
                     (got {}.{}.{}.{})",
                    path[0], path[1], path[2], path[3]
                )));
            }
            out[ix[0]][ix[2]][ix[1]][ix[3]] = p.clone();
        }
        out[ix[0]][ix[1]][ix[2]][ix[3]] = p;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Section loaders
// ---------------------------------------------------------------------------

fn load_chart(v: &Value) -> Result<ChartSec, ModelError> {
    let t = tbl(v, "[chart]")?;
    expect_keys(t, &["base", "fiber"], "[chart]")?;
    let mut names: Vec<String> = Vec::new();
    let mut base = Vec::new();
    if let Some(bv) = t.get("base") {
        let arr = bv
            .as_array()
            .ok_or_else(|| schema("[chart] base must be an array"))?;
        for e in arr {
            let name = str_of(e, "[chart] base entry")?;
            if !ident_ok(name) {
                return Err(schema(format!(
                    "[chart] base name {name:?} is not an identifier"
                )));
            }
            names.push(name.to_string());
            base.push(Symbol::new(name, 0));
        }
    }
    let mut fiber1 = Vec::new();
    let mut fiber2 = Vec::new();
    if let Some(fv) = t.get("fiber") {
        let arr = fv
            .as_array()
            .ok_or_else(|| schema("[chart] fiber must be an array"))?;
        for e in arr {
            let et = tbl(e, "[chart] fiber entry")?;
            expect_keys(et, &["name", "weight"], "[chart] fiber entry")?;
            let name = str_of(
                et.get("name")
                    .ok_or_else(|| schema("[chart] fiber entry needs a name"))?,
                "[chart] fiber name",
            )?;
            if !ident_ok(name) {
                return Err(schema(format!(
                    "[chart] fiber name {name:?} is not an identifier"
                )));
            }
            let w = usize_of(
                et.get("weight")
                    .ok_or_else(|| schema("[chart] fiber entry needs a weight"))?,
                "[chart] fiber weight",
            )?;
            names.push(name.to_string());
            match w {
                1 => fiber1.push(Symbol::new(name, 1)),
                2 => fiber2.push(Symbol::new(name, 2)),
                _ => {
                    return Err(schema(format!(
                        "[chart] fiber weight must be 1 or 2, got {w}"
                    )))
                }
            }
        }
    }
    let mut seen = names.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != names.len() {
        return Err(schema("[chart] coordinate names must be distinct"));
    }
    Ok(ChartSec {
        base,
        fiber1,
        fiber2,
    })
}

fn load_algebroid(v: &Value, chart: &ChartSec) -> Result<Algebroid1, ModelError> {
    let t = tbl(v, "[algebroid]")?;
    expect_keys(
        t,
        &["name", "anchor_left", "anchor_right", "bracket"],
        "[algebroid]",
    )?;
    if !chart.fiber2.is_empty() {
        return Err(schema(
            "an [algebroid] chart carries only weight-1 fiber coordinates; \
             weight-2 coordinates belong to [ha2]",
        ));
    }
    let name = match t.get("name") {
        Some(nv) => str_of(nv, "[algebroid] name")?.to_string(),
        None => "algebroid".to_string(),
    };
    let m = chart.base.len();
    let n = chart.fiber1.len();
    let ql = family2(
        t.get("anchor_left"),
        m,
        n,
        &chart.base,
        "[algebroid.anchor_left]",
    )?;
    let qr = family2(
        t.get("anchor_right"),
        m,
        n,
        &chart.base,
        "[algebroid.anchor_right]",
    )?;
    let br = family3(
        t.get("bracket"),
        [n, n, n],
        false,
        &chart.base,
        "[algebroid.bracket]",
    )?;
    Algebroid1::new(&name, chart.base.clone(), chart.fiber1.clone(), ql, qr, br)
        .map_err(ModelError::from)
}

fn load_ha2(v: &Value, chart: &ChartSec) -> Result<HA2, ModelError> {
    let t = tbl(v, "[ha2]")?;
    expect_keys(
        t,
        &[
            "name",
            "q_a_i",
            "q_a_ij",
            "q_a_mu",
            "qp_a_i",
            "q_k_ij",
            "q_mu_i",
            "q_mu_ij",
            "q_mu_nu_i",
            "q_mu_ij_k",
        ],
        "[ha2]",
    )?;
    let name = match t.get("name") {
        Some(nv) => str_of(nv, "[ha2] name")?.to_string(),
        None => "ha2".to_string(),
    };
    let m = chart.base.len();
    let n = chart.fiber1.len();
    let p = chart.fiber2.len();
    let b = &chart.base;
    HA2::new(
        &name,
        chart.base.clone(),
        chart.fiber1.clone(),
        chart.fiber2.clone(),
        family2(t.get("q_a_i"), m, n, b, "[ha2.q_a_i]")?,
        family3(t.get("q_a_ij"), [m, n, n], true, b, "[ha2.q_a_ij]")?,
        family2(t.get("q_a_mu"), m, p, b, "[ha2.q_a_mu]")?,
        family2(t.get("qp_a_i"), m, n, b, "[ha2.qp_a_i]")?,
        family3(t.get("q_k_ij"), [n, n, n], false, b, "[ha2.q_k_ij]")?,
        family2(t.get("q_mu_i"), p, n, b, "[ha2.q_mu_i]")?,
        family3(t.get("q_mu_ij"), [p, n, n], false, b, "[ha2.q_mu_ij]")?,
        family3(t.get("q_mu_nu_i"), [p, p, n], false, b, "[ha2.q_mu_nu_i]")?,
        family4(t.get("q_mu_ij_k"), [p, n, n, n], true, b, "[ha2.q_mu_ij_k]")?,
    )
    .map_err(ModelError::from)
}

fn load_liealgebra(v: &Value) -> Result<LieAlgSec, ModelError> {
    let t = tbl(v, "[liealgebra]")?;
    expect_keys(
        t,
        &["name", "dim", "c", "fiber", "order", "v"],
        "[liealgebra]",
    )?;
    let name = match t.get("name") {
        Some(nv) => str_of(nv, "[liealgebra] name")?.to_string(),
        None => "g".to_string(),
    };
    let dim = usize_of(
        t.get("dim")
            .ok_or_else(|| schema("[liealgebra] needs dim"))?,
        "[liealgebra] dim",
    )?;
    if dim == 0 {
        return Err(schema("[liealgebra] dim must be at least 1"));
    }
    let mut entries: Vec<(usize, usize, usize, Rat)> = Vec::new();
    if let Some(cv) = t.get("c") {
        let arr = cv
            .as_array()
            .ok_or_else(|| schema("[liealgebra] c must be an array"))?;
        for e in arr {
            let row = e
                .as_array()
                .filter(|r| r.len() == 4)
                .ok_or_else(|| schema("[liealgebra] c entries are [k, i, j, \"rat\"]"))?;
            let mut ix = [0usize; 3];
            for (slot, rv) in ix.iter_mut().zip(row.iter()) {
                let i = usize_of(rv, "[liealgebra] c index")?;
                if i < 1 || i > dim {
                    return Err(schema(format!(
                        "[liealgebra] c index {i} is out of the range 1..={dim}"
                    )));
                }
                *slot = i - 1;
            }
            entries.push((
                ix[0],
                ix[1],
                ix[2],
                rat_of(&row[3], "[liealgebra] c value")?,
            ));
        }
    }
    let model = LieAlgebraModel::from_sparse(&name, dim, &entries)?;
    let fiber: Vec<Symbol> = match t.get("fiber") {
        Some(fv) => {
            let arr = fv
                .as_array()
                .ok_or_else(|| schema("[liealgebra] fiber must be an array"))?;
            if arr.len() != dim {
                return Err(schema(format!("[liealgebra] fiber must list {dim} names")));
            }
            arr.iter()
                .map(|e| {
                    let nm = str_of(e, "[liealgebra] fiber name")?;
                    if !ident_ok(nm) {
                        return Err(schema(format!(
                            "[liealgebra] fiber name {nm:?} is not an identifier"
                        )));
                    }
                    Ok(Symbol::new(nm, 1))
                })
                .collect::<Result<_, _>>()?
        }
        None => (1..=dim)
            .map(|i| Symbol::new(&format!("a{i}"), 1))
            .collect(),
    };
    let order = match t.get("order") {
        Some(ov) => {
            let k = usize_of(ov, "[liealgebra] order")?;
            if k == 0 {
                return Err(schema("[liealgebra] order must be at least 1"));
            }
            k
        }
        None => 2,
    };
    let v_levels = match t.get("v") {
        Some(vv) => {
            let arr = vv
                .as_array()
                .ok_or_else(|| schema("[liealgebra] v must be an array"))?;
            let mut spans = Vec::new();
            for (j, lev) in arr.iter().enumerate() {
                let rows = lev.as_array().ok_or_else(|| {
                    schema(format!("[liealgebra] v level {} must be a matrix", j + 1))
                })?;
                if rows.len() != dim {
                    return Err(schema(format!(
                        "[liealgebra] v level {} must have {dim} rows",
                        j + 1
                    )));
                }
                let mut mat = Vec::new();
                for r in rows {
                    let cols = r.as_array().ok_or_else(|| {
                        schema(format!(
                            "[liealgebra] v level {} rows must be arrays",
                            j + 1
                        ))
                    })?;
                    mat.push(
                        cols.iter()
                            .map(|c| rat_of(c, "[liealgebra] v entry"))
                            .collect::<Result<Vec<_>, _>>()?,
                    );
                }
                spans.push(mat);
            }
            Some(GradedSubspace::new(spans)?)
        }
        None => None,
    };
    Ok(LieAlgSec {
        model,
        fiber,
        order,
        v: v_levels,
    })
}

fn load_lagrangian(v: &Value) -> Result<LagrangianSec, ModelError> {
    let t = tbl(v, "[lagrangian]")?;
    expect_keys(t, &["l", "form"], "[lagrangian]")?;
    let l = str_of(
        t.get("l")
            .ok_or_else(|| schema("[lagrangian] needs l = \"polynomial\""))?,
        "[lagrangian] l",
    )?
    .to_string();
    let form = match t.get("form") {
        Some(fv) => Some(ElForm::parse(str_of(fv, "[lagrangian] form")?)?),
        None => None,
    };
    Ok(LagrangianSec { l, form })
}

fn load_curves(v: &Value) -> Result<CurvesSec, ModelError> {
    let t = tbl(v, "[curves]")?;
    expect_keys(t, &["initial", "conserved"], "[curves]")?;
    let initial = match t.get("initial") {
        Some(iv) => {
            let arr = iv
                .as_array()
                .ok_or_else(|| schema("[curves] initial must be an array"))?;
            Some(
                arr.iter()
                    .map(|e| f64_of(e, "[curves] initial entry"))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        }
        None => None,
    };
    let mut conserved = Vec::new();
    if let Some(cv) = t.get("conserved") {
        let arr = cv
            .as_array()
            .ok_or_else(|| schema("[curves] conserved must be an array"))?;
        for e in arr {
            let et = tbl(e, "[curves] conserved entry")?;
            expect_keys(et, &["name", "poly"], "[curves] conserved entry")?;
            let name = str_of(
                et.get("name")
                    .ok_or_else(|| schema("[curves] conserved entry needs a name"))?,
                "[curves] conserved name",
            )?;
            let poly = str_of(
                et.get("poly")
                    .ok_or_else(|| schema("[curves] conserved entry needs a poly"))?,
                "[curves] conserved poly",
            )?;
            conserved.push((name.to_string(), poly.to_string()));
        }
    }
    Ok(CurvesSec { initial, conserved })
}

/// Parse a model file from TOML text.
pub fn parse_model(text: &str) -> Result<ModelFile, ModelError> {
    let root: Value = text
        .parse()
        .map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))?;
    let t = tbl(&root, "the model file")?;
    expect_keys(
        t,
        &[
            "chart",
            "algebroid",
            "ha2",
            "liealgebra",
            "lagrangian",
            "curves",
        ],
        "the model file",
    )?;
    let chart = t.get("chart").map(load_chart).transpose()?;
    let algebroid = match t.get("algebroid") {
        Some(v) => {
            let c = chart
                .as_ref()
                .ok_or_else(|| schema("[algebroid] needs a [chart] section"))?;
            Some(load_algebroid(v, c)?)
        }
        None => None,
    };
    let ha2 = match t.get("ha2") {
        Some(v) => {
            let c = chart
                .as_ref()
                .ok_or_else(|| schema("[ha2] needs a [chart] section"))?;
            Some(load_ha2(v, c)?)
        }
        None => None,
    };
    let liealgebra = t.get("liealgebra").map(load_liealgebra).transpose()?;
    let lagrangian = t.get("lagrangian").map(load_lagrangian).transpose()?;
    let curves = t.get("curves").map(load_curves).transpose()?;
    Ok(ModelFile {
        chart,
        algebroid,
        ha2,
        liealgebra,
        lagrangian,
        curves,
    })
}

/// Read and parse a model file.
pub fn load_model(path: &Path) -> Result<ModelFile, ModelError> {
    parse_model(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

fn toml_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn chart_block(base: &[Symbol], fibers: &[&[Symbol]]) -> String {
    let mut out = String::from("[chart]\nbase = [");
    out.push_str(
        &base
            .iter()
            .map(|s| toml_string(&s.name))
            .collect::<Vec<_>>()
            .join(", "),
    );
    out.push_str("]\nfiber = [");
    let mut entries = Vec::new();
    for (lvl, fs) in fibers.iter().enumerate() {
        for s in fs.iter() {
            entries.push(format!(
                "{{ name = {}, weight = {} }}",
                toml_string(&s.name),
                lvl + 1
            ));
        }
    }
    out.push_str(&entries.join(", "));
    out.push_str("]\n");
    out
}

fn family2_block(section: &str, fam: &[Vec<Poly>]) -> String {
    let mut lines = String::new();
    for (i, row) in fam.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            if !p.is_zero() {
                lines.push_str(&format!(
                    "Q.{}.{} = {}\n",
                    i + 1,
                    j + 1,
                    toml_string(&p.to_display())
                ));
            }
        }
    }
    if lines.is_empty() {
        String::new()
    } else {
        format!("\n[{section}]\n{lines}")
    }
}

fn family3_block(section: &str, fam: &[Vec<Vec<Poly>>], upper_last_two: bool) -> String {
    let mut lines = String::new();
    for (i, m2) in fam.iter().enumerate() {
        for (j, row) in m2.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                if upper_last_two && j > k {
                    continue;
                }
                if !p.is_zero() {
                    lines.push_str(&format!(
                        "Q.{}.{}.{} = {}\n",
                        i + 1,
                        j + 1,
                        k + 1,
                        toml_string(&p.to_display())
                    ));
                }
            }
        }
    }
    if lines.is_empty() {
        String::new()
    } else {
        format!("\n[{section}]\n{lines}")
    }
}

fn family4_block(section: &str, fam: &[Vec<Vec<Vec<Poly>>>], upper_middle_two: bool) -> String {
    let mut lines = String::new();
    for (i, m3) in fam.iter().enumerate() {
        for (j, m2) in m3.iter().enumerate() {
            for (k, row) in m2.iter().enumerate() {
                if upper_middle_two && j > k {
                    continue;
                }
                for (l, p) in row.iter().enumerate() {
                    if !p.is_zero() {
                        lines.push_str(&format!(
                            "Q.{}.{}.{}.{} = {}\n",
                            i + 1,
                            j + 1,
                            k + 1,
                            l + 1,
                            toml_string(&p.to_display())
                        ));
                    }
                }
            }
        }
    }
    if lines.is_empty() {
        String::new()
    } else {
        format!("\n[{section}]\n{lines}")
    }
}

/// Render an order-2 structure as a loadable model file (`[chart]` plus
/// `[ha2]`), sparse and deterministic: entries in ascending index order,
/// zeros omitted, symmetric families upper-triangular.
pub fn ha2_model_toml(ha: &HA2) -> String {
    let mut out = chart_block(&ha.base, &[&ha.fiber1, &ha.fiber2]);
    out.push_str(&format!("\n[ha2]\nname = {}\n", toml_string(&ha.name)));
    out.push_str(&family2_block("ha2.q_a_i", &ha.q_a_i));
    out.push_str(&family3_block("ha2.q_a_ij", &ha.q_a_ij, true));
    out.push_str(&family2_block("ha2.q_a_mu", &ha.q_a_mu));
    out.push_str(&family2_block("ha2.qp_a_i", &ha.qp_a_i));
    out.push_str(&family3_block("ha2.q_k_ij", &ha.q_k_ij, false));
    out.push_str(&family2_block("ha2.q_mu_i", &ha.q_mu_i));
    out.push_str(&family3_block("ha2.q_mu_ij", &ha.q_mu_ij, false));
    out.push_str(&family3_block("ha2.q_mu_nu_i", &ha.q_mu_nu_i, false));
    out.push_str(&family4_block("ha2.q_mu_ij_k", &ha.q_mu_ij_k, true));
    out
}

/// Render an order-1 structure as a loadable model file (`[chart]` plus
/// `[algebroid]`).
pub fn algebroid_model_toml(a: &Algebroid1) -> String {
    let mut out = chart_block(&a.base, &[&a.fiber]);
    out.push_str(&format!("\n[algebroid]\nname = {}\n", toml_string(&a.name)));
    out.push_str(&family2_block("algebroid.anchor_left", &a.anchor_left));
    out.push_str(&family2_block("algebroid.anchor_right", &a.anchor_right));
    out.push_str(&family3_block("algebroid.bracket", &a.bracket, false));
    out
}

/// Write a file atomically: the contents land under a temporary sibling name
/// first and are renamed into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), ModelError> {
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Command drivers
// ---------------------------------------------------------------------------

/// A uniformly random polynomial over `chart` of total degree at most `deg`
/// with small integer coefficients (used for the randomized checks).
fn rand_poly(rng: &mut ChaCha8Rng, chart: &[Symbol], deg: u32) -> Poly {
    let mut acc = Poly::int(rng.gen_range(-3..=3));
    if chart.is_empty() {
        return acc;
    }
    for d in 1..=deg {
        let mut term = Poly::int(rng.gen_range(-3..=3));
        for _ in 0..d {
            let s = &chart[rng.gen_range(0..chart.len())];
            term = term.mul(&Poly::symbol(s));
        }
        acc = acc.add(&term);
    }
    acc
}

fn witnessed_report(check: &str, w: crate::comorphism::Witnessed) -> Report {
    Report::new(check, w.pass, w.witness)
}

fn check_algebroid(a: &Algebroid1, which: &str, seed: u64) -> Result<Report, ModelError> {
    let rep = match which {
        "skew" => witnessed_report(which, a.is_skew()),
        "al" => witnessed_report(which, a.is_almost_lie()),
        "lie" => witnessed_report(which, a.is_lie()),
        "strong" => {
            let ha = prolong2(a)?;
            let sr = is_strong(&ha, seed);
            Report::new(
                which,
                sr.strong,
                if sr.strong {
                    None
                } else {
                    Some(sr.detail.clone())
                },
            )
            .with_detail("exact", sr.symbolic)
        }
        "leibniz" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = a.rank();
            let sec1: Vec<Poly> = (0..n).map(|_| rand_poly(&mut rng, &a.base, 1)).collect();
            let sec2: Vec<Poly> = (0..n).map(|_| rand_poly(&mut rng, &a.base, 1)).collect();
            let f = rand_poly(&mut rng, &a.base, 2);
            witnessed_report(which, a.leibniz_check(&sec1, &sec2, &f)).with_detail("seed", seed)
        }
        "jacobi" => {
            let n = a.rank();
            let mut w = crate::comorphism::Witnessed::pass();
            'outer: for i in 0..n {
                for j in (i + 1)..n {
                    for k in (j + 1)..n {
                        let jac = a.jacobiator(i, j, k);
                        for (l, p) in jac.iter().enumerate() {
                            if !p.is_zero() {
                                w = crate::comorphism::Witnessed::fail(format!(
                                    "Jacobiator J(e_{}, e_{}, e_{}) has component {}: {}",
                                    i + 1,
                                    j + 1,
                                    k + 1,
                                    l + 1,
                                    p
                                ));
                                break 'outer;
                            }
                        }
                    }
                }
            }
            witnessed_report(which, w)
        }
        other => return Err(schema(format!("unknown check `{other}`"))),
    };
    Ok(rep)
}

/// Run one axiom check against the most structured section of the model:
/// `[ha2]` first, then `[algebroid]`, then `[liealgebra]`.
pub fn run_check(mf: &ModelFile, which: &str, seed: u64) -> Result<Report, ModelError> {
    let started = Instant::now();
    let mut rep = if let Some(ha) = &mf.ha2 {
        let rep = match which {
            "skew" => witnessed_report(which, is_skew2(ha)?),
            "al" => witnessed_report(which, al_check2(ha)?),
            "lie" => witnessed_report(which, lie_check2(ha)?),
            "strong" => {
                let sr = is_strong(ha, seed);
                Report::new(
                    which,
                    sr.strong,
                    if sr.strong {
                        None
                    } else {
                        Some(sr.detail.clone())
                    },
                )
                .with_detail("exact", sr.symbolic)
            }
            "leibniz" | "jacobi" => {
                let a = ha.reduce_to_order1()?;
                check_algebroid(&a, which, seed)?
            }
            other => return Err(schema(format!("unknown check `{other}`"))),
        };
        rep.with_detail("structure", "ha2")
    } else if let Some(a) = &mf.algebroid {
        check_algebroid(a, which, seed)?.with_detail("structure", "algebroid")
    } else if let Some(g) = &mf.liealgebra {
        let rep = match which {
            "skew" => witnessed_report(which, g.model.antisymmetry_check()),
            "lie" => witnessed_report(which, g.model.is_lie()),
            "jacobi" => witnessed_report(which, g.model.jacobi_check()),
            "al" | "strong" | "leibniz" => {
                let a = g.model.to_algebroid1(&g.model.name, &g.fiber)?;
                check_algebroid(&a, which, seed)?
            }
            other => return Err(schema(format!("unknown check `{other}`"))),
        };
        rep.with_detail("structure", "liealgebra")
    } else {
        return Err(ModelError::MissingSection(
            "ha2], [algebroid], or [liealgebra".into(),
        ));
    };
    rep.timing_ms = started.elapsed().as_millis();
    Ok(rep)
}

/// Prolong the `[algebroid]` section to its order-2 structure.
pub fn run_prolong(mf: &ModelFile) -> Result<HA2, ModelError> {
    Ok(prolong2(mf.require_algebroid()?)?)
}

/// Realize the `[liealgebra]` section over a point and prolong it.
pub fn run_lift(mf: &ModelFile) -> Result<HA2, ModelError> {
    let g = mf.require_liealgebra()?;
    let a = g.model.to_algebroid1(&g.model.name, &g.fiber)?;
    Ok(prolong2(&a)?)
}

/// The variational forms a model's Lagrangian can be expanded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElForm {
    /// Order-2 equations along the prolongation of the `[algebroid]`.
    Prolong2,
    /// Reduced equations over the `[liealgebra]`.
    Ep,
    /// The reduced equations rewritten as a position primitive over a
    /// vector group (uniform jet shift).
    EpPosition,
    /// Classical higher-order equations in the `[chart]` base.
    Standard,
    /// The fixed mixed-weight reduced chart example.
    Reduced,
}

impl ElForm {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "prolong2" => Ok(ElForm::Prolong2),
            "ep" => Ok(ElForm::Ep),
            "ep-position" => Ok(ElForm::EpPosition),
            "standard" => Ok(ElForm::Standard),
            "reduced" => Ok(ElForm::Reduced),
            other => Err(schema(format!(
                "unknown form `{other}` (use prolong2, ep, ep-position, standard, or reduced)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElForm::Prolong2 => "prolong2",
            ElForm::Ep => "ep",
            ElForm::EpPosition => "ep-position",
            ElForm::Standard => "standard",
            ElForm::Reduced => "reduced",
        }
    }
}

/// Build the residual system of the model's Lagrangian in the requested
/// form; `form` falls back to the `[lagrangian] form` key.
pub fn build_el(mf: &ModelFile, form: Option<ElForm>) -> Result<(ELSystem, ElForm), ModelError> {
    let lag = mf.require_lagrangian()?;
    let form = form
        .or(lag.form)
        .ok_or_else(|| schema("no form requested: pass --form or set form in [lagrangian]"))?;
    let mut weights: BTreeMap<String, u32> = BTreeMap::new();
    match form {
        ElForm::Prolong2 => {
            let a = mf.require_algebroid()?;
            for s in &a.base {
                weights.insert(s.name.clone(), 0);
            }
            for s in &a.fiber {
                weights.insert(s.name.clone(), 1);
            }
            let l = Poly::parse_jet(&lag.l, &weights)?;
            Ok((el_prolong2(a, &Lagrangian::new(l))?, form))
        }
        ElForm::Ep | ElForm::EpPosition => {
            let g = mf.require_liealgebra()?;
            for s in &g.fiber {
                weights.insert(s.name.clone(), 1);
            }
            let l = Poly::parse_jet(&lag.l, &weights)?;
            let sys = euler_poincare2(&g.model, &g.fiber, &Lagrangian::new(l))?;
            if form == ElForm::EpPosition {
                Ok((vector_group_position_form(&sys), form))
            } else {
                Ok((sys, form))
            }
        }
        ElForm::Standard => {
            let chart = mf.require_chart()?;
            if !chart.fiber1.is_empty() || !chart.fiber2.is_empty() {
                return Err(schema(
                    "the standard form works in the base chart alone; remove fiber entries",
                ));
            }
            for s in &chart.base {
                weights.insert(s.name.clone(), 0);
            }
            let l = Poly::parse_jet(&lag.l, &weights)?;
            Ok((standard_el2(&chart.base, &Lagrangian::new(l))?, form))
        }
        ElForm::Reduced => {
            weights.insert("y1".to_string(), 1);
            weights.insert("x2".to_string(), 2);
            weights.insert("y2".to_string(), 2);
            let l = Poly::parse_jet(&lag.l, &weights)?;
            Ok((reduced_example_el(&Lagrangian::new(l))?, form))
        }
    }
}

/// Integrate the model's residual system and render the trajectory as CSV.
/// The report carries the maximum interior residual and, per `[curves]`
/// conserved entry, the largest deviation from its initial value.
pub fn integrate_model(
    mf: &ModelFile,
    form: Option<ElForm>,
    h: f64,
    t_end: f64,
) -> Result<(String, Report), ModelError> {
    let started = Instant::now();
    let (sys, form) = build_el(mf, form)?;
    let curves = mf.require_curves()?;
    let init = curves
        .initial
        .as_ref()
        .ok_or_else(|| schema("missing initial data: [curves] must provide initial = [...]"))?;
    let slots = state_symbols(&sys)?;
    let traj = integrate_rk4(&sys, init, h, t_end)?;
    let mut conserved: Vec<(String, Poly)> = Vec::new();
    for (name, text) in &curves.conserved {
        conserved.push((name.clone(), Poly::parse(text, &slots)?));
    }
    let csv = trajectory_table(&sys, &traj, &conserved)?;
    let max_resid = residual_monitor(&sys, &traj)?;
    let mut rep = Report::new("integrate", true, None)
        .with_detail("form", form.name())
        .with_detail("h", format!("{h:e}"))
        .with_detail("T", format!("{t_end:e}"))
        .with_detail("points", traj.states.len())
        .with_detail("max_residual", format!("{max_resid:.3e}"));
    for (name, q) in &conserved {
        let dev = conservation_check(q, &sys, &traj)?;
        rep = rep.with_detail(&format!("deviation_{name}"), format!("{dev:.3e}"));
    }
    rep.timing_ms = started.elapsed().as_millis();
    Ok((csv, rep))
}

/// Parse numeric tuple lists of the form `"1,0,0;0,1/2,0"`: tuples separated
/// by semicolons, rational components by commas.
pub fn parse_tuples(spec: &str) -> Result<Vec<Vec<Rat>>, ModelError> {
    spec.split(';')
        .map(|tuple| {
            tuple
                .split(',')
                .map(|c| {
                    c.trim().parse::<Rat>().map_err(|_| {
                        schema(format!("cannot read {:?} as a rational `p/q`", c.trim()))
                    })
                })
                .collect()
        })
        .collect()
}

/// Evaluate the canonical flip of the model's Lie algebra on rational
/// tuples.  `k` falls back to the `[liealgebra] order` key.
pub fn run_kappa_eval(
    mf: &ModelFile,
    k: Option<usize>,
    ybar: &str,
    x: &str,
) -> Result<Vec<Vec<Rat>>, ModelError> {
    let g = mf.require_liealgebra()?;
    let k = k.unwrap_or(g.order);
    let ybar = parse_tuples(ybar)?;
    let x = parse_tuples(x)?;
    Ok(kappa_g_eval(&g.model, k, &ybar, &x)?)
}

/// Render kappa-eval output lines: one `ydot<l> = (...)` per level.
pub fn kappa_eval_lines(out: &[Vec<Rat>]) -> String {
    let mut s = String::new();
    for (l, tuple) in out.iter().enumerate() {
        s.push_str(&format!(
            "ydot{} = ({})\n",
            l + 1,
            tuple
                .iter()
                .map(rat_to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    s
}

/// Decide whether the model's graded subspace family is a subalgebroid of
/// the order-`k` structure of its Lie algebra, cross-checking the direct
/// bracket criterion against the comorphism restriction.
pub fn run_subalg(mf: &ModelFile) -> Result<Report, ModelError> {
    let started = Instant::now();
    let g = mf.require_liealgebra()?;
    let v =
        g.v.as_ref()
            .ok_or_else(|| schema("missing subspace data: [liealgebra] must provide v = [...]"))?;
    if v.order() != g.order {
        return Err(schema(format!(
            "[liealgebra] order is {} but v provides {} levels",
            g.order,
            v.order()
        )));
    }
    let direct = subalgebroid_test(&g.model, g.order, v)?;
    let restricted = subalgebroid_restriction(&g.model, g.order, v)?;
    let (restr_pass, restr_witness) = match &restricted {
        Restriction::Restricted(_) => (true, None),
        Restriction::Fails { witness } => (false, Some(witness.clone())),
    };
    let mut rep = if direct.pass != restr_pass {
        Report::new(
            "subalg",
            false,
            Some(format!(
                "the bracket criterion says {} but the restriction says {}",
                if direct.pass { "yes" } else { "no" },
                if restr_pass { "yes" } else { "no" }
            )),
        )
    } else {
        Report::new("subalg", direct.pass, direct.witness.or(restr_witness))
    };
    rep = rep
        .with_detail("order", g.order)
        .with_detail(
            "restriction",
            if restr_pass { "restricted" } else { "fails" },
        )
        .with_detail("agreement", direct.pass == restr_pass);
    rep.timing_ms = started.elapsed().as_millis();
    Ok(rep)
}
