//! Pure integer linear program for the hard assignment problem.
//!
//! With binary `e`, the product `e[i1][j] e[i2][j]` equals the gate
//! `z = max(e[i1][j] + e[i2][j] - 1, 0)`, which is enforced by four linear rows
//! per (pair, channel) triple and an auxiliary binary `y`:
//!
//! ```text
//! e1 + e2 - z <= 1      z >= 0      z + y <= e1 + e2      z - y <= 0
//! ```
//!
//! The objective becomes `(1/L) sum A[i1][i2] z[i1][i2][j]`. The model has
//! `N L` binaries `e`, `L N(N-1)/2` continuous `z` in `[0, 1]` and as many
//! binaries `y`, i.e. `L N^2` variables. [`Encoding::Reduced`] drops `y` and
//! its two rows; for a minimization with `A >= 0` the remaining rows already
//! pin `z` at the optimum.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, JointActivationMatrix};

/// Feasibility tolerance used by [`evaluate_pilp_point`].
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

/// `sum(coef * var) <sense> rhs`; terms reference variables by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Encoding {
    /// All four gate rows with the auxiliary binaries `y`.
    #[default]
    Full,
    /// Only `e1 + e2 - z <= 1` and `z >= 0`; no `y`.
    Reduced,
}

/// Solver-agnostic minimization model.
#[derive(Debug, Clone, PartialEq)]
pub struct PilpModel {
    pub n_devices: usize,
    pub n_channels: usize,
    pub encoding: Encoding,
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Vec<(usize, f64)>,
}

fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Lexicographic position of the pair `(i1, i2)`, `i1 < i2`.
fn pair_index(n: usize, i1: usize, i2: usize) -> usize {
    i1 * n - i1 * (i1 + 1) / 2 + (i2 - i1 - 1)
}

impl PilpModel {
    pub fn e_index(&self, device: usize, channel: usize) -> usize {
        device * self.n_channels + channel
    }

    pub fn z_index(&self, i1: usize, i2: usize, channel: usize) -> usize {
        self.n_devices * self.n_channels + pair_index(self.n_devices, i1, i2) * self.n_channels + channel
    }

    /// Index of `y`, absent in the reduced encoding.
    pub fn y_index(&self, i1: usize, i2: usize, channel: usize) -> Option<usize> {
        (self.encoding == Encoding::Full).then(|| {
            let block = pair_count(self.n_devices) * self.n_channels;
            self.z_index(i1, i2, channel) + block
        })
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Number of rows generated per (pair, channel) triple.
    pub fn rows_per_gate(&self) -> usize {
        match self.encoding {
            Encoding::Full => 4,
            Encoding::Reduced => 2,
        }
    }
}

pub fn build_pilp(a: &JointActivationMatrix, n_channels: usize) -> Result<PilpModel> {
    build_pilp_with(a, n_channels, Encoding::Full)
}

pub fn build_pilp_with(a: &JointActivationMatrix, n_channels: usize, encoding: Encoding) -> Result<PilpModel> {
    if n_channels == 0 {
        return Err(Error::InvalidParameter("n_channels must be at least 1".into()));
    }
    let n = a.dim();
    let l = n_channels;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i1| (i1 + 1..n).map(move |i2| (i1, i2))).collect();

    let mut variables = Vec::new();
    for i in 0..n {
        for j in 0..l {
            variables.push(Variable { name: format!("e_{i}_{j}"), kind: VarKind::Binary, lower: 0.0, upper: 1.0 });
        }
    }
    for &(i1, i2) in &pairs {
        for j in 0..l {
            variables.push(Variable {
                name: format!("z_{i1}_{i2}_{j}"),
                kind: VarKind::Continuous,
                lower: 0.0,
                upper: 1.0,
            });
        }
    }
    if encoding == Encoding::Full {
        for &(i1, i2) in &pairs {
            for j in 0..l {
                variables.push(Variable {
                    name: format!("y_{i1}_{i2}_{j}"),
                    kind: VarKind::Binary,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
    }

    let mut model = PilpModel {
        n_devices: n,
        n_channels: l,
        encoding,
        variables,
        constraints: Vec::new(),
        objective: Vec::new(),
    };

    for i in 0..n {
        model.constraints.push(LinearConstraint {
            name: format!("assign_{i}"),
            terms: (0..l).map(|j| (model.e_index(i, j), 1.0)).collect(),
            sense: Sense::Eq,
            rhs: 1.0,
        });
    }
    for &(i1, i2) in &pairs {
        for j in 0..l {
            let (e1, e2, z) = (model.e_index(i1, j), model.e_index(i2, j), model.z_index(i1, i2, j));
            let tag = format!("{i1}_{i2}_{j}");
            model.constraints.push(LinearConstraint {
                name: format!("gate1_{tag}"),
                terms: vec![(e1, 1.0), (e2, 1.0), (z, -1.0)],
                sense: Sense::Le,
                rhs: 1.0,
            });
            model.constraints.push(LinearConstraint {
                name: format!("gate2_{tag}"),
                terms: vec![(z, 1.0)],
                sense: Sense::Ge,
                rhs: 0.0,
            });
            if let Some(y) = model.y_index(i1, i2, j) {
                model.constraints.push(LinearConstraint {
                    name: format!("gate3_{tag}"),
                    terms: vec![(z, 1.0), (y, 1.0), (e1, -1.0), (e2, -1.0)],
                    sense: Sense::Le,
                    rhs: 0.0,
                });
                model.constraints.push(LinearConstraint {
                    name: format!("gate4_{tag}"),
                    terms: vec![(z, 1.0), (y, -1.0)],
                    sense: Sense::Le,
                    rhs: 0.0,
                });
            }
        }
    }
    let scale = 1.0 / l as f64;
    model.objective = pairs
        .iter()
        .flat_map(|&(i1, i2)| (0..l).map(move |j| (i1, i2, j)))
        .map(|(i1, i2, j)| (model.z_index(i1, i2, j), a.get(i1, i2) * scale))
        .collect();
    Ok(model)
}

/// The unique `z` admitted by the full gate rows for binary inputs.
///
/// For each `y` in `{0, 1}` the rows cut `z` down to an interval; the union
/// over feasible `y` must collapse to a single value. Returns that value.
pub fn verify_gate(e1: bool, e2: bool) -> Result<f64> {
    let s = f64::from(u8::from(e1)) + f64::from(u8::from(e2));
    let mut forced: Option<f64> = None;
    for y in [0.0, 1.0] {
        let lo = (s - 1.0).max(0.0);
        let hi = (s - y).min(y).min(1.0);
        if lo > hi {
            continue;
        }
        if lo != hi || forced.is_some_and(|z| z != lo) {
            return Err(Error::InvalidParameter(format!("gate does not force z for inputs ({e1}, {e2})")));
        }
        forced = Some(lo);
    }
    forced.ok_or_else(|| Error::InvalidParameter(format!("gate is infeasible for inputs ({e1}, {e2})")))
}

/// Feasibility verdict and objective value of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEvaluation {
    pub feasible: bool,
    pub objective: f64,
    /// First violated bound, integrality rule, or row, when infeasible.
    pub violation: Option<String>,
}

pub fn evaluate_pilp_point(model: &PilpModel, point: &HashMap<String, f64>) -> Result<PointEvaluation> {
    let values = model
        .variables
        .iter()
        .map(|v| point.get(&v.name).copied().ok_or_else(|| Error::MissingVariable(v.name.clone())))
        .collect::<Result<Vec<f64>>>()?;
    let objective = model.objective.iter().map(|&(k, c)| c * values[k]).sum();
    let tol = FEASIBILITY_TOLERANCE;
    let mut violation = None;
    for (v, &x) in model.variables.iter().zip(&values) {
        if x < v.lower - tol || x > v.upper + tol {
            violation = Some(format!("{} = {x} outside [{}, {}]", v.name, v.lower, v.upper));
        } else if v.kind == VarKind::Binary && (x - x.round()).abs() > tol {
            violation = Some(format!("{} = {x} is not integral", v.name));
        }
        if violation.is_some() {
            break;
        }
    }
    if violation.is_none() {
        for c in &model.constraints {
            let lhs: f64 = c.terms.iter().map(|&(k, coef)| coef * values[k]).sum();
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + tol,
                Sense::Ge => lhs >= c.rhs - tol,
                Sense::Eq => (lhs - c.rhs).abs() <= tol,
            };
            if !ok {
                violation = Some(format!("{}: lhs {lhs} {} {}", c.name, c.sense.symbol(), c.rhs));
                break;
            }
        }
    }
    Ok(PointEvaluation { feasible: violation.is_none(), objective, violation })
}

/// Point for a hard assignment with `z` and `y` set to the gate values.
pub fn gate_completion(model: &PilpModel, assignment: &Assignment) -> Result<HashMap<String, f64>> {
    if assignment.len() != model.n_devices {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} devices, model has {}",
            assignment.len(),
            model.n_devices
        )));
    }
    assignment.check_channels(model.n_channels)?;
    let mut point = HashMap::with_capacity(model.variables.len());
    for i in 0..model.n_devices {
        for j in 0..model.n_channels {
            point.insert(format!("e_{i}_{j}"), if assignment.channel(i) == j { 1.0 } else { 0.0 });
        }
    }
    for i1 in 0..model.n_devices {
        for i2 in i1 + 1..model.n_devices {
            for j in 0..model.n_channels {
                let both = assignment.channel(i1) == j && assignment.channel(i2) == j;
                let z = if both { 1.0 } else { 0.0 };
                point.insert(format!("z_{i1}_{i2}_{j}"), z);
                if model.encoding == Encoding::Full {
                    point.insert(format!("y_{i1}_{i2}_{j}"), z);
                }
            }
        }
    }
    Ok(point)
}

fn write_expression(out: &mut String, model: &PilpModel, terms: &[(usize, f64)], per_line: usize) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (n, &(k, coef)) in terms.iter().enumerate() {
        if n > 0 && n % per_line == 0 {
            out.push_str("\n  ");
        }
        let name = &model.variables[k].name;
        let sign = if coef.is_sign_negative() { "-" } else { "+" };
        let magnitude = coef.abs();
        if n == 0 && sign == "+" {
            out.push(' ');
        } else {
            let _ = write!(out, " {sign} ");
        }
        if magnitude == 1.0 {
            out.push_str(name);
        } else {
            let _ = write!(out, "{magnitude:?} {name}");
        }
    }
}

/// LP-format text (Minimize / Subject To / Bounds / Binaries / End).
pub fn export_lp(model: &PilpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ channel assignment PILP: {} devices, {} channels, {} variables",
        model.n_devices,
        model.n_channels,
        model.variables.len()
    );
    out.push_str("Minimize\n obj:");
    write_expression(&mut out, model, &model.objective, 4);
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        write_expression(&mut out, model, &c.terms, 8);
        let _ = writeln!(out, " {} {:?}", c.sense.symbol(), c.rhs);
    }
    out.push_str("Bounds\n");
    for v in model.variables.iter().filter(|v| v.kind == VarKind::Continuous) {
        let _ = writeln!(out, " {:?} <= {} <= {:?}", v.lower, v.name, v.upper);
    }
    out.push_str("Binaries\n");
    let binaries: Vec<&str> = model.variables.iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
    for chunk in binaries.chunks(10) {
        let _ = writeln!(out, " {}", chunk.join(" "));
    }
    out.push_str("End\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum VarKey {
    E(usize, usize),
    Z(usize, usize, usize),
    Y(usize, usize, usize),
}

fn parse_var_name(name: &str) -> Option<VarKey> {
    let mut parts = name.split('_');
    let prefix = parts.next()?;
    let nums = parts.map(|p| p.parse::<usize>().ok()).collect::<Option<Vec<_>>>()?;
    match (prefix, nums.as_slice()) {
        ("e", &[i, j]) => Some(VarKey::E(i, j)),
        ("z", &[a, b, j]) if a < b => Some(VarKey::Z(a, b, j)),
        ("y", &[a, b, j]) if a < b => Some(VarKey::Y(a, b, j)),
        _ => None,
    }
}

/// Parsed linear expression as `(variable name, coefficient)` pairs.
fn parse_expression(text: &str, line: usize) -> Result<Vec<(String, f64)>> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in text.split_whitespace() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Ok(v) = tok.parse::<f64>() {
                    coef = Some(v);
                } else {
                    terms.push((tok.to_string(), sign * coef.unwrap_or(1.0)));
                    sign = 1.0;
                    coef = None;
                }
            }
        }
    }
    if coef.is_some_and(|c| c != 0.0) {
        return Err(Error::parse(format!("line {line}"), "constant term in expression"));
    }
    Ok(terms)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

/// Reads back text produced by [`export_lp`].
///
/// Only this crate's own dialect is supported: variables must be named
/// `e_i_j`, `z_i1_i2_j` or `y_i1_i2_j`, and each constraint sits on its own
/// logical line. The variable order is rebuilt from the names, so the result
/// compares equal to the exported model.
pub fn parse_lp(text: &str) -> Result<PilpModel> {
    let mut section = Section::Preamble;
    let mut objective_text = String::new();
    let mut rows: Vec<(usize, String)> = Vec::new();
    let mut bounds: HashMap<String, (f64, f64)> = HashMap::new();
    let mut binaries: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        let next = match line.to_ascii_lowercase().as_str() {
            "minimize" => Some(Section::Objective),
            "subject to" => Some(Section::Constraints),
            "bounds" => Some(Section::Bounds),
            "binaries" => Some(Section::Binaries),
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(s) = next {
            section = s;
            continue;
        }
        match section {
            Section::Preamble | Section::End => {
                return Err(Error::parse(format!("line {lineno}"), "content outside of a section"));
            }
            Section::Objective => {
                let body = line.strip_prefix("obj:").unwrap_or(line);
                objective_text.push(' ');
                objective_text.push_str(body);
            }
            Section::Constraints => {
                if line.contains(':') {
                    rows.push((lineno, line.to_string()));
                } else if let Some(last) = rows.last_mut() {
                    last.1.push(' ');
                    last.1.push_str(line);
                } else {
                    return Err(Error::parse(format!("line {lineno}"), "constraint without a name"));
                }
            }
            Section::Bounds => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                match toks.as_slice() {
                    [lo, "<=", name, "<=", hi] => {
                        let lo = lo.parse::<f64>().map_err(|e| Error::parse(format!("line {lineno}"), e))?;
                        let hi = hi.parse::<f64>().map_err(|e| Error::parse(format!("line {lineno}"), e))?;
                        bounds.insert(name.to_string(), (lo, hi));
                    }
                    _ => return Err(Error::parse(format!("line {lineno}"), format!("unsupported bound `{line}`"))),
                }
            }
            Section::Binaries => binaries.extend(line.split_whitespace().map(str::to_string)),
        }
    }
    if section != Section::End {
        return Err(Error::parse("end of input", "missing `End`"));
    }

    struct ParsedRow {
        name: String,
        terms: Vec<(String, f64)>,
        sense: Sense,
        rhs: f64,
    }
    let mut parsed_rows = Vec::with_capacity(rows.len());
    for (lineno, row) in &rows {
        let loc = || format!("line {lineno}");
        let (name, body) = row.split_once(':').ok_or_else(|| Error::parse(loc(), "missing constraint name"))?;
        let (sense, op) = [(Sense::Le, "<="), (Sense::Ge, ">="), (Sense::Eq, "=")]
            .into_iter()
            .find(|(_, op)| body.contains(op))
            .ok_or_else(|| Error::parse(loc(), "missing relational operator"))?;
        let (lhs, rhs) = body.split_once(op).expect("operator present");
        let rhs = rhs.trim().parse::<f64>().map_err(|e| Error::parse(loc(), format!("bad right-hand side: {e}")))?;
        parsed_rows.push(ParsedRow { name: name.trim().to_string(), terms: parse_expression(lhs, *lineno)?, sense, rhs });
    }
    let objective_terms = parse_expression(&objective_text, 0)?;

    let mut names: Vec<String> = binaries.clone();
    names.extend(bounds.keys().cloned());
    names.extend(objective_terms.iter().map(|(n, _)| n.clone()));
    names.extend(parsed_rows.iter().flat_map(|r| r.terms.iter().map(|(n, _)| n.clone())));
    let mut keyed = names
        .into_iter()
        .map(|name| {
            parse_var_name(&name)
                .map(|key| (key, name.clone()))
                .ok_or_else(|| Error::parse(format!("variable `{name}`"), "name outside the e/z/y scheme"))
        })
        .collect::<Result<Vec<_>>>()?;
    keyed.sort();
    keyed.dedup();

    let mut n_devices = 0;
    let mut n_channels = 0;
    let mut has_y = false;
    for (key, _) in &keyed {
        match *key {
            VarKey::E(i, j) => {
                n_devices = n_devices.max(i + 1);
                n_channels = n_channels.max(j + 1);
            }
            VarKey::Z(_, b, j) | VarKey::Y(_, b, j) => {
                has_y |= matches!(key, VarKey::Y(..));
                n_devices = n_devices.max(b + 1);
                n_channels = n_channels.max(j + 1);
            }
        }
    }
    let binary_set: std::collections::HashSet<&str> = binaries.iter().map(String::as_str).collect();
    let variables: Vec<Variable> = keyed
        .iter()
        .map(|(_, name)| {
            if binary_set.contains(name.as_str()) {
                Variable { name: name.clone(), kind: VarKind::Binary, lower: 0.0, upper: 1.0 }
            } else {
                let (lower, upper) = bounds.get(name).copied().unwrap_or((0.0, f64::INFINITY));
                Variable { name: name.clone(), kind: VarKind::Continuous, lower, upper }
            }
        })
        .collect();
    let index: HashMap<&str, usize> = variables.iter().enumerate().map(|(k, v)| (v.name.as_str(), k)).collect();
    let resolve = |terms: &[(String, f64)]| terms.iter().map(|(n, c)| (index[n.as_str()], *c)).collect::<Vec<_>>();

    Ok(PilpModel {
        n_devices,
        n_channels,
        encoding: if has_y { Encoding::Full } else { Encoding::Reduced },
        objective: resolve(&objective_terms),
        constraints: parsed_rows
            .iter()
            .map(|r| LinearConstraint { name: r.name.clone(), terms: resolve(&r.terms), sense: r.sense, rhs: r.rhs })
            .collect(),
        variables,
    })
}
