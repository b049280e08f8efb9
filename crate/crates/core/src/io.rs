//! File formats: problem and controller files (TOML with a format/version
//! header), dense real matrices in plain text, and the QP triplet export.

use std::fmt::Write as _;

use gss_qp::SolverStatus;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::binalg::{bool_mul, BinMatrix};
use crate::error::{CoreError, Result};
use crate::gss::{gss_parametrize, ymax, GssSpec};
use crate::platoon::PlatoonConfig;
use crate::robust::{Certification, CostSpec, DisturbanceSet, QpProblem, SynthesisResult};
use crate::rollout::fmt_num;
use crate::stacked::{
    stack_info_structure, ConstraintSet, InfoStructure, StackedSystem, SystemModel,
};

pub const PROBLEM_FORMAT: &str = "gss-problem";
pub const CONTROLLER_FORMAT: &str = "gss-controller";
pub const FORMAT_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    format: String,
    version: u32,
    horizon: usize,
    x0: Vec<f64>,
    system: SystemSection,
    #[serde(default)]
    constraints: Option<ConstraintSection>,
    #[serde(default)]
    information: Option<InformationSection>,
    disturbance: DisturbanceSection,
    #[serde(default)]
    cost: Option<CostSection>,
    #[serde(default)]
    synthesis: Option<SynthesisSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    a: Rows,
    b: Rows,
    c: Rows,
    /// Defaults to the identity.
    d: Option<Rows>,
    /// Defaults to zero.
    h: Option<Rows>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConstraintSection {
    u: Rows,
    v: Rows,
    b: Vec<f64>,
    r: Rows,
    z: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InformationSection {
    /// Same `m x p` block for every `j <= k`.
    block: Option<Vec<Vec<u8>>>,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    k: usize,
    j: usize,
    pattern: Vec<Vec<u8>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
enum DisturbanceSection {
    Box { half_width: Vec<f64> },
    Polytope { m: Rows, h: Vec<f64> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CostSection {
    state_weight: Option<Vec<f64>>,
    terminal_state_weight: Option<Vec<f64>>,
    input_weight: Option<Vec<f64>>,
    state_ref: Option<Vec<f64>>,
    state_weights: Option<Rows>,
    input_weights: Option<Rows>,
    state_refs: Option<Rows>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthesisSection {
    /// Uniform block for `T`; defaults to the information structure.
    t_block: Option<Vec<Vec<u8>>>,
    /// `"ymax"` (default) or `"t-delta"`.
    y_rule: Option<String>,
    /// `"required"` (default) or `"override"`.
    certification: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YRule {
    Ymax,
    TDelta,
}

/// A parsed problem file.
#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: SystemModel,
    pub cons: ConstraintSet,
    pub info: InfoStructure,
    pub dist: DisturbanceSet,
    pub cost: CostSpec,
    pub x0: DVector<f64>,
    pub t_block: Option<BinMatrix>,
    pub y_rule: YRule,
    pub certification: Certification,
}

impl Problem {
    pub fn horizon(&self) -> usize {
        self.info.horizon
    }

    pub fn stacked(&self) -> Result<StackedSystem> {
        StackedSystem::new(&self.sys, &self.cons, &self.info, &self.x0)
    }

    /// Stacked `T` of the synthesis section, or `Sbold`.
    pub fn t_pattern(&self, ss: &StackedSystem) -> Result<BinMatrix> {
        match &self.t_block {
            Some(block) => {
                stack_info_structure(&InfoStructure::uniform(self.horizon(), block), ss.m, ss.p)
            }
            None => Ok(ss.sbold.clone()),
        }
    }

    pub fn spec(&self, ss: &StackedSystem) -> Result<GssSpec> {
        let t = self.t_pattern(ss)?;
        let y = match self.y_rule {
            YRule::Ymax => ymax(&t),
            YRule::TDelta => bool_mul(&t, &ss.delta)?,
        };
        gss_parametrize(&t, &y, &ss.cb)
    }
}

fn toml_error(text: &str, err: toml::de::Error) -> CoreError {
    let line = err.span().map_or(0, |s| {
        text[..s.start.min(text.len())].matches('\n').count() + 1
    });
    CoreError::Parse {
        line,
        msg: err.message().to_string(),
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CoreError {
    CoreError::Invalid(format!("field `{name}`: {msg}"))
}

fn matrix(name: &str, rows: &Rows, cols_if_empty: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols_if_empty));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(field(
            name,
            format!("row {bad} has {} entries, expected {cols}", rows[bad].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field(name, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn pattern(name: &str, rows: &[Vec<u8>]) -> Result<BinMatrix> {
    BinMatrix::from_rows(rows).map_err(|e| field(name, e))
}

fn expand(
    name: &str,
    given: &Option<Rows>,
    single: &Option<Vec<f64>>,
    count: usize,
    len: usize,
) -> Result<Vec<DVector<f64>>> {
    let out: Vec<DVector<f64>> = match (given, single) {
        (Some(rows), _) => rows.iter().map(|r| DVector::from_column_slice(r)).collect(),
        (None, Some(v)) => vec![DVector::from_column_slice(v); count],
        (None, None) => vec![DVector::zeros(len); count],
    };
    if out.len() != count {
        return Err(field(
            name,
            format!("expected {count} stages, found {}", out.len()),
        ));
    }
    if out.iter().any(|v| v.len() != len) {
        return Err(field(name, format!("every stage needs {len} entries")));
    }
    Ok(out)
}

pub fn parse_problem(text: &str) -> Result<Problem> {
    let file: ProblemFile = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    if file.format != PROBLEM_FORMAT {
        return Err(field(
            "format",
            format!("expected \"{PROBLEM_FORMAT}\", found \"{}\"", file.format),
        ));
    }
    if file.version != FORMAT_VERSION {
        return Err(field(
            "version",
            format!("unsupported version {}", file.version),
        ));
    }
    let horizon = file.horizon;
    if horizon < 1 {
        return Err(field("horizon", "must be at least 1"));
    }
    let s = &file.system;
    let a = matrix("system.a", &s.a, 0)?;
    let n = a.nrows();
    let b = matrix("system.b", &s.b, 0)?;
    let c = matrix("system.c", &s.c, n)?;
    let d = match &s.d {
        Some(d) => matrix("system.d", d, n)?,
        None => DMatrix::identity(n, n),
    };
    let h = match &s.h {
        Some(h) => matrix("system.h", h, n)?,
        None => DMatrix::zeros(c.nrows(), n),
    };
    let sys = SystemModel::new(a, b, c, d, h)?;
    let (m, p) = (sys.m(), sys.p());

    let cons = match &file.constraints {
        None => ConstraintSet::empty(n, m),
        Some(cs) => ConstraintSet {
            u: matrix("constraints.u", &cs.u, n)?,
            v: matrix("constraints.v", &cs.v, m)?,
            b: DVector::from_column_slice(&cs.b),
            r: matrix("constraints.r", &cs.r, n)?,
            z: DVector::from_column_slice(&cs.z),
        },
    };
    cons.validate(n, m)?;

    let mut info = InfoStructure::new(horizon);
    if let Some(sec) = &file.information {
        if let Some(block) = &sec.block {
            info = InfoStructure::uniform(horizon, &pattern("information.block", block)?);
        }
        for entry in &sec.blocks {
            info.set(
                entry.k,
                entry.j,
                pattern("information.blocks.pattern", &entry.pattern)?,
            );
        }
    }
    stack_info_structure(&info, m, p).map_err(|e| field("information", e))?;

    let dist = match file.disturbance {
        DisturbanceSection::Box { half_width } => DisturbanceSet::Box {
            half_width: DVector::from_vec(half_width),
        },
        DisturbanceSection::Polytope { m: pm, h } => DisturbanceSet::Polytope {
            m: matrix("disturbance.m", &pm, n)?,
            h: DVector::from_vec(h),
        },
    };
    dist.validate(n)?;

    let cs = file.cost.unwrap_or_default();
    let mut state_weights = expand(
        "cost.state_weights",
        &cs.state_weights,
        &cs.state_weight,
        horizon + 1,
        n,
    )?;
    if cs.state_weights.is_none() {
        if let Some(term) = &cs.terminal_state_weight {
            if term.len() != n {
                return Err(field(
                    "cost.terminal_state_weight",
                    format!("needs {n} entries"),
                ));
            }
            state_weights[horizon] = DVector::from_column_slice(term);
        }
    }
    let cost = CostSpec {
        state_weights,
        input_weights: expand(
            "cost.input_weights",
            &cs.input_weights,
            &cs.input_weight,
            horizon,
            m,
        )?,
        state_refs: expand(
            "cost.state_refs",
            &cs.state_refs,
            &cs.state_ref,
            horizon + 1,
            n,
        )?,
    };
    cost.validate(n, m, horizon)?;

    if file.x0.len() != n {
        return Err(field(
            "x0",
            format!("needs {n} entries, found {}", file.x0.len()),
        ));
    }
    let syn = file.synthesis.unwrap_or_default();
    let t_block = syn
        .t_block
        .as_ref()
        .map(|b| pattern("synthesis.t_block", b))
        .transpose()?;
    if let Some(t) = &t_block {
        if t.rows() != m || t.cols() != p {
            return Err(field("synthesis.t_block", format!("must be {m}x{p}")));
        }
    }
    let y_rule = match syn.y_rule.as_deref() {
        None | Some("ymax") => YRule::Ymax,
        Some("t-delta") => YRule::TDelta,
        Some(other) => {
            return Err(field(
                "synthesis.y_rule",
                format!("unknown rule \"{other}\""),
            ))
        }
    };
    let certification = match syn.certification.as_deref() {
        None | Some("required") => Certification::Required,
        Some("override") => Certification::Override,
        Some(other) => {
            return Err(field(
                "synthesis.certification",
                format!("unknown value \"{other}\""),
            ))
        }
    };
    Ok(Problem {
        sys,
        cons,
        info,
        dist,
        cost,
        x0: DVector::from_vec(file.x0),
        t_block,
        y_rule,
        certification,
    })
}

/// Platoon benchmark overrides; every key is optional.
pub fn parse_platoon_config(text: &str) -> Result<PlatoonConfig> {
    let cfg: PlatoonConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Dense real matrix: `rows cols` header, then one row per line. `#` starts
/// a comment.
pub fn parse_real_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, header) = lines.next().ok_or(CoreError::Parse {
        line: 1,
        msg: "missing `rows cols` header".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CoreError::Parse {
            line,
            msg: format!("bad header: {e}"),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(CoreError::Parse {
            line,
            msg: "header must be `rows cols`".into(),
        });
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut read = 0;
    for (line, text) in lines {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Parse {
                line,
                msg: format!("{e}"),
            })?;
        if values.len() != cols || read == rows {
            return Err(CoreError::Parse {
                line,
                msg: format!("expected {rows} rows of {cols} entries"),
            });
        }
        data.extend(values);
        read += 1;
    }
    if read != rows {
        return Err(CoreError::Parse {
            line: text.lines().count(),
            msg: format!("expected {rows} rows, found {read}"),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_real_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| fmt_num(*v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Synthesized controller in both parametrizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub status: String,
    pub objective: f64,
    pub l: Rows,
    pub g: Vec<f64>,
    pub q: Rows,
    pub v: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ControllerFile {
    pub fn from_result(ss: &StackedSystem, r: &SynthesisResult) -> Self {
        Self {
            format: CONTROLLER_FORMAT.into(),
            version: FORMAT_VERSION,
            n: ss.n,
            m: ss.m,
            p: ss.p,
            horizon: ss.horizon,
            status: r.status.to_string(),
            objective: r.objective,
            l: to_rows(&r.l),
            g: r.g.iter().copied().collect(),
            q: to_rows(&r.q),
            v: r.v.iter().copied().collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("controller serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ControllerFile = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        if file.format != CONTROLLER_FORMAT {
            return Err(field("format", format!("expected \"{CONTROLLER_FORMAT}\"")));
        }
        if file.version != FORMAT_VERSION {
            return Err(field(
                "version",
                format!("unsupported version {}", file.version),
            ));
        }
        let (rows, cols) = (file.m * (file.horizon + 1), file.p * (file.horizon + 1));
        let l = file.l_matrix()?;
        let q = file.q_matrix()?;
        if l.shape() != (rows, cols) || q.shape() != (rows, cols) {
            return Err(field("l", format!("L and Q must be {rows}x{cols}")));
        }
        if file.g.len() != rows || file.v.len() != rows {
            return Err(field("g", format!("g and v need {rows} entries")));
        }
        Ok(file)
    }

    pub fn l_matrix(&self) -> Result<DMatrix<f64>> {
        matrix("l", &self.l, self.p * (self.horizon + 1))
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        matrix("q", &self.q, self.p * (self.horizon + 1))
    }

    pub fn g_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.g)
    }
}

/// Plain-text triplet dump of an assembled program. Indices are zero-based;
/// the Hessian block lists its upper triangle.
pub fn export_qp(problem: &QpProblem) -> String {
    let qp = &problem.qp;
    let l = &problem.layout;
    let mut s = String::from("# gss-qp-export v1\n");
    let _ = writeln!(
        s,
        "# minimize 0.5 x'Px + q'x + constant s.t. Aeq x = beq, Ain x <= bin"
    );
    let _ = writeln!(
        s,
        "vars {} eq {} ineq {}",
        qp.num_vars(),
        qp.num_eq(),
        qp.num_ineq()
    );
    let _ = writeln!(
        s,
        "layout q_params {} v {} aux {}",
        l.num_params, l.num_inputs, l.num_aux
    );
    let _ = writeln!(s, "constant {}", fmt_num(problem.constant));
    let mut block = |name: &str, m: &gss_qp::SparseMatrix| {
        let _ = writeln!(s, "{name} {}", m.nnz());
        for (i, j, v) in m.triplets() {
            let _ = writeln!(s, "{i} {j} {}", fmt_num(v));
        }
    };
    block("P", &qp.hessian);
    block("Aeq", &qp.eq_matrix);
    block("Ain", &qp.ineq_matrix);
    let mut vector = |name: &str, v: &[f64]| {
        let _ = writeln!(s, "{name} {}", v.len());
        for x in v {
            let _ = writeln!(s, "{}", fmt_num(*x));
        }
    };
    vector("q", &qp.linear);
    vector("beq", &qp.eq_rhs);
    vector("bin", &qp.ineq_rhs);
    s
}

pub fn status_is_success(status: SolverStatus) -> bool {
    status == SolverStatus::Optimal
}
