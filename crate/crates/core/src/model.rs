//! Problem data for multistage adaptive robust LPs and its JSON form.
//!
//! Stage `t` (0-based here, 1-based in files' prose) reads
//!
//! ```text
//! T_t x + A_t s_t + B_t s_{t-1} + W_t y_t  = h0_t + H_t u_t
//! L_t x + E_t s_t             + G_t y_t >= m0_t + M_t u_t
//! ```
//!
//! with `s_{-1} = s0` fixed and cost `c'x + sum_t (d_t's_t + f_t'y_t)`.

use std::fmt;
use std::path::Path;

use msro_optkernel::{solve_lp, LinearProgram, LpStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("dimension error in {location}: {message}")]
    Dimension { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self' y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * yi;
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// Nonzero entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageData {
    pub n_s: usize,
    pub n_y: usize,
    pub n_u: usize,
    /// `T_t`: equality rows on x.
    pub t_mat: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub w: Matrix,
    pub h0: Vec<f64>,
    pub h: Matrix,
    pub l: Matrix,
    pub e: Matrix,
    pub g: Matrix,
    pub m0: Vec<f64>,
    pub m: Matrix,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
}

impl StageData {
    /// Zero blocks of conforming size.
    pub fn zeros(n_x: usize, n_s_prev: usize, n_s: usize, n_y: usize, n_u: usize, n_eq: usize, n_in: usize) -> Self {
        Self {
            n_s,
            n_y,
            n_u,
            t_mat: Matrix::zeros(n_eq, n_x),
            a: Matrix::zeros(n_eq, n_s),
            b: Matrix::zeros(n_eq, n_s_prev),
            w: Matrix::zeros(n_eq, n_y),
            h0: vec![0.0; n_eq],
            h: Matrix::zeros(n_eq, n_u),
            l: Matrix::zeros(n_in, n_x),
            e: Matrix::zeros(n_in, n_s),
            g: Matrix::zeros(n_in, n_y),
            m0: vec![0.0; n_in],
            m: Matrix::zeros(n_in, n_u),
            d: vec![0.0; n_s],
            f: vec![0.0; n_y],
        }
    }

    pub fn n_eq(&self) -> usize {
        self.h0.len()
    }

    pub fn n_in(&self) -> usize {
        self.m0.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=", alias = "le")]
    Le,
    #[serde(rename = ">=", alias = "ge")]
    Ge,
    #[serde(rename = "=", alias = "eq")]
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub sense: Sense,
}

/// The x-part of the first-stage feasible region.
#[derive(Clone, Debug, PartialEq)]
pub struct XBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<LinearRow>,
}

impl XBounds {
    pub fn free(n_x: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; n_x], hi: vec![f64::INFINITY; n_x], rows: Vec::new() }
    }
}

/// `{u : D u <= e, lo <= u <= hi}` with finite box.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub d: Matrix,
    pub e: Vec<f64>,
}

impl Polytope {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let n = lo.len();
        Self { lo, hi, d: Matrix::zeros(0, n), e: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Largest violation of any row or bound at `u`.
    pub fn violation(&self, u: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.dim() {
            worst = worst.max(self.lo[j] - u[j]).max(u[j] - self.hi[j]);
        }
        for i in 0..self.d.rows {
            worst = worst.max(dot(self.d.row(i), u) - self.e[i]);
        }
        worst
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.violation(u) <= tol
    }

    /// Feasibility LP over the polytope; `None` if empty.
    pub fn feasible_point(&self) -> Option<Vec<f64>> {
        if self.lo.iter().zip(&self.hi).any(|(l, h)| l > h) {
            return None;
        }
        let mut lp = LinearProgram::new();
        for j in 0..self.dim() {
            lp.add_var(0.0, self.lo[j], self.hi[j]);
        }
        for i in 0..self.d.rows {
            lp.add_le(self.d.row(i).iter().enumerate().map(|(j, &v)| (j, v)).collect(), self.e[i]);
        }
        match solve_lp(&lp) {
            Ok(s) if s.status == LpStatus::Optimal => Some(s.x),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub n_x: usize,
    pub c: Vec<f64>,
    pub s0: Vec<f64>,
    pub x_bounds: XBounds,
    pub stages: Vec<StageData>,
    pub u: Polytope,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn n_u_total(&self) -> usize {
        self.stages.iter().map(|s| s.n_u).sum()
    }

    /// Offset of `u_t` inside the stacked `u`.
    pub fn u_offset(&self, t: usize) -> usize {
        self.stages[..t].iter().map(|s| s.n_u).sum()
    }

    /// Length of the history `u^t = (u_0, ..., u_t)`.
    pub fn prefix_dim(&self, t: usize) -> usize {
        self.stages[..=t].iter().map(|s| s.n_u).sum()
    }

    pub fn n_s_prev(&self, t: usize) -> usize {
        if t == 0 {
            self.s0.len()
        } else {
            self.stages[t - 1].n_s
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        load_instance(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, save_instance(self))?;
        Ok(())
    }
}

// ---------------------------------------------------------------- JSON

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub triplets: Vec<(usize, usize, f64)>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self { rows: m.rows, cols: m.cols, triplets: m.triplets() }
    }

    /// Duplicate entries are summed.
    pub fn to_matrix(&self, location: &str) -> Result<Matrix, ModelError> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (k, &(i, j, v)) in self.triplets.iter().enumerate() {
            if i >= self.rows || j >= self.cols {
                return Err(dim_err(location, format!("triplet {k} at ({i}, {j}) outside {}x{}", self.rows, self.cols)));
            }
            m.data[i * self.cols + j] += v;
        }
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    n_s: usize,
    n_y: usize,
    n_u: usize,
    #[serde(rename = "Tt", default)]
    tt: Option<MatrixDoc>,
    #[serde(rename = "At", default)]
    at: Option<MatrixDoc>,
    #[serde(rename = "Bt", default)]
    bt: Option<MatrixDoc>,
    #[serde(rename = "Wt", default)]
    wt: Option<MatrixDoc>,
    #[serde(default)]
    h0: Option<Vec<f64>>,
    #[serde(rename = "Ht", default)]
    ht: Option<MatrixDoc>,
    #[serde(rename = "Lt", default)]
    lt: Option<MatrixDoc>,
    #[serde(rename = "Et", default)]
    et: Option<MatrixDoc>,
    #[serde(rename = "Gt", default)]
    gt: Option<MatrixDoc>,
    #[serde(default)]
    m0: Option<Vec<f64>>,
    #[serde(rename = "Mt", default)]
    mt: Option<MatrixDoc>,
    #[serde(default)]
    dt: Option<Vec<f64>>,
    #[serde(default)]
    ft: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowDoc {
    coeffs: Vec<f64>,
    rhs: f64,
    sense: Sense,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct XBoundsDoc {
    #[serde(default)]
    lo: Option<Vec<Option<f64>>>,
    #[serde(default)]
    hi: Option<Vec<Option<f64>>>,
    #[serde(default)]
    rows: Vec<RowDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolytopeDoc {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    #[serde(rename = "D", default)]
    d: Option<MatrixDoc>,
    #[serde(default)]
    e: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    #[serde(rename = "T")]
    horizon: usize,
    n_x: usize,
    #[serde(default)]
    c: Option<Vec<f64>>,
    s0: Vec<f64>,
    #[serde(default)]
    x_bounds: Option<XBoundsDoc>,
    stages: Vec<StageDoc>,
    #[serde(rename = "U")]
    u: PolytopeDoc,
}

fn dim_err(location: &str, message: String) -> ModelError {
    ModelError::Dimension { location: location.to_string(), message }
}

fn check_len(v: &[f64], n: usize, location: &str) -> Result<(), ModelError> {
    if v.len() != n {
        return Err(dim_err(location, format!("expected length {n}, found {}", v.len())));
    }
    Ok(())
}

fn block(
    doc: &Option<MatrixDoc>,
    rows: usize,
    cols: usize,
    location: &str,
) -> Result<Matrix, ModelError> {
    match doc {
        None => Ok(Matrix::zeros(rows, cols)),
        Some(m) => {
            if m.rows != rows || m.cols != cols {
                return Err(dim_err(location, format!("expected {rows}x{cols}, found {}x{}", m.rows, m.cols)));
            }
            m.to_matrix(location)
        }
    }
}

/// Row count of a block family: the rhs length if given, else the first
/// matrix present, else zero.
fn family_rows(rhs: &Option<Vec<f64>>, mats: &[&Option<MatrixDoc>]) -> usize {
    if let Some(v) = rhs {
        return v.len();
    }
    mats.iter().find_map(|m| m.as_ref().map(|m| m.rows)).unwrap_or(0)
}

/// Parses and dimension-checks an instance document.
pub fn load_instance(text: &str) -> Result<Instance, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: InstanceDoc = serde_path_to_error::deserialize(de).map_err(|e| ModelError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    from_doc(doc)
}

fn from_doc(doc: InstanceDoc) -> Result<Instance, ModelError> {
    let n_x = doc.n_x;
    if doc.stages.len() != doc.horizon {
        return Err(dim_err("stages", format!("T = {} but {} stages given", doc.horizon, doc.stages.len())));
    }
    let c = doc.c.unwrap_or_else(|| vec![0.0; n_x]);
    check_len(&c, n_x, "c")?;
    let xb = doc.x_bounds.unwrap_or_default();
    let to_bound = |v: Option<Vec<Option<f64>>>, inf: f64, loc: &str| -> Result<Vec<f64>, ModelError> {
        let v: Vec<f64> = v.unwrap_or_else(|| vec![None; n_x]).into_iter().map(|b| b.unwrap_or(inf)).collect();
        check_len(&v, n_x, loc)?;
        Ok(v)
    };
    let lo = to_bound(xb.lo, f64::NEG_INFINITY, "x_bounds.lo")?;
    let hi = to_bound(xb.hi, f64::INFINITY, "x_bounds.hi")?;
    let mut rows = Vec::new();
    for (k, r) in xb.rows.into_iter().enumerate() {
        check_len(&r.coeffs, n_x, &format!("x_bounds.rows[{k}].coeffs"))?;
        rows.push(LinearRow { coeffs: r.coeffs, rhs: r.rhs, sense: r.sense });
    }

    let mut stages = Vec::with_capacity(doc.horizon);
    let mut n_s_prev = doc.s0.len();
    for (k, s) in doc.stages.into_iter().enumerate() {
        let loc = |name: &str| format!("stage {} {name}", k + 1);
        let n_eq = family_rows(&s.h0, &[&s.tt, &s.at, &s.bt, &s.wt, &s.ht]);
        let n_in = family_rows(&s.m0, &[&s.lt, &s.et, &s.gt, &s.mt]);
        let eq_loc = |name: &str| format!("stage {} equality block {name}", k + 1);
        let in_loc = |name: &str| format!("stage {} inequality block {name}", k + 1);
        let h0 = s.h0.unwrap_or_else(|| vec![0.0; n_eq]);
        let m0 = s.m0.unwrap_or_else(|| vec![0.0; n_in]);
        let d = s.dt.unwrap_or_else(|| vec![0.0; s.n_s]);
        let f = s.ft.unwrap_or_else(|| vec![0.0; s.n_y]);
        check_len(&d, s.n_s, &loc("dt"))?;
        check_len(&f, s.n_y, &loc("ft"))?;
        stages.push(StageData {
            n_s: s.n_s,
            n_y: s.n_y,
            n_u: s.n_u,
            t_mat: block(&s.tt, n_eq, n_x, &eq_loc("Tt"))?,
            a: block(&s.at, n_eq, s.n_s, &eq_loc("At"))?,
            b: block(&s.bt, n_eq, n_s_prev, &eq_loc("Bt"))?,
            w: block(&s.wt, n_eq, s.n_y, &eq_loc("Wt"))?,
            h0,
            h: block(&s.ht, n_eq, s.n_u, &eq_loc("Ht"))?,
            l: block(&s.lt, n_in, n_x, &in_loc("Lt"))?,
            e: block(&s.et, n_in, s.n_s, &in_loc("Et"))?,
            g: block(&s.gt, n_in, s.n_y, &in_loc("Gt"))?,
            m0,
            m: block(&s.mt, n_in, s.n_u, &in_loc("Mt"))?,
            d,
            f,
        });
        n_s_prev = s.n_s;
    }

    let pd = doc.u;
    let n_u: usize = stages.iter().map(|s| s.n_u).sum();
    if pd.dim != n_u {
        return Err(dim_err("U", format!("dim {} differs from total stage uncertainty {n_u}", pd.dim)));
    }
    check_len(&pd.lo, pd.dim, "U.lo")?;
    check_len(&pd.hi, pd.dim, "U.hi")?;
    let e = pd.e.unwrap_or_else(|| vec![0.0; pd.d.as_ref().map_or(0, |m| m.rows)]);
    let d = block(&pd.d, e.len(), pd.dim, "U.D")?;
    Ok(Instance {
        n_x,
        c,
        s0: doc.s0,
        x_bounds: XBounds { lo, hi, rows },
        stages,
        u: Polytope { lo: pd.lo, hi: pd.hi, d, e },
    })
}

/// Canonical document: every block written, zero entries omitted.
pub fn save_instance(inst: &Instance) -> String {
    let opt = |b: f64| if b.is_finite() { Some(b) } else { None };
    let doc = InstanceDoc {
        horizon: inst.horizon(),
        n_x: inst.n_x,
        c: Some(inst.c.clone()),
        s0: inst.s0.clone(),
        x_bounds: Some(XBoundsDoc {
            lo: Some(inst.x_bounds.lo.iter().map(|&b| opt(b)).collect()),
            hi: Some(inst.x_bounds.hi.iter().map(|&b| opt(b)).collect()),
            rows: inst
                .x_bounds
                .rows
                .iter()
                .map(|r| RowDoc { coeffs: r.coeffs.clone(), rhs: r.rhs, sense: r.sense })
                .collect(),
        }),
        stages: inst
            .stages
            .iter()
            .map(|s| {
                let m = |x: &Matrix| Some(MatrixDoc::from_matrix(x));
                StageDoc {
                    n_s: s.n_s,
                    n_y: s.n_y,
                    n_u: s.n_u,
                    tt: m(&s.t_mat),
                    at: m(&s.a),
                    bt: m(&s.b),
                    wt: m(&s.w),
                    h0: Some(s.h0.clone()),
                    ht: m(&s.h),
                    lt: m(&s.l),
                    et: m(&s.e),
                    gt: m(&s.g),
                    m0: Some(s.m0.clone()),
                    mt: m(&s.m),
                    dt: Some(s.d.clone()),
                    ft: Some(s.f.clone()),
                }
            })
            .collect(),
        u: PolytopeDoc {
            dim: inst.u.dim(),
            lo: inst.u.lo.clone(),
            hi: inst.u.hi.clone(),
            d: Some(MatrixDoc::from_matrix(&inst.u.d)),
            e: Some(inst.u.e.clone()),
        },
    };
    serde_json::to_string_pretty(&doc).expect("instance documents always serialize")
}

// ---------------------------------------------------------------- validation

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding { location: location.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.findings {
            writeln!(f, "{}: {}", x.location, x.message)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant, including nonemptiness of U.
pub fn validate(inst: &Instance) -> ValidationReport {
    let mut r = ValidationReport::default();
    let n_x = inst.n_x;
    if inst.stages.is_empty() {
        r.push("stages", "horizon must be at least 1");
    }
    if inst.c.len() != n_x {
        r.push("c", format!("length {} differs from n_x {n_x}", inst.c.len()));
    }
    let xb = &inst.x_bounds;
    if xb.lo.len() != n_x || xb.hi.len() != n_x {
        r.push("x_bounds", "bound vectors must have length n_x");
    } else {
        for j in 0..n_x {
            if xb.lo[j] > xb.hi[j] || xb.lo[j].is_nan() || xb.hi[j].is_nan() {
                r.push(format!("x_bounds[{j}]"), "lower bound exceeds upper bound");
            }
        }
    }
    for (k, row) in xb.rows.iter().enumerate() {
        if row.coeffs.len() != n_x || !row.rhs.is_finite() {
            r.push(format!("x_bounds.rows[{k}]"), "row must have n_x finite coefficients");
        }
    }

    let mut n_s_prev = inst.s0.len();
    for (k, s) in inst.stages.iter().enumerate() {
        let n_eq = s.h0.len();
        let n_in = s.m0.len();
        let mut shape = |name: &str, m: &Matrix, rows: usize, cols: usize| {
            if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
                r.push(format!("stage {} block {name}", k + 1), format!("expected {rows}x{cols}, found {}x{}", m.rows, m.cols));
            } else if m.data.iter().any(|v| !v.is_finite()) {
                r.push(format!("stage {} block {name}", k + 1), "non-finite entry");
            }
        };
        shape("Tt", &s.t_mat, n_eq, n_x);
        shape("At", &s.a, n_eq, s.n_s);
        shape("Bt", &s.b, n_eq, n_s_prev);
        shape("Wt", &s.w, n_eq, s.n_y);
        shape("Ht", &s.h, n_eq, s.n_u);
        shape("Lt", &s.l, n_in, n_x);
        shape("Et", &s.e, n_in, s.n_s);
        shape("Gt", &s.g, n_in, s.n_y);
        shape("Mt", &s.m, n_in, s.n_u);
        if s.d.len() != s.n_s {
            r.push(format!("stage {} dt", k + 1), "length differs from n_s");
        }
        if s.f.len() != s.n_y {
            r.push(format!("stage {} ft", k + 1), "length differs from n_y");
        }
        n_s_prev = s.n_s;
    }

    let u = &inst.u;
    if u.dim() != inst.n_u_total() || u.hi.len() != u.dim() {
        r.push("U", format!("dimension {} differs from total stage uncertainty {}", u.dim(), inst.n_u_total()));
        return r;
    }
    if u.d.cols != u.dim() || u.d.rows != u.e.len() {
        r.push("U.D", "shape does not match dim and e");
        return r;
    }
    let mut box_ok = true;
    for j in 0..u.dim() {
        if !u.lo[j].is_finite() || !u.hi[j].is_finite() {
            r.push(format!("U.lo/hi[{j}]"), "bounds must be finite");
            box_ok = false;
        } else if u.lo[j] > u.hi[j] {
            r.push(format!("U.lo/hi[{j}]"), "infeasible U: lower bound exceeds upper bound");
            box_ok = false;
        }
    }
    if box_ok && u.feasible_point().is_none() {
        r.push("U", "infeasible U: D u <= e excludes the whole box");
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "T": 1, "n_x": 1, "c": [1.0], "s0": [0.0],
        "stages": [{"n_s": 1, "n_y": 1, "n_u": 1,
            "At": {"rows": 1, "cols": 1, "triplets": [[0, 0, 1.0]]},
            "Wt": {"rows": 1, "cols": 1, "triplets": [[0, 0, -1.0]]},
            "h0": [0.0],
            "Ht": {"rows": 1, "cols": 1, "triplets": [[0, 0, 1.0]]}}],
        "U": {"dim": 1, "lo": [0.0], "hi": [1.0]}
    }"#;

    #[test]
    fn minimal_document_loads() {
        let inst = load_instance(MINIMAL).unwrap();
        assert_eq!(inst.horizon(), 1);
        assert_eq!(inst.stages[0].a.get(0, 0), 1.0);
        assert_eq!(inst.stages[0].b.cols, 1);
        assert!(validate(&inst).is_empty());
    }

    #[test]
    fn wrong_row_count_names_stage_and_block() {
        let text = r#"{
            "T": 2, "n_x": 0, "s0": [0.0],
            "stages": [
              {"n_s": 1, "n_y": 1, "n_u": 1, "h0": [0.0]},
              {"n_s": 1, "n_y": 1, "n_u": 1, "h0": [0.0],
               "At": {"rows": 2, "cols": 1, "triplets": []}}],
            "U": {"dim": 2, "lo": [0, 0], "hi": [1, 1]}
        }"#;
        let err = load_instance(text).unwrap_err().to_string();
        assert!(err.contains("stage 2 equality block At"), "{err}");
    }

    #[test]
    fn schema_error_reports_json_path() {
        let text = MINIMAL.replace("\"n_y\": 1", "\"n_y\": \"one\"");
        match load_instance(&text) {
            Err(ModelError::Parse { path, .. }) => assert_eq!(path, "stages[0].n_y"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_load_roundtrip_is_canonical() {
        let inst = load_instance(MINIMAL).unwrap();
        let text = save_instance(&inst);
        let back = load_instance(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(save_instance(&back), text);
    }

    #[test]
    fn crossed_u_bounds_are_reported() {
        let mut inst = load_instance(MINIMAL).unwrap();
        inst.u.lo[0] = 2.0;
        let r = validate(&inst);
        assert!(r.findings.iter().any(|f| f.message.contains("infeasible U")));
    }

    #[test]
    fn cutting_row_empties_u() {
        let mut inst = load_instance(MINIMAL).unwrap();
        inst.u.d = Matrix::from_rows(&[vec![1.0]]);
        inst.u.e = vec![-1.0];
        let r = validate(&inst);
        assert_eq!(r.findings.len(), 1);
        assert!(r.findings[0].message.contains("infeasible U"));
    }

    #[test]
    fn matrix_products() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, -1.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0, -1.0]);
        assert_eq!(m.tr_mul_vec(&[1.0, 0.0, 2.0]), vec![1.0, 0.0]);
        assert_eq!(m.triplets().len(), 5);
    }
}
