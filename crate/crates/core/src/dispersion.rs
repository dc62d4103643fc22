//! Tabulated effective tensors `p ↦ D̄(p)` and their use as macroscopic dispersion.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{min_sym_eigenvalue, CellContext};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::macroscale::TensorProvider;

/// Equidistant drift-strength grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub p_min: f64,
    pub p_max: f64,
    pub n_nodes: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            p_min: -10.0,
            p_max: 10.0,
            n_nodes: 101,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::Precondition(format!("sweep needs at least 2 nodes, got {}", self.n_nodes)));
        }
        if !(self.p_min < self.p_max) {
            return Err(Error::Precondition(format!(
                "sweep range [{}, {}] is empty",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let step = (self.p_max - self.p_min) / (n - 1) as f64;
        (0..n)
            .map(|k| if k == n - 1 { self.p_max } else { self.p_min + k as f64 * step })
            .collect()
    }
}

/// Provenance of a table; two tables are interchangeable when these agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub geometry: String,
    pub case: String,
    pub h: f64,
    /// Description of the drift field and discretisation.
    pub flow: String,
}

/// `D̄` sampled on a strictly increasing grid of drift strengths.
#[derive(Debug)]
pub struct DispersionTable {
    meta: TableMeta,
    p_nodes: Vec<f64>,
    tensors: Vec<Matrix2<f64>>,
    clamps: AtomicUsize,
}

impl Clone for DispersionTable {
    fn clone(&self) -> Self {
        DispersionTable {
            meta: self.meta.clone(),
            p_nodes: self.p_nodes.clone(),
            tensors: self.tensors.clone(),
            clamps: AtomicUsize::new(self.clamp_count()),
        }
    }
}

impl DispersionTable {
    pub fn new(meta: TableMeta, p_nodes: Vec<f64>, tensors: Vec<Matrix2<f64>>) -> Result<Self> {
        if p_nodes.len() < 2 {
            return Err(Error::Precondition(format!("table needs at least 2 nodes, got {}", p_nodes.len())));
        }
        if p_nodes.len() != tensors.len() {
            return Err(Error::DimensionMismatch {
                expected: p_nodes.len(),
                actual: tensors.len(),
            });
        }
        if p_nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("table nodes must be strictly increasing".into()));
        }
        for (p, d) in p_nodes.iter().zip(&tensors) {
            let lam = min_sym_eigenvalue(d);
            if !(lam > 0.0) {
                return Err(Error::PositivityViolated {
                    p: *p,
                    min_eigenvalue: lam,
                });
            }
        }
        Ok(DispersionTable {
            meta,
            p_nodes,
            tensors,
            clamps: AtomicUsize::new(0),
        })
    }

    pub fn meta(&self) -> &TableMeta {
        &self.meta
    }

    pub fn p_nodes(&self) -> &[f64] {
        &self.p_nodes
    }

    pub fn tensors(&self) -> &[Matrix2<f64>] {
        &self.tensors
    }

    pub fn range(&self) -> (f64, f64) {
        (self.p_nodes[0], *self.p_nodes.last().unwrap())
    }

    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Piecewise-linear interpolation, clamped to the end nodes outside the range.
    pub fn interp(&self, p: f64) -> Matrix2<f64> {
        let (d, clamped) = self.interp_flagged(p);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        d
    }

    /// Interpolated tensor and whether `p` had to be clamped. Does not count.
    pub fn interp_flagged(&self, p: f64) -> (Matrix2<f64>, bool) {
        let (lo, hi) = self.range();
        if !(p > lo) {
            return (self.tensors[0], p < lo || p.is_nan());
        }
        if p >= hi {
            return (*self.tensors.last().unwrap(), p > hi);
        }
        let k = self.p_nodes.partition_point(|&x| x <= p) - 1;
        let (p0, p1) = (self.p_nodes[k], self.p_nodes[k + 1]);
        let s = (p - p0) / (p1 - p0);
        (self.tensors[k] * (1.0 - s) + self.tensors[k + 1] * s, false)
    }

    pub fn to_text(&self) -> String {
        let (lo, hi) = self.range();
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "geometry {}", m.geometry);
        let _ = writeln!(out, "case {}", m.case);
        let _ = writeln!(out, "h {}", m.h);
        let _ = writeln!(out, "flow {}", m.flow);
        let _ = writeln!(out, "p_min {lo}");
        let _ = writeln!(out, "p_max {hi}");
        let _ = writeln!(out, "n {}", self.p_nodes.len());
        for (p, d) in self.p_nodes.iter().zip(&self.tensors) {
            let _ = writeln!(out, "{p} {} {} {} {}", d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header: HashMap<&str, &str> = HashMap::new();
        let mut p_nodes = Vec::new();
        let mut tensors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let first = line.split_whitespace().next().unwrap();
            if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && first.parse::<f64>().is_err()
            {
                let rest = line[first.len()..].trim();
                header.insert(first, rest);
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| err(i + 1, format!("`{s}`: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 5 {
                return Err(err(i + 1, format!("expected 5 columns, got {}", vals.len())));
            }
            p_nodes.push(vals[0]);
            tensors.push(Matrix2::new(vals[1], vals[2], vals[3], vals[4]));
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| err(0, format!("missing header `{k}`")));
        let n: usize = get("n")?.parse().map_err(|e| err(0, format!("n: {e}")))?;
        if n != p_nodes.len() {
            return Err(err(0, format!("header says {n} nodes, found {}", p_nodes.len())));
        }
        let meta = TableMeta {
            geometry: get("geometry")?.to_string(),
            case: get("case")?.to_string(),
            h: get("h")?.parse().map_err(|e| err(0, format!("h: {e}")))?,
            flow: header.get("flow").copied().unwrap_or("").to_string(),
        };
        DispersionTable::new(meta, p_nodes, tensors)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        DispersionTable::parse(&text, path)
    }

    /// `p,d11,d12,d21,d22` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,d11,d12,d21,d22\n");
        for (p, d) in self.p_nodes.iter().zip(&self.tensors) {
            let _ = writeln!(out, "{p},{},{},{},{}", d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]);
        }
        out
    }
}

/// Solves the cell problem at every node of `sweep`.
pub fn build_table(ctx: &CellContext, sweep: &SweepSpec, meta: TableMeta) -> Result<DispersionTable> {
    sweep.validate()?;
    let nodes = sweep.nodes();
    let tensors: Vec<Matrix2<f64>> = nodes
        .par_iter()
        .map(|&p| {
            let d = ctx.solve(p)?.dbar;
            let lam = min_sym_eigenvalue(&d);
            if !(lam > 0.0) {
                return Err(Error::PositivityViolated { p, min_eigenvalue: lam });
            }
            Ok(d)
        })
        .collect::<Result<_>>()?;
    DispersionTable::new(meta, nodes, tensors)
}

/// File name under which a table is cached.
pub fn table_file_name(meta: &TableMeta, sweep: &SweepSpec) -> String {
    let raw = format!(
        "{}_{}_h{}_p{}_{}_n{}",
        meta.geometry, meta.case, meta.h, sweep.p_min, sweep.p_max, sweep.n_nodes
    );
    let clean: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '-' })
        .collect();
    format!("{clean}.table")
}

/// Loads the cached table when its header and grid match, otherwise builds and stores it.
/// Returns the table and whether it came from disk.
pub fn load_or_build(
    dir: &Path,
    meta: TableMeta,
    sweep: &SweepSpec,
    build: impl FnOnce() -> Result<CellContext>,
) -> Result<(DispersionTable, PathBuf, bool)> {
    sweep.validate()?;
    let path = dir.join(table_file_name(&meta, sweep));
    if path.exists() {
        match DispersionTable::read(&path) {
            Ok(t) if t.meta == meta && t.p_nodes == sweep.nodes() => return Ok((t, path, true)),
            Ok(_) => log::info!("cached table {} has a different key; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable table {}: {e}", path.display()),
        }
    }
    let ctx = build()?;
    let table = build_table(&ctx, sweep, meta)?;
    table.write(&path)?;
    Ok((table, path, false))
}

/// Map from concentration to drift strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `a + b u`
    Linear { a: f64, b: f64 },
    /// `1 / (eps + |1 − 2u|)`
    ReciprocalAbs { eps: f64 },
    /// Piecewise-linear through `(u, g)` points, constant beyond the ends.
    Tabulated { u: Vec<f64>, g: Vec<f64> },
    /// Expression in `u`.
    Expression { expr: Expr },
}

impl Nonlinearity {
    /// `1 − 2u`
    pub fn exclusion() -> Self {
        Nonlinearity::Linear { a: 1.0, b: -2.0 }
    }

    /// `1 / (10⁻⁴ + |1 − 2u|)`
    pub fn reciprocal() -> Self {
        Nonlinearity::ReciprocalAbs { eps: 1e-4 }
    }

    pub fn constant(c: f64) -> Self {
        Nonlinearity::Linear { a: c, b: 0.0 }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Nonlinearity::Linear { b, .. } => *b == 0.0,
            Nonlinearity::Tabulated { g, .. } => g.windows(2).all(|w| w[0] == w[1]),
            Nonlinearity::Expression { expr } => !expr.uses(crate::expr::Var::U),
            Nonlinearity::ReciprocalAbs { .. } => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Nonlinearity::ReciprocalAbs { eps } if !(*eps > 0.0) => {
                Err(Error::config("nonlinearity.eps", "must be positive"))
            }
            Nonlinearity::Tabulated { u, g } => {
                if u.len() != g.len() || u.is_empty() {
                    return Err(Error::config("nonlinearity", "tabulated u and g must be non-empty and equally long"));
                }
                if u.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::config("nonlinearity.u", "must be strictly increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Linear { a, b } => a + b * u,
            Nonlinearity::ReciprocalAbs { eps } => 1.0 / (eps + (1.0 - 2.0 * u).abs()),
            Nonlinearity::Tabulated { u: us, g } => {
                if u <= us[0] {
                    return g[0];
                }
                if u >= *us.last().unwrap() {
                    return *g.last().unwrap();
                }
                let k = us.partition_point(|&x| x <= u) - 1;
                let s = (u - us[k]) / (us[k + 1] - us[k]);
                g[k] * (1.0 - s) + g[k + 1] * s
            }
            Nonlinearity::Expression { expr } => expr.eval(&Vars { u, ..Vars::default() }),
        }
    }
}

/// How the two drift strengths `G_1(u)`, `G_2(u)` enter the macroscopic tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexConvention {
    /// Column `j` is column `j` of `D̄(G_j(u))`.
    #[default]
    Column,
    /// Row `i` is row `i` of `D̄(G_i(u))`.
    Row,
}

fn combine(first: Matrix2<f64>, second: Matrix2<f64>, convention: IndexConvention) -> Matrix2<f64> {
    let mut out = first;
    match convention {
        IndexConvention::Column => out.set_column(1, &second.column(1)),
        IndexConvention::Row => out.set_row(1, &second.row(1)),
    }
    out
}

/// Macroscopic tensor at concentration `u`.
pub fn dstar_at(
    tables: [&DispersionTable; 2],
    nonlinearities: [&Nonlinearity; 2],
    u: f64,
    convention: IndexConvention,
) -> Matrix2<f64> {
    let d1 = tables[0].interp(nonlinearities[0].eval(u));
    if std::ptr::eq(tables[0], tables[1]) && nonlinearities[0] == nonlinearities[1] {
        return d1;
    }
    let d2 = tables[1].interp(nonlinearities[1].eval(u));
    combine(d1, d2, convention)
}

/// Tensor provider backed by precomputed tables.
#[derive(Debug, Clone)]
pub struct TableProvider {
    pub tables: [Arc<DispersionTable>; 2],
    pub nonlinearities: [Nonlinearity; 2],
    pub convention: IndexConvention,
}

impl TableProvider {
    pub fn single(table: Arc<DispersionTable>, g: Nonlinearity) -> Self {
        TableProvider {
            tables: [table.clone(), table],
            nonlinearities: [g.clone(), g],
            convention: IndexConvention::Column,
        }
    }
}

impl TensorProvider for TableProvider {
    fn tensors(&self, u: &[f64]) -> Result<Vec<Matrix2<f64>>> {
        let t = [self.tables[0].as_ref(), self.tables[1].as_ref()];
        let g = [&self.nonlinearities[0], &self.nonlinearities[1]];
        Ok(u.iter().map(|&u| dstar_at(t, g, u, self.convention)).collect())
    }

    fn clamp_count(&self) -> usize {
        if Arc::ptr_eq(&self.tables[0], &self.tables[1]) {
            self.tables[0].clamp_count()
        } else {
            self.tables[0].clamp_count() + self.tables[1].clamp_count()
        }
    }

    fn is_constant(&self) -> bool {
        self.nonlinearities.iter().all(Nonlinearity::is_constant)
    }
}

/// Tensor provider that solves the cell problem for every distinct drift strength,
/// memoising results.
pub struct DirectProvider {
    context: Arc<CellContext>,
    nonlinearities: [Nonlinearity; 2],
    convention: IndexConvention,
    cache: Mutex<HashMap<u64, Matrix2<f64>>>,
    solves: AtomicUsize,
}

impl std::fmt::Debug for DirectProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectProvider")
            .field("nonlinearities", &self.nonlinearities)
            .field("solves", &self.solve_count())
            .finish()
    }
}

impl DirectProvider {
    pub fn new(context: Arc<CellContext>, nonlinearities: [Nonlinearity; 2], convention: IndexConvention) -> Self {
        DirectProvider {
            context,
            nonlinearities,
            convention,
            cache: Mutex::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        }
    }

    pub fn single(context: Arc<CellContext>, g: Nonlinearity) -> Self {
        DirectProvider::new(context, [g.clone(), g], IndexConvention::Column)
    }

    /// Number of cell problems solved so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// `D̄(p)` for every `p`, solving the missing ones in parallel.
    pub fn dbar_batch(&self, ps: &[f64]) -> Result<Vec<Matrix2<f64>>> {
        let key = |p: f64| (p + 0.0).to_bits();
        let missing: Vec<f64> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            ps.iter()
                .copied()
                .filter(|&p| !cache.contains_key(&key(p)) && seen.insert(key(p)))
                .collect()
        };
        let solved: Vec<(f64, Matrix2<f64>)> = missing
            .par_iter()
            .map(|&p| self.context.solve(p).map(|s| (p, s.dbar)))
            .collect::<Result<_>>()?;
        self.solves.fetch_add(solved.len(), Ordering::Relaxed);
        let mut cache = self.cache.lock().expect("cache lock");
        for (p, d) in solved {
            cache.insert(key(p), d);
        }
        Ok(ps.iter().map(|&p| cache[&key(p)]).collect())
    }
}

impl TensorProvider for DirectProvider {
    fn tensors(&self, u: &[f64]) -> Result<Vec<Matrix2<f64>>> {
        let p1: Vec<f64> = u.iter().map(|&u| self.nonlinearities[0].eval(u)).collect();
        let d1 = self.dbar_batch(&p1)?;
        if self.nonlinearities[0] == self.nonlinearities[1] {
            return Ok(d1);
        }
        let p2: Vec<f64> = u.iter().map(|&u| self.nonlinearities[1].eval(u)).collect();
        let d2 = self.dbar_batch(&p2)?;
        Ok(d1
            .into_iter()
            .zip(d2)
            .map(|(a, b)| combine(a, b, self.convention))
            .collect())
    }

    fn is_constant(&self) -> bool {
        self.nonlinearities.iter().all(Nonlinearity::is_constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> TableMeta {
        TableMeta {
            geometry: "disk".into(),
            case: "fast".into(),
            h: 0.05,
            flow: "test".into(),
        }
    }

    fn table() -> DispersionTable {
        let nodes = vec![-1.0, 0.0, 2.0];
        let tensors = vec![
            Matrix2::new(2.0, 0.1, -0.1, 3.0),
            Matrix2::new(1.0, 0.0, 0.0, 1.0),
            Matrix2::new(3.0, -0.2, 0.2, 5.0),
        ];
        DispersionTable::new(meta(), nodes, tensors).unwrap()
    }

    #[test]
    fn interpolation_and_clamping() {
        let t = table();
        assert_eq!(t.interp(0.0), Matrix2::identity());
        assert_eq!(t.interp(1.0), (t.tensors()[1] + t.tensors()[2]) / 2.0);
        assert_eq!(t.clamp_count(), 0);
        assert_eq!(t.interp(7.0), t.tensors()[2]);
        assert_eq!(t.interp(-7.0), t.tensors()[0]);
        assert_eq!(t.clamp_count(), 2);
    }

    #[test]
    fn reciprocal_nonlinearity_clamps_at_half() {
        let t = table();
        let g = Nonlinearity::reciprocal();
        assert!((g.eval(0.5) - 1e4).abs() < 1e-8);
        let d = dstar_at([&t, &t], [&g, &g], 0.5, IndexConvention::Column);
        assert_eq!(d, t.tensors()[2]);
        assert_eq!(t.clamp_count(), 1);
        let lin = Nonlinearity::exclusion();
        assert_eq!(dstar_at([&t, &t], [&lin, &lin], 0.5, IndexConvention::Column), Matrix2::identity());
    }

    #[test]
    fn column_and_row_conventions() {
        let t = table();
        let g1 = Nonlinearity::constant(-1.0);
        let g2 = Nonlinearity::constant(2.0);
        let col = dstar_at([&t, &t], [&g1, &g2], 0.0, IndexConvention::Column);
        assert_eq!(col, Matrix2::new(2.0, -0.2, -0.1, 5.0));
        let row = dstar_at([&t, &t], [&g1, &g2], 0.0, IndexConvention::Row);
        assert_eq!(row, Matrix2::new(2.0, 0.1, 0.2, 5.0));
    }

    #[test]
    fn text_round_trip() {
        let t = table();
        let back = DispersionTable::parse(&t.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back.p_nodes(), t.p_nodes());
        assert_eq!(back.tensors(), t.tensors());
        assert_eq!(back.meta(), t.meta());
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(DispersionTable::new(meta(), vec![0.0], vec![Matrix2::identity()]).is_err());
        assert!(DispersionTable::new(meta(), vec![1.0, 0.0], vec![Matrix2::identity(); 2]).is_err());
        assert!(matches!(
            DispersionTable::new(meta(), vec![0.0, 1.0], vec![Matrix2::identity(), -Matrix2::identity()]),
            Err(Error::PositivityViolated { .. })
        ));
        assert!(SweepSpec { p_min: 0.0, p_max: 1.0, n_nodes: 1 }.validate().is_err());
    }

    #[test]
    fn sweep_nodes_hit_endpoints_and_zero() {
        let n = SweepSpec::default().nodes();
        assert_eq!(n.len(), 101);
        assert_eq!(n[0], -10.0);
        assert_eq!(n[100], 10.0);
        assert_eq!(n[50], 0.0);
    }

    proptest! {
        #[test]
        fn interpolants_stay_positive(p in -3.0f64..5.0) {
            let t = table();
            prop_assert!(min_sym_eigenvalue(&t.interp(p)) > 0.0);
        }
    }
}
