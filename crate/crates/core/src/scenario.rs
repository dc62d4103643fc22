//! Scenario files: a TOML document describing one two-scale run.
//!
//! Every field has a default, so an empty file is the reference scenario: centred disk,
//! fast diffusion, cellular Stokes flow, Gaussian initial datum and a ball source on
//! `(0,1) x (0,2)`. Any entry can be overridden from the command line with a dotted
//! `key=value` pair such as `macro.dt=0.1` or `geometry.kind=two_rects`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::cell::MicroDiffusion;
use crate::dispersion::{IndexConvention, Nonlinearity, SweepSpec, TableMeta};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::fem::DriftForm;
use crate::macroscale::{MacroProblem, TensorSampling};
use crate::mesh::{build_macro_mesh, Geometry, Point, Rect};
use crate::scheme::IterationConfig;
use crate::stokes::DEFAULT_VISCOSITY;

/// Reference cell mesh size.
pub const DEFAULT_CELL_H: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Directory receiving every artifact of the run.
    pub output: PathBuf,
    pub geometry: Geometry,
    pub cell: CellConfig,
    pub stokes: StokesConfig,
    pub sweep: SweepSpec,
    #[serde(rename = "macro")]
    pub macroscale: MacroConfig,
    pub nonlinearity: NonlinearityConfig,
    pub iteration: IterationConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            output: PathBuf::from("out"),
            geometry: Geometry::centered_disk(),
            cell: CellConfig::default(),
            stokes: StokesConfig::default(),
            sweep: SweepSpec::default(),
            macroscale: MacroConfig::default(),
            nonlinearity: NonlinearityConfig::default(),
            iteration: IterationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    /// Target element size of the cell mesh.
    pub h: f64,
    pub diffusion: DiffusionCase,
    pub drift_form: DriftForm,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            h: DEFAULT_CELL_H,
            diffusion: DiffusionCase::Fast,
            drift_form: DriftForm::default(),
        }
    }
}

/// Micro diffusion matrix `D(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionCase {
    Fast,
    Slow,
    /// Entries as expressions in `y1`, `y2`; `theta` is the coercivity constant.
    Custom {
        d11: Expr,
        #[serde(default = "zero_expr")]
        d12: Expr,
        #[serde(default = "zero_expr")]
        d21: Expr,
        d22: Expr,
        theta: f64,
    },
}

fn zero_expr() -> Expr {
    Expr::constant(0.0)
}

impl DiffusionCase {
    pub fn label(&self) -> &'static str {
        match self {
            DiffusionCase::Fast => "fast",
            DiffusionCase::Slow => "slow",
            DiffusionCase::Custom { .. } => "custom",
        }
    }

    pub fn diffusion(&self) -> MicroDiffusion {
        match self {
            DiffusionCase::Fast => MicroDiffusion::fast(),
            DiffusionCase::Slow => MicroDiffusion::slow(),
            DiffusionCase::Custom {
                d11,
                d12,
                d21,
                d22,
                theta,
            } => {
                let e = [d11.clone(), d12.clone(), d21.clone(), d22.clone()];
                MicroDiffusion::new(
                    "custom",
                    *theta,
                    Arc::new(move |y: Point| Matrix2::new(e[0].at(y), e[1].at(y), e[2].at(y), e[3].at(y))),
                )
            }
        }
    }

    /// Cache key component; custom entries are spelled out.
    fn key(&self) -> String {
        match self {
            DiffusionCase::Custom {
                d11,
                d12,
                d21,
                d22,
                theta,
            } => format!("custom[{d11};{d12};{d21};{d22};{theta}]"),
            other => other.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StokesConfig {
    pub viscosity: f64,
    /// Body force components as expressions in `y1`, `y2`.
    pub forcing: [Expr; 2],
}

impl Default for StokesConfig {
    fn default() -> Self {
        StokesConfig {
            viscosity: DEFAULT_VISCOSITY,
            forcing: [
                Expr::parse("10*sin(2*pi*y1)*sin(2*pi*y2)").expect("valid default"),
                Expr::parse("10*sin(2*pi*y1)*cos(2*pi*y2)").expect("valid default"),
            ],
        }
    }
}

impl StokesConfig {
    pub fn forcing_fn(&self) -> impl Fn(Point) -> [f64; 2] + Sync + '_ {
        move |y| [self.forcing[0].at(y), self.forcing[1].at(y)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    pub domain: Rect,
    /// Grid cells per direction; the mesh has one more node than cells.
    pub cells: [usize; 2],
    pub t_final: f64,
    pub dt: f64,
    /// Initial datum in `x1`, `x2`.
    pub initial: Expr,
    /// Source in `x1`, `x2`, `t`.
    pub source: Expr,
    pub sampling: TensorSampling,
    pub lumped_mass: bool,
    /// Subdomain of the mass indicator `M(t)`.
    pub mass_window: Rect,
    /// Write every k-th time node.
    pub snapshot_every: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            domain: Rect::new(0.0, 1.0, 0.0, 2.0),
            cells: [50, 50],
            t_final: 2.0,
            dt: 0.05,
            initial: Expr::parse("ball(0.5, 0.5, 0.25) * exp(-10*((x1-0.5)^2 + (x2-0.5)^2))")
                .expect("valid default"),
            source: Expr::parse("1000 * ball(0.5, 0.5, 0.25)").expect("valid default"),
            sampling: TensorSampling::default(),
            lumped_mass: false,
            mass_window: Rect::new(0.0, 1.0, 1.0, 2.0),
            snapshot_every: 1,
        }
    }
}

impl MacroConfig {
    pub fn problem(&self) -> Result<MacroProblem> {
        let mesh = build_macro_mesh(self.domain, self.cells[0] + 1, self.cells[1] + 1)?;
        let g = self.initial.clone();
        let f = self.source.clone();
        Ok(MacroProblem {
            mesh,
            t_final: self.t_final,
            dt: self.dt,
            initial: Arc::new(move |x| g.at(x)),
            source: Arc::new(move |x, t| f.eval(&Vars { x, t, u: 0.0 })),
            sampling: self.sampling,
            lumped_mass: self.lumped_mass,
        })
    }
}

/// Drift strengths `G_1(u)`, `G_2(u)`; `second` defaults to `first`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub first: Nonlinearity,
    pub second: Option<Nonlinearity>,
    pub convention: IndexConvention,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        NonlinearityConfig {
            first: Nonlinearity::exclusion(),
            second: None,
            convention: IndexConvention::default(),
        }
    }
}

impl NonlinearityConfig {
    pub fn pair(&self) -> [Nonlinearity; 2] {
        let second = self.second.clone().unwrap_or_else(|| self.first.clone());
        [self.first.clone(), second]
    }
}

impl Scenario {
    /// Parses a scenario document and applies `key=value` overrides on top.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Scenario> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let scenario: Scenario = doc.try_into().map_err(|e: toml::de::Error| {
            Error::config(guess_field(e.message()), e.message())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text, overrides)
    }

    /// The scenario with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry
            .validate()
            .map_err(|e| Error::config("geometry", e.to_string()))?;
        let h = self.cell.h;
        if !(h > 0.0 && h < 0.5) {
            return Err(Error::config("cell.h", format!("must lie in (0, 0.5), got {h}")));
        }
        if let DiffusionCase::Custom { theta, .. } = &self.cell.diffusion {
            if !(*theta > 0.0) {
                return Err(Error::config("cell.diffusion.theta", format!("must be positive, got {theta}")));
            }
        }
        let mu = self.stokes.viscosity;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::config("stokes.viscosity", format!("must be positive, got {mu}")));
        }
        self.sweep
            .validate()
            .map_err(|e| Error::config("sweep", e.to_string()))?;
        let m = &self.macroscale;
        if m.cells.iter().any(|&c| c < 1) {
            return Err(Error::config("macro.cells", "need at least one cell per direction"));
        }
        if !(m.domain.width() > 0.0 && m.domain.height() > 0.0) {
            return Err(Error::config("macro.domain", "domain is degenerate"));
        }
        if !(m.dt > 0.0) {
            return Err(Error::config("macro.dt", format!("must be positive, got {}", m.dt)));
        }
        if !(m.t_final > 0.0) {
            return Err(Error::config("macro.t_final", format!("must be positive, got {}", m.t_final)));
        }
        let steps = m.t_final / m.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::config(
                "macro.dt",
                format!("final time {} is not a multiple of {}", m.t_final, m.dt),
            ));
        }
        for (name, g) in [("nonlinearity.first", Some(&self.nonlinearity.first)), ("nonlinearity.second", self.nonlinearity.second.as_ref())] {
            if let Some(g) = g {
                g.validate().map_err(|e| Error::config(name, e.to_string()))?;
            }
        }
        self.iteration.validate()
    }

    pub fn table_meta(&self) -> TableMeta {
        TableMeta {
            geometry: self.geometry.key(),
            case: self.cell.diffusion.key(),
            h: self.cell.h,
            flow: format!(
                "stokes-p2p1 mu={} F=({}, {}) drift={:?}",
                self.stokes.viscosity, self.stokes.forcing[0], self.stokes.forcing[1], self.cell.drift_form
            ),
        }
    }
}

/// Sets `a.b.c = value` in `doc`, creating intermediate tables. The value is read as a
/// TOML value when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Best-effort field name from a deserialisation message.
fn guess_field(message: &str) -> String {
    for marker in ["unknown field `", "missing field `", "for key `"] {
        if let Some(rest) = message.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<document>".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_scenario() {
        let s = Scenario::from_toml_str("", &[]).unwrap();
        assert_eq!(s, Scenario::default());
    }

    #[test]
    fn materialised_defaults_round_trip() {
        let s = Scenario::from_toml_str("", &["geometry.kind=two_rects".into(), "geometry.rects=[{x0=0.1,x1=0.9,y0=0.1,y1=0.2},{x0=0.1,x1=0.9,y0=0.8,y1=0.9}]".into()]).unwrap();
        assert_eq!(s.geometry, Geometry::horizontal_bars());
        let again = Scenario::from_toml_str(&s.to_toml(), &[]).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let s = Scenario::from_toml_str(
            "[macro]\ndt = 0.05\n",
            &["macro.dt=0.1".into(), "cell.diffusion.kind=slow".into(), "nonlinearity.first.kind=reciprocal_abs".into(), "nonlinearity.first.eps=1e-4".into()],
        )
        .unwrap();
        assert_eq!(s.macroscale.dt, 0.1);
        assert_eq!(s.cell.diffusion, DiffusionCase::Slow);
        assert_eq!(s.nonlinearity.first, Nonlinearity::reciprocal());
    }

    #[test]
    fn negative_viscosity_names_the_field() {
        let err = Scenario::from_toml_str("[stokes]\nviscosity = -1.0\n", &[]).unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "stokes.viscosity"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_toml_str("[macro]\nstep = 0.1\n", &[]).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref field, .. } if field == "step"), "{err}");
    }

    #[test]
    fn custom_diffusion_evaluates_expressions() {
        let s = Scenario::from_toml_str(
            "[cell.diffusion]\nkind = \"custom\"\nd11 = \"2 + y1\"\nd22 = \"3\"\ntheta = 1.5\n",
            &[],
        )
        .unwrap();
        let d = s.cell.diffusion.diffusion();
        assert_eq!(d.at([0.5, 0.0]), Matrix2::new(2.5, 0.0, 0.0, 3.0));
        assert_eq!(d.theta(), 1.5);
    }

    #[test]
    fn default_macro_problem_has_the_paper_data() {
        let p = MacroConfig::default().problem().unwrap();
        assert_eq!(p.mesh.num_vertices(), 51 * 51);
        assert!(((p.initial)([0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!((p.initial)([0.5, 0.8]), 0.0);
        assert_eq!((p.source)([0.6, 0.6], 1.0), 1000.0);
        assert_eq!((p.source)([0.9, 1.5], 1.0), 0.0);
    }
}
