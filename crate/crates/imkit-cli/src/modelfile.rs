//! TOML model and field files with expression-grammar entries.
//!
//! Coordinate-wise model:
//! ```toml
//! p = 1
//! aux = "normal"              # normal | uniform | chisq1
//! g = ["theta_1 + u_1", "theta_1 + u_1"]
//! u_bracket = [-8.0, 8.0]     # bisection bracket for the inverse
//! u_range = [-1.0, 1.0]       # classification window
//! theta_range = [-1.0, 1.0]
//! ```
//!
//! Common-form model (`x_j = a(theta, u_j)`, used by the two-parameter and
//! rank tests):
//! ```toml
//! p = 2
//! form = "common"
//! a = "theta_2 * u_1 + theta_1"
//! ```
//!
//! Characteristic field file:
//! ```toml
//! n = 1
//! p = 1
//! g = [["u_1 * u_1"]]         # row i, column k entries
//! u0 = [1.0]
//! half_widths = [2.0]
//! radius = 0.4
//! ```

use std::sync::Arc;

use anyhow::{bail, Context};
use imkit::association::{Association, AuxiliaryDistribution, ParameterSpace};
use imkit::characteristics::CharacteristicField;
use imkit::expr::Expr;
use imkit::regular::{CommonFormModel, CoordinateModel};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct ModelFile {
    pub p: usize,
    #[serde(default)]
    pub form: Option<String>,
    #[serde(default)]
    pub aux: Option<String>,
    #[serde(default)]
    pub g: Vec<String>,
    #[serde(default)]
    pub a: Option<String>,
    #[serde(default)]
    pub u_bracket: Option<(f64, f64)>,
    #[serde(default)]
    pub u_range: Option<(f64, f64)>,
    #[serde(default)]
    pub theta_range: Option<(f64, f64)>,
}

impl ModelFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let f: ModelFile = toml::from_str(text).context("model file is not valid TOML")?;
        if f.p == 0 {
            bail!("model file: p must be >= 1");
        }
        Ok(f)
    }

    pub fn is_common_form(&self) -> bool {
        self.form.as_deref() == Some("common") || self.a.is_some()
    }

    pub fn coordinate_model(&self) -> anyhow::Result<CoordinateModel> {
        if self.is_common_form() {
            bail!("model file declares a common-form model; a coordinate list `g` is required here");
        }
        if self.g.is_empty() {
            bail!("model file: need at least one coordinate expression in `g`");
        }
        let exprs: Vec<Expr> = self
            .g
            .iter()
            .map(|s| Expr::parse(s))
            .collect::<Result<_, _>>()
            .context("model file: bad coordinate expression")?;
        Ok(CoordinateModel::from_exprs(exprs, self.p)?)
    }

    pub fn common_form_model(&self) -> anyhow::Result<CommonFormModel> {
        let src = self
            .a
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("model file: common form needs field `a`"))?;
        let expr = Expr::parse(src).context("model file: bad common-form expression")?;
        Ok(CommonFormModel::from_expr(expr, self.p)?)
    }

    fn aux_distribution(&self, n: usize) -> anyhow::Result<AuxiliaryDistribution> {
        Ok(match self.aux.as_deref().unwrap_or("normal") {
            "normal" => AuxiliaryDistribution::standard_normal(n),
            "uniform" => AuxiliaryDistribution::uniform01(n),
            "chisq1" => AuxiliaryDistribution::chi_square_1(n),
            other => bail!("model file: unknown aux '{other}' (normal | uniform | chisq1)"),
        })
    }

    /// Builds a full association for plausibility work: coordinate-wise
    /// forward maps with a bisection inverse on the declared bracket.
    pub fn association(&self) -> anyhow::Result<Association> {
        if self.p != 1 {
            bail!("expression-model plausibility supports one parameter (p = 1)");
        }
        let model = self.coordinate_model()?;
        let n = model.n_obs();
        let aux = self.aux_distribution(n)?;
        let bracket = self.u_bracket.unwrap_or((-8.0, 8.0));
        let m = Arc::new(model);
        let forward = {
            let m = Arc::clone(&m);
            Arc::new(move |u: &[f64], th: &[f64]| {
                (0..u.len()).map(|j| m.g(j, u[j], th)).collect::<Vec<f64>>()
            })
        };
        Ok(Association::from_monotone_forward(
            "expression-model",
            n,
            ParameterSpace::unbounded(1),
            aux,
            forward,
            vec![bracket; n],
        )?)
    }
}

#[derive(Deserialize)]
pub struct FieldFile {
    pub n: usize,
    pub p: usize,
    pub g: Vec<Vec<String>>,
    pub u0: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub tol: Option<f64>,
}

impl FieldFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let f: FieldFile = toml::from_str(text).context("field file is not valid TOML")?;
        if f.g.len() != f.n || f.g.iter().any(|row| row.len() != f.p) {
            bail!("field file: `g` must be an n x p array of expressions");
        }
        if f.u0.len() != f.n || f.half_widths.len() != f.p {
            bail!("field file: u0 must have length n and half_widths length p");
        }
        Ok(f)
    }

    pub fn field(&self) -> anyhow::Result<CharacteristicField> {
        let mut rows = Vec::with_capacity(self.n);
        for row in &self.g {
            let mut cols = Vec::with_capacity(self.p);
            for src in row {
                let e = Expr::parse(src).context("field file: bad entry expression")?;
                let (nu, nt) = e.arity();
                if nu > self.n || nt > 0 {
                    bail!("field entries may reference u_1..u_{} only", self.n);
                }
                cols.push(e);
            }
            rows.push(cols);
        }
        let n = self.n;
        let p = self.p;
        Ok(CharacteristicField::from_fn(
            n,
            p,
            vec![0.0; p],
            Arc::new(move |_tau, u| {
                imkit::nalgebra::DMatrix::from_fn(n, p, |i, k| rows[i][k].eval(u, &[]))
            }),
        ))
    }
}
