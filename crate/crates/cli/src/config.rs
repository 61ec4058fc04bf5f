use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nonholo::{parse_expr, ExcludedSet, ProbeBudget, SystemModel, VectorField};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    #[serde(default)]
    pub task: TaskBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Classic,
    GeneralR2,
    GeneralR3,
    GeneralizedRm,
    PairwiseRm,
    DriftR3,
    ComplexPlane,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub variant: Variant,
    pub field: Option<Vec<String>>,
    pub excluded: Option<ExcludedBlock>,
    pub drift: Option<String>,
    pub m: Option<usize>,
    pub pairs: Option<Vec<PairBlock>>,
    pub re: Option<String>,
    pub im: Option<String>,
    pub conj_power: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcludedBlock {
    #[serde(default = "origin")]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub note: Option<String>,
}

fn origin() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0]]
}

/// Pair field in local variables `x1 = x_i`, `x2 = x_j`; indices are one based.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairBlock {
    pub i: usize,
    pub j: usize,
    pub field: [String; 2],
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    pub from: Option<Vec<f64>>,
    pub to: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub inputs: Option<String>,
    #[serde(default)]
    pub probe: ProbeBlock,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub half_width: Option<f64>,
    pub grid: Option<usize>,
    pub loop_centers: Option<usize>,
    pub radii: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message().trim().replace('\n', " ")))?;
    Ok(cfg)
}

fn field_of(comps: &[String], dim: usize, excluded: Option<&ExcludedBlock>) -> Result<VectorField> {
    ensure!(comps.len() == dim, "system.field needs {dim} components, got {}", comps.len());
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    let f = VectorField::parse(&refs).context("system.field")?;
    Ok(match excluded {
        Some(e) => f.with_excluded(excluded_set(e)),
        None => f,
    })
}

fn excluded_set(e: &ExcludedBlock) -> ExcludedSet {
    let note = e.note.clone().unwrap_or_else(|| {
        if e.points == origin() {
            ExcludedSet::origin().note
        } else {
            "declared points excluded".into()
        }
    });
    ExcludedSet { points: e.points.clone(), note }
}

impl SystemBlock {
    pub fn build(&self) -> Result<SystemModel> {
        let need_field = |dim| {
            let comps =
                self.field.as_ref().with_context(|| format!("variant needs system.field with {dim} components"))?;
            field_of(comps, dim, self.excluded.as_ref())
        };
        let sys = match self.variant {
            Variant::Classic => SystemModel::Classic,
            Variant::GeneralR2 => SystemModel::general_r2(need_field(2)?)?,
            Variant::GeneralR3 => SystemModel::general_r3(need_field(3)?)?,
            Variant::DriftR3 => {
                let g = self.drift.as_deref().context("drift_r3 needs system.drift")?;
                SystemModel::drift_r3(parse_expr(g).context("system.drift")?, need_field(3)?)?
            }
            Variant::GeneralizedRm => SystemModel::generalized_rm(self.m.context("generalized_rm needs system.m")?)?,
            Variant::PairwiseRm => {
                let m = self.m.context("pairwise_rm needs system.m")?;
                let mut fields = BTreeMap::new();
                for p in self.pairs.as_deref().context("pairwise_rm needs [[system.pairs]]")? {
                    ensure!(
                        1 <= p.i && p.i < p.j && p.j <= m,
                        "pair ({}, {}) must satisfy 1 <= i < j <= {m}",
                        p.i,
                        p.j
                    );
                    let f = field_of(&p.field, 2, self.excluded.as_ref())
                        .with_context(|| format!("pair ({}, {})", p.i, p.j))?;
                    if fields.insert((p.i - 1, p.j - 1), f).is_some() {
                        bail!("pair ({}, {}) declared twice", p.i, p.j);
                    }
                }
                SystemModel::pairwise(m, fields)?
            }
            Variant::ComplexPlane => {
                let excluded = self.excluded.as_ref().map(excluded_set);
                match (&self.re, &self.im, self.conj_power) {
                    (None, None, Some(n)) => {
                        ensure!(excluded.is_none(), "conj_power takes no excluded set");
                        SystemModel::conj_power(n)
                    }
                    (Some(re), Some(im), None) => SystemModel::complex_plane(
                        parse_expr(re).context("system.re")?,
                        parse_expr(im).context("system.im")?,
                        excluded,
                    )?,
                    _ => bail!("complex_plane needs either system.re and system.im, or system.conj_power"),
                }
            }
        };
        Ok(sys)
    }
}

impl ProbeBlock {
    pub fn budget(&self, seed: u64, tol: Option<f64>) -> Result<ProbeBudget> {
        let mut b = ProbeBudget { seed, ..ProbeBudget::default() };
        if let Some(h) = self.half_width {
            ensure!(h > 0.0 && h.is_finite(), "task.probe.half_width must be positive");
            b.half_width = h;
        }
        if let Some(g) = self.grid {
            ensure!(g >= 2, "task.probe.grid must be at least 2");
            b.grid = g;
        }
        if let Some(c) = self.loop_centers {
            ensure!(c >= 1, "task.probe.loop_centers must be at least 1");
            b.loop_centers = c;
        }
        if let Some(r) = &self.radii {
            ensure!(!r.is_empty() && r.iter().all(|v| *v > 0.0 && v.is_finite()), "task.probe.radii must be positive");
            b.radii = r.clone();
        }
        if let Some(t) = tol {
            b.tol = t;
        }
        Ok(b)
    }
}
