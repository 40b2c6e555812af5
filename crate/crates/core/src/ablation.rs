//! Ablation grids over checker on/off, sampling strategy and frame budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, EvalOptions, EvalReport};
use crate::pipeline::{run_dataset, Backends, PipelineConfig, RunManifest};
use crate::report::AblationRow;
use crate::sampler::{SamplerConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub vlc: bool,
    pub kfs: Strategy,
    pub number: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_fraction: Option<f64>,
}

impl GridCell {
    pub fn new(vlc: bool, kfs: Strategy, number: usize) -> Self {
        Self {
            vlc,
            kfs,
            number,
            head_fraction: None,
        }
    }

    /// Directory-safe cell name, e.g. `vlc-uniform-40`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}",
            if self.vlc { "vlc" } else { "novlc" },
            self.kfs,
            self.number
        )
    }
}

/// Either explicit rows or the cross product of three axes.
#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    Rows {
        rows: Vec<GridCell>,
    },
    Axes {
        vlc: Vec<bool>,
        kfs: Vec<Strategy>,
        number: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub cells: Vec<GridCell>,
}

impl GridSpec {
    /// The eight configurations of the published ablation table.
    pub fn table2() -> Self {
        use Strategy::*;
        let cells = [
            (false, HeadContinue, 40),
            (false, Uniform, 10),
            (false, Uniform, 20),
            (false, Uniform, 30),
            (false, Uniform, 40),
            (true, HeadContinue, 40),
            (true, Uniform, 40),
            (true, Hybrid, 40),
        ]
        .into_iter()
        .map(|(v, k, n)| GridCell::new(v, k, n))
        .collect();
        Self { cells }
    }

    /// Cross product in axis order vlc → kfs → number.
    pub fn cross(vlc: &[bool], kfs: &[Strategy], number: &[usize]) -> Self {
        let mut cells = Vec::new();
        for &v in vlc {
            for &k in kfs {
                for &n in number {
                    cells.push(GridCell::new(v, k, n));
                }
            }
        }
        Self { cells }
    }

    /// Parses a TOML or JSON grid file (`rows = [...]` or `vlc`/`kfs`/`number` axes).
    pub fn parse(text: &str) -> Result<Self> {
        let file: GridFile = match serde_json::from_str(text) {
            Ok(f) => f,
            Err(_) => toml::from_str(text).map_err(|e| Error::Config(format!("bad grid spec: {e}")))?,
        };
        let spec = match file {
            GridFile::Rows { rows } => Self { cells: rows },
            GridFile::Axes { vlc, kfs, number } => Self::cross(&vlc, &kfs, &number),
        };
        if spec.cells.is_empty() {
            return Err(Error::Config("grid spec has no cells".into()));
        }
        Ok(spec)
    }

    /// `table2` names the built-in grid; anything else is a file path.
    pub fn load(spec: &str) -> Result<Self> {
        if spec == "table2" {
            return Ok(Self::table2());
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub cell: GridCell,
    pub config: PipelineConfig,
    pub manifest: RunManifest,
    pub report: EvalReport,
}

impl AblationResult {
    pub fn row(&self) -> AblationRow {
        AblationRow {
            vlc: self.cell.vlc,
            strategy: self.cell.kfs,
            number: self.cell.number,
            report: self.report.clone(),
        }
    }
}

/// Config for one grid cell; predictions go to `<output_root>/<label>`.
pub fn cell_config(base: &PipelineConfig, cell: &GridCell, index: usize) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.sampler = SamplerConfig {
        strategy: cell.kfs,
        budget: cell.number,
        head_fraction: cell.head_fraction.unwrap_or(base.sampler.head_fraction),
    };
    cfg.vlc_enabled = cell.vlc;
    cfg.output_root = base.output_root.join(format!("{index:02}-{}", cell.label()));
    cfg
}

/// Runs and scores every cell against the dataset's ground truth.
pub fn ablation_grid(
    dataset: &DatasetIndex,
    grid: &GridSpec,
    base: &PipelineConfig,
    backends: &Backends,
    eval: &EvalOptions,
) -> Result<Vec<AblationResult>> {
    if !dataset.annotations_present {
        return Err(Error::DatasetFormat(format!(
            "{} has no ground-truth annotations",
            dataset.root.display()
        )));
    }
    if grid.cells.iter().any(|c| c.vlc) && backends.checker.is_none() {
        return Err(Error::Config("grid enables the checker but no checker backend is configured".into()));
    }
    grid.cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let config = cell_config(base, cell, i);
            let manifest = run_dataset(dataset, &config, backends)?;
            let report = evaluate_dataset(&config.output_root, &dataset.root, dataset, eval)?.report;
            log::info!("{}: J&F {:.2}", cell.label(), report.aggregate_jf() * 100.0);
            Ok(AblationResult {
                cell: cell.clone(),
                config,
                manifest,
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table2_shape() {
        let g = GridSpec::table2();
        assert_eq!(g.cells.len(), 8);
        assert_eq!(g.cells.iter().filter(|c| c.vlc).count(), 3);
        assert_eq!(g.cells[7], GridCell::new(true, Strategy::Hybrid, 40));
    }

    #[test]
    fn parse_rows_toml() {
        let text = r#"
            [[rows]]
            vlc = false
            kfs = "head-continue"
            number = 40

            [[rows]]
            vlc = true
            kfs = "hybrid"
            number = 20
            head_fraction = 0.25
        "#;
        let g = GridSpec::parse(text).unwrap();
        assert_eq!(g.cells.len(), 2);
        assert_eq!(g.cells[1].head_fraction, Some(0.25));
    }

    #[test]
    fn parse_axes_json() {
        let g = GridSpec::parse(r#"{"vlc":[false,true],"kfs":["uniform","hybrid"],"number":[10,20,40]}"#).unwrap();
        assert_eq!(g.cells.len(), 12);
        assert_eq!(g.cells[0], GridCell::new(false, Strategy::Uniform, 10));
        assert_eq!(g.cells[11], GridCell::new(true, Strategy::Hybrid, 40));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(GridSpec::parse("rows = []").is_err());
        assert!(GridSpec::parse(r#"{"rows":[{"vlc":true,"kfs":"random","number":1}]}"#).is_err());
    }

    #[test]
    fn cell_config_overrides_sampler_and_output() {
        let base = PipelineConfig::new(crate::pipeline::BackendSpec::Empty, "/out");
        let cfg = cell_config(&base, &GridCell::new(true, Strategy::Uniform, 10), 3);
        assert_eq!(cfg.sampler.budget, 10);
        assert_eq!(cfg.sampler.strategy, Strategy::Uniform);
        assert!(cfg.vlc_enabled);
        assert_eq!(cfg.output_root, Path::new("/out/03-vlc-uniform-10"));
    }
}
