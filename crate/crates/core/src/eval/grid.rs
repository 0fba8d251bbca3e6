//! Exhaustive hyperparameter search over simulation settings.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_simulation_on, EvalCorpus, Metric, SimulationConfig};
use crate::error::{Error, Result};
use crate::svm::KernelKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub c_reg: Vec<f64>,
    pub positives: Vec<usize>,
    pub negative_multiplier: Vec<usize>,
    pub kernel: Vec<KernelKind>,
    pub retrieval_limit: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            c_reg: vec![0.1, 1.0, 10.0, 100.0],
            positives: vec![1, 2, 3, 4],
            negative_multiplier: vec![1, 2, 3, 4],
            kernel: KernelKind::ALL.to_vec(),
            retrieval_limit: vec![2500, 5000, 7500, 10000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub c_reg: f64,
    pub positives: usize,
    pub negative_multiplier: usize,
    pub kernel: KernelKind,
    pub retrieval_limit: usize,
}

impl Grid {
    /// Cartesian product in declaration order.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &c_reg in &self.c_reg {
            for &positives in &self.positives {
                for &negative_multiplier in &self.negative_multiplier {
                    for &kernel in &self.kernel {
                        for &retrieval_limit in &self.retrieval_limit {
                            out.push(GridCell {
                                c_reg,
                                positives,
                                negative_multiplier,
                                kernel,
                                retrieval_limit,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cell: GridCell,
    /// Final-round MAP averaged over strategies.
    pub final_map: f64,
    pub final_recall: f64,
}

fn apply(base: &SimulationConfig, cell: &GridCell) -> SimulationConfig {
    let mut cfg = base.clone();
    cfg.svm.c_reg = cell.c_reg;
    cfg.svm.kernel = cell.kernel;
    cfg.actor.positives = cell.positives;
    cfg.actor.negative_multiplier = cell.negative_multiplier;
    cfg.retrieval_limit = cell.retrieval_limit;
    cfg
}

/// Runs every grid cell and ranks by final-round MAP; equal MAP prefers
/// the lower negative multiplier, then the lower retrieval limit.
pub fn grid_search(grid: &Grid, base: &SimulationConfig, data: &EvalCorpus) -> Result<Vec<GridResult>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("parameter grid is empty".into()));
    }
    let mut results: Vec<GridResult> = cells
        .into_par_iter()
        .map(|cell| {
            let report = run_simulation_on(&apply(base, &cell), data)?;
            let strategies = report.strategies();
            let last = |metric| {
                strategies
                    .iter()
                    .map(|&s| *report.curve(s, metric).last().unwrap_or(&0.0))
                    .sum::<f64>()
                    / strategies.len() as f64
            };
            Ok(GridResult {
                final_map: last(Metric::Map),
                final_recall: last(Metric::Recall),
                cell,
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| {
        b.final_map
            .total_cmp(&a.final_map)
            .then(a.cell.negative_multiplier.cmp(&b.cell.negative_multiplier))
            .then(a.cell.retrieval_limit.cmp(&b.cell.retrieval_limit))
            .then(a.cell.c_reg.total_cmp(&b.cell.c_reg))
            .then(a.cell.positives.cmp(&b.cell.positives))
            .then(a.cell.kernel.cmp(&b.cell.kernel))
    });
    Ok(results)
}

pub fn write_grid_csv(results: &[GridResult], k_map: usize, k_recall: usize, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "rank,c_reg,positives,negative_multiplier,kernel,retrieval_limit,final_map_at_{k_map},final_recall_at_{k_recall}"
    )?;
    for (i, r) in results.iter().enumerate() {
        let c = &r.cell;
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6}",
            i + 1,
            c.c_reg,
            c.positives,
            c.negative_multiplier,
            c.kernel,
            c.retrieval_limit,
            r.final_map,
            r.final_recall
        )?;
    }
    Ok(())
}
