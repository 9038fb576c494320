//! `dicl boundcheck`: the multi-branch return bound over a grid of random
//! tabular model pairs.

use std::collections::BTreeMap;

use dicl_core::boundlab::{theorem1_sweep, SweepCell, SweepConfig};
use dicl_core::Result;
use serde::Serialize;

use crate::config::{write_json, write_resolved, GlobalArgs, RawConfig};

/// (p, k, T)
type CellKey = (String, usize, usize);
/// (holds, total, min slack, max lhs, max rhs)
type CellTally = (usize, usize, f64, f64, f64);

#[derive(Serialize)]
struct BoundReportFile<'a> {
    all_hold: bool,
    n_cells: usize,
    min_slack: f64,
    cells: &'a [SweepCell],
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut cfg: SweepConfig = crate::config::parse_table(raw.table)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    write_resolved(&args.out, &cfg)?;
    let cells = theorem1_sweep(&cfg)?;
    let min_slack = cells.iter().map(|c| c.report.slack).fold(f64::INFINITY, f64::min);
    let all_hold = cells.iter().all(|c| c.report.holds);
    write_json(
        &args.out.join("bound_report.json"),
        &BoundReportFile {
            all_hold,
            n_cells: cells.len(),
            min_slack,
            cells: &cells,
        },
    )?;

    let mut table: BTreeMap<CellKey, CellTally> = BTreeMap::new();
    for c in &cells {
        let e = table
            .entry((format!("{:.3}", c.p), c.k, c.min_context))
            .or_insert((0, 0, f64::INFINITY, 0.0, 0.0));
        e.0 += usize::from(c.report.holds);
        e.1 += 1;
        e.2 = e.2.min(c.report.slack);
        e.3 = e.3.max(c.report.lhs);
        e.4 = e.4.max(c.report.rhs);
    }
    println!(
        "{:>7} {:>3} {:>3} {:>9} {:>12} {:>12} {:>12}",
        "p", "k", "T", "holds", "min slack", "max lhs", "max rhs"
    );
    for ((p, k, t), (h, n, slack, lhs, rhs)) in table {
        println!(
            "{p:>7} {k:>3} {t:>3} {:>9} {slack:>12.6} {lhs:>12.6} {rhs:>12.6}",
            format!("{h}/{n}")
        );
    }
    Ok(())
}
