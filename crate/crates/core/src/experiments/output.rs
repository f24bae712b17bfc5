//! CSV and summary emission for sweeps and label grids.
//!
//! `results.csv` is the machine-readable contract and is bitwise
//! deterministic for a fixed `(config, master seed)`; measured wall times
//! go to the separate `timings.csv`. A plain-text summary accompanies
//! both for human reading, including any per-condition failures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{LabelGridResult, SweepResult, SweepRow};
use crate::metrics::{Counted, MetricsReport};

/// Fixed header of `results.csv`.
pub const RESULTS_HEADER: &str = "axis,snr_db,n_c,trojan_ratio,non_target,target,seed,\
p_a,p_a_num,p_a_den,p_un,p_un_num,p_un_den,p_u,p_u_num,p_u_den,p_na,p_na_num,p_na_den,\
recon_mse_clean,recon_mse_poisoned,recon_mse_clean_no_attack,eval_repeats";

/// Fixed header of `timings.csv`.
pub const TIMINGS_HEADER: &str =
    "axis,snr_db,n_c,trojan_ratio,non_target,target,seed,wall_time_s";

fn counted_cells(c: &Counted) -> String {
    match c.value() {
        Some(v) => format!("{v},{},{}", c.numerator, c.denominator),
        None => format!(",{},{}", c.numerator, c.denominator),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One `results.csv` row for a report measured under `axis`.
pub fn report_csv_row(axis: &str, report: &MetricsReport) -> String {
    let c = &report.condition;
    format!(
        "{axis},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        c.snr_db,
        c.n_c,
        c.trojan_ratio,
        c.non_target,
        c.target,
        c.seed,
        counted_cells(&report.attack_success),
        counted_cells(&report.clean_non_target_acc),
        counted_cells(&report.clean_overall_acc),
        counted_cells(&report.no_attack_acc),
        opt_cell(report.recon_mse_clean),
        opt_cell(report.recon_mse_poisoned),
        opt_cell(report.recon_mse_clean_no_attack),
    ) + &format!(",{}", report.eval_repeats)
}

fn failed_csv_row(axis: &str, row: &SweepRow) -> String {
    let c = row.condition();
    format!(
        "{axis},{},{},{},{},{},{},,0,0,,0,0,,0,0,,0,0,,,,0",
        c.snr_db, c.n_c, c.trojan_ratio, c.non_target, c.target, row.seed()
    )
}

struct CsvFile {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl CsvFile {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::create(&path).map_err(|e| Error::io(&display, e))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{header}").map_err(|e| Error::io(&display, e))?;
        Ok(CsvFile { path, writer })
    }

    fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}").map_err(|e| Error::io(self.path.display().to_string(), e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        Ok(self.path)
    }
}

/// Paths written by [`write_sweep_outputs`].
#[derive(Debug, Clone)]
pub struct SweepFiles {
    pub results_csv: PathBuf,
    pub timings_csv: PathBuf,
    pub summary_txt: PathBuf,
}

/// Writes `results.csv`, `timings.csv` and `summary.txt` into `out_dir`.
pub fn write_sweep_outputs(result: &SweepResult, out_dir: &Path) -> Result<SweepFiles> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let axis = result.axis.name();

    let mut results = CsvFile::create(out_dir.join("results.csv"), RESULTS_HEADER)?;
    let mut timings = CsvFile::create(out_dir.join("timings.csv"), TIMINGS_HEADER)?;
    let mut summary = String::new();
    for row in &result.rows {
        match row {
            SweepRow::Done(outcome) => {
                results.line(&report_csv_row(axis, &outcome.attack))?;
                let c = &outcome.condition;
                timings.line(&format!(
                    "{axis},{},{},{},{},{},{},{:.3}",
                    c.snr_db,
                    c.n_c,
                    c.trojan_ratio,
                    c.non_target,
                    c.target,
                    outcome.seed,
                    outcome.wall_time_s
                ))?;
                summary.push_str(&format!("{}\n\n", outcome.attack));
            }
            SweepRow::Failed {
                condition,
                seed,
                error,
            } => {
                results.line(&failed_csv_row(axis, row))?;
                summary.push_str(&format!(
                    "condition: snr_db={} n_c={} trojan_ratio={} labels {}->{} seed={}\n  FAILED: {error}\n\n",
                    condition.snr_db,
                    condition.n_c,
                    condition.trojan_ratio,
                    condition.non_target,
                    condition.target,
                    seed
                ));
            }
        }
    }
    let results_csv = results.finish()?;
    let timings_csv = timings.finish()?;
    let summary_txt = out_dir.join("summary.txt");
    std::fs::write(&summary_txt, summary)
        .map_err(|e| Error::io(summary_txt.display().to_string(), e))?;
    Ok(SweepFiles {
        results_csv,
        timings_csv,
        summary_txt,
    })
}

/// Paths written by [`write_grid_outputs`].
#[derive(Debug, Clone)]
pub struct GridFiles {
    pub grid_csv: PathBuf,
    pub heatmap_csv: PathBuf,
    pub histogram_csv: PathBuf,
    pub summary_txt: PathBuf,
}

/// Writes the label-grid outputs: long-form per-pair rows, the 10x10
/// heatmap matrix (empty diagonal), histogram counts, and a summary.
pub fn write_grid_outputs(grid: &LabelGridResult, out_dir: &Path) -> Result<GridFiles> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut long = CsvFile::create(
        out_dir.join("label_grid.csv"),
        "non_target,target,seed,p_a,p_a_num,p_a_den",
    )?;
    for entry in &grid.entries {
        long.line(&format!(
            "{},{},{},{}",
            entry.non_target,
            entry.target,
            entry.seed,
            counted_cells(&entry.attack_success)
        ))?;
    }
    let grid_csv = long.finish()?;

    let header = std::iter::once("non_target".to_string())
        .chain((0..10).map(|t| format!("target_{t}")))
        .collect::<Vec<_>>()
        .join(",");
    let mut heat = CsvFile::create(out_dir.join("label_grid_heatmap.csv"), &header)?;
    for nt in 0..10 {
        let cells: Vec<String> = (0..10).map(|t| opt_cell(grid.matrix[nt][t])).collect();
        heat.line(&format!("{nt},{}", cells.join(",")))?;
    }
    let heatmap_csv = heat.finish()?;

    let mut hist = CsvFile::create(
        out_dir.join("label_grid_histogram.csv"),
        "bin_lo,bin_hi,count",
    )?;
    for &(lo, hi, count) in &grid.histogram {
        hist.line(&format!("{lo},{hi},{count}"))?;
    }
    let histogram_csv = hist.finish()?;

    let mut summary = format!(
        "label grid: {} entries\n  p_a min:  {}\n  p_a max:  {}\n  p_a mean: {}\n",
        grid.entries.len(),
        opt_cell(grid.min),
        opt_cell(grid.max),
        opt_cell(grid.mean),
    );
    for entry in grid.entries.iter().filter(|e| e.error.is_some()) {
        summary.push_str(&format!(
            "  FAILED {}->{} seed {}: {}\n",
            entry.non_target,
            entry.target,
            entry.seed,
            entry.error.as_deref().unwrap_or("")
        ));
    }
    let summary_txt = out_dir.join("label_grid_summary.txt");
    std::fs::write(&summary_txt, summary)
        .map_err(|e| Error::io(summary_txt.display().to_string(), e))?;
    Ok(GridFiles {
        grid_csv,
        heatmap_csv,
        histogram_csv,
        summary_txt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{load_source_data, run_label_grid, run_sweep, ExperimentConfig, SweepAxis};

    fn fast_cfg() -> ExperimentConfig {
        ExperimentConfig {
            synthetic: true,
            synthetic_per_class: 12,
            train_subset: 0,
            rounds: 1,
            epochs_ae_per_round: 2,
            epochs_clf_per_round: 2,
            batch_size: 16,
            n_c: 16,
            seeds: vec![7],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sweep_outputs_have_stable_schema_and_row_counts() {
        let mut cfg = fast_cfg();
        cfg.axis = SweepAxis::Snr;
        cfg.axis_values = vec![0.0, 10.0];
        let data = load_source_data(&cfg).unwrap();
        let result = run_sweep(&cfg, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_sweep_outputs(&result, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.results_csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER);
        assert_eq!(text.lines().count(), 3);
        for line in text.lines().skip(1) {
            assert_eq!(
                line.split(',').count(),
                RESULTS_HEADER.split(',').count(),
                "row arity differs from header: {line}"
            );
            assert!(line.starts_with("snr,"));
        }
        let timing_text = std::fs::read_to_string(&files.timings_csv).unwrap();
        assert_eq!(timing_text.lines().count(), 3);
        assert!(std::fs::read_to_string(&files.summary_txt)
            .unwrap()
            .contains("attack success"));
    }

    #[test]
    fn results_csv_is_bitwise_reproducible() {
        let mut cfg = fast_cfg();
        cfg.axis = SweepAxis::TrojanRatio;
        cfg.axis_values = vec![0.0, 0.5];
        let data = load_source_data(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        let a = run_sweep(&cfg, &data).unwrap();
        let b = run_sweep(&cfg, &data).unwrap();
        let fa = write_sweep_outputs(&a, &a_dir).unwrap();
        let fb = write_sweep_outputs(&b, &b_dir).unwrap();
        let bytes_a = std::fs::read(&fa.results_csv).unwrap();
        let bytes_b = std::fs::read(&fb.results_csv).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn grid_outputs_have_empty_diagonal_and_full_histogram() {
        let mut cfg = fast_cfg();
        cfg.label_pairs = 3;
        let data = load_source_data(&cfg).unwrap();
        let grid = run_label_grid(&cfg, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_grid_outputs(&grid, dir.path()).unwrap();
        let heat = std::fs::read_to_string(&files.heatmap_csv).unwrap();
        assert_eq!(heat.lines().count(), 11);
        for (nt, line) in heat.lines().skip(1).enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 11);
            assert_eq!(cells[0], nt.to_string());
            assert!(cells[nt + 1].is_empty(), "diagonal cell {nt} not empty");
        }
        let hist = std::fs::read_to_string(&files.histogram_csv).unwrap();
        assert_eq!(hist.lines().count(), 1 + super::super::GRID_HISTOGRAM_BINS);
        let long = std::fs::read_to_string(&files.grid_csv).unwrap();
        assert_eq!(long.lines().count(), 4);
    }
}
