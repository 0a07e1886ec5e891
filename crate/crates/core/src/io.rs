//! Run records as JSON-lines, aggregates as CSV.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! yields bit-identical values. Non-finite metrics are written as `null` in
//! JSON and `NaN` in CSV.
//!
//! Aggregate CSV columns, in order:
//!
//! | columns | meaning |
//! |---|---|
//! | `bias_index`, `alpha_index`, `lambda_index` | grid cell |
//! | `bias`, `alpha`, `lambda` | cell values |
//! | `n_runs`, `n_missing`, `complete` | completed runs, failed runs, `n_missing == 0` |
//! | `n_converged`, `n_eps_nash` | counts |
//! | `convergence_freq`, `eps_nash_freq` | counts over `n_runs` |
//! | `<m>_mean` … `<m>_hist` | summary of metric `<m>` over converged runs (see below) |
//! | `modal_sender_actions`, `modal_sender_freq`, `modal_sender_support` | modal canonical sender policy |
//! | `modal_receiver_actions`, `modal_receiver_freq`, `modal_receiver_support` | modal canonical receiver policy |
//! | `n_modal_policies` | ε-Nash runs behind the modal policies |
//! | `modal_mi` | mutual information of the modal sender policy |
//! | `babbling_u_sender`, `babbling_u_receiver` | babbling payoffs |
//! | `optimal_u_sender`, `optimal_u_receiver`, `optimal_mi` | receiver-optimal partitional equilibrium |
//! | `equilibrium_mi_levels` | MI of every partitional equilibrium, descending |
//!
//! `<m>` runs over `u_sender`, `u_receiver`, `mutual_info`,
//! `max_subopt_sender`, `max_subopt_receiver`, `gain_sender`, `gain_receiver`,
//! and each expands to `_mean`, `_median`, `_q05`, `_q25`, `_q75`, `_q95`,
//! `_min`, `_max`, `_hist_lo`, `_hist_hi`, `_hist` (bin counts). List-valued
//! cells are `;`-separated; empty modal policies are empty cells.
//!
//! Equilibrium CSV columns: `bias`, `n_blocks`, `boundaries` (last type index
//! of each block), `block_actions` (action indices), `block_action_values`,
//! `u_sender`, `u_receiver`, `mutual_info`; one row per equilibrium.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::ModalPolicy;
use crate::equilibria::PartitionalEquilibrium;
use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::stats::{Histogram, Summary};
use crate::sweep::{AggregateRecord, Benchmarks, CellKey, RunRecord};

pub const METRIC_COLUMNS: [&str; 7] = [
    "u_sender",
    "u_receiver",
    "mutual_info",
    "max_subopt_sender",
    "max_subopt_receiver",
    "gain_sender",
    "gain_receiver",
];

const SUMMARY_SUFFIXES: [&str; 11] = [
    "mean", "median", "q05", "q25", "q75", "q95", "min", "max", "hist_lo", "hist_hi", "hist",
];

/// Header of the aggregate CSV.
pub fn aggregate_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "bias_index",
        "alpha_index",
        "lambda_index",
        "bias",
        "alpha",
        "lambda",
        "n_runs",
        "n_missing",
        "complete",
        "n_converged",
        "n_eps_nash",
        "convergence_freq",
        "eps_nash_freq",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in METRIC_COLUMNS {
        for s in SUMMARY_SUFFIXES {
            cols.push(format!("{m}_{s}"));
        }
    }
    cols.extend(
        [
            "modal_sender_actions",
            "modal_sender_freq",
            "modal_sender_support",
            "modal_receiver_actions",
            "modal_receiver_freq",
            "modal_receiver_support",
            "n_modal_policies",
            "modal_mi",
            "babbling_u_sender",
            "babbling_u_receiver",
            "optimal_u_sender",
            "optimal_u_receiver",
            "optimal_mi",
            "equilibrium_mi_levels",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols
}

/// Streaming JSON-lines writer; one record per line.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    /// Truncates `path`.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RecordWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| Error::io(&self.path, e.into()))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Pushes buffered lines to disk, so a crash loses at most the current cell.
    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

pub fn emit_records<'a, I>(records: I, path: impl AsRef<Path>) -> Result<()>
where
    I: IntoIterator<Item = &'a RunRecord>,
{
    let mut w = RecordWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Reads a JSON-lines file. Blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn aggregate_row(a: &AggregateRecord) -> Vec<String> {
    let mut row = vec![
        a.cell.bias_index.to_string(),
        a.cell.alpha_index.to_string(),
        a.cell.lambda_index.to_string(),
        a.bias.to_string(),
        a.alpha.to_string(),
        a.lambda.to_string(),
        a.n_runs.to_string(),
        a.n_missing.to_string(),
        a.is_complete().to_string(),
        a.n_converged.to_string(),
        a.n_eps_nash.to_string(),
        a.convergence_freq.to_string(),
        a.eps_nash_freq.to_string(),
    ];
    for s in summaries(a) {
        row.extend([
            s.mean.to_string(),
            s.median.to_string(),
            s.q05.to_string(),
            s.q25.to_string(),
            s.q75.to_string(),
            s.q95.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.histogram.lo.to_string(),
            s.histogram.hi.to_string(),
            join(&s.histogram.counts),
        ]);
    }
    for m in [&a.modal_sender, &a.modal_receiver] {
        match m {
            Some(m) => row.extend([join(&m.actions), join(&m.frequencies), join(&m.support)]),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
    }
    let n_modal = a.modal_sender.as_ref().map_or(0, |m| m.n_policies);
    let b = &a.benchmarks;
    row.extend([
        n_modal.to_string(),
        a.modal_mi.to_string(),
        b.babbling_u_sender.to_string(),
        b.babbling_u_receiver.to_string(),
        b.optimal_u_sender.to_string(),
        b.optimal_u_receiver.to_string(),
        b.optimal_mi.to_string(),
        join(&b.equilibrium_mi_levels),
    ]);
    row
}

fn summaries(a: &AggregateRecord) -> [&Summary; 7] {
    [
        &a.u_sender,
        &a.u_receiver,
        &a.mutual_info,
        &a.max_subopt_sender,
        &a.max_subopt_receiver,
        &a.gain_sender,
        &a.gain_receiver,
    ]
}

/// Writes one row per aggregate; zero aggregates give a header-only file.
pub fn emit_aggregates(aggregates: &[AggregateRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(aggregate_columns())
        .map_err(|e| Error::csv(path, e))?;
    for a in aggregates {
        w.write_record(aggregate_row(a))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const EQUILIBRIUM_COLUMNS: [&str; 8] = [
    "bias",
    "n_blocks",
    "boundaries",
    "block_actions",
    "block_action_values",
    "u_sender",
    "u_receiver",
    "mutual_info",
];

/// Writes the equilibria of each game; `label` names the destination in errors.
pub fn write_equilibria<W: Write>(
    out: W,
    label: &Path,
    games: &[(GameSpec, Vec<PartitionalEquilibrium>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EQUILIBRIUM_COLUMNS)
        .map_err(|e| Error::csv(label, e))?;
    for (spec, equilibria) in games {
        for e in equilibria {
            let values: Vec<f64> = e.block_actions.iter().map(|&a| spec.actions()[a]).collect();
            w.write_record([
                spec.bias().to_string(),
                e.partition.n_blocks().to_string(),
                join(&e.partition.boundaries()),
                join(&e.block_actions),
                join(&values),
                e.u_sender.to_string(),
                e.u_receiver.to_string(),
                e.mutual_info.to_string(),
            ])
            .map_err(|e| Error::csv(label, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(label, e))
}

pub fn emit_equilibria(
    games: &[(GameSpec, Vec<PartitionalEquilibrium>)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_equilibria(BufWriter::new(file), path, games)
}

/// Column lookup by header name over one CSV row.
struct Row<'a> {
    headers: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
    line: u64,
}

impl Row<'_> {
    fn raw(&self, col: &str) -> std::result::Result<&str, String> {
        self.headers
            .iter()
            .position(|h| h == col)
            .and_then(|i| self.record.get(i))
            .ok_or_else(|| format!("missing column {col}"))
    }

    fn parse<T: std::str::FromStr>(&self, col: &str) -> std::result::Result<T, String> {
        let raw = self.raw(col)?;
        raw.trim()
            .parse()
            .map_err(|_| format!("line {}: column {col}: cannot parse {raw:?}", self.line))
    }

    fn list<T: std::str::FromStr>(&self, col: &str) -> std::result::Result<Vec<T>, String> {
        let raw = self.raw(col)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(';')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| format!("line {}: column {col}: cannot parse {x:?}", self.line))
            })
            .collect()
    }

    fn summary(&self, metric: &str, n: usize) -> std::result::Result<Summary, String> {
        let f = |s: &str| self.parse::<f64>(&format!("{metric}_{s}"));
        Ok(Summary {
            n,
            mean: f("mean")?,
            median: f("median")?,
            q05: f("q05")?,
            q25: f("q25")?,
            q75: f("q75")?,
            q95: f("q95")?,
            min: f("min")?,
            max: f("max")?,
            histogram: Histogram {
                lo: f("hist_lo")?,
                hi: f("hist_hi")?,
                counts: self.list(&format!("{metric}_hist"))?,
            },
        })
    }

    fn modal(
        &self,
        role: &str,
        n_policies: usize,
    ) -> std::result::Result<Option<ModalPolicy>, String> {
        let actions: Vec<usize> = self.list(&format!("modal_{role}_actions"))?;
        if actions.is_empty() {
            return Ok(None);
        }
        Ok(Some(ModalPolicy {
            actions,
            frequencies: self.list(&format!("modal_{role}_freq"))?,
            support: self.list(&format!("modal_{role}_support"))?,
            n_policies,
        }))
    }

    fn aggregate(&self) -> std::result::Result<AggregateRecord, String> {
        let n_converged: usize = self.parse("n_converged")?;
        let n_modal: usize = self.parse("n_modal_policies")?;
        Ok(AggregateRecord {
            cell: CellKey {
                bias_index: self.parse("bias_index")?,
                alpha_index: self.parse("alpha_index")?,
                lambda_index: self.parse("lambda_index")?,
            },
            bias: self.parse("bias")?,
            alpha: self.parse("alpha")?,
            lambda: self.parse("lambda")?,
            n_runs: self.parse("n_runs")?,
            n_missing: self.parse("n_missing")?,
            n_converged,
            n_eps_nash: self.parse("n_eps_nash")?,
            convergence_freq: self.parse("convergence_freq")?,
            eps_nash_freq: self.parse("eps_nash_freq")?,
            u_sender: self.summary("u_sender", n_converged)?,
            u_receiver: self.summary("u_receiver", n_converged)?,
            mutual_info: self.summary("mutual_info", n_converged)?,
            max_subopt_sender: self.summary("max_subopt_sender", n_converged)?,
            max_subopt_receiver: self.summary("max_subopt_receiver", n_converged)?,
            gain_sender: self.summary("gain_sender", n_converged)?,
            gain_receiver: self.summary("gain_receiver", n_converged)?,
            modal_sender: self.modal("sender", n_modal)?,
            modal_receiver: self.modal("receiver", n_modal)?,
            modal_mi: self.parse("modal_mi")?,
            benchmarks: Benchmarks {
                babbling_u_sender: self.parse("babbling_u_sender")?,
                babbling_u_receiver: self.parse("babbling_u_receiver")?,
                optimal_u_sender: self.parse("optimal_u_sender")?,
                optimal_u_receiver: self.parse("optimal_u_receiver")?,
                optimal_mi: self.parse("optimal_mi")?,
                equilibrium_mi_levels: self.list("equilibrium_mi_levels")?,
            },
        })
    }
}

pub fn read_aggregates(path: impl AsRef<Path>) -> Result<Vec<AggregateRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let record = rec.map_err(|e| Error::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = Row {
            headers: &headers,
            record: &record,
            line,
        };
        out.push(row.aggregate().map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Metrics;
    use crate::learner::Policy;
    use crate::simulation::DeviationReference;
    use crate::sweep::RunKey;

    fn record(i: usize, with_policies: bool) -> RunRecord {
        let x = i as f64;
        RunRecord {
            key: RunKey {
                cell: CellKey {
                    bias_index: i % 7,
                    alpha_index: 0,
                    lambda_index: 1,
                },
                replication: i,
            },
            seed: u64::MAX - i as u64,
            game_fingerprint: 0xdead_beef_0123_4567,
            bias: 0.005 * x,
            alpha: 0.1,
            lambda: 5e-6,
            converged: !i.is_multiple_of(3),
            periods_elapsed: 123_456 + i as u64,
            final_temperature: 0.1 * (-5e-6 * x).exp(),
            convergence_reference: if i.is_multiple_of(2) {
                DeviationReference::Anchored
            } else {
                DeviationReference::Consecutive
            },
            metrics: Metrics {
                u_sender: -1.0 / (3.0 + x),
                u_receiver: -0.1 / (7.0 + x),
                mutual_info: if i == 2 { f64::NAN } else { 1.0 / (1.0 + x) },
                max_subopt_sender: 1e-17 * x,
                max_subopt_receiver: 0.1 + 0.2,
                gain_sender: std::f64::consts::PI * 1e-5,
                gain_receiver: 0.0,
                is_eps_nash: i.is_multiple_of(2),
            },
            policy_sender: with_policies.then(|| {
                Policy::from_rows(vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![0.5, 0.5]]).unwrap()
            }),
            policy_receiver: with_policies
                .then(|| Policy::from_rows(vec![vec![0.1, 0.2, 0.7]]).unwrap()),
        }
    }

    fn same(a: &RunRecord, b: &RunRecord) -> bool {
        let nan_safe = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        a.key == b.key
            && a.seed == b.seed
            && a.game_fingerprint == b.game_fingerprint
            && a.bias.to_bits() == b.bias.to_bits()
            && a.final_temperature.to_bits() == b.final_temperature.to_bits()
            && a.convergence_reference == b.convergence_reference
            && nan_safe(a.metrics.mutual_info, b.metrics.mutual_info)
            && a.metrics.u_sender.to_bits() == b.metrics.u_sender.to_bits()
            && a.metrics.max_subopt_sender.to_bits() == b.metrics.max_subopt_sender.to_bits()
            && a.metrics.max_subopt_receiver.to_bits() == b.metrics.max_subopt_receiver.to_bits()
            && a.metrics.is_eps_nash == b.metrics.is_eps_nash
            && a.policy_sender == b.policy_sender
            && a.policy_receiver == b.policy_receiver
    }

    #[test]
    fn records_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let recs: Vec<RunRecord> = (0..20).map(|i| record(i, i % 4 == 0)).collect();
        emit_records(&recs, &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert!(same(a, b), "{a:?}\n{b:?}");
        }
        // overwrite is idempotent
        let first = std::fs::read(&path).unwrap();
        emit_records(&recs, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn large_files_have_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("many.jsonl");
        let recs: Vec<RunRecord> = (0..100_000).map(|i| record(i, false)).collect();
        emit_records(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 100_000);
        assert_eq!(read_records(&path).unwrap().len(), 100_000);
    }

    #[test]
    fn bad_json_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        emit_records(&[record(1, false)], &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        std::fs::write(&path, text).unwrap();
        match read_records(&path) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_records(dir.path().join("absent")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn empty_aggregate_file_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        emit_aggregates(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), aggregate_columns().join(","));
        assert!(read_aggregates(&path).unwrap().is_empty());
    }

    #[test]
    fn column_names_are_unique() {
        let cols = aggregate_columns();
        let set: std::collections::HashSet<_> = cols.iter().collect();
        assert_eq!(set.len(), cols.len());
    }

    #[test]
    fn equilibrium_table() {
        let spec = GameSpec::baseline(6, 0.35).unwrap();
        let eqs = crate::equilibria::enumerate_equilibria(&spec);
        let mut buf = Vec::new();
        write_equilibria(&mut buf, Path::new("<memory>"), &[(spec, eqs)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], EQUILIBRIUM_COLUMNS.join(","));
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("0.35,1,5,5,0.5,"), "{}", lines[1]);
    }
}
