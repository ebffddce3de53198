//! File formats of a run directory.
//!
//! ```text
//! config.json                      effective RunConfig
//! targets.json                     [{id, params, metrics, labels, seed}]
//! target_<id>_obs_<noise>.csv      t, p_lv, p_sa, p_sv, V_lv (corrupted)
//! records.jsonl                    one RunRecord per line
//! heatmap_<threshold>_<noise>.csv  parameters × subsets + null
//! null_baseline.csv, comparison.csv, convergence_<filter>.csv,
//! blind_state.csv, psa_run_<id>.csv
//! ```
//!
//! Every CSV starts with a `# config-hash: <hex>` line followed by a header.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::RunConfig;
use crate::experiments::{
    blind_state_error, convergence, heatmap, null_baseline, select_targets, summarize, FilterKind, RunRecord,
};
use crate::model::{ObservationSubset, ParameterVector};
use crate::solver::Trajectory;
use crate::synth::{TargetCase, TargetSignals};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: record {index}: {source}")]
    Record {
        path: PathBuf,
        index: usize,
        source: serde_json::Error,
    },
    #[error("{0}: no records")]
    EmptyRecords(PathBuf),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render a CSV document with the provenance line.
pub fn csv_string(hash: &str, header: &[String], rows: &[Vec<String>]) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    let body = String::from_utf8(bytes).expect("csv output is utf-8");
    Ok(format!("# config-hash: {hash}\n{body}"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

const STATE_HEADER: [&str; 5] = ["t", "p_lv", "p_sa", "p_sv", "V_lv"];

/// `t,p_lv,p_sa,p_sv,V_lv` at 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory, hash: &str) -> Result<String, IoError> {
    let header: Vec<String> = STATE_HEADER.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = traj
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            std::iter::once(traj.time(i))
                .chain(s.to_array())
                .map(sig17)
                .collect()
        })
        .collect();
    csv_string(hash, &header, &rows)
}

/// Corrupted signals of one target, all four columns.
pub fn observation_csv(signals: &TargetSignals, hash: &str) -> Result<String, IoError> {
    let header: Vec<String> = STATE_HEADER.iter().map(|s| s.to_string()).collect();
    let n = signals.observed[0].len();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            std::iter::once(i as f64 * signals.dt)
                .chain(signals.observed.iter().map(|s| s[i]))
                .map(sig17)
                .collect()
        })
        .collect();
    csv_string(hash, &header, &rows)
}

pub fn observation_file_name(id: usize, noise: f64) -> String {
    format!("target_{id}_obs_{noise}.csv")
}

pub fn write_targets(path: &Path, targets: &[TargetCase]) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(targets).expect("targets serialise");
    write_file(path, &(json + "\n"))
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetCase>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn records_jsonl(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialise"));
        out.push('\n');
    }
    out
}

/// Parse `records.jsonl`; errors name the 1-based record index.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|source| IoError::Record {
            path: path.to_owned(),
            index: i + 1,
            source,
        })?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(IoError::EmptyRecords(path.to_owned()));
    }
    Ok(out)
}

/// Union of two record sets; `new` wins on equal specs. Sorted by spec key.
pub fn merge_records(existing: Vec<RunRecord>, new: Vec<RunRecord>) -> Vec<RunRecord> {
    let keys: BTreeSet<_> = new.iter().map(|r| r.spec.key()).collect();
    let mut all: Vec<RunRecord> = existing.into_iter().filter(|r| !keys.contains(&r.spec.key())).collect();
    all.extend(new);
    all.sort_by_key(|r| r.spec.key());
    all
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

/// All report files, rendered in memory so a failure leaves nothing behind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub files: Vec<(String, String)>,
}

impl Report {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
        let mut out = Vec::with_capacity(self.files.len());
        for (name, contents) in &self.files {
            let p = dir.join(name);
            write_file(&p, contents)?;
            out.push(p);
        }
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

/// Heatmaps for every `(filter, noise, threshold)` present, the null
/// baseline, the filter comparison with convergence bands, and the blind
/// arterial-pressure check.
pub fn build_report(
    cfg: &RunConfig,
    targets: &[TargetCase],
    records: &[RunRecord],
    thresholds: &[f64],
) -> Result<Report, IoError> {
    let hash = cfg.hash();
    let guess = cfg.model.nominal;
    let names: Vec<String> = ParameterVector::NAMES.iter().map(|s| s.to_string()).collect();
    let mut files = Vec::new();

    let nulls: Vec<_> = thresholds.iter().map(|t| null_baseline(&guess, targets, *t)).collect();
    {
        let header: Vec<String> = std::iter::once("parameter".to_string())
            .chain(thresholds.iter().map(|t| format!("null_{t}")))
            .collect();
        let rows: Vec<Vec<String>> = names
            .iter()
            .enumerate()
            .map(|(p, n)| std::iter::once(n.clone()).chain(nulls.iter().map(|v| pct(v[p]))).collect())
            .collect();
        files.push(("null_baseline.csv".into(), csv_string(&hash, &header, &rows)?));
    }

    let combos: BTreeSet<(FilterKind, u64)> =
        records.iter().map(|r| (r.spec.filter_kind, r.spec.noise.sigma_noise.to_bits())).collect();
    for (kind, noise_bits) in &combos {
        let noise = f64::from_bits(*noise_bits);
        for (t, null) in thresholds.iter().zip(&nulls) {
            let table = heatmap(records, targets.len(), null, *t, noise, *kind);
            let header: Vec<String> = std::iter::once("parameter".to_string()).chain(table.columns.clone()).collect();
            let rows: Vec<Vec<String>> = names
                .iter()
                .zip(&table.cells)
                .map(|(n, row)| {
                    std::iter::once(n.clone())
                        .chain(row.iter().map(|c| c.map(pct).unwrap_or_default()))
                        .collect()
                })
                .collect();
            let suffix = if *kind == FilterKind::Modified { String::new() } else { format!("_{kind}") };
            files.push((format!("heatmap_{t}_{noise}{suffix}.csv"), csv_string(&hash, &header, &rows)?));
        }
    }

    // Filter comparison on the full subset.
    let full = ObservationSubset::full();
    let mut summary_rows = Vec::new();
    for kind in [FilterKind::Modified, FilterKind::Original] {
        let sel: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.spec.filter_kind == kind && r.spec.subset == full && r.spec.noise.sigma_noise == cfg.experiment.compare_noise)
            .collect();
        if sel.is_empty() {
            continue;
        }
        let rows = convergence(&sel, targets);
        let mut header = vec!["iter".to_string(), "active".to_string()];
        for n in &names {
            header.extend([format!("{n}_ratio_mean"), format!("{n}_ratio_sd"), format!("{n}_accuracy_mean")]);
        }
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut v = vec![r.iter.to_string(), r.active.to_string()];
                for p in 0..names.len() {
                    v.extend([sig17(r.ratio_mean[p]), sig17(r.ratio_sd[p]), pct(r.accuracy_mean[p])]);
                }
                v
            })
            .collect();
        files.push((format!("convergence_{kind}.csv"), csv_string(&hash, &header, &body)?));
        let s = summarize(&sel, kind);
        let mut row = vec![
            kind.to_string(),
            s.runs.to_string(),
            s.converged.to_string(),
            s.diverged.to_string(),
            s.solver_failed.to_string(),
            s.runs_8_of_10_at_98.to_string(),
        ];
        row.extend(s.mean_accuracy.iter().map(|a| pct(*a)));
        summary_rows.push(row);
    }
    if !summary_rows.is_empty() {
        let mut header: Vec<String> = ["filter", "runs", "converged", "diverged", "solver_failed", "runs_8_of_10_at_98"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(names.iter().map(|n| format!("{n}_mean_accuracy")));
        files.push(("comparison.csv".into(), csv_string(&hash, &header, &summary_rows)?));
    }

    // Blind arterial pressure from subset {1,4}.
    let pair: ObservationSubset = "1,4".parse().expect("valid subset");
    let blind: Vec<&RunRecord> = records
        .iter()
        .filter(|r| {
            r.spec.filter_kind == FilterKind::Modified
                && r.spec.subset == pair
                && r.spec.noise.sigma_noise == cfg.experiment.blind_noise
        })
        .collect();
    if !blind.is_empty() {
        let ids: Vec<usize> = blind.iter().map(|r| r.spec.target_id).collect();
        let picked = select_targets(&ids, cfg.experiment.blind_runs, cfg.experiment.seed);
        let mut rows = Vec::new();
        for id in picked {
            let (Some(r), Some(t)) = (blind.iter().find(|r| r.spec.target_id == id), targets.iter().find(|t| t.id == id))
            else {
                continue;
            };
            match blind_state_error(r, t, cfg.filter.tau_k, &cfg.solver) {
                Ok(b) => {
                    let header: Vec<String> =
                        ["t", "p_sa_true", "p_sa_est"].iter().map(|s| s.to_string()).collect();
                    let body: Vec<Vec<String>> = (0..b.t.len())
                        .map(|i| vec![sig17(b.t[i]), sig17(b.p_sa_true[i]), sig17(b.p_sa_est[i])])
                        .collect();
                    files.push((format!("psa_run_{id}.csv"), csv_string(&hash, &header, &body)?));
                    rows.push(vec![
                        id.to_string(),
                        "ok".into(),
                        sig17(b.rmse),
                        sig17(b.pulse_pressure),
                        sig17(b.relative_error()),
                    ]);
                }
                Err(e) => rows.push(vec![id.to_string(), format!("failed: {e}"), String::new(), String::new(), String::new()]),
            }
        }
        let header: Vec<String> = ["target_id", "status", "rmse", "pulse_pressure", "relative_error"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        files.push(("blind_state.csv".into(), csv_string(&hash, &header, &rows)?));
    }

    Ok(Report { files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_carries_hash_and_quotes_labels() {
        let s = csv_string("abc", &["parameter".into(), "1,4".into()], &[vec!["R_s".into(), "95.00".into()]]).unwrap();
        assert_eq!(s, "# config-hash: abc\nparameter,\"1,4\"\nR_s,95.00\n");
    }

    #[test]
    fn sig17_round_trips() {
        for v in [0.1, 1.0 / 3.0, 117.3456789, -2.5e-9] {
            assert_eq!(sig17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn empty_records_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        fs::write(&p, "\n").unwrap();
        assert!(matches!(read_records(&p), Err(IoError::EmptyRecords(_))));
        fs::write(&p, "{\"spec\": 1}\n").unwrap();
        assert!(matches!(read_records(&p), Err(IoError::Record { index: 1, .. })));
    }
}
