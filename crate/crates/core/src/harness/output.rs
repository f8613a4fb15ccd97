//! Run artifacts. Everything except `timings.csv` is a deterministic function
//! of the configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Method, RunConfig};
use super::metrics::{aggregate, Curve};
use super::plot::{curves_svg, scatter_svg, ScatterPoint};
use super::run::RoundRecord;
use crate::env::Task;
use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};

pub const RECORDS_JSONL: &str = "records.jsonl";
pub const RECORDS_CSV: &str = "records.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const METADATA_JSON: &str = "metadata.json";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const CURVES_SVG: &str = "curves.svg";

/// Inclusive round ranges of the scatter windows.
pub const EARLY_WINDOW: (usize, usize) = (0, 20);
pub const LATE_WINDOW: (usize, usize) = (70, 90);

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    version: &'a str,
    policy: &'a str,
    /// Return treated as optimal when computing regret.
    regret_reference: f64,
    tasks: Vec<usize>,
    records: usize,
    runs: usize,
    methods: Vec<Method>,
    episodes_per_run: Vec<(Method, usize)>,
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::External(format!("csv buffer: {e}")))
}

pub fn records_jsonl(records: &[RoundRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_records_jsonl(text: &str) -> Result<Vec<RoundRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_records(dir: &Path) -> Result<Vec<RoundRecord>> {
    parse_records_jsonl(&read_to_string(&dir.join(RECORDS_JSONL))?)
}

fn ids_cell(ids: &Option<Vec<usize>>) -> String {
    match ids {
        Some(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
        None => String::new(),
    }
}

pub fn records_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    csv_text(
        &[
            "method", "task_id", "seed", "round", "episode", "return", "segment_ids", "mean_x",
            "mean_y", "failed",
        ],
        records.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.task_id.to_string(),
                r.seed.to_string(),
                r.round.to_string(),
                r.episode.to_string(),
                r.g.to_string(),
                ids_cell(&r.segment_ids),
                r.prompt_mean_state[0].to_string(),
                r.prompt_mean_state[1].to_string(),
                r.failed.to_string(),
            ]
        }),
    )
}

pub fn curve_csv(c: &Curve) -> Result<Vec<u8>> {
    csv_text(
        &["round", "mean", "std", "cum_regret"],
        (0..c.rounds()).map(|k| {
            vec![
                k.to_string(),
                c.mean[k].to_string(),
                c.std[k].to_string(),
                c.regret[k].to_string(),
            ]
        }),
    )
}

pub fn curve_file(method: Method) -> String {
    format!("curve_{method}.csv")
}

pub fn scatter_file(method: Method) -> String {
    format!("scatter_{method}.svg")
}

fn window_of(round: usize) -> Option<&'static str> {
    if (EARLY_WINDOW.0..=EARLY_WINDOW.1).contains(&round) {
        Some("early")
    } else if (LATE_WINDOW.0..=LATE_WINDOW.1).contains(&round) {
        Some("late")
    } else {
        None
    }
}

pub fn scatter_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    csv_text(
        &["window", "mean_x", "mean_y", "return", "method", "task_id", "seed", "round", "episode"],
        records.iter().filter_map(|r| {
            let w = window_of(r.round)?;
            Some(vec![
                w.to_string(),
                r.prompt_mean_state[0].to_string(),
                r.prompt_mean_state[1].to_string(),
                r.g.to_string(),
                r.method.to_string(),
                r.task_id.to_string(),
                r.seed.to_string(),
                r.round.to_string(),
                r.episode.to_string(),
            ])
        }),
    )
}

fn timings_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    csv_text(
        &["method", "task_id", "seed", "round", "episode", "wall_time_ms"],
        records.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.task_id.to_string(),
                r.seed.to_string(),
                r.round.to_string(),
                r.episode.to_string(),
                format!("{:.3}", r.wall_time_ms),
            ]
        }),
    )
}

/// Writes the raw records, timings and config echo.
pub fn write_records(dir: &Path, cfg: &RunConfig, records: &[RoundRecord]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put(CONFIG_ECHO, cfg.to_toml()?.as_bytes())?;
    put(RECORDS_JSONL, records_jsonl(records)?.as_bytes())?;
    put(RECORDS_CSV, &records_csv(records)?)?;
    put(TIMINGS_CSV, &timings_csv(records)?)?;
    Ok(written)
}

/// Aggregates records into curves, scatter data, plots and metadata.
pub fn write_reports(dir: &Path, cfg: &RunConfig, records: &[RoundRecord]) -> Result<Vec<Curve>> {
    let curves = aggregate(records, cfg.regret_reference)?;
    for c in &curves {
        write_atomic(&dir.join(curve_file(c.method)), &curve_csv(c)?)?;
    }
    write_atomic(&dir.join(SCATTER_CSV), &scatter_csv(records)?)?;
    let title = format!(
        "J={} H={} tasks={} seeds={}",
        cfg.segments,
        cfg.horizon,
        task_ids(records).len(),
        cfg.seeds.len()
    );
    write_atomic(&dir.join(CURVES_SVG), curves_svg(&curves, &title).as_bytes())?;

    let goals: Vec<Task> = task_ids(records)
        .into_iter()
        .filter_map(|id| Task::from_id(id).ok())
        .collect();
    for c in &curves {
        let pick = |w: &str| -> Vec<ScatterPoint> {
            records
                .iter()
                .filter(|r| r.method == c.method && window_of(r.round) == Some(w))
                .map(|r| ScatterPoint {
                    mean_state: r.prompt_mean_state,
                    g: r.g,
                })
                .collect()
        };
        let svg = scatter_svg(
            &[
                ("early (rounds 0-20)", pick("early")),
                ("late (rounds 70-90)", pick("late")),
            ],
            &goals,
            &c.method.to_string(),
        );
        write_atomic(&dir.join(scatter_file(c.method)), svg.as_bytes())?;
    }

    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        policy: &cfg.policy,
        regret_reference: cfg.regret_reference,
        tasks: task_ids(records).into_iter().collect(),
        records: records.len(),
        runs: curves.iter().map(|c| c.runs).sum(),
        methods: curves.iter().map(|c| c.method).collect(),
        episodes_per_run: curves
            .iter()
            .map(|c| (c.method, cfg.episodes_per_cell(c.method)))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    write_atomic(&dir.join(METADATA_JSON), text.as_bytes())?;
    Ok(curves)
}

fn task_ids(records: &[RoundRecord]) -> BTreeSet<usize> {
    records.iter().map(|r| r.task_id).collect()
}

/// Both record files and all reports.
pub fn emit_outputs(dir: &Path, cfg: &RunConfig, records: &[RoundRecord]) -> Result<Vec<Curve>> {
    write_records(dir, cfg, records)?;
    write_reports(dir, cfg, records)
}

/// Human-readable summary table of final performance.
pub fn summary_table(curves: &[Curve], window: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>5} {:>10} {:>10} {:>12}",
        "method", "runs", "first", "final", "cum_regret"
    );
    for c in curves {
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>10.3} {:>10.3} {:>12.1}",
            c.method.to_string(),
            c.runs,
            c.mean.first().copied().unwrap_or(f64::NAN),
            c.final_mean(window),
            c.regret.last().copied().unwrap_or(f64::NAN)
        );
    }
    s
}
