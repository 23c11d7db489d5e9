//! On-disk artifacts. Floats are written in Rust's shortest round-trip form
//! (`{:?}`), so every file parses back to the exact values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nesht_core::StepRecord;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(s: &str, path: &Path) -> Result<f64, HarnessError> {
    s.parse()
        .map_err(|_| HarnessError::io(path, format!("bad number {s:?}")))
}

fn parse_opt(s: &str, path: &Path) -> Result<Option<f64>, HarnessError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, path).map(Some)
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Paths of everything written under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn trajectory(&self, run: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run}.csv"))
    }

    /// Trajectory being written; renamed to [`Layout::trajectory`] on completion.
    pub fn partial_trajectory(&self, run: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run}.csv.part"))
    }

    pub fn final_theta(&self, run: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run}.theta.csv"))
    }

    pub fn checkpoint(&self, run: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{run}.json"))
    }

    pub fn heatmap(&self, run: &str) -> PathBuf {
        self.root.join("heatmaps").join(format!("{run}.csv"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// One parsed row of a trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub score: f64,
    pub proxy: f64,
    pub l0: usize,
    pub dist_to_optimum: Option<f64>,
    pub group_norms: Vec<f64>,
}

pub fn trajectory_header(groups: usize) -> String {
    let mut h = String::from("step,score,proxy,l0,dist_to_optimum");
    for g in 0..groups {
        h.push_str(&format!(",group{g}"));
    }
    h.push('\n');
    h
}

pub fn trajectory_line(rec: &StepRecord) -> String {
    let mut line = format!(
        "{},{},{},{},{}",
        rec.step,
        fmt_f64(rec.score),
        fmt_f64(rec.proxy),
        rec.l0,
        fmt_opt(rec.dist_to_optimum)
    );
    for g in &rec.group_norms {
        line.push(',');
        line.push_str(&fmt_f64(*g));
    }
    line.push('\n');
    line
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, HarnessError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| HarnessError::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let mut rows = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(|e| HarnessError::io(path, e))?;
        if rec.len() < 5 {
            return Err(HarnessError::io(path, "short trajectory row"));
        }
        rows.push(TrajectoryRow {
            step: rec[0]
                .parse()
                .map_err(|_| HarnessError::io(path, "bad step"))?,
            score: parse_f64(&rec[1], path)?,
            proxy: parse_f64(&rec[2], path)?,
            l0: rec[3]
                .parse()
                .map_err(|_| HarnessError::io(path, "bad l0"))?,
            dist_to_optimum: parse_opt(&rec[4], path)?,
            group_norms: rec
                .iter()
                .skip(5)
                .map(|s| parse_f64(s, path))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

pub fn vector_csv(v: &[f64]) -> String {
    let mut s = String::from("index,value\n");
    for (i, x) in v.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", fmt_f64(*x)));
    }
    s
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, HarnessError> {
    reader(path)?
        .records()
        .map(|r| {
            let r = r.map_err(|e| HarnessError::io(path, e))?;
            parse_f64(r.get(1).unwrap_or(""), path)
        })
        .collect()
}

/// Steps-by-groups matrix of L1 group norms.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub steps: Vec<u64>,
    pub cells: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn from_trajectory(rows: &[TrajectoryRow]) -> Self {
        Self {
            steps: rows.iter().map(|r| r.step).collect(),
            cells: rows.iter().map(|r| r.group_norms.clone()).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let groups = self.cells.first().map_or(0, Vec::len);
        let mut s = String::from("step");
        for g in 0..groups {
            s.push_str(&format!(",{g}"));
        }
        s.push('\n');
        for (step, row) in self.steps.iter().zip(&self.cells) {
            s.push_str(&step.to_string());
            for v in row {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let mut steps = Vec::new();
        let mut cells = Vec::new();
        for rec in reader(path)?.records() {
            let rec = rec.map_err(|e| HarnessError::io(path, e))?;
            steps.push(
                rec[0]
                    .parse()
                    .map_err(|_| HarnessError::io(path, "bad step"))?,
            );
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|s| parse_f64(s, path))
                    .collect::<Result<_, _>>()?,
            );
        }
        Ok(Self { steps, cells })
    }
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub problem: String,
    pub arm: String,
    pub beta: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub final_score: f64,
    pub mean_last_10: f64,
    pub support_recall: Option<f64>,
    pub support_precision: Option<f64>,
    pub final_proxy: f64,
    pub final_dist: Option<f64>,
}

const SUMMARY_HEADER: &str = "run,problem,arm,beta,k,seed,final_score,mean_last_10,support_recall,support_precision,final_proxy,final_dist\n";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.run,
            r.problem,
            r.arm,
            fmt_f64(r.beta),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.seed,
            fmt_f64(r.final_score),
            fmt_f64(r.mean_last_10),
            fmt_opt(r.support_recall),
            fmt_opt(r.support_precision),
            fmt_f64(r.final_proxy),
            fmt_opt(r.final_dist),
        ));
    }
    s
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut rows = Vec::new();
    for rec in reader(path)?.records() {
        let r = rec.map_err(|e| HarnessError::io(path, e))?;
        if r.len() != 12 {
            return Err(HarnessError::io(path, "summary row has wrong width"));
        }
        rows.push(SummaryRow {
            run: r[0].to_string(),
            problem: r[1].to_string(),
            arm: r[2].to_string(),
            beta: parse_f64(&r[3], path)?,
            k: if r[4].is_empty() {
                None
            } else {
                Some(r[4].parse().map_err(|_| HarnessError::io(path, "bad k"))?)
            },
            seed: r[5]
                .parse()
                .map_err(|_| HarnessError::io(path, "bad seed"))?,
            final_score: parse_f64(&r[6], path)?,
            mean_last_10: parse_f64(&r[7], path)?,
            support_recall: parse_opt(&r[8], path)?,
            support_precision: parse_opt(&r[9], path)?,
            final_proxy: parse_f64(&r[10], path)?,
            final_dist: parse_opt(&r[11], path)?,
        });
    }
    Ok(rows)
}
