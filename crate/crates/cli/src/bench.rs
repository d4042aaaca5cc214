//! Benchmark suites over the job corpus.

use std::io::Write;
use std::path::{Path, PathBuf};

use qbarrier_core::synth::Status;
use serde::Serialize;

use crate::config::{load_config, JobConfig, Overrides, Suite};
use crate::{run_job, CliError, RunReport};

/// One repetition of one job.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRun {
    pub job: String,
    pub repetition: usize,
    pub seed: u64,
    pub qubits: usize,
    pub degree: Option<u32>,
    pub terms: Option<usize>,
    pub samples: usize,
    pub status: Status,
    pub generation_seconds: f64,
    pub verification_seconds: f64,
}

/// Aggregate over repetitions of one job.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub job: String,
    pub qubits: usize,
    pub degree: Option<u32>,
    pub terms: Option<usize>,
    pub samples: usize,
    pub status: String,
    pub expected: Option<String>,
    pub generation: (f64, f64),
    pub verification: (f64, f64),
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Jobs in `corpus` that belong to `suite`, sorted by name.
pub fn suite_jobs(corpus: &Path, suite: Suite) -> Result<Vec<(PathBuf, JobConfig)>, CliError> {
    let entries = std::fs::read_dir(corpus)
        .map_err(|e| CliError::Io(format!("{}: {e}", corpus.display())))?;
    let mut jobs = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::Io(format!("{}: {e}", corpus.display())))?
            .path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        let cfg = load_config(&path)?;
        if cfg.suite == Some(suite) {
            jobs.push((path, cfg));
        }
    }
    jobs.sort_by(|a, b| a.1.name.cmp(&b.1.name));
    Ok(jobs)
}

fn status_summary(runs: &[&BenchRun]) -> String {
    let first = runs[0].status;
    if runs.iter().all(|r| r.status == first) {
        return first.label().to_string();
    }
    let mut parts = Vec::new();
    for s in [Status::Solved, Status::Unsolved, Status::Unknown] {
        let n = runs.iter().filter(|r| r.status == s).count();
        if n > 0 {
            parts.push(format!("{} {n}/{}", s.label(), runs.len()));
        }
    }
    parts.join(", ")
}

fn aggregate(cfg: &JobConfig, runs: &[&BenchRun]) -> BenchRow {
    let gen: Vec<f64> = runs.iter().map(|r| r.generation_seconds).collect();
    let ver: Vec<f64> = runs.iter().map(|r| r.verification_seconds).collect();
    BenchRow {
        job: cfg.name.clone(),
        qubits: runs[0].qubits,
        degree: runs[0].degree,
        terms: runs.iter().rev().find_map(|r| r.terms),
        samples: runs[0].samples,
        status: status_summary(runs),
        expected: cfg.expected.clone(),
        generation: mean_sd(&gen),
        verification: mean_sd(&ver),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

/// Fixed-width table of aggregated rows.
pub fn render_table(rows: &[BenchRow]) -> String {
    let header = [
        "Experiment",
        "# Qubits",
        "Degree",
        "# Terms",
        "# Samples",
        "Status",
        "Gen time (s)",
        "Verif time (s)",
        "Expected",
    ];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.job.clone(),
                r.qubits.to_string(),
                opt(r.degree),
                opt(r.terms),
                r.samples.to_string(),
                r.status.clone(),
                format!("{:.3} ± {:.3}", r.generation.0, r.generation.1),
                format!("{:.3} ± {:.3}", r.verification.0, r.verification.1),
                r.expected.clone().unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn write_csv(path: &Path, runs: &[BenchRun]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(
        w,
        "job,repetition,seed,qubits,degree,terms,samples,status,generation_seconds,verification_seconds"
    )
    .map_err(io)?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{:.6},{:.6}",
            r.job,
            r.repetition,
            r.seed,
            r.qubits,
            opt(r.degree),
            opt(r.terms),
            r.samples,
            r.status.label(),
            r.generation_seconds,
            r.verification_seconds
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub struct BenchResult {
    pub runs: Vec<BenchRun>,
    pub rows: Vec<BenchRow>,
    pub table: String,
    pub csv: PathBuf,
}

/// Runs every job of `suite` `repetitions` times (seed `s + r` for
/// repetition `r`) and writes `bench_<suite>.csv` and `bench_<suite>.txt`
/// into `out`.
pub fn cmd_bench(
    corpus: &Path,
    suite: Suite,
    repetitions: usize,
    overrides: &Overrides,
    out: &Path,
) -> Result<BenchResult, CliError> {
    if repetitions == 0 {
        return Err(CliError::Config("repetitions must be positive".into()));
    }
    let jobs = suite_jobs(corpus, suite)?;
    if jobs.is_empty() {
        return Err(CliError::Config(format!(
            "no `{}` jobs in {}",
            suite.name(),
            corpus.display()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (_, base) in &jobs {
        let mut cfg = base.clone();
        overrides.apply(&mut cfg);
        let seed0 = cfg.seed;
        let mut mine = Vec::new();
        for rep in 0..repetitions {
            cfg.seed = seed0.wrapping_add(rep as u64);
            let dir = out.join(&cfg.name).join(format!("rep{rep}"));
            log::info!("{} repetition {rep}", cfg.name);
            let report: RunReport = run_job(&cfg, &dir)?;
            mine.push(BenchRun {
                job: cfg.name.clone(),
                repetition: rep,
                seed: cfg.seed,
                qubits: report.qubits,
                degree: report.degree,
                terms: report.active_terms.or(report.terms),
                samples: report.samples,
                status: report.status,
                generation_seconds: report.generation_seconds,
                verification_seconds: report.verification_seconds,
            });
        }
        let refs: Vec<&BenchRun> = mine.iter().collect();
        rows.push(aggregate(base, &refs));
        runs.extend(mine);
    }
    let csv = out.join(format!("bench_{}.csv", suite.name()));
    write_csv(&csv, &runs)?;
    let table = render_table(&rows);
    let txt = out.join(format!("bench_{}.txt", suite.name()));
    std::fs::write(&txt, &table).map_err(|e| CliError::Io(format!("{}: {e}", txt.display())))?;
    Ok(BenchResult {
        runs,
        rows,
        table,
        csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn table_has_all_columns() {
        let row = BenchRow {
            job: "z".into(),
            qubits: 3,
            degree: Some(2),
            terms: Some(2),
            samples: 10,
            status: "solved".into(),
            expected: None,
            generation: (0.5, 0.1),
            verification: (0.2, 0.0),
        };
        let t = render_table(&[row]);
        for col in [
            "# Qubits",
            "Degree",
            "# Terms",
            "# Samples",
            "Status",
            "Gen time",
            "Verif time",
        ] {
            assert!(t.contains(col), "{col}");
        }
        assert!(t.contains("0.500 ± 0.100"));
    }
}
