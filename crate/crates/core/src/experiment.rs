//! Reproducible Monte Carlo harness: splitmix-derived per-sample seeds,
//! order-independent parallel execution, merged statistics and JSON-lines
//! persistence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

/// SplitMix64 mixing step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed: base seed XOR splitmix of the sample index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ splitmix64(index)
}

/// FNV-1a digest of a configuration string, as fixed-width hex.
pub fn config_digest(config: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub i: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub config_digest: String,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub mean: f64,
    pub stderr: f64,
    pub warnings: usize,
    pub wall_time_s: f64,
    pub tool_version: String,
}

impl ExperimentRecord {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.value).collect()
    }
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Run `task(i, derived_seed)` for i in 0..n across the rayon pool. Results
/// land in sample order, so the record does not depend on the degree of
/// parallelism. Failed samples are kept with their error message and
/// excluded from the statistics.
pub fn run_experiment(
    id: &str,
    config: &str,
    n: usize,
    seed: u64,
    task: impl Fn(usize, u64) -> Result<f64, String> + Sync,
) -> ExperimentRecord {
    assert!(n >= 2, "run_experiment needs N >= 2");
    let t0 = Instant::now();
    let samples: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            match task(i, s) {
                Ok(v) => Sample {
                    i,
                    seed: s,
                    value: Some(v),
                    error: None,
                },
                Err(e) => Sample {
                    i,
                    seed: s,
                    value: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let values: Vec<f64> = samples.iter().filter_map(|s| s.value).collect();
    let warnings = samples.len() - values.len();
    let (mean, stderr) = mean_stderr(&values);
    ExperimentRecord {
        id: id.to_string(),
        config_digest: config_digest(config),
        seed,
        samples,
        mean,
        stderr,
        warnings,
        wall_time_s: t0.elapsed().as_secs_f64(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Pass iff |mean - reference_mean| <= k_sigma * sqrt(reference_sigma^2 + stderr^2).
pub fn compare_to_reference(
    mean: f64,
    stderr: f64,
    reference_mean: f64,
    reference_sigma: f64,
    k_sigma: f64,
) -> bool {
    assert!(reference_sigma > 0.0, "reference sigma must be positive");
    let stderr = if stderr.is_finite() { stderr } else { 0.0 };
    (mean - reference_mean).abs() <= k_sigma * (reference_sigma.powi(2) + stderr.powi(2)).sqrt()
}

/// Concatenate two records of the same experiment; statistics are recomputed
/// from the union of samples.
pub fn merge_records(a: &ExperimentRecord, b: &ExperimentRecord) -> Result<ExperimentRecord, String> {
    if a.config_digest != b.config_digest {
        return Err(format!(
            "config digests differ: {} vs {}",
            a.config_digest, b.config_digest
        ));
    }
    let mut samples = a.samples.clone();
    let offset = samples.len();
    samples.extend(b.samples.iter().map(|s| Sample {
        i: s.i + offset,
        ..s.clone()
    }));
    let values: Vec<f64> = samples.iter().filter_map(|s| s.value).collect();
    let warnings = samples.len() - values.len();
    let (mean, stderr) = mean_stderr(&values);
    Ok(ExperimentRecord {
        id: a.id.clone(),
        config_digest: a.config_digest.clone(),
        seed: a.seed,
        samples,
        mean,
        stderr,
        warnings,
        wall_time_s: a.wall_time_s + b.wall_time_s,
        tool_version: a.tool_version.clone(),
    })
}

/// Append-only JSON-lines persistence: one object per sample, then a footer
/// object with the summary statistics.
pub fn write_jsonl(record: &ExperimentRecord, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?,
    );
    for s in &record.samples {
        writeln!(f, "{}", serde_json::to_string(s)?)?;
    }
    let footer = serde_json::json!({
        "footer": true,
        "id": record.id,
        "config_digest": record.config_digest,
        "seed": record.seed,
        "n": record.samples.len(),
        "mean": record.mean,
        "stderr": record.stderr,
        "warnings": record.warnings,
        "wall_time_s": record.wall_time_s,
        "tool_version": record.tool_version,
    });
    writeln!(f, "{footer}")?;
    Ok(())
}

/// Read back every sample line of a JSON-lines file (footers are skipped).
pub fn read_jsonl_samples(path: &Path) -> std::io::Result<Vec<Sample>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v.get("footer").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_task_statistics() {
        let rec = run_experiment("const", "cfg", 100, 7, |_, _| Ok(0.5));
        assert_eq!(rec.mean, 0.5);
        assert_eq!(rec.stderr, 0.0);
        assert_eq!(rec.warnings, 0);
    }

    #[test]
    fn determinism_and_parallel_independence() {
        let task = |i: usize, s: u64| Ok((splitmix64(s ^ i as u64) % 1000) as f64);
        let a = run_experiment("d", "cfg", 64, 42, task);
        let b = run_experiment("d", "cfg", 64, 42, task);
        assert_eq!(a.values(), b.values());

        // single-thread pool gives bit-identical results
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| run_experiment("d", "cfg", 64, 42, task));
        assert_eq!(a.values(), c.values());
    }

    #[test]
    fn failures_are_warned_and_excluded() {
        let rec = run_experiment("f", "cfg", 10, 1, |i, _| {
            if i % 3 == 0 {
                Err("boom".into())
            } else {
                Ok(1.0)
            }
        });
        assert_eq!(rec.warnings, 4);
        assert_eq!(rec.values().len(), 6);
        assert_eq!(rec.mean, 1.0);
    }

    #[test]
    fn merge_reproduces_pooled_mean() {
        let t1 = |i: usize, _: u64| Ok(i as f64);
        let a = run_experiment("m", "cfg", 10, 3, t1);
        let b = run_experiment("m", "cfg", 6, 4, t1);
        let merged = merge_records(&a, &b).unwrap();
        let pooled: Vec<f64> = a.values().into_iter().chain(b.values()).collect();
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        assert_eq!(merged.mean, mean);
        assert_eq!(merged.samples.len(), 16);
    }

    #[test]
    fn reference_comparison() {
        assert!(compare_to_reference(0.2053, 0.0, 0.2053, 0.0142, 3.0));
        assert!(!compare_to_reference(0.50, 0.0, 0.2053, 0.0142, 3.0));
    }

    #[test]
    fn jsonl_roundtrip() {
        let rec = run_experiment("io", "cfg", 4, 9, |i, _| Ok(i as f64));
        let dir = std::env::temp_dir().join(format!("qreset-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.jsonl");
        let _ = std::fs::remove_file(&path);
        write_jsonl(&rec, &path).unwrap();
        let samples = read_jsonl_samples(&path).unwrap();
        assert_eq!(samples.len(), 4);
        assert_eq!(samples[2].value, Some(2.0));
        std::fs::remove_file(&path).unwrap();
    }
}
