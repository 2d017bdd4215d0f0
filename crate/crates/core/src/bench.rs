//! Join benchmark runner.
//!
//! A [`Workload`] is generated deterministically from size parameters and a
//! seed. [`run`] executes it against a server (which was started with one
//! join implementation) and produces a [`Fragment`] of timing samples plus a
//! checksum of the results. [`report`] compares a nested-loop baseline
//! fragment with a candidate and produces the feedback sentence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::{Client, ClientError, Reply};
use crate::engine::JoinImpl;

pub const DEFAULT_REPETITIONS: usize = 5;
pub const TABLE_A: &str = "bench_a";
pub const TABLE_B: &str = "bench_b";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("bad report file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    pub rows_a: usize,
    pub rows_b: usize,
    /// Fraction of the smaller table's rows that find a join partner.
    pub match_rate: f64,
    pub repetitions: usize,
}

/// Built-in workloads: equal-sized tables with every key matching.
pub fn named_workload(name: &str) -> Option<WorkloadParams> {
    let rows = match name {
        "join_small" => 100,
        "join_300" => 300,
        "join_1k" => 1000,
        _ => return None,
    };
    Some(WorkloadParams {
        rows_a: rows,
        rows_b: rows,
        match_rate: 1.0,
        repetitions: DEFAULT_REPETITIONS,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub name: String,
    pub seed: u64,
    pub setup: Vec<String>,
    pub timed: Vec<String>,
    pub repetitions: usize,
}

/// Number of rows the workload's join returns.
pub fn expected_join_rows(params: &WorkloadParams) -> usize {
    let smaller = params.rows_a.min(params.rows_b);
    ((params.match_rate.clamp(0.0, 1.0) * smaller as f64).round() as usize).min(smaller)
}

/// Two tables keyed by `id`. Keys are unique within each table; exactly
/// [`expected_join_rows`] keys of `bench_b` also occur in `bench_a`.
pub fn generate_workload(name: &str, params: &WorkloadParams, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matched = expected_join_rows(params);

    let mut keys_a: Vec<i32> = (0..params.rows_a as i32).collect();
    keys_a.shuffle(&mut rng);
    let mut keys_b: Vec<i32> = keys_a[..matched].to_vec();
    keys_b.extend((0..(params.rows_b - matched) as i32).map(|j| params.rows_a as i32 + j));
    keys_b.shuffle(&mut rng);

    let mut setup = vec![
        format!("CREATE TABLE {TABLE_A} (id INT, a_val INT, a_tag VARCHAR)"),
        format!("CREATE TABLE {TABLE_B} (id INT, b_val INT, b_tag VARCHAR)"),
    ];
    for k in &keys_a {
        let v: i32 = rng.gen_range(-1000..1000);
        let tag: u32 = rng.gen_range(0..100_000);
        setup.push(format!("INSERT INTO {TABLE_A} VALUES ({k}, {v}, \"a{tag}\")"));
    }
    for k in &keys_b {
        let v: i32 = rng.gen_range(-1000..1000);
        let tag: u32 = rng.gen_range(0..100_000);
        setup.push(format!("INSERT INTO {TABLE_B} VALUES ({k}, {v}, \"b{tag}\")"));
    }
    let timed = vec![format!(
        "SELECT {TABLE_A}.id, {TABLE_A}.a_val, {TABLE_B}.b_val, {TABLE_B}.b_tag \
         FROM {TABLE_A}, {TABLE_B} WHERE {TABLE_A}.id = {TABLE_B}.id"
    )];
    Workload {
        name: name.to_string(),
        seed,
        setup,
        timed,
        repetitions: params.repetitions.max(1),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed(String),
    Invalid(String),
}

impl Status {
    fn label(&self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::Failed(_) => "FAILED",
            Status::Invalid(_) => "INVALID",
        }
    }

    fn message(&self) -> &str {
        match self {
            Status::Ok => "",
            Status::Failed(m) | Status::Invalid(m) => m,
        }
    }
}

/// Timing results of one workload against one join implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub workload: String,
    pub variant: JoinImpl,
    pub seed: u64,
    pub samples_ms: Vec<f64>,
    pub rows: u64,
    pub checksum: String,
    pub status: Status,
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        (s[mid - 1] + s[mid]) / 2.0
    }
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

impl Fragment {
    pub fn median_ms(&self) -> f64 {
        median(&self.samples_ms)
    }

    pub fn mean_ms(&self) -> f64 {
        mean(&self.samples_ms)
    }

    pub fn to_kv(&self) -> String {
        let samples: Vec<String> = self.samples_ms.iter().map(|s| format!("{s:.3}")).collect();
        let mut out = String::new();
        let _ = writeln!(out, "workload={}", self.workload);
        let _ = writeln!(out, "variant={}", self.variant);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "repetitions={}", self.samples_ms.len());
        let _ = writeln!(out, "median_ms={:.3}", self.median_ms());
        let _ = writeln!(out, "mean_ms={:.3}", self.mean_ms());
        let _ = writeln!(out, "samples_ms={}", samples.join(","));
        let _ = writeln!(out, "rows={}", self.rows);
        let _ = writeln!(out, "checksum={}", self.checksum);
        let _ = writeln!(out, "status={}", self.status.label());
        let _ = writeln!(out, "message={}", self.status.message());
        out
    }

    pub fn from_kv(text: &str) -> Result<Self, BenchError> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .collect();
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| BenchError::Format(format!("missing key {k}")))
        };
        let bad = |k: &str| BenchError::Format(format!("bad value for {k}"));
        let samples_ms = match get("samples_ms")? {
            "" => Vec::new(),
            s => s
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| bad("samples_ms")))
                .collect::<Result<_, _>>()?,
        };
        let message = map.get("message").copied().unwrap_or_default().to_string();
        let status = match get("status")? {
            "OK" => Status::Ok,
            "FAILED" => Status::Failed(message),
            "INVALID" => Status::Invalid(message),
            _ => return Err(bad("status")),
        };
        Ok(Fragment {
            workload: get("workload")?.to_string(),
            variant: get("variant")?.parse().map_err(|_| bad("variant"))?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            samples_ms,
            rows: get("rows")?.parse().map_err(|_| bad("rows"))?,
            checksum: get("checksum")?.to_string(),
            status,
        })
    }
}

/// Order-independent digest of result rows: rows are rendered, sorted, and
/// hashed, so two joins emitting the same multiset in different orders
/// agree.
pub fn checksum(rows: &[Vec<String>]) -> String {
    let mut rendered: Vec<String> = rows.iter().map(|r| r.join("\t")).collect();
    rendered.sort();
    let mut hasher = Sha256::new();
    for r in &rendered {
        hasher.update(r.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Runs setup once (dropping leftover bench tables first), then the timed
/// statements `repetitions` times. An `ERR` anywhere yields a FAILED
/// fragment; results that change between repetitions yield INVALID.
pub fn run(workload: &Workload, addr: &str, variant: JoinImpl) -> Result<Fragment, BenchError> {
    let mut client = Client::connect(addr)?;
    let mut fragment = Fragment {
        workload: workload.name.clone(),
        variant,
        seed: workload.seed,
        samples_ms: Vec::new(),
        rows: 0,
        checksum: String::new(),
        status: Status::Ok,
    };

    for table in [TABLE_A, TABLE_B] {
        client.request(&format!("DROP TABLE {table}"))?;
    }
    for stmt in &workload.setup {
        if let Reply::Err(msg) = client.request(stmt)?.reply {
            fragment.status = Status::Failed(format!("setup: {msg}"));
            return Ok(fragment);
        }
    }

    for rep in 0..workload.repetitions {
        let mut rows = Vec::new();
        let started = Instant::now();
        for stmt in &workload.timed {
            match client.request(stmt)?.reply {
                Reply::Err(msg) => {
                    fragment.status = Status::Failed(msg);
                    return Ok(fragment);
                }
                Reply::Ok { table, .. } => {
                    if let Some(t) = table {
                        rows.extend(t.rows);
                    }
                }
            }
        }
        fragment
            .samples_ms
            .push(started.elapsed().as_secs_f64() * 1000.0);
        let sum = checksum(&rows);
        if rep == 0 {
            fragment.rows = rows.len() as u64;
            fragment.checksum = sum;
        } else if sum != fragment.checksum {
            fragment.status = Status::Invalid(format!("results changed in repetition {rep}"));
        }
    }
    Ok(fragment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub workload: String,
    pub baseline: Fragment,
    pub candidate: Fragment,
    pub status: Status,
    /// `(baseline - candidate) / baseline * 100` on medians; positive is faster.
    pub percent: Option<f64>,
    pub sentence: String,
}

/// `In the test <name>, the submission is <p> percent faster|slower than nested loop join.`
/// `p` is rounded to a whole number; a rounded zero reads as "0 percent faster".
pub fn feedback_sentence(workload: &str, percent: f64) -> String {
    let rounded = percent.round();
    let (amount, word) = if rounded >= 0.0 {
        (rounded, "faster")
    } else {
        (-rounded, "slower")
    };
    format!(
        "In the test {workload}, the submission is {} percent {word} than nested loop join.",
        amount as i64
    )
}

/// Pairs the nested-loop fragment of each workload with the other fragment
/// for that workload.
pub fn report(fragments: &[Fragment]) -> Result<Vec<Report>, BenchError> {
    let mut reports = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for name in fragments.iter().map(|f| f.workload.as_str()) {
        if !seen.insert(name) {
            continue;
        }
        let group: Vec<&Fragment> = fragments.iter().filter(|f| f.workload == name).collect();
        let baseline = group
            .iter()
            .position(|f| f.variant == JoinImpl::Nested)
            .ok_or_else(|| {
                BenchError::Usage(format!("no nested-loop baseline for workload {name}"))
            })?;
        let candidate = (0..group.len())
            .find(|&i| i != baseline)
            .ok_or_else(|| BenchError::Usage(format!("no candidate for workload {name}")))?;
        reports.push(compare(group[baseline], group[candidate]));
    }
    Ok(reports)
}

pub fn compare(baseline: &Fragment, candidate: &Fragment) -> Report {
    let name = candidate.workload.clone();
    let failed = [baseline, candidate]
        .iter()
        .find_map(|f| match &f.status {
            Status::Failed(m) => Some(format!("{} run failed: {m}", f.variant)),
            _ => None,
        });
    let invalid = [baseline, candidate].iter().find_map(|f| match &f.status {
        Status::Invalid(m) => Some(format!("{} run invalid: {m}", f.variant)),
        _ => None,
    });
    let (status, percent, sentence) = if let Some(m) = failed {
        let s = format!("In the test {name}, the submission FAILED: {m}");
        (Status::Failed(m), None, s)
    } else if let Some(m) = invalid {
        let s = format!("In the test {name}, the submission is INVALID: {m}");
        (Status::Invalid(m), None, s)
    } else if baseline.checksum != candidate.checksum || baseline.rows != candidate.rows {
        let m = "results differ from nested loop join".to_string();
        let s = format!("In the test {name}, the submission is INVALID: {m}");
        (Status::Invalid(m), None, s)
    } else {
        let b = baseline.median_ms();
        let p = (b - candidate.median_ms()) / b * 100.0;
        (Status::Ok, Some(p), feedback_sentence(&name, p))
    };
    Report {
        workload: name,
        baseline: baseline.clone(),
        candidate: candidate.clone(),
        status,
        percent,
        sentence,
    }
}

impl Report {
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "workload={}", self.workload);
        for (role, f) in [("baseline", &self.baseline), ("candidate", &self.candidate)] {
            let _ = writeln!(out, "{role}_variant={}", f.variant);
            let _ = writeln!(out, "{role}_median_ms={:.3}", f.median_ms());
            let _ = writeln!(out, "{role}_mean_ms={:.3}", f.mean_ms());
            let _ = writeln!(out, "{role}_rows={}", f.rows);
            let _ = writeln!(out, "{role}_checksum={}", f.checksum);
        }
        match self.percent {
            Some(p) => {
                let _ = writeln!(out, "percent_delta={p:.3}");
            }
            None => {
                let _ = writeln!(out, "percent_delta=");
            }
        }
        let _ = writeln!(out, "status={}", self.status.label());
        let _ = writeln!(out, "message={}", self.status.message());
        let _ = writeln!(out, "feedback={}", self.sentence);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fragment(variant: JoinImpl, samples: &[f64], checksum: &str) -> Fragment {
        Fragment {
            workload: "w".into(),
            variant,
            seed: 1,
            samples_ms: samples.to_vec(),
            rows: 3,
            checksum: checksum.into(),
            status: Status::Ok,
        }
    }

    #[test]
    fn deterministic_generation() {
        let p = named_workload("join_small").unwrap();
        assert_eq!(generate_workload("x", &p, 42), generate_workload("x", &p, 42));
        assert_ne!(
            generate_workload("x", &p, 42).setup,
            generate_workload("x", &p, 43).setup
        );
    }

    #[test]
    fn empty_workload_only_creates() {
        let p = WorkloadParams {
            rows_a: 0,
            rows_b: 0,
            match_rate: 1.0,
            repetitions: 1,
        };
        let w = generate_workload("empty", &p, 1);
        assert_eq!(w.setup.len(), 2);
        assert!(w.setup.iter().all(|s| s.starts_with("CREATE")));
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    }

    #[test]
    fn sentence_arithmetic() {
        let reports = report(&[
            fragment(JoinImpl::Nested, &[100.0, 90.0, 110.0], "c"),
            fragment(JoinImpl::Hash, &[50.0, 40.0, 60.0], "c"),
        ])
        .unwrap();
        assert_eq!(
            reports[0].sentence,
            "In the test w, the submission is 50 percent faster than nested loop join."
        );
        assert_eq!(
            feedback_sentence("w", 0.0),
            "In the test w, the submission is 0 percent faster than nested loop join."
        );
        assert_eq!(
            feedback_sentence("w", -25.4),
            "In the test w, the submission is 25 percent slower than nested loop join."
        );
    }

    #[test]
    fn tie_reads_faster() {
        let r = compare(
            &fragment(JoinImpl::Nested, &[10.0], "c"),
            &fragment(JoinImpl::Hash, &[10.0], "c"),
        );
        assert_eq!(r.percent, Some(0.0));
        assert!(r.sentence.contains("0 percent faster"));
    }

    #[test]
    fn mismatched_checksums_are_invalid() {
        let r = compare(
            &fragment(JoinImpl::Nested, &[10.0], "a"),
            &fragment(JoinImpl::Hash, &[5.0], "b"),
        );
        assert!(matches!(r.status, Status::Invalid(_)));
        assert!(r.percent.is_none());
        assert!(!r.sentence.contains("percent"));
    }

    #[test]
    fn failed_fragment_has_no_percent_line() {
        let mut bad = fragment(JoinImpl::Hash, &[], "");
        bad.status = Status::Failed("boom".into());
        let r = compare(&fragment(JoinImpl::Nested, &[10.0], "a"), &bad);
        assert!(matches!(r.status, Status::Failed(_)));
        assert!(r.sentence.contains("FAILED"));
        assert!(!r.sentence.contains("percent"));
        assert!(r.to_kv().contains("status=FAILED\n"));
    }

    #[test]
    fn missing_baseline_is_usage_error() {
        assert!(matches!(
            report(&[fragment(JoinImpl::Hash, &[1.0], "a")]),
            Err(BenchError::Usage(_))
        ));
    }

    #[test]
    fn checksum_ignores_order() {
        let a = vec![vec!["1".to_string(), "x".to_string()], vec!["2".into(), "y".into()]];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(checksum(&a), checksum(&b));
        assert_ne!(checksum(&a), checksum(&a[..1]));
    }

    #[test]
    fn fragment_kv_round_trip() {
        let f = fragment(JoinImpl::Hash, &[1.5, 2.25], "abc");
        let back = Fragment::from_kv(&f.to_kv()).unwrap();
        assert_eq!(back, f);
        assert!(f.to_kv().starts_with("workload=w\nvariant=hash\n"));
    }
}
