//! Overhead and load benchmarks.
//!
//! The overhead benchmark times each upload stage and both verification
//! tiers over synthetic tables of 28 text columns. The load benchmark drives
//! the ledger at fixed send rates from a pool of worker threads and reports
//! throughput, submit-to-commit latency and success ratio per rate.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::Traceability;
use crate::cas::LocationHash;
use crate::cas::MemoryStore;
use crate::crypto;
use crate::digest::Digest;
use crate::divt::Divt;
use crate::ledger::{AccessPolicy, Evidence, Identity, Ledger, LedgerConfig, Role};
use crate::warehouse::{BatchSubset, ColumnSpec};

pub const SYNTHETIC_COLUMNS: usize = 28;
const ORG: &str = "Electron";
const TABLE: &str = "LowVoltage";

fn synthetic_schema() -> Vec<ColumnSpec> {
    let mut schema = vec![
        ColumnSpec::new("id", false),
        ColumnSpec::new("begindate", false),
        ColumnSpec::new("length", false),
        ColumnSpec::new("voltage", false),
        ColumnSpec::new("EndPoint", true),
        ColumnSpec::new("geometry", false),
        ColumnSpec::new("geometry_simplified", false),
    ];
    for i in schema.len()..SYNTHETIC_COLUMNS {
        schema.push(ColumnSpec::new(format!("attr{i:02}"), false));
    }
    schema
}

fn linestring(rng: &mut ChaCha8Rng, points: usize) -> String {
    let mut s = String::from("LINESTRING (");
    let (mut x, mut y) = (
        rng.gen_range(100_000.0..200_000.0),
        rng.gen_range(400_000.0..500_000.0),
    );
    for p in 0..points {
        if p > 0 {
            s.push_str(", ");
        }
        x += rng.gen_range(-5.0..5.0);
        y += rng.gen_range(-5.0..5.0);
        s.push_str(&format!("{x:.3} {y:.3}"));
    }
    s.push(')');
    s
}

/// `records` rows of a 28-column table split evenly into `batches` batches
/// (the first batches take the remainder). Deterministic for a seed.
pub fn synthetic_batches(records: usize, batches: usize, seed: u64) -> Vec<BatchSubset> {
    assert!(
        batches > 0 && records >= batches,
        "need at least one record per batch"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = synthetic_schema();
    let timestamp = crate::warehouse::parse_timestamp("2017-12-09").expect("valid date");
    let mut next_id = 0usize;
    (0..batches)
        .map(|b| {
            let n = records / batches + usize::from(b < records % batches);
            let rows = (0..n)
                .map(|_| {
                    next_id += 1;
                    let mut row = Vec::with_capacity(SYNTHETIC_COLUMNS);
                    row.push(next_id.to_string());
                    row.push(format!(
                        "2017-{:02}-{:02}",
                        rng.gen_range(1..=12),
                        rng.gen_range(1..=28)
                    ));
                    row.push(format!("{:.2}", rng.gen_range(0.5..500.0)));
                    row.push(["230V", "400V", "10kV"][rng.gen_range(0..3)].to_string());
                    row.push(format!(
                        "Street {} {}",
                        rng.gen_range(1..500),
                        rng.gen_range(1..200)
                    ));
                    row.push(linestring(&mut rng, 12));
                    row.push(linestring(&mut rng, 4));
                    for _ in row.len()..SYNTHETIC_COLUMNS {
                        row.push(rng.gen_range(0..1_000_000u32).to_string());
                    }
                    row
                })
                .collect();
            BatchSubset::new(TABLE, (b + 1).to_string(), timestamp, schema.clone(), rows)
                .expect("synthetic batch is valid")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadConfig {
    pub records_per_run: Vec<usize>,
    pub batches_per_run: Vec<usize>,
    pub repetitions: usize,
    pub level: Traceability,
}

impl OverheadConfig {
    /// Every `(records, batches)` combination with at least one record per
    /// batch, records-major.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        for &r in &self.records_per_run {
            for &b in &self.batches_per_run {
                if b > 0 && r >= b {
                    runs.push((r, b));
                }
            }
        }
        runs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    RetrieveIdentifications,
    CreateAttributes,
    Encrypt,
    SendToStore,
    SendToLedger,
    Upload,
    Verify1,
    Verify2,
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::RetrieveIdentifications,
        StageName::CreateAttributes,
        StageName::Encrypt,
        StageName::SendToStore,
        StageName::SendToLedger,
        StageName::Upload,
        StageName::Verify1,
        StageName::Verify2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::RetrieveIdentifications => "retrieve_identifications",
            StageName::CreateAttributes => "create_attributes",
            StageName::Encrypt => "encrypt",
            StageName::SendToStore => "send_to_store",
            StageName::SendToLedger => "send_to_ledger",
            StageName::Upload => "upload",
            StageName::Verify1 => "verify1",
            StageName::Verify2 => "verify2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub records: usize,
    pub batches: usize,
    /// `None` marks a configuration skipped for exceeding the budget.
    pub stage: Option<StageName>,
    pub samples: Vec<f64>,
    pub mean_s: f64,
    pub sd_s: f64,
}

impl OverheadRow {
    pub fn config(&self) -> String {
        format!("records={};batches={}", self.records, self.batches)
    }

    pub fn median_s(&self) -> f64 {
        median(&self.samples)
    }

    pub fn skipped(&self) -> bool {
        self.stage.is_none()
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn bench_policy(writers: usize) -> (AccessPolicy, Vec<Identity>, Identity) {
    let mut p = AccessPolicy::new();
    let ws = (0..writers.max(1))
        .map(|i| p.add_member(ORG, &format!("writer{i}"), [Role::Writer]))
        .collect();
    let auditor = p.add_member(ORG, "auditor", [Role::Auditor]);
    (p, ws, auditor)
}

/// One repetition: fresh ledger and store, upload every batch, then run
/// both tiers on every batch. Returns seconds per stage.
fn overhead_once(batches: &[BatchSubset], level: Traceability) -> [f64; 8] {
    let (policy, writers, auditor) = bench_policy(1);
    let divt = Divt::new(
        Arc::new(Ledger::in_memory(policy, LedgerConfig::default())),
        Arc::new(MemoryStore::new()),
    );
    let mut s = [0.0; 8];
    let upload_start = Instant::now();
    for b in batches {
        let t = divt
            .upload(b, level, &writers[0])
            .expect("benchmark upload")
            .timings;
        s[0] += t.identification.as_secs_f64();
        s[1] += t.attributes.as_secs_f64();
        s[2] += t.encrypt.as_secs_f64();
        s[3] += t.store.as_secs_f64();
        s[4] += t.ledger.as_secs_f64();
    }
    s[5] = upload_start.elapsed().as_secs_f64();
    let t = Instant::now();
    for b in batches {
        assert!(divt
            .verify1(b, &auditor)
            .expect("benchmark verify1")
            .matched());
    }
    s[6] = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for b in batches {
        divt.verify2(b, &auditor).expect("benchmark verify2");
    }
    s[7] = t.elapsed().as_secs_f64();
    s
}

/// Runs every configuration `repetitions` times. Once `budget` is spent the
/// remaining configurations are reported as skipped.
pub fn run_overhead(cfg: &OverheadConfig, budget: Option<Duration>) -> Vec<OverheadRow> {
    if cfg.repetitions == 0 {
        return Vec::new();
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    for (seed, (records, batches)) in cfg.runs().into_iter().enumerate() {
        if budget.is_some_and(|b| start.elapsed() > b) {
            rows.push(OverheadRow {
                records,
                batches,
                stage: None,
                samples: vec![],
                mean_s: f64::NAN,
                sd_s: f64::NAN,
            });
            continue;
        }
        let data = synthetic_batches(records, batches, seed as u64);
        let mut samples = (0..8)
            .map(|_| Vec::with_capacity(cfg.repetitions))
            .collect::<Vec<Vec<f64>>>();
        for _ in 0..cfg.repetitions {
            for (i, v) in overhead_once(&data, cfg.level).into_iter().enumerate() {
                samples[i].push(v);
            }
        }
        for (stage, xs) in StageName::ALL.into_iter().zip(samples) {
            let (mean_s, sd_s) = mean_sd(&xs);
            rows.push(OverheadRow {
                records,
                batches,
                stage: Some(stage),
                samples: xs,
                mean_s,
                sd_s,
            });
        }
    }
    rows
}

/// CSV with columns `config, stage, mean_s, sd_s`; skipped runs carry the
/// stage `skipped` and empty timings.
pub fn write_overhead_csv<W: Write>(rows: &[OverheadRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config", "stage", "mean_s", "sd_s"])?;
    for r in rows {
        match r.stage {
            Some(stage) => w.write_record([
                r.config(),
                stage.as_str().to_string(),
                format!("{:.6}", r.mean_s),
                format!("{:.6}", r.sd_s),
            ])?,
            None => w.write_record([r.config().as_str(), "skipped", "", ""])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Write,
    Read,
}

/// Transactions sent per rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TxCount {
    Fixed(usize),
    /// `max(min, rate * seconds)`, so each rate runs for about `seconds`.
    Duration {
        seconds: f64,
        min: usize,
    },
}

impl TxCount {
    pub fn for_rate(self, rate: f64) -> usize {
        match self {
            TxCount::Fixed(n) => n,
            TxCount::Duration { seconds, min } => ((rate * seconds).ceil() as usize).max(min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub send_rates: Vec<f64>,
    pub workers: usize,
    pub tx_count: TxCount,
    pub operation: Operation,
    /// Per-block delay of the simulated ordering service.
    pub commit_delay: Duration,
    /// Transactions slower than this count as failed.
    pub timeout: Duration,
}

impl LoadConfig {
    /// The doubling ladder 1, 2, 4, ... up to `max`.
    pub fn ladder(max: f64) -> Vec<f64> {
        let mut rates = vec![];
        let mut r = 1.0;
        while r <= max {
            rates.push(r);
            r *= 2.0;
        }
        rates
    }
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            send_rates: LoadConfig::ladder(256.0),
            workers: 10,
            tx_count: TxCount::Duration {
                seconds: 2.0,
                min: 4,
            },
            operation: Operation::Write,
            commit_delay: Duration::ZERO,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadRow {
    pub rate: f64,
    pub workers: usize,
    pub submitted: usize,
    pub committed: usize,
    /// Committed transactions per second of wall time.
    pub throughput: f64,
    /// Achieved send rate.
    pub send_rate: f64,
    pub lat_min: f64,
    pub lat_avg: f64,
    pub lat_max: f64,
    pub success_ratio: f64,
    pub height_before: u64,
    pub height_after: u64,
}

struct Sample {
    sent: Instant,
    done: Instant,
    ok: bool,
}

fn write_tx(ledger: &Ledger, identity: &Identity, worker: usize, i: usize) -> bool {
    let batch = format!("w{worker}-{i}");
    let evidence = Evidence {
        organisation: ORG.into(),
        table_name: TABLE.into(),
        batch_id: batch.clone(),
        verification_hash: Digest::of(batch.as_bytes()),
        location_hash: LocationHash::of(batch.as_bytes()),
        traceability: Traceability::Columns,
    };
    let keys = crypto::keygen().expect("OS randomness");
    ledger
        .create_evidence(identity, &evidence, Some(&keys))
        .is_ok()
}

fn run_rate(cfg: &LoadConfig, rate: f64) -> LoadRow {
    let workers = cfg.workers.max(1);
    let (policy, writers, _) = bench_policy(workers);
    let ledger = Ledger::in_memory(
        policy,
        LedgerConfig {
            commit_delay: cfg.commit_delay,
        },
    );
    let mut keys = Vec::new();
    if cfg.operation == Operation::Read {
        for i in 0..16 {
            let e = Evidence {
                organisation: ORG.into(),
                table_name: TABLE.into(),
                batch_id: format!("seed{i}"),
                verification_hash: Digest::of(&[i]),
                location_hash: LocationHash::of(&[i]),
                traceability: Traceability::Columns,
            };
            keys.push(e.key().expect("valid key"));
            ledger
                .create_evidence(&writers[0], &e, None)
                .expect("seed evidence");
        }
    }
    let n = cfg.tx_count.for_rate(rate);
    let height_before = ledger.height();
    let interval = Duration::from_secs_f64(1.0 / rate);
    let start = Instant::now() + Duration::from_millis(5);
    let samples: Vec<Sample> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (ledger, identity, keys) = (&ledger, &writers[w], &keys);
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for i in (w..n).step_by(workers) {
                        let due = start + interval.mul_f64(i as f64);
                        let now = Instant::now();
                        if due > now {
                            std::thread::sleep(due - now);
                        }
                        let sent = Instant::now();
                        let ok = match cfg.operation {
                            Operation::Write => write_tx(ledger, identity, w, i),
                            Operation::Read => ledger.query_evidence(&keys[i % keys.len()]).is_ok(),
                        };
                        let done = Instant::now();
                        out.push(Sample {
                            sent,
                            done,
                            ok: ok && done - sent <= cfg.timeout,
                        });
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("load worker panicked"))
            .collect()
    });
    let committed = samples.iter().filter(|s| s.ok).count();
    let first_send = samples.iter().map(|s| s.sent).min();
    let last_send = samples.iter().map(|s| s.sent).max();
    let last_done = samples.iter().map(|s| s.done).max();
    let (throughput, send_rate) = match (first_send, last_send, last_done) {
        (Some(f), Some(ls), Some(ld)) => {
            let span = (ld - f).as_secs_f64().max(n as f64 / rate);
            let send_span = (ls - f).as_secs_f64();
            let send_rate = if n > 1 && send_span > 0.0 {
                (n - 1) as f64 / send_span
            } else {
                rate
            };
            (committed as f64 / span, send_rate)
        }
        _ => (0.0, 0.0),
    };
    let lats: Vec<f64> = samples
        .iter()
        .map(|s| (s.done - s.sent).as_secs_f64())
        .collect();
    let (lat_avg, _) = mean_sd(&lats);
    LoadRow {
        rate,
        workers,
        submitted: n,
        committed,
        throughput,
        send_rate,
        lat_min: lats
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(lat_avg),
        lat_avg,
        lat_max: lats.iter().copied().fold(0.0, f64::max).max(lat_avg),
        success_ratio: if n == 0 {
            1.0
        } else {
            committed as f64 / n as f64
        },
        height_before,
        height_after: ledger.height(),
    }
}

/// One fresh ledger per rate; transactions are released on an open-loop
/// schedule (`i / rate` seconds after start), round-robin over the workers.
pub fn run_load(cfg: &LoadConfig) -> Vec<LoadRow> {
    cfg.send_rates
        .iter()
        .filter(|r| **r > 0.0)
        .map(|&rate| run_rate(cfg, rate))
        .collect()
}

/// CSV with columns `rate, throughput, lat_min, lat_avg, lat_max, success_ratio`.
pub fn write_load_csv<W: Write>(rows: &[LoadRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rate",
        "throughput",
        "lat_min",
        "lat_avg",
        "lat_max",
        "success_ratio",
    ])?;
    for r in rows {
        w.write_record([
            format!("{}", r.rate),
            format!("{:.3}", r.throughput),
            format!("{:.6}", r.lat_min),
            format!("{:.6}", r.lat_avg),
            format!("{:.6}", r.lat_max),
            format!("{:.4}", r.success_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_shape_and_determinism() {
        let a = synthetic_batches(25, 3, 7);
        assert_eq!(a.len(), 3);
        assert_eq!(a.iter().map(BatchSubset::row_count).sum::<usize>(), 25);
        assert_eq!(a[0].schema().len(), SYNTHETIC_COLUMNS);
        assert!(a[0].cell(0, 5).unwrap().len() > 100);
        assert_eq!(a, synthetic_batches(25, 3, 7));
        assert_ne!(a, synthetic_batches(25, 3, 8));
    }

    #[test]
    fn zero_repetitions_is_empty() {
        let cfg = OverheadConfig {
            records_per_run: vec![10],
            batches_per_run: vec![1],
            repetitions: 0,
            level: Traceability::Columns,
        };
        assert!(run_overhead(&cfg, None).is_empty());
    }

    #[test]
    fn overhead_rows_and_csv() {
        let cfg = OverheadConfig {
            records_per_run: vec![20, 40],
            batches_per_run: vec![1, 2],
            repetitions: 2,
            level: Traceability::Rows,
        };
        let rows = run_overhead(&cfg, None);
        assert_eq!(rows.len(), 4 * StageName::ALL.len());
        assert!(rows.iter().all(|r| r.samples.len() == 2 && r.mean_s >= 0.0));
        let mut out = Vec::new();
        write_overhead_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("config,stage,mean_s,sd_s\n"));
        assert!(text.contains("records=40;batches=2,verify2,"));
    }

    #[test]
    fn exhausted_budget_marks_skips() {
        let cfg = OverheadConfig {
            records_per_run: vec![10, 20],
            batches_per_run: vec![1],
            repetitions: 1,
            level: Traceability::Columns,
        };
        let rows = run_overhead(&cfg, Some(Duration::ZERO));
        assert!(rows.iter().any(OverheadRow::skipped));
        let mut out = Vec::new();
        write_overhead_csv(&rows, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains(",skipped,"));
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, sd) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((sd - 2.138).abs() < 1e-3);
        assert_eq!(LoadConfig::ladder(256.0).len(), 9);
    }

    #[test]
    fn read_load_appends_nothing() {
        let cfg = LoadConfig {
            send_rates: vec![200.0],
            workers: 4,
            tx_count: TxCount::Fixed(40),
            operation: Operation::Read,
            ..LoadConfig::default()
        };
        let row = &run_load(&cfg)[0];
        assert_eq!(row.height_before, row.height_after);
        assert_eq!(row.success_ratio, 1.0);
    }

    #[test]
    fn write_load_invariants() {
        let cfg = LoadConfig {
            send_rates: vec![50.0, 100.0],
            workers: 5,
            tx_count: TxCount::Fixed(30),
            ..LoadConfig::default()
        };
        let rows = run_load(&cfg);
        let mut out = Vec::new();
        write_load_csv(&rows, &mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("rate,throughput,lat_min,lat_avg,lat_max,success_ratio\n"));
        for r in rows {
            assert_eq!(r.success_ratio, 1.0);
            assert_eq!(r.height_after - r.height_before, 30);
            assert!(r.lat_min <= r.lat_avg && r.lat_avg <= r.lat_max);
            assert!(r.throughput <= r.rate * 1.0001, "{r:?}");
        }
    }
}
