mod config;
mod error;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use auditem::bench::{self, LoadConfig, Operation, OverheadConfig, TxCount};
use auditem::ledger::evidence_key;
use auditem::warehouse::{self, LoadOptions, TimestampSource};
use auditem::{BatchRegistry, BatchSubset, Divt, LocationHash, Traceability, Verdict};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "auditem",
    version,
    about = "Tamper-evident auditing of warehouse batches"
)]
struct Cli {
    /// Client config (ledger path, store, identity and authorization table).
    #[arg(
        long,
        env = "AUDITEM_CONFIG",
        global = true,
        default_value = "auditem.toml"
    )]
    config: PathBuf,
    /// Acting member as org/user; overrides the config.
    #[arg(long, env = "AUDITEM_IDENTITY", global = true)]
    identity: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anchor batches of a CSV extract.
    Upload {
        #[command(flatten)]
        data: DataArgs,
        /// Batches to upload; all when omitted.
        #[arg(long = "batch")]
        batches: Vec<String>,
        #[arg(long, default_value = "1")]
        level: Traceability,
    },
    /// Check one batch against its evidence.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        batch: String,
        /// Decrypt the record and report what changed.
        #[arg(long)]
        deep: bool,
    },
    /// Tiered audit with certificates.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, conflicts_with = "batches")]
        all: bool,
        #[arg(long = "batch")]
        batches: Vec<String>,
    },
    /// Certificates of an evidence key.
    Cert {
        #[arg(long)]
        key: String,
    },
    /// Erase GDPR columns of a batch and re-anchor it.
    GdprDelete {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        batch: String,
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long)]
        reason: String,
        /// Where to write the cleaned CSV; the input is replaced when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Owner of the evidence when acting for another organisation.
        #[arg(long)]
        owner: Option<String>,
    },
    #[command(subcommand)]
    Bench(BenchCommand),
    #[command(subcommand)]
    Ledger(LedgerCommand),
    #[command(subcommand)]
    Cas(CasCommand),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    table: String,
    #[arg(long, default_value = "batch")]
    batch_column: String,
    #[arg(long, value_delimiter = ',')]
    gdpr_columns: Vec<String>,
    /// Per-batch date column; ingestion time is used when omitted.
    #[arg(long)]
    date_column: Option<String>,
}

impl DataArgs {
    fn options(&self) -> LoadOptions {
        let ts = match &self.date_column {
            Some(c) => TimestampSource::Column(c.clone()),
            None => TimestampSource::IngestionTime,
        };
        LoadOptions::new(&self.table, &self.batch_column)
            .gdpr(self.gdpr_columns.iter().cloned())
            .timestamp(ts)
    }

    fn registry(&self) -> Result<BatchRegistry, CliError> {
        let mut reg = BatchRegistry::new();
        reg.extend(warehouse::load_batches(&self.csv, &self.options())?);
        Ok(reg)
    }
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Stage timings over a grid of table sizes.
    Overhead {
        /// TOML with records_per_run, batches_per_run, repetitions, level.
        #[arg(long = "grid")]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip configurations once this many seconds have elapsed.
        #[arg(long)]
        budget_secs: Option<u64>,
    },
    /// Throughput and latency under an open-loop send schedule.
    Load {
        /// Comma separated send rates (tx/s); a doubling ladder to 256 when omitted.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        workers: usize,
        /// Fixed transactions per rate.
        #[arg(long, conflicts_with = "seconds")]
        tx_count: Option<usize>,
        /// Approximate seconds per rate.
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long, value_enum, default_value = "write")]
        operation: OpArg,
        #[arg(long, default_value_t = 0)]
        commit_delay_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Write,
    Read,
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Recheck every block hash and link.
    VerifyChain,
    /// Evidence by key, or every evidence owned by an organisation.
    QueryEvidence {
        key: Option<String>,
        #[arg(long, conflicts_with = "key")]
        org: Option<String>,
        /// Derive the key from org, table and batch instead.
        #[arg(long, requires = "batch", conflicts_with = "key")]
        table: Option<String>,
        #[arg(long, requires = "table")]
        batch: Option<String>,
    },
    Certs {
        key: String,
    },
}

#[derive(Subcommand)]
enum CasCommand {
    Put {
        file: PathBuf,
    },
    Get {
        address: String,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Exit code for a completed check that found a problem.
const EXIT_FINDING: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
}

impl Ctx<'_> {
    fn config(&self) -> Result<CliConfig, CliError> {
        CliConfig::load(&self.cli.config)
    }

    fn divt(&self, cfg: &CliConfig) -> Result<Divt, CliError> {
        Ok(Divt::new(cfg.ledger()?, cfg.store()?))
    }

    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) {
        if self.cli.json {
            println!(
                "{}",
                serde_json::to_string_pretty(value).expect("serializable output")
            );
        } else {
            println!("{}", human());
        }
    }

    fn info(&self, msg: impl FnOnce() -> String) {
        if self.cli.verbose > 0 {
            eprintln!("{}", msg());
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let ctx = Ctx { cli };
    match &cli.command {
        Command::Upload {
            data,
            batches,
            level,
        } => upload(&ctx, data, batches, *level),
        Command::Verify { data, batch, deep } => verify(&ctx, data, batch, *deep),
        Command::Audit { data, all, batches } => audit(&ctx, data, *all, batches),
        Command::Cert { key } => certs(&ctx, key),
        Command::GdprDelete {
            data,
            batch,
            columns,
            reason,
            output,
            owner,
        } => gdpr_delete(
            &ctx,
            data,
            batch,
            columns,
            reason,
            output.as_deref(),
            owner.as_deref(),
        ),
        Command::Bench(b) => bench_cmd(&ctx, b),
        Command::Ledger(l) => ledger_cmd(&ctx, l),
        Command::Cas(c) => cas_cmd(&ctx, c),
    }
}

fn upload(
    ctx: &Ctx,
    data: &DataArgs,
    batches: &[String],
    level: Traceability,
) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
    let divt = ctx.divt(&cfg)?;
    let reg = data.registry()?;
    let ids = if batches.is_empty() {
        reg.batch_ids(&data.table)
    } else {
        batches.to_vec()
    };
    let mut done = Vec::with_capacity(ids.len());
    for id in &ids {
        let batch = reg.get(&data.table, id)?;
        let up = divt.upload(batch, level, &identity)?;
        ctx.info(|| format!("{id}: {:?} total", up.timings.total()));
        done.push(up);
    }
    ctx.emit(&done, || {
        done.iter()
            .zip(&ids)
            .map(|(u, id)| format!("uploaded {id} key={} block={}", u.evidence_key, u.height))
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(0)
}

fn verify(ctx: &Ctx, data: &DataArgs, batch_id: &str, deep: bool) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
    let divt = ctx.divt(&cfg)?;
    let reg = data.registry()?;
    let batch = reg.get(&data.table, batch_id)?;
    let verdict = if deep {
        let report = divt.verify2(batch, &identity)?;
        ctx.emit(&report, || report.to_string());
        report.verdict
    } else {
        let v = divt.verify1(batch, &identity)?;
        ctx.emit(&v, || format!("{}/{batch_id}: {}", data.table, v.verdict));
        v.verdict
    };
    Ok(if verdict == Verdict::Authentic {
        0
    } else {
        EXIT_FINDING
    })
}

fn audit(ctx: &Ctx, data: &DataArgs, all: bool, batches: &[String]) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
    let divt = ctx.divt(&cfg)?;
    let reg = data.registry()?;
    let ids = if all || batches.is_empty() {
        reg.batch_ids(&data.table)
    } else {
        batches.to_vec()
    };
    let entries = divt.audit(&reg, &data.table, &ids, &identity);
    let clean = entries
        .iter()
        .all(|e| matches!(&e.outcome, Ok(r) if r.verdict == Verdict::Authentic));
    ctx.emit(&entries, || {
        entries
            .iter()
            .map(|e| match &e.outcome {
                Ok(r) => format!("{}: {}", e.batch_id, r.summary()),
                Err(err) => format!("{}: error[{}]: {err}", e.batch_id, err.class()),
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(if clean { 0 } else { EXIT_FINDING })
}

fn certs(ctx: &Ctx, key: &str) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
    let divt = ctx.divt(&cfg)?;
    let certs = divt.external_audit(key, &identity)?;
    ctx.emit(&certs, || {
        certs
            .iter()
            .map(|c| {
                format!(
                    "#{} {} {} by {}: {}",
                    c.seq, c.date, c.result, c.auditor, c.detail
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(0)
}

fn gdpr_delete(
    ctx: &Ctx,
    data: &DataArgs,
    batch_id: &str,
    columns: &[String],
    reason: &str,
    output: Option<&Path>,
    owner: Option<&str>,
) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
    let divt = ctx.divt(&cfg)?;

    let input = fs::File::open(&data.csv)?;
    let mut cleaned = Vec::new();
    let changed =
        warehouse::erase_columns(input, &mut cleaned, &data.batch_column, batch_id, columns)?;
    ctx.info(|| format!("erased {changed} cells"));
    let batches = warehouse::load_batches_from_reader(cleaned.as_slice(), &data.options())?;
    let batch: &BatchSubset = batches
        .iter()
        .find(|b| b.batch_id() == batch_id)
        .ok_or_else(|| CliError::new("warehouse", format!("batch {batch_id:?} not found")))?;
    let update = divt.gdpr_delete_for(owner.unwrap_or(identity.org()), batch, reason, &identity)?;

    // Only touch the extract once the ledger accepted the update.
    let target = output.unwrap_or(&data.csv);
    let tmp = target.with_extension("tmp");
    fs::write(&tmp, &cleaned)?;
    fs::rename(&tmp, target)?;
    ctx.emit(&update, || {
        format!(
            "re-anchored {batch_id} key={} block={} ({changed} cells erased)",
            update.evidence_key, update.height
        )
    });
    Ok(0)
}

fn bench_cmd(ctx: &Ctx, cmd: &BenchCommand) -> Result<u8, CliError> {
    match cmd {
        BenchCommand::Overhead {
            grid,
            out,
            budget_secs,
        } => {
            let text = fs::read_to_string(grid)?;
            let grid: OverheadConfig = toml::from_str(&text)
                .map_err(|e| CliError::new("config", format!("{}: {e}", grid.display())))?;
            let rows = bench::run_overhead(&grid, budget_secs.map(Duration::from_secs));
            if let Some(path) = out {
                bench::write_overhead_csv(&rows, fs::File::create(path)?)
                    .map_err(|e| CliError::new("io", e))?;
            }
            ctx.emit(&rows, || {
                let mut buf = Vec::new();
                bench::write_overhead_csv(&rows, &mut buf).expect("in-memory write");
                String::from_utf8_lossy(&buf).trim_end().to_string()
            });
        }
        BenchCommand::Load {
            rates,
            workers,
            tx_count,
            seconds,
            operation,
            commit_delay_ms,
            out,
        } => {
            let mut lc = LoadConfig {
                workers: *workers,
                operation: match operation {
                    OpArg::Write => Operation::Write,
                    OpArg::Read => Operation::Read,
                },
                commit_delay: Duration::from_millis(*commit_delay_ms),
                ..LoadConfig::default()
            };
            if !rates.is_empty() {
                lc.send_rates = rates.clone();
            }
            if let Some(n) = tx_count {
                lc.tx_count = TxCount::Fixed(*n);
            } else if let Some(s) = seconds {
                lc.tx_count = TxCount::Duration {
                    seconds: *s,
                    min: 4,
                };
            }
            let rows = bench::run_load(&lc);
            if let Some(path) = out {
                bench::write_load_csv(&rows, fs::File::create(path)?)
                    .map_err(|e| CliError::new("io", e))?;
            }
            ctx.emit(&rows, || {
                let mut buf = Vec::new();
                bench::write_load_csv(&rows, &mut buf).expect("in-memory write");
                String::from_utf8_lossy(&buf).trim_end().to_string()
            });
        }
    }
    Ok(0)
}

fn ledger_cmd(ctx: &Ctx, cmd: &LedgerCommand) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let ledger = cfg.ledger()?;
    match cmd {
        LedgerCommand::VerifyChain => {
            let report = ledger.verify_chain();
            ctx.emit(&report, || match report.first_bad_height {
                None => format!("chain ok, height {}", report.height),
                Some(h) => format!("chain broken at block {h} (height {})", report.height),
            });
            Ok(if report.ok { 0 } else { EXIT_FINDING })
        }
        LedgerCommand::QueryEvidence {
            key,
            org,
            table,
            batch,
        } => {
            if let Some(org) = org {
                let found = ledger.query_by_owner(org);
                ctx.emit(&found, || {
                    found
                        .iter()
                        .map(|(k, e)| {
                            format!(
                                "{k} {}/{} {}",
                                e.table_name, e.batch_id, e.verification_hash
                            )
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                });
                return Ok(0);
            }
            let key = match (key, table, batch) {
                (Some(k), _, _) => k.clone(),
                (None, Some(t), Some(b)) => {
                    let identity = cfg.identity(ctx.cli.identity.as_deref())?;
                    evidence_key(identity.org(), t, b)?
                }
                _ => {
                    return Err(CliError::new(
                        "usage",
                        "give a key, --org, or --table with --batch",
                    ))
                }
            };
            let ev = ledger.query_evidence(&key)?;
            ctx.emit(&ev, || {
                format!(
                    "{key}\n  {}/{}/{} level {}\n  h_v {}\n  h_l {}",
                    ev.organisation,
                    ev.table_name,
                    ev.batch_id,
                    ev.traceability,
                    ev.verification_hash,
                    ev.location_hash
                )
            });
            Ok(0)
        }
        LedgerCommand::Certs { key } => certs(ctx, key),
    }
}

fn cas_cmd(ctx: &Ctx, cmd: &CasCommand) -> Result<u8, CliError> {
    let cfg = ctx.config()?;
    let store = cfg.store()?;
    match cmd {
        CasCommand::Put { file } => {
            let addr = store.put(&fs::read(file)?)?;
            ctx.emit(&addr, || addr.to_hex());
        }
        CasCommand::Get { address, output } => {
            let addr: LocationHash = address.parse().map_err(|_| {
                CliError::new(
                    "usage",
                    format!("{address:?} is not a 64-digit hex address"),
                )
            })?;
            let bytes = store.get(&addr)?;
            let mut f = fs::File::create(output)?;
            f.write_all(&bytes)?;
            ctx.emit(&bytes.len(), || {
                format!("wrote {} bytes to {}", bytes.len(), output.display())
            });
        }
    }
    Ok(0)
}
