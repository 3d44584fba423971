use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution as _;
use serde_json::json;

use switchagg::analytics::{
    check_multihop, header_overhead, padding_overhead, reduction_bound, reduction_model,
    ReductionParams, StreamKind,
};
use switchagg::harness::{
    report, run_experiment, wordcount_demo, ExperimentConfig, ExperimentReport,
};
use switchagg::wire::{encode, Packet, PacketBody};
use switchagg::workload::{pack, Workload};

#[derive(Parser)]
#[command(
    name = "switchagg",
    version,
    about = "Deterministic simulator and analytical models for switch-based in-network aggregation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run experiments from config files; one report record per config.
    Simulate(SimulateArgs),
    /// Count words in-network and verify against an exact reference.
    Wordcount(WordcountArgs),
    /// Evaluate the closed-form traffic models.
    Model {
        #[command(subcommand)]
        which: ModelCmd,
    },
    /// Generate a workload manifest (and optional packet trace) without
    /// running an experiment.
    GenWorkload(GenWorkloadArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config files (TOML); run in order.
    #[arg(short, long, required = true, num_args = 1..)]
    config: Vec<PathBuf>,
    /// Also write the reports to this file, one JSON record per line.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Also write a flat CSV table of the sweep axes.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Suppress the per-run JSON on stdout (summaries still print).
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct WordcountArgs {
    /// Experiment config (topology and roles; any [workload] section is
    /// ignored).
    #[arg(short, long)]
    config: PathBuf,
    /// One token stream per mapper, in role order. When omitted, a
    /// synthetic skewed corpus is generated per mapper.
    #[arg(long = "text")]
    texts: Vec<String>,
    /// Synthetic corpus: tokens per mapper.
    #[arg(long, default_value_t = 10_000)]
    tokens: u64,
    /// Synthetic corpus: vocabulary size.
    #[arg(long, default_value_t = 1_000)]
    vocab: u64,
    /// Print only the most frequent N words.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Memory-bounded reduction ratio across key varieties, optionally
    /// checked against the idealized node.
    Reduction {
        #[arg(long)]
        total_pairs: u64,
        #[arg(long)]
        capacity: u64,
        /// Comma-separated distinct-key counts to sweep.
        #[arg(long, value_delimiter = ',', required = true)]
        keys: Vec<u64>,
    },
    /// Fixed-slot padding overhead for one packet layout.
    Padding {
        #[arg(long)]
        packet_bytes: u64,
        #[arg(long)]
        slot_bytes: u64,
        /// Actual pair sizes, comma separated; must fill every slot.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<u64>,
    },
    /// Header bytes injected across a payload-per-packet sweep.
    Headers {
        #[arg(long)]
        payload_bytes: u64,
        #[arg(long, value_delimiter = ',', required = true)]
        payload_per_packet: Vec<u64>,
        #[arg(long, default_value_t = 58)]
        header_bytes: u64,
    },
    /// End-to-end reduction of an idealized chain per hop count.
    Multihop {
        #[arg(long)]
        total_pairs: u64,
        #[arg(long)]
        keys: u64,
        #[arg(long)]
        capacity: u64,
        #[arg(long, default_value_t = 4)]
        hops: usize,
        /// Zipf skew; omit for the evenly distributed stream.
        #[arg(long)]
        zipf: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct GenWorkloadArgs {
    /// Experiment config naming the [workload] section to realize.
    #[arg(short, long)]
    config: PathBuf,
    /// Write the manifest JSON here (defaults to stdout).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also write every mapper's packed frames, each prefixed with a
    /// 32-bit big-endian length.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate(args) => simulate(args),
        Cmd::Wordcount(args) => wordcount(args),
        Cmd::Model { which } => model(which),
        Cmd::GenWorkload(args) => gen_workload(args),
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for path in &args.config {
        let cfg = load_config(path)?;
        let report = run_experiment(&cfg).with_context(|| format!("running {}", path.display()))?;
        eprintln!("{}: {}", path.display(), report.summary());
        if !args.quiet {
            println!("{}", serde_json::to_string(&report)?);
        }
        reports.push(report);
    }
    if let Some(path) = &args.jsonl {
        fs::write(path, report::to_jsonl(&reports)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.csv {
        let table = report::to_csv(&reports).map_err(|e| anyhow::anyhow!(e.to_string()))?;
        fs::write(path, table).with_context(|| format!("writing {}", path.display()))?;
    }
    if reports.iter().any(|r| !r.oracle_match) {
        bail!("oracle mismatch: at least one run diverged from its reference fold");
    }
    Ok(())
}

fn synthetic_corpus(seed: u64, mappers: usize, tokens: u64, vocab: u64) -> Result<Vec<String>> {
    let zipf = rand_distr::Zipf::new(vocab, 0.99)
        .map_err(|e| anyhow::anyhow!("bad vocabulary size: {e}"))?;
    let mut streams = Vec::with_capacity(mappers);
    for m in 0..mappers {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(m as u64 + 1);
        let mut text = String::new();
        for _ in 0..tokens {
            let rank = zipf.sample(&mut rng) as u64;
            text.push_str(&format!("word{rank} "));
        }
        streams.push(text);
    }
    Ok(streams)
}

fn wordcount(args: WordcountArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let streams = if args.texts.is_empty() {
        synthetic_corpus(cfg.seed, cfg.roles.mappers.len(), args.tokens, args.vocab)?
    } else {
        args.texts.clone()
    };
    let out = wordcount_demo(&cfg, &streams)?;
    let mut by_count: Vec<(&String, &i32)> = out.counts.iter().collect();
    by_count.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (word, count) in by_count.iter().take(args.top) {
        println!("{count:>10}  {word}");
    }
    eprintln!(
        "{} distinct words, {} truncated tokens, {}",
        out.counts.len(),
        out.truncated_tokens,
        out.report.summary()
    );
    if !out.report.oracle_match {
        bail!("word count diverged from the reference counter");
    }
    Ok(())
}

fn model(which: ModelCmd) -> Result<()> {
    match which {
        ModelCmd::Reduction { total_pairs, capacity, keys } => {
            for n in keys {
                let params = ReductionParams {
                    total_pairs,
                    distinct_keys: n,
                    capacity_pairs: capacity,
                };
                let record = match reduction_model(&params) {
                    Ok(ratio) => json!({
                        "total_pairs": total_pairs,
                        "distinct_keys": n,
                        "capacity_pairs": capacity,
                        "reduction_ratio": ratio,
                        "bound": reduction_bound(capacity, n),
                    }),
                    Err(e) => json!({
                        "total_pairs": total_pairs,
                        "distinct_keys": n,
                        "capacity_pairs": capacity,
                        "error": e.to_string(),
                        "bound": reduction_bound(capacity, n),
                    }),
                };
                println!("{record}");
            }
        }
        ModelCmd::Padding { packet_bytes, slot_bytes, lengths } => {
            let overhead = padding_overhead(packet_bytes, slot_bytes, &lengths)?;
            println!(
                "{}",
                json!({
                    "packet_bytes": packet_bytes,
                    "slot_bytes": slot_bytes,
                    "pairs": lengths.len(),
                    "padding_overhead": overhead,
                })
            );
        }
        ModelCmd::Headers { payload_bytes, payload_per_packet, header_bytes } => {
            for per in payload_per_packet {
                let total = header_overhead(payload_bytes, per, header_bytes)?;
                println!(
                    "{}",
                    json!({
                        "payload_bytes": payload_bytes,
                        "payload_per_packet": per,
                        "header_bytes": header_bytes,
                        "total_bytes": total,
                        "overhead_fraction": if payload_bytes == 0 { 0.0 } else {
                            total as f64 / payload_bytes as f64 - 1.0
                        },
                    })
                );
            }
        }
        ModelCmd::Multihop { total_pairs, keys, capacity, hops, zipf, seed } => {
            let params = ReductionParams {
                total_pairs,
                distinct_keys: keys,
                capacity_pairs: capacity,
            };
            let kind = match zipf {
                Some(s) => StreamKind::Zipf { s },
                None => StreamKind::Even,
            };
            for (h, ratio) in check_multihop(&params, hops, kind, seed)? {
                println!(
                    "{}",
                    json!({
                        "hops": h,
                        "total_pairs": total_pairs,
                        "distinct_keys": keys,
                        "capacity_per_hop": capacity,
                        "reduction_ratio": ratio,
                    })
                );
            }
        }
    }
    Ok(())
}

fn gen_workload(args: GenWorkloadArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let section = cfg
        .workload
        .as_ref()
        .context("config has no [workload] section to generate from")?;
    let spec = section.to_spec(cfg.seed, cfg.roles.mappers.len() as u16);
    let workload = Workload::new(spec.clone())?;

    let mut per_mapper = Vec::new();
    for m in 0..spec.mapper_count {
        per_mapper.push(json!({
            "mapper": cfg.roles.mappers[m as usize],
            "pairs": workload.mapper_pair_count(m),
        }));
    }
    let manifest = json!({
        "spec": spec,
        "total_pairs": workload.total_pairs(),
        "total_pair_bytes": workload.total_pair_bytes(),
        "distinct_keys_used": workload.distinct_keys_used(),
        "per_mapper": per_mapper,
    });
    let manifest_text = serde_json::to_string_pretty(&manifest)?;
    match &args.manifest {
        Some(path) => fs::write(path, manifest_text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{manifest_text}"),
    }

    if let Some(path) = &args.trace {
        let mut out = fs::File::create(path)
            .with_context(|| format!("writing {}", path.display()))?;
        let mut frames = 0u64;
        for m in 0..spec.mapper_count {
            let pairs = workload.mapper_pairs(m);
            let packets = pack(&pairs, 1, spec.op, cfg.mtu, true)?;
            for agg in packets {
                let pkt = Packet {
                    src_node: cfg.roles.mappers[m as usize],
                    dst_node: cfg.roles.reducer,
                    body: PacketBody::Aggregation(agg),
                };
                let frame = encode(&pkt, cfg.mtu)?;
                out.write_all(&(frame.len() as u32).to_be_bytes())?;
                out.write_all(&frame)?;
                frames += 1;
            }
        }
        eprintln!("trace: {frames} frames written to {}", path.display());
    }
    Ok(())
}
