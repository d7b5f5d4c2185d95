//! `heif-forensics` command-line tool.
//!
//! Exit codes: 0 clean, 1 usage or I/O error, 2 input not parseable as boxes,
//! 3 findings at or above the `--fail-on` severity.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{ArgGroup, Parser, Subcommand};
use rayon::prelude::*;

use heif_forensics::analyzer::{AnalyzerOptions, Severity, DEFAULT_SLACK_THRESHOLD};
use heif_forensics::carver::{self, FileBlob};
use heif_forensics::integrity::{hash_file, hash_item, HashError};
use heif_forensics::report::{build_report, render_tree, Report};
use heif_forensics::rewriter::{reveal_hidden, ItemSelection, RevealError, RevealOptions};
use heif_forensics::semantics::{exif_tiff_payload, ParsedFile};

#[derive(Parser)]
#[command(name = "heif-forensics", version, about = "Forensic inspection of HEIF/HEIC files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the box tree with offsets, sizes and version/flags.
    Inspect { path: PathBuf },
    /// Run the full analysis and print findings or a JSON report.
    Analyze {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Exit with 3 when any finding reaches this severity.
        #[arg(long, default_value = "alert")]
        fail_on: Severity,
        /// Smallest unreferenced region reported (trailing data always is).
        #[arg(long, default_value_t = DEFAULT_SLACK_THRESHOLD)]
        slack_threshold: u64,
    },
    /// Write item payloads to files named item_<id>_<type>.bin.
    #[command(group(ArgGroup::new("which").required(true).args(["item", "all"])))]
    Extract {
        path: PathBuf,
        #[arg(long)]
        item: Vec<u32>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Whole-file and per-item MD5, SHA-1 and SHA-256.
    Hash {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a copy with hidden flags cleared; the input is never modified.
    Reveal {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these item ids (default: every hidden item).
        #[arg(long)]
        item: Vec<u32>,
        /// Also set the enabled bit of disabled tracks.
        #[arg(long)]
        enable_tracks: bool,
        /// Print the report of the revealed copy, change log included.
        #[arg(long)]
        json: bool,
    },
    /// Scan a raw blob for embedded HEIF files and extract them.
    Carve {
        blob: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        min_score: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Clean = 0,
    Findings = 3,
    Fatal = 2,
    Failure = 1,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Status::Failure as u8),
            };
        }
    };
    let status = match run(cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            Status::Failure
        }
    };
    ExitCode::from(status as u8)
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Inspect { path } => inspect(&path),
        Command::Analyze {
            paths,
            json,
            fail_on,
            slack_threshold,
        } => analyze(&paths, json, fail_on, slack_threshold),
        Command::Extract { path, item, all, out } => extract(&path, (!all).then_some(item), &out),
        Command::Hash { path, json } => hash(&path, json),
        Command::Reveal {
            path,
            out,
            item,
            enable_tracks,
            json,
        } => reveal(&path, &out, item, enable_tracks, json),
        Command::Carve {
            blob,
            out,
            min_score,
            json,
        } => carve(&blob, &out, min_score, json),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn create_new(path: &Path) -> Result<fs::File> {
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))
}

fn inspect(path: &Path) -> Result<Status> {
    let bytes = read_input(path)?;
    let parsed = ParsedFile::parse(&bytes);
    print!("{}", render_tree(&parsed.tree, parsed.model.kind));
    Ok(if parsed.tree.fatal {
        Status::Fatal
    } else {
        Status::Clean
    })
}

fn analyze(paths: &[PathBuf], json: bool, fail_on: Severity, slack_threshold: u64) -> Result<Status> {
    let results: Vec<Result<(bool, Report)>> = paths
        .par_iter()
        .map(|path| {
            let bytes = read_input(path)?;
            let opts = AnalyzerOptions {
                slack_threshold,
                filename: path.file_name().map(|n| n.to_string_lossy().into_owned()),
            };
            let (parsed, report) = build_report(&path.display().to_string(), &bytes, &opts);
            Ok((parsed.tree.fatal, report))
        })
        .collect();

    let mut status = Status::Clean;
    let mut reports = Vec::new();
    for r in results {
        match r {
            Ok((fatal, report)) => {
                let s = if fatal {
                    Status::Fatal
                } else if report.findings.iter().any(|f| f.severity >= fail_on) {
                    Status::Findings
                } else {
                    Status::Clean
                };
                status = status.max(s);
                reports.push(report);
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                status = Status::Failure;
            }
        }
    }
    if json {
        let text = if paths.len() == 1 {
            reports.first().map(Report::to_json).unwrap_or_default()
        } else {
            serde_json::to_string_pretty(&reports)?
        };
        println!("{text}");
    } else {
        for r in &reports {
            print_summary(r);
        }
    }
    Ok(status)
}

fn print_summary(r: &Report) {
    println!("== {} ==", r.input.path);
    let brands = r
        .detection
        .brands
        .as_ref()
        .map(|b| {
            let compat: Vec<String> = b.compatible.iter().map(|c| c.to_string()).collect();
            format!("{} (minor {}) [{}]", b.major, b.minor_version, compat.join(", "))
        })
        .unwrap_or_else(|| "none".into());
    println!("kind: {:?}  brands: {brands}", r.detection.kind);
    println!(
        "handler: {}  primary item: {}",
        r.handler.map_or("none".into(), |h| h.to_string()),
        r.primary_item.map_or("none".into(), |p| p.to_string())
    );
    println!(
        "size: {}  md5: {}  sha256: {}",
        r.input.size,
        r.input.digests.md5_hex(),
        r.input.digests.sha256_hex()
    );
    if !r.items.is_empty() {
        println!("items:");
        for i in &r.items {
            let mut tags = Vec::new();
            if i.primary {
                tags.push("primary");
            }
            if i.item.hidden {
                tags.push("hidden");
            }
            let digest = i.digests.as_ref().map_or_else(
                || format!("({})", i.digest_error.as_deref().unwrap_or("-")),
                |d| d.md5_hex(),
            );
            println!(
                "  {:>6}  {:<4}  {:<16} {:<15} {:>10}  {digest}",
                i.item.item_id,
                i.item.item_type,
                i.role.to_string(),
                tags.join(","),
                i.item.total_length()
            );
        }
    }
    for t in &r.tracks {
        println!(
            "track {}: flags=0x{:06x} {} samples={}",
            t.track_id,
            t.tkhd_flags,
            if t.enabled { "enabled" } else { "DISABLED" },
            t.sample_count
        );
    }
    for d in r.data_references.iter().filter(|d| d.is_external()) {
        println!("external data reference {}: {} {}", d.index, d.entry_type, d.location);
    }
    println!("findings: {}", r.findings.len());
    for f in &r.findings {
        let mut at = Vec::new();
        if let Some(o) = f.location.offset {
            at.push(format!("@{o}"));
        }
        if let Some(i) = f.location.item_id {
            at.push(format!("item={i}"));
        }
        if let Some(t) = f.location.track_id {
            at.push(format!("track={t}"));
        }
        println!("  [{}] {} {}: {}", f.severity, f.code, at.join(" "), f.message);
    }
    println!(
        "unreferenced: {} bytes in {} regions",
        r.coverage.unreferenced_bytes,
        r.coverage.regions.len()
    );
    for m in &r.mint {
        println!("mint item {}: {:?} {}", m.item_id, m.status, m.note);
    }
}

fn extract(path: &Path, ids: Option<Vec<u32>>, out: &Path) -> Result<Status> {
    let bytes = read_input(path)?;
    let parsed = ParsedFile::parse(&bytes);
    if parsed.tree.fatal {
        eprintln!("no box structure in {}", path.display());
        return Ok(Status::Fatal);
    }
    let model = &parsed.model;
    let ids = match ids {
        Some(ids) => {
            for id in &ids {
                if model.item(*id).is_none() {
                    bail!("item {id} does not exist");
                }
            }
            ids
        }
        None => model.items.iter().map(|i| i.item_id).collect(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = 0;
    for id in ids {
        let item = model.item(id).expect("checked above");
        let data = match heif_forensics::integrity::item_bytes(model, &bytes, id) {
            Ok(d) => d,
            Err(HashError::ExternalData {
                data_reference_index, ..
            }) => {
                let loc = model
                    .meta_data_reference(data_reference_index)
                    .map(|d| d.location.clone())
                    .unwrap_or_default();
                eprintln!("notice: EXTERNAL_DATA_REF item {id} skipped; data lives at {loc:?}");
                continue;
            }
            Err(e) => {
                eprintln!("warning: item {id} skipped: {e}");
                continue;
            }
        };
        let stem = format!("item_{id}_{}", item.item_type.file_safe());
        let target = out.join(format!("{stem}.bin"));
        create_new(&target)?.write_all(&data)?;
        println!("{}", target.display());
        written += 1;
        if item.item_type == b"Exif" {
            if let Some(tiff) = exif_tiff_payload(&data) {
                let target = out.join(format!("{stem}.exif"));
                create_new(&target)?.write_all(tiff)?;
                println!("{}", target.display());
            }
        }
    }
    eprintln!("{written} item(s) extracted");
    Ok(Status::Clean)
}

fn hash(path: &Path, json: bool) -> Result<Status> {
    let bytes = read_input(path)?;
    let parsed = ParsedFile::parse(&bytes);
    let file = hash_file(&bytes);
    let items: Vec<_> = parsed
        .model
        .items
        .iter()
        .map(|i| (i.item_id, hash_item(&parsed.model, &bytes, i.item_id)))
        .collect();
    if json {
        let list: Vec<_> = std::iter::once(serde_json::to_value(&file)?)
            .chain(
                items
                    .iter()
                    .filter_map(|(_, d)| d.as_ref().ok())
                    .map(|d| serde_json::to_value(d).unwrap()),
            )
            .collect();
        println!("{}", serde_json::to_string_pretty(&list)?);
    } else {
        println!("subject\tbytes\tmd5\tsha1\tsha256");
        println!(
            "file\t{}\t{}\t{}\t{}",
            file.byte_count,
            file.md5_hex(),
            file.sha1_hex(),
            file.sha256_hex()
        );
        for (id, d) in &items {
            match d {
                Ok(d) => println!(
                    "item {id}\t{}\t{}\t{}\t{}",
                    d.byte_count,
                    d.md5_hex(),
                    d.sha1_hex(),
                    d.sha256_hex()
                ),
                Err(e) => println!("item {id}\t-\t({e})"),
            }
        }
    }
    Ok(if parsed.tree.fatal {
        Status::Fatal
    } else {
        Status::Clean
    })
}

/// True when `out` names the same file as `input`, whether or not `out`
/// exists yet.
fn same_path(input: &Path, out: &Path) -> Result<bool> {
    let input = fs::canonicalize(input).with_context(|| format!("resolving {}", input.display()))?;
    if out.exists() {
        return Ok(fs::canonicalize(out)? == input);
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let Ok(parent) = fs::canonicalize(parent) else {
        return Ok(false);
    };
    Ok(out.file_name().is_some_and(|n| parent.join(n) == input))
}

fn reveal(path: &Path, out: &Path, items: Vec<u32>, enable_tracks: bool, json: bool) -> Result<Status> {
    if same_path(path, out)? {
        bail!("refusing to write the revealed copy over the input {}", path.display());
    }
    let bytes = read_input(path)?;
    let options = RevealOptions {
        items: if items.is_empty() {
            ItemSelection::All
        } else {
            ItemSelection::Ids(items)
        },
        also_enable_tracks: enable_tracks,
    };
    let outcome = match reveal_hidden(&bytes, &options) {
        Ok(o) => o,
        Err(RevealError::ParseFailed(m)) => {
            eprintln!("cannot reveal {}: {m}", path.display());
            return Ok(Status::Fatal);
        }
    };
    create_new(out)?.write_all(&outcome.output)?;
    if json {
        let (_, mut report) = build_report(&out.display().to_string(), &outcome.output, &AnalyzerOptions::default());
        report.change_log = Some(outcome.change_log.clone());
        println!("{}", report.to_json());
    } else {
        for c in &outcome.change_log {
            println!("{c}");
        }
        if outcome.nothing_to_reveal() {
            eprintln!("nothing to reveal; copy written unchanged");
        }
        if outcome.hidden_cover {
            eprintln!("notice: HIDDEN_COVER the primary item was flagged hidden");
        }
        eprintln!(
            "{} byte(s) changed, written to {}",
            outcome.change_log.len(),
            out.display()
        );
    }
    Ok(Status::Clean)
}

fn carve(blob: &Path, out: &Path, min_score: f64, json: bool) -> Result<Status> {
    let source = FileBlob::open(blob).with_context(|| format!("opening {}", blob.display()))?;
    let result = carver::scan(&source).with_context(|| format!("scanning {}", blob.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut extracted = Vec::new();
    for c in result.heif.iter().filter(|c| c.score >= min_score) {
        let name = if c.is_partial() {
            format!("carved_{:012}_partial.heic", c.start)
        } else {
            format!("carved_{:012}.heic", c.start)
        };
        let target = out.join(name);
        carver::extract(&source, c, &target).with_context(|| format!("writing {}", target.display()))?;
        extracted.push(target);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        for c in &result.heif {
            println!(
                "{:>12} {:>12} score={:.2} boxes={} stop={:?} kind={:?}{}",
                c.start,
                c.end,
                c.score,
                c.boxes_walked,
                c.stop_reason,
                c.kind,
                if c.score < min_score {
                    " (below --min-score)"
                } else {
                    ""
                }
            );
        }
        for c in &result.non_heif {
            println!("{:>12} non-HEIF ftyp, major brand '{}'", c.start, c.brands.major);
        }
        for p in &extracted {
            println!("{}", p.display());
        }
    }
    eprintln!("{} candidate(s), {} extracted", result.heif.len(), extracted.len());
    Ok(Status::Clean)
}
