use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cgvamp::config::RunConfig;
use cgvamp::harness::{self, SweepSpec};
use cgvamp::outer;
use cgvamp::plot::{self, PlotKind};
use cgvamp::trace;

#[derive(Parser)]
#[command(name = "cgvamp", version, about = "CG-VAMP solvers and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `1,2,5` or `0-9`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Ground-truth trace columns.
    #[arg(long, value_enum)]
    oracle: Option<Switch>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration, once per seed.
    Run(Common),
    /// Run a seeded grid and write traces, summary, manifest and plots.
    Sweep(Common),
    /// Render SVG plots from a summary CSV.
    Plot {
        /// Summary CSV written by `sweep`.
        #[arg(long)]
        summary: PathBuf,
        /// nmse_vs_t, inner_iters_vs_t or time_vs_t; all three when omitted.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle consistency checks for a single configuration.
    Audit(Common),
}

#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|e| format!("{part}: {e}"))?;
                let b: u64 = b.trim().parse().map_err(|e| format!("{part}: {e}"))?;
                if b < a {
                    return Err(format!("empty seed range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("{part}: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(SeedList(out))
}

fn apply_oracle(cfg: &mut RunConfig, oracle: Option<Switch>) {
    if let Some(sw) = oracle {
        cfg.oracle = matches!(sw, Switch::On);
    }
}

fn write_plots(summary: &[harness::SummaryRow], kinds: &[PlotKind], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for kind in kinds {
        let svg = plot::plot_summary(summary, *kind)?;
        let path = dir.join(format!("{}.svg", kind.name()));
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_run(args: Common) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    apply_oracle(&mut cfg, args.oracle);
    let out = args.out.unwrap_or_else(|| PathBuf::from("run-out"));
    fs::create_dir_all(&out)?;
    let runs: Vec<(String, RunConfig)> = match &args.seeds {
        Some(SeedList(seeds)) => seeds.iter().map(|s| (format!("s{s}"), cfg.with_seed(*s))).collect(),
        None => vec![("run".into(), cfg.clone())],
    };
    let mut failed = 0;
    for (stem, c) in runs {
        let output = match c.instance() {
            Ok(inst) => outer::run(&c, &inst),
            Err(e) => {
                eprintln!("{stem}: {e}");
                failed += 1;
                continue;
            }
        };
        let err = output.error.as_ref().map(|e| e.to_string());
        trace::write_csv_file(&out.join(format!("{stem}.csv")), &output.records, err.as_deref())?;
        trace::write_csv_file(&out.join(format!("{stem}.inner.csv")), &output.inner, None)?;
        fs::write(out.join(format!("{stem}.toml")), c.to_toml_string()?)?;
        match &err {
            Some(e) => {
                eprintln!("{stem}: stopped after {} iterations: {e}", output.records.len());
                failed += 1;
            }
            None => println!(
                "{stem}: {} iterations, final NMSE {:.2} dB, config {}",
                output.records.len(),
                output.final_nmse_db().unwrap_or(f64::NAN),
                &c.hash()[..12]
            ),
        }
    }
    if failed > 0 {
        bail!("{failed} run(s) failed");
    }
    Ok(())
}

fn cmd_sweep(args: Common) -> Result<()> {
    let mut spec = SweepSpec::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    apply_oracle(&mut spec.base, args.oracle);
    if let Some(SeedList(seeds)) = args.seeds {
        spec.seeds = seeds;
    }
    if let Some(out) = args.out {
        spec.out_dir = out;
    }
    let manifest = harness::run_sweep(&spec)?;
    let summary: Vec<harness::SummaryRow> = trace::read_csv_file(&spec.out_dir.join(&manifest.summary))?;
    write_plots(&summary, &PlotKind::ALL, &spec.out_dir.join("plots"))?;
    let failed: Vec<_> = manifest
        .cells
        .iter()
        .flat_map(|c| c.runs.iter().filter(|r| r.error.is_some()).map(move |r| (c.id.as_str(), r)))
        .collect();
    for (cell, r) in &failed {
        eprintln!("{cell} seed {}: {}", r.seed, r.error.as_deref().unwrap_or_default());
    }
    println!(
        "{} cells, {} runs, manifest {} in {}",
        manifest.cells.len(),
        manifest.cells.iter().map(|c| c.runs.len()).sum::<usize>(),
        &manifest.manifest_hash[..12],
        spec.out_dir.display()
    );
    if !failed.is_empty() {
        bail!("{} run(s) recorded errors", failed.len());
    }
    Ok(())
}

fn cmd_plot(summary: PathBuf, kind: Option<String>, out: PathBuf) -> Result<()> {
    let rows: Vec<harness::SummaryRow> =
        trace::read_csv_file(&summary).with_context(|| format!("reading {}", summary.display()))?;
    let kinds = match kind {
        Some(k) => vec![k.parse::<PlotKind>()?],
        None => PlotKind::ALL.to_vec(),
    };
    write_plots(&rows, &kinds, &out)
}

fn cmd_audit(args: Common) -> Result<()> {
    let cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if matches!(args.oracle, Some(Switch::Off)) {
        bail!("the audit needs the oracle columns");
    }
    let seeds = args.seeds.map_or_else(|| vec![0], |s| s.0);
    let (checks, _) = harness::audit(&cfg, &seeds)?;
    for c in &checks {
        println!(
            "{} {:<20} worst {:.4} bound {:.4}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.threshold
        );
    }
    if let Some(out) = args.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("audit.json"), serde_json::to_string_pretty(&checks)? + "\n")?;
    }
    if checks.iter().any(|c| !c.pass) {
        bail!("audit failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plot { summary, kind, out } => cmd_plot(summary, kind, out),
        Command::Audit(a) => cmd_audit(a),
    }
}
