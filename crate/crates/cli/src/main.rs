use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use safi_core::campaign::{run_campaign, CampaignConfig, CampaignSpec, GoldenRecord, SamplingMode};
use safi_core::fault::{classify, enumerate_ffs, run_program_faulty, FaultSpec, RegisterAddress};
use safi_core::fixture::{gen_fixture, FixtureKind};
use safi_core::model_io::{load_dataset, load_model, Dataset};
use safi_core::report::{load_stats, stats_to_csv, write_stats_csv, write_stats_json, write_svg};
use safi_core::scheduler::{compile, run_golden_traced, run_program};
use safi_core::{ModelSpec, RegisterGroup, SaConfig};

#[derive(Parser)]
#[command(name = "safi", version, about = "Systolic-array accelerator fault-injection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Model container (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Dataset container (JSON).
    #[arg(long)]
    dataset: PathBuf,
    /// Array size as RxC, e.g. 4x4.
    #[arg(long)]
    sa: SaConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Fault-free run; prints one golden record per image as JSON lines.
    Golden {
        #[command(flatten)]
        inputs: Inputs,
        /// Only run this image.
        #[arg(long)]
        image: Option<usize>,
        /// Write a per-cycle register trace (requires --image or a single-image dataset).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Single injection; prints the outcome as JSON.
    Inject {
        #[command(flatten)]
        inputs: Inputs,
        /// Dataset index.
        #[arg(long)]
        image: usize,
        /// The bit flips right after this clock edge.
        #[arg(long)]
        cycle: u64,
        /// Register group, e.g. accum-reg.
        #[arg(long)]
        group: RegisterGroup,
        /// Register index within the group (see `enumerate`).
        #[arg(long)]
        instance: usize,
        /// Bit index, LSB = 0.
        #[arg(long)]
        bit: u32,
    },
    /// Monte-Carlo campaign; writes golden.jsonl, records.jsonl, stats.csv and stats.json.
    Campaign {
        #[command(flatten)]
        inputs: Inputs,
        /// Injections per image.
        #[arg(long)]
        iters: u64,
        /// Decimal or 0x-prefixed hexadecimal.
        #[arg(long, value_parser = parse_seed, default_value = "0")]
        seed: u64,
        /// Rotate injections evenly over register groups.
        #[arg(long)]
        stratified: bool,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-renders one or more stats.json files.
    Report {
        /// stats.json files; several give one bar series each in the SVG.
        #[arg(long, required = true, num_args = 1..)]
        stats: Vec<PathBuf>,
        /// Write a bar chart.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// CSV of the first stats file; printed to stdout when no output is given.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write stats as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Writes a synthetic model.json and dataset.json.
    GenFixture {
        /// fc3, lenet-like or lenet-rgb.
        #[arg(long)]
        kind: FixtureKind,
        #[arg(long, value_parser = parse_seed, default_value = "0")]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints every flip-flop bit of the array as JSON lines.
    Enumerate {
        /// Array size as RxC, e.g. 4x4.
        #[arg(long)]
        sa: SaConfig,
    },
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed '{s}': {e}"))
}

fn load(inputs: &Inputs) -> Result<(ModelSpec, Dataset)> {
    let model = load_model(&inputs.model)
        .with_context(|| format!("loading model {}", inputs.model.display()))?;
    let dataset = load_dataset(&inputs.dataset)
        .with_context(|| format!("loading dataset {}", inputs.dataset.display()))?;
    dataset.check_against(&model)?;
    Ok((model, dataset))
}

fn image_at(dataset: &Dataset, i: usize) -> Result<&safi_core::TensorI8> {
    match dataset.images.get(i) {
        Some(img) => Ok(&img.image),
        None => bail!("image {i} out of range (dataset has {})", dataset.images.len()),
    }
}

fn golden(inputs: &Inputs, image: Option<usize>, trace: Option<&PathBuf>) -> Result<()> {
    let (model, dataset) = load(inputs)?;
    let selected: Vec<usize> = match image {
        Some(i) => vec![i],
        None => (0..dataset.images.len()).collect(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Some(path) = trace {
        if selected.len() != 1 {
            bail!("--trace needs a single image; pass --image");
        }
        let i = selected[0];
        let mut w = BufWriter::new(File::create(path)?);
        let run = run_golden_traced(&model, image_at(&dataset, i)?, inputs.sa, &mut w)?;
        w.flush()?;
        let rec = GoldenRecord {
            image: i as u64,
            model_cycles: run.model_cycles,
            golden: run.logits,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        return Ok(());
    }
    let program = compile(&model, inputs.sa)?;
    for i in selected {
        let run = run_program(&program, image_at(&dataset, i)?.data())?;
        let rec = GoldenRecord {
            image: i as u64,
            model_cycles: run.model_cycles,
            golden: run.logits,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

fn inject(inputs: &Inputs, image: usize, fault: FaultSpec) -> Result<()> {
    let (model, dataset) = load(inputs)?;
    let program = compile(&model, inputs.sa)?;
    let img = image_at(&dataset, image)?;
    let golden = run_program(&program, img.data())?;
    let faulty = run_program_faulty(&program, img.data(), &fault)?;
    let outcome = classify(&golden.logits, &faulty)?;
    let doc = json!({
        "image": image,
        "cycle": fault.cycle,
        "group": fault.address.group,
        "instance": fault.address.instance,
        "bit": fault.address.bit,
        "outcome": outcome.kind,
        "logit_delta": outcome.logit_delta,
        "golden": golden.logits,
        "faulty": faulty,
    });
    println!("{doc}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Golden { inputs, image, trace } => golden(&inputs, image, trace.as_ref()),
        Command::Inject {
            inputs,
            image,
            cycle,
            group,
            instance,
            bit,
        } => {
            let fault = FaultSpec {
                address: RegisterAddress::new(group, instance, bit),
                cycle,
            };
            inject(&inputs, image, fault)
        }
        Command::Campaign {
            inputs,
            iters,
            seed,
            stratified,
            jobs,
            out,
        } => {
            let sampling = if stratified {
                SamplingMode::Stratified
            } else {
                SamplingMode::UniformBit
            };
            let mut spec = CampaignSpec::new(inputs.sa, iters, seed, sampling);
            spec.jobs = jobs.unwrap_or(0);
            let cfg = CampaignConfig {
                model_path: inputs.model,
                dataset_path: inputs.dataset,
                spec,
                out_dir: Some(out.clone()),
            };
            let result = run_campaign(&cfg)?;
            eprintln!(
                "{} injections over {} images ({}, {}) written to {}",
                result.records.len(),
                result.goldens.len(),
                inputs.sa,
                sampling.name(),
                out.display()
            );
            Ok(())
        }
        Command::Report { stats, svg, csv, json } => {
            let series = stats
                .iter()
                .map(|p| load_stats(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            if let Some(path) = &svg {
                write_svg(&series, path)?;
            }
            if let Some(path) = &csv {
                write_stats_csv(&series[0], path)?;
            }
            if let Some(path) = &json {
                write_stats_json(&series[0], path)?;
            }
            if svg.is_none() && csv.is_none() && json.is_none() {
                print!("{}", stats_to_csv(&series[0]));
            }
            Ok(())
        }
        Command::GenFixture { kind, seed, out } => {
            let fixture = gen_fixture(kind, seed)?;
            fixture.save(&out)?;
            eprintln!("wrote {} fixture (seed {seed}) to {}", kind.name(), out.display());
            Ok(())
        }
        Command::Enumerate { sa } => {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for (index, a) in enumerate_ffs(sa).iter().enumerate() {
                writeln!(
                    out,
                    "{}",
                    json!({"index": index, "group": a.group, "instance": a.instance, "bit": a.bit})
                )?;
            }
            out.flush()?;
            for g in RegisterGroup::ALL {
                eprintln!("{:<18} {:>3} x {:>2} bit = {:>5}", g.name(), g.count(sa), g.width(), g.bits(sa));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
