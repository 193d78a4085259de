//! Monte-Carlo fault-injection campaigns.
//!
//! For every image a golden run is recorded, then `iterations` faulty runs
//! each flip one randomly chosen flip-flop bit at one randomly chosen cycle.
//! Every draw comes from a SplitMix64 stream keyed by `(seed, image, iter)`,
//! so the record set is identical for any thread count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapath::{RegisterGroup, SaConfig};
use crate::error::{Error, Result};
use crate::fault::{ff_count, FaultSpec, GoldenReference, OutcomeKind, RegisterAddress, DEFAULT_CHECKPOINT_INTERVAL};
use crate::model::ModelSpec;
use crate::model_io::{load_dataset, load_model};
use crate::report::{write_stats_csv, write_stats_json};
use crate::rng::SplitMix64;
use crate::scheduler::compile;
use crate::stats::{aggregate, CampaignStats};
use crate::tensor::TensorI8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Every flip-flop bit equally likely.
    #[default]
    #[serde(rename = "uniform-bit")]
    UniformBit,
    /// Injections rotate over register groups, then a uniform bit within
    /// the group.
    #[serde(rename = "stratified-by-group")]
    Stratified,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::UniformBit => "uniform-bit",
            SamplingMode::Stratified => "stratified-by-group",
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-bit" | "uniform" => Ok(SamplingMode::UniformBit),
            "stratified-by-group" | "stratified" => Ok(SamplingMode::Stratified),
            _ => Err(Error::Config(format!("unknown sampling mode '{s}'"))),
        }
    }
}

/// One injection, serialized as one JSON line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub image: u64,
    pub iter: u64,
    pub cycle: u64,
    pub group: RegisterGroup,
    pub instance: usize,
    pub bit: u32,
    pub outcome: OutcomeKind,
    pub logit_delta: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub image: u64,
    pub model_cycles: u64,
    pub golden: Vec<i8>,
}

/// Campaign parameters that do not involve the filesystem.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub sa: SaConfig,
    pub iterations: u64,
    pub seed: u64,
    pub sampling: SamplingMode,
    /// Worker threads; 0 uses the global rayon pool.
    pub jobs: usize,
    pub checkpoint_interval: u64,
}

impl CampaignSpec {
    pub fn new(sa: SaConfig, iterations: u64, seed: u64, sampling: SamplingMode) -> Self {
        CampaignSpec {
            sa,
            iterations,
            seed,
            sampling,
            jobs: 0,
            checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub model_path: PathBuf,
    pub dataset_path: PathBuf,
    pub spec: CampaignSpec,
    /// Directory receiving `golden.jsonl`, `records.jsonl`, `stats.csv`
    /// and `stats.json`.
    pub out_dir: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spec.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub goldens: Vec<GoldenRecord>,
    pub records: Vec<CampaignRecord>,
    pub stats: CampaignStats,
}

/// Register groups that exist in `sa`, in canonical order.
pub fn injectable_groups(sa: SaConfig) -> Vec<RegisterGroup> {
    RegisterGroup::ALL
        .into_iter()
        .filter(|g| g.count(sa) > 0)
        .collect()
}

/// Address of the `index`-th flip-flop bit in [`crate::fault::enumerate_ffs`]
/// order without materializing the list.
pub fn ff_at(sa: SaConfig, mut index: usize) -> Option<RegisterAddress> {
    for group in RegisterGroup::ALL {
        let bits = group.bits(sa);
        if index < bits {
            let w = group.width() as usize;
            return Some(RegisterAddress::new(group, index / w, (index % w) as u32));
        }
        index -= bits;
    }
    None
}

/// Fault for injection `iter` of image `image`. `ordinal` is the global
/// injection number `image_index * iterations + iter`, used for group
/// rotation in stratified mode. The flip-flop is drawn before the cycle.
pub fn draw_fault(
    sa: SaConfig,
    total_cycles: u64,
    seed: u64,
    image: u64,
    iter: u64,
    ordinal: u64,
    mode: SamplingMode,
) -> FaultSpec {
    let mut rng = SplitMix64::for_injection(seed, image, iter);
    let address = match mode {
        SamplingMode::UniformBit => {
            let idx = rng.below(ff_count(sa) as u64) as usize;
            ff_at(sa, idx).expect("index below ff count")
        }
        SamplingMode::Stratified => {
            let groups = injectable_groups(sa);
            let group = groups[(ordinal % groups.len() as u64) as usize];
            let idx = rng.below(group.bits(sa) as u64) as usize;
            let w = group.width() as usize;
            RegisterAddress::new(group, idx / w, (idx % w) as u32)
        }
    };
    let cycle = rng.below(total_cycles);
    FaultSpec { address, cycle }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs a campaign over in-memory images.
pub fn run_campaign_with(model: &ModelSpec, images: &[TensorI8], spec: &CampaignSpec) -> Result<CampaignOutput> {
    if spec.checkpoint_interval == 0 {
        return Err(Error::Config("checkpoint interval must be positive".into()));
    }
    let program = compile(model, spec.sa)?;
    let total_cycles = program.total_cycles();

    with_pool(spec.jobs, || -> Result<CampaignOutput> {
        let references: Vec<GoldenReference<'_>> = images
            .par_iter()
            .map(|img| GoldenReference::record(&program, img.data(), spec.checkpoint_interval))
            .collect::<Result<_>>()?;
        let goldens = references
            .iter()
            .enumerate()
            .map(|(i, r)| GoldenRecord {
                image: i as u64,
                model_cycles: r.model_cycles(),
                golden: r.logits().to_vec(),
            })
            .collect();

        let iters = spec.iterations;
        let n = images.len() as u64 * iters;
        let records: Vec<CampaignRecord> = (0..n)
            .into_par_iter()
            .map(|ordinal| {
                let (image, iter) = (ordinal / iters, ordinal % iters);
                let fault = draw_fault(spec.sa, total_cycles, spec.seed, image, iter, ordinal, spec.sampling);
                let outcome = references[image as usize].classify_fault(&fault)?;
                Ok(CampaignRecord {
                    image,
                    iter,
                    cycle: fault.cycle,
                    group: fault.address.group,
                    instance: fault.address.instance,
                    bit: fault.address.bit,
                    outcome: outcome.kind,
                    logit_delta: outcome.logit_delta,
                })
            })
            .collect::<Result<_>>()?;

        let mut stats = aggregate(&records);
        stats.model = model.name.clone();
        stats.sa = spec.sa.to_string();
        stats.sampling = spec.sampling.name().to_string();
        Ok(CampaignOutput {
            goldens,
            records,
            stats,
        })
    })?
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<CampaignRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Loads model and dataset, runs the campaign and writes all outputs.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignOutput> {
    cfg.validate()?;
    let model = load_model(&cfg.model_path)?;
    let dataset = load_dataset(&cfg.dataset_path)?;
    let images: Vec<TensorI8> = dataset.images.into_iter().map(|i| i.image).collect();
    let out = run_campaign_with(&model, &images, &cfg.spec)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("golden.jsonl"), &out.goldens)?;
        write_jsonl(&dir.join("records.jsonl"), &out.records)?;
        write_stats_csv(&out.stats, &dir.join("stats.csv"))?;
        write_stats_json(&out.stats, &dir.join("stats.json"))?;
    }
    Ok(out)
}
