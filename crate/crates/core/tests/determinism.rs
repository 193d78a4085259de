//! Campaign output must not depend on scheduling.

mod common;

use common::tiny_model;
use safi_core::campaign::{run_campaign, run_campaign_with, CampaignConfig, CampaignSpec, SamplingMode};
use safi_core::model_io::{save_dataset, save_model, Dataset, DatasetImage};
use safi_core::SaConfig;

#[test]
fn thread_count_does_not_change_records() {
    let (model, images) = tiny_model(21);
    for sampling in [SamplingMode::UniformBit, SamplingMode::Stratified] {
        let mut spec = CampaignSpec::new(SaConfig::new(2, 3).unwrap(), 40, 42, sampling);
        spec.jobs = 1;
        let serial = run_campaign_with(&model, &images, &spec).unwrap();
        spec.jobs = 4;
        let parallel = run_campaign_with(&model, &images, &spec).unwrap();
        assert_eq!(serial, parallel);
        spec.checkpoint_interval = 7;
        let other_interval = run_campaign_with(&model, &images, &spec).unwrap();
        assert_eq!(serial.records, other_interval.records);
        assert_eq!(serial.records.len(), 4 * 40);
    }
}

#[test]
fn files_are_byte_identical_across_runs() {
    let (model, images) = tiny_model(22);
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, &dir.path().join("m.json")).unwrap();
    let ds = Dataset {
        images: images
            .into_iter()
            .map(|image| DatasetImage { label: 0, image })
            .collect(),
    };
    save_dataset(&ds, &dir.path().join("d.json")).unwrap();
    let run = |out: &str, jobs: usize| {
        let mut spec = CampaignSpec::new(SaConfig::new(2, 2).unwrap(), 25, 0xDEADBEEF, SamplingMode::UniformBit);
        spec.jobs = jobs;
        let cfg = CampaignConfig {
            model_path: dir.path().join("m.json"),
            dataset_path: dir.path().join("d.json"),
            spec,
            out_dir: Some(dir.path().join(out)),
        };
        run_campaign(&cfg).unwrap();
        ["golden.jsonl", "records.jsonl", "stats.csv", "stats.json"]
            .map(|f| std::fs::read(dir.path().join(out).join(f)).unwrap())
    };
    let a = run("a", 1);
    let b = run("b", 1);
    let c = run("c", 3);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn zero_iterations_log_goldens_only() {
    let (model, images) = tiny_model(23);
    let spec = CampaignSpec::new(SaConfig::new(2, 2).unwrap(), 0, 1, SamplingMode::UniformBit);
    let out = run_campaign_with(&model, &images[..1], &spec).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.goldens.len(), 1);
    assert!(out.stats.groups.is_empty() && out.stats.total.is_none());
}
