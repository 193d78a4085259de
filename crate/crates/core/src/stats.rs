//! Per-register-group outcome statistics with Wilson score intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::campaign::CampaignRecord;
use crate::datapath::{GroupClass, RegisterGroup};
use crate::fault::OutcomeKind;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes out of `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub n: u64,
    pub masked: u64,
    pub noncrit: u64,
    pub crit: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, kind: OutcomeKind) {
        self.n += 1;
        match kind {
            OutcomeKind::Masked => self.masked += 1,
            OutcomeKind::NonCritical => self.noncrit += 1,
            OutcomeKind::Critical => self.crit += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.n += other.n;
        self.masked += other.masked;
        self.noncrit += other.noncrit;
        self.crit += other.crit;
    }
}

/// One row of the stats table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub n: u64,
    pub masked: u64,
    pub noncrit: u64,
    pub crit: u64,
    pub f_noncrit: f64,
    pub f_noncrit_lo: f64,
    pub f_noncrit_hi: f64,
    pub f_crit: f64,
    pub f_crit_lo: f64,
    pub f_crit_hi: f64,
}

impl GroupStats {
    pub fn from_counts(group: impl Into<String>, c: OutcomeCounts) -> Self {
        let rate = |k: u64| if c.n == 0 { 0.0 } else { k as f64 / c.n as f64 };
        let (nlo, nhi) = wilson_interval(c.noncrit, c.n, Z_95);
        let (clo, chi) = wilson_interval(c.crit, c.n, Z_95);
        GroupStats {
            group: group.into(),
            n: c.n,
            masked: c.masked,
            noncrit: c.noncrit,
            crit: c.crit,
            f_noncrit: rate(c.noncrit),
            f_noncrit_lo: nlo,
            f_noncrit_hi: nhi,
            f_crit: rate(c.crit),
            f_crit_lo: clo,
            f_crit_hi: chi,
        }
    }
}

/// Statistics conditioned on the injected register group, plus the
/// four-class rollup and the overall total. Only groups that received at
/// least one injection appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub sa: String,
    #[serde(default)]
    pub sampling: String,
    pub groups: Vec<GroupStats>,
    pub rollup: Vec<GroupStats>,
    pub total: Option<GroupStats>,
}

impl CampaignStats {
    pub fn group(&self, group: RegisterGroup) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.group == group.name())
    }

    pub fn class(&self, class: GroupClass) -> Option<&GroupStats> {
        self.rollup.iter().find(|g| g.group == class.name())
    }

    /// Every row in CSV order: groups, then rollup, then total.
    pub fn rows(&self) -> impl Iterator<Item = &GroupStats> {
        self.groups.iter().chain(&self.rollup).chain(&self.total)
    }
}

pub fn aggregate(records: &[CampaignRecord]) -> CampaignStats {
    let mut per_group: BTreeMap<RegisterGroup, OutcomeCounts> = BTreeMap::new();
    for r in records {
        per_group.entry(r.group).or_default().add(r.outcome);
    }
    let mut per_class: BTreeMap<GroupClass, OutcomeCounts> = BTreeMap::new();
    let mut total = OutcomeCounts::default();
    for (g, c) in &per_group {
        per_class.entry(g.class()).or_default().merge(c);
        total.merge(c);
    }
    CampaignStats {
        groups: per_group
            .into_iter()
            .map(|(g, c)| GroupStats::from_counts(g.name(), c))
            .collect(),
        rollup: per_class
            .into_iter()
            .map(|(k, c)| GroupStats::from_counts(k.name(), c))
            .collect(),
        total: (total.n > 0).then(|| GroupStats::from_counts("all", total)),
        ..Default::default()
    }
}
