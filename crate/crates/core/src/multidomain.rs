//! Project data enlarged with weakly labelled external domains.
//!
//! The project training frames are split once into fixed train/validation
//! subsets. Every external source contributes a frozen validation draw at
//! construction time and a fresh training draw every epoch, sampled without
//! replacement from the remainder of its pool. Source roles fix the labels:
//! general-domain images are negatives, fish-domain images positives.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, FrameSample, SampleSplit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    ExternalNegative,
    ExternalPositive,
}

impl SourceRole {
    pub fn label(self) -> u8 {
        match self {
            SourceRole::ExternalNegative => 0,
            SourceRole::ExternalPositive => 1,
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            SourceRole::ExternalNegative => Domain::GeneralNegative,
            SourceRole::ExternalPositive => Domain::FishPositive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSource {
    pub name: String,
    pub role: SourceRole,
    pub pool: Vec<PathBuf>,
    /// Images drawn into training every epoch.
    pub draw_count: usize,
}

impl DomainSource {
    fn sample(&self, path: PathBuf, split: SampleSplit) -> FrameSample {
        FrameSample::new(path, self.role.label(), self.role.domain(), split)
            .expect("role fixes a consistent label")
    }
}

/// What went into one epoch's training list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochComposition {
    pub n_project: usize,
    pub draws: BTreeMap<String, usize>,
    pub epoch_index: usize,
    pub rng_seed: u64,
}

impl EpochComposition {
    pub fn total(&self) -> usize {
        self.n_project + self.draws.values().sum::<usize>()
    }
}

/// SplitMix64 finalizer over the mixed inputs; used for every derived seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SALT_SPLIT: u64 = 1;
const SALT_EPOCH: u64 = 2;
const SALT_FROZEN: u64 = 3;

fn round_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Per-class training quotas: the overall count is `round(fraction * total)`,
/// handed out by largest remainder so every class stays within one sample of
/// `fraction * class size`.
fn apportion(classes: &[(u8, Vec<usize>)], fraction: f64) -> Vec<(u8, usize)> {
    let total: usize = classes.iter().map(|(_, m)| m.len()).sum();
    let target = round_count(fraction, total);
    let mut quotas: Vec<(u8, usize, f64)> = classes
        .iter()
        .map(|(l, m)| {
            let exact = fraction * m.len() as f64;
            (*l, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(target.saturating_sub(assigned)) {
        quotas[k].1 += 1;
    }
    quotas.into_iter().map(|(l, q, _)| (l, q)).collect()
}

/// Label-stratified split into training and validation. Classes with fewer
/// than two samples go entirely to training. Output order follows the input
/// order.
pub fn stratified_split(
    samples: &[FrameSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<FrameSample>, Vec<FrameSample>)> {
    if samples.is_empty() {
        return Err(Error::arg("cannot split an empty sample list"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut to_train = vec![false; samples.len()];
    let mut classes: Vec<(u8, Vec<usize>)> = Vec::new();
    for label in [0u8, 1] {
        let members: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label() == label)
            .collect();
        match members.len() {
            0 => {}
            1 => {
                log::warn!("class {label} has 1 sample; placing it entirely in training");
                to_train[members[0]] = true;
            }
            _ => classes.push((label, members)),
        }
    }
    for (label, quota) in apportion(&classes, train_fraction) {
        let (_, members) = classes.iter_mut().find(|(l, _)| *l == label).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_SPLIT, label as u64));
        members.shuffle(&mut rng);
        members[..quota].iter().for_each(|&i| to_train[i] = true);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, t) in samples.iter().zip(to_train) {
        if t {
            train.push(s.clone().with_split(SampleSplit::Train));
        } else {
            val.push(s.clone().with_split(SampleSplit::Validation));
        }
    }
    Ok((train, val))
}

fn check_pools(sources: &[DomainSource], reserved: &[usize]) -> Result<()> {
    let mut errs = Vec::new();
    let mut names = HashSet::new();
    for (s, &r) in sources.iter().zip(reserved) {
        if !names.insert(s.name.as_str()) {
            errs.push(format!("sources.{}: duplicate source name", s.name));
        }
        if s.pool.len() < s.draw_count + r {
            errs.push(format!(
                "sources.{}: pool of {} images cannot supply {} per epoch plus {} frozen for validation",
                s.name,
                s.pool.len(),
                s.draw_count,
                r
            ));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

/// One epoch of training samples: all project training samples plus
/// `draw_count` images per source, drawn without replacement.
pub fn draw_epoch(
    sources: &[DomainSource],
    project_train: &[FrameSample],
    epoch_index: usize,
    base_seed: u64,
) -> Result<Vec<FrameSample>> {
    check_pools(sources, &vec![0; sources.len()])?;
    Ok(compose(sources, project_train, epoch_index, base_seed).0)
}

fn compose(
    sources: &[DomainSource],
    project_train: &[FrameSample],
    epoch_index: usize,
    base_seed: u64,
) -> (Vec<FrameSample>, EpochComposition) {
    let rng_seed = derive_seed(base_seed, SALT_EPOCH, epoch_index as u64);
    let mut out: Vec<FrameSample> = project_train.to_vec();
    let mut draws = BTreeMap::new();
    for (k, src) in sources.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, k as u64, 0));
        let picked = index::sample(&mut rng, src.pool.len(), src.draw_count);
        out.extend(
            picked
                .iter()
                .map(|i| src.sample(src.pool[i].clone(), SampleSplit::Train)),
        );
        *draws.entry(src.name.clone()).or_insert(0) += src.draw_count;
    }
    let comp = EpochComposition {
        n_project: project_train.len(),
        draws,
        epoch_index,
        rng_seed,
    };
    (out, comp)
}

/// Training/validation data for a multi-domain run.
#[derive(Debug, Clone)]
pub struct MultiDomainSet {
    project_train: Vec<FrameSample>,
    validation: Vec<FrameSample>,
    /// Sources with their frozen validation images removed from the pool.
    train_sources: Vec<DomainSource>,
    base_seed: u64,
}

impl MultiDomainSet {
    /// Split the project samples, freeze `round((1 - train_fraction) *
    /// draw_count)` validation images per source (when `external_validation`),
    /// and check every pool is large enough.
    pub fn new(
        project: &[FrameSample],
        sources: Vec<DomainSource>,
        train_fraction: f64,
        external_validation: bool,
        seed: u64,
    ) -> Result<Self> {
        let (project_train, mut validation) = stratified_split(project, train_fraction, seed)?;
        let reserved: Vec<usize> = sources
            .iter()
            .map(|s| {
                if external_validation {
                    round_count(1.0 - train_fraction, s.draw_count)
                } else {
                    0
                }
            })
            .collect();
        check_pools(&sources, &reserved)?;
        let mut train_sources = Vec::with_capacity(sources.len());
        for (k, (src, &n_val)) in sources.into_iter().zip(&reserved).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_FROZEN, k as u64));
            let frozen: HashSet<usize> = index::sample(&mut rng, src.pool.len(), n_val)
                .into_iter()
                .collect();
            let mut sorted: Vec<usize> = frozen.iter().copied().collect();
            sorted.sort_unstable();
            validation.extend(
                sorted
                    .iter()
                    .map(|&i| src.sample(src.pool[i].clone(), SampleSplit::Validation)),
            );
            let pool = src
                .pool
                .iter()
                .enumerate()
                .filter(|(i, _)| !frozen.contains(i))
                .map(|(_, p)| p.clone())
                .collect();
            train_sources.push(DomainSource { pool, ..src });
        }
        Ok(MultiDomainSet {
            project_train,
            validation,
            train_sources,
            base_seed: seed,
        })
    }

    pub fn project_train(&self) -> &[FrameSample] {
        &self.project_train
    }

    pub fn validation(&self) -> &[FrameSample] {
        &self.validation
    }

    pub fn sources(&self) -> &[DomainSource] {
        &self.train_sources
    }

    pub fn draw_epoch(&self, epoch_index: usize) -> (Vec<FrameSample>, EpochComposition) {
        compose(
            &self.train_sources,
            &self.project_train,
            epoch_index,
            self.base_seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(pos: usize, neg: usize) -> Vec<FrameSample> {
        (0..pos + neg)
            .map(|i| {
                FrameSample::new(
                    format!("p/{i}.png"),
                    (i < pos) as u8,
                    Domain::Project,
                    SampleSplit::Train,
                )
                .unwrap()
            })
            .collect()
    }

    fn source(name: &str, role: SourceRole, pool: usize, draw: usize) -> DomainSource {
        DomainSource {
            name: name.into(),
            role,
            pool: (0..pool).map(|i| PathBuf::from(format!("{name}/{i}.png"))).collect(),
            draw_count: draw,
        }
    }

    fn count(v: &[FrameSample], label: u8) -> usize {
        v.iter().filter(|s| s.label() == label).count()
    }

    #[test]
    fn split_exact_and_rounded() {
        let (t, v) = stratified_split(&project(100, 100), 0.8, 1).unwrap();
        assert_eq!((count(&t, 1), count(&t, 0), count(&v, 1), count(&v, 0)), (80, 80, 20, 20));
        let (t, v) = stratified_split(&project(5, 5), 0.8, 1).unwrap();
        assert_eq!((count(&t, 1), count(&t, 0), count(&v, 1), count(&v, 0)), (4, 4, 1, 1));
        assert!(t.iter().all(|s| s.split() == SampleSplit::Train));
        assert!(v.iter().all(|s| s.split() == SampleSplit::Validation));
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let p = project(37, 51);
        let a = stratified_split(&p, 0.8, 42).unwrap();
        assert_eq!(a, stratified_split(&p, 0.8, 42).unwrap());
        assert_ne!(a, stratified_split(&p, 0.8, 43).unwrap());
        let mut all: Vec<_> = a.0.iter().chain(&a.1).map(|s| s.path().to_owned()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 88);
    }

    #[test]
    fn singleton_class_goes_to_training() {
        let (t, v) = stratified_split(&project(1, 10), 0.8, 0).unwrap();
        assert_eq!(count(&t, 1), 1);
        assert_eq!(count(&v, 1), 0);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(stratified_split(&project(3, 3), 1.0, 0).is_err());
        assert!(stratified_split(&[], 0.8, 0).is_err());
    }

    #[test]
    fn full_scale_epoch_composition() {
        let set = MultiDomainSet::new(
            &project(1764, 2253),
            vec![
                source("voc", SourceRole::ExternalNegative, 17_000, 2000),
                source("lcf", SourceRole::ExternalPositive, 22_400, 1000),
                source("qut", SourceRole::ExternalPositive, 4_400, 1000),
            ],
            0.8,
            true,
            7,
        )
        .unwrap();
        assert_eq!(set.project_train().len(), 3214);
        let (epoch, comp) = set.draw_epoch(0);
        assert_eq!(epoch.len(), 7214);
        assert_eq!(comp.total(), 7214);
        // 4017 project + 4000 external before the split.
        assert_eq!(4017 + comp.draws.values().sum::<usize>(), 8017);
        assert_eq!(set.validation().len(), 4017 - 3214 + 800);
    }

    #[test]
    fn zero_draws_equal_project_training_set() {
        let p = project(10, 10);
        let out = draw_epoch(&[source("x", SourceRole::ExternalPositive, 5, 0)], &p, 3, 1).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn consecutive_epochs_differ() {
        let src = [source("voc", SourceRole::ExternalNegative, 17_000, 2000)];
        let epochs: Vec<_> = (0..5).map(|e| draw_epoch(&src, &[], e, 9).unwrap()).collect();
        for w in epochs.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        assert_eq!(epochs[2], draw_epoch(&src, &[], 2, 9).unwrap());
    }

    #[test]
    fn pool_too_small_is_a_config_error() {
        let err = MultiDomainSet::new(
            &project(5, 5),
            vec![source("tiny", SourceRole::ExternalNegative, 10, 10)],
            0.8,
            true,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(draw_epoch(&[source("t", SourceRole::ExternalNegative, 3, 4)], &[], 0, 0).is_err());
    }

    #[test]
    fn frozen_validation_never_drawn_for_training() {
        let set = MultiDomainSet::new(
            &project(20, 20),
            vec![source("neg", SourceRole::ExternalNegative, 60, 40)],
            0.8,
            true,
            3,
        )
        .unwrap();
        let val: HashSet<_> = set.validation().iter().map(|s| s.path().to_owned()).collect();
        for e in 0..20 {
            let (train, _) = set.draw_epoch(e);
            assert!(train.iter().all(|s| !val.contains(s.path())));
            assert_eq!(train.iter().filter(|s| s.domain() == Domain::GeneralNegative).count(), 40);
        }
    }
}
