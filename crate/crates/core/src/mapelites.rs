//! MAP-Elites archive over the four normalized morphology metrics.
//!
//! The default placement rule only fills empty bins, so the archive is a
//! diversity sample rather than an elite set. A fitness-replacing variant
//! is available through [`Placement::ReplaceIfFitter`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{random_genome_with, Genome, DEFAULT_MUTATION_RATE};
use crate::morphometrics::{MorphoMetrics, SymmetryAxis};
use crate::seed::derive_seed;

/// Bin indices for (heterogeneity, connectivity, symmetry, dispersion).
pub type BinKey = [usize; 4];

/// `floor(v * bins)`, with `v = 1.0` in the last bin.
pub fn level_of(v: f64, bins: usize) -> usize {
    assert!(bins >= 1, "bins must be >= 1");
    let i = (v * bins as f64).floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(bins - 1)
    }
}

pub fn bin_of(m: &MorphoMetrics<f64>, bins_per_metric: usize) -> BinKey {
    m.normalized().map(|v| level_of(v, bins_per_metric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub bin: BinKey,
    pub genome: Genome,
    pub metrics: MorphoMetrics<f64>,
    /// 0 for the initial population, else the iteration that produced it.
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_bin: Option<BinKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
}

fn is_default_axis(a: &SymmetryAxis) -> bool {
    *a == SymmetryAxis::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub bins_per_metric: usize,
    #[serde(default, skip_serializing_if = "is_default_axis")]
    pub symmetry_axis: SymmetryAxis,
    #[serde(with = "entry_list")]
    entries: BTreeMap<BinKey, ArchiveEntry>,
}

/// Entries are stored as a list ordered by bin.
mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<BinKey, ArchiveEntry>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<BinKey, ArchiveEntry>, D::Error> {
        let list = Vec::<ArchiveEntry>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for e in list {
            if map.insert(e.bin, e).is_some() {
                return Err(serde::de::Error::custom("duplicate bin in archive"));
            }
        }
        Ok(map)
    }
}

impl Archive {
    pub fn new(bins_per_metric: usize, symmetry_axis: SymmetryAxis) -> Self {
        assert!(bins_per_metric >= 1, "bins_per_metric must be >= 1");
        Archive {
            bins_per_metric,
            symmetry_axis,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.bins_per_metric.pow(4)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bin: &BinKey) -> Option<&ArchiveEntry> {
        self.entries.get(bin)
    }

    /// Entries in bin order.
    pub fn entries(&self) -> impl Iterator<Item = &ArchiveEntry> + '_ {
        self.entries.values()
    }

    pub fn occupied(&self) -> impl Iterator<Item = &BinKey> + '_ {
        self.entries.keys()
    }

    pub fn metrics_of(&self, g: &Genome) -> MorphoMetrics<f64> {
        MorphoMetrics::compute_with_axis(g, self.symmetry_axis)
    }

    /// Places `genome` if its bin is empty. Returns the bin and whether it
    /// was placed.
    pub fn place_if_empty(&mut self, genome: Genome, iteration: usize, parent_bin: Option<BinKey>) -> (BinKey, bool) {
        let metrics = self.metrics_of(&genome);
        let bin = bin_of(&metrics, self.bins_per_metric);
        if self.entries.contains_key(&bin) {
            return (bin, false);
        }
        self.entries.insert(
            bin,
            ArchiveEntry {
                bin,
                genome,
                metrics,
                iteration,
                parent_bin,
                fitness: None,
            },
        );
        (bin, true)
    }

    /// Places `genome` if its bin is empty or holds a less fit genome.
    pub fn place_if_fitter(
        &mut self,
        genome: Genome,
        fitness: f64,
        iteration: usize,
        parent_bin: Option<BinKey>,
    ) -> (BinKey, bool) {
        let metrics = self.metrics_of(&genome);
        let bin = bin_of(&metrics, self.bins_per_metric);
        let better = match self.entries.get(&bin) {
            None => true,
            Some(e) => e.fitness.is_none_or(|f| fitness > f),
        };
        if better {
            self.entries.insert(
                bin,
                ArchiveEntry {
                    bin,
                    genome,
                    metrics,
                    iteration,
                    parent_bin,
                    fitness: Some(fitness),
                },
            );
        }
        (bin, better)
    }

    /// Every entry must hold a valid genome whose recomputed metrics match
    /// the stored ones and map to the stored bin.
    pub fn check_consistency(&self) -> Result<()> {
        if self.bins_per_metric == 0 {
            return Err(Error::Inconsistent("bins_per_metric must be >= 1".into()));
        }
        for (key, e) in &self.entries {
            if !e.genome.is_valid() {
                return Err(Error::Inconsistent(format!("archived genome in bin {key:?} is invalid")));
            }
            let m = self.metrics_of(&e.genome);
            let bin = bin_of(&m, self.bins_per_metric);
            if bin != *key || e.bin != *key {
                return Err(Error::Inconsistent(format!(
                    "entry stored under {key:?} belongs to bin {bin:?}"
                )));
            }
            let close = m
                .normalized()
                .iter()
                .zip(e.metrics.normalized())
                .all(|(a, b)| (a - b).abs() <= 1e-9);
            if !close {
                return Err(Error::Inconsistent(format!(
                    "stored metrics in bin {key:?} differ from recomputed ones"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Archive = serde_json::from_str(text)?;
        a.check_consistency()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElitesConfig {
    pub width: usize,
    pub height: usize,
    pub init_pop: usize,
    pub iterations: usize,
    pub bins_per_metric: usize,
    pub mutation_rate: f64,
    pub symmetry_axis: SymmetryAxis,
}

impl Default for MapElitesConfig {
    fn default() -> Self {
        MapElitesConfig {
            width: 5,
            height: 5,
            init_pop: 100,
            iterations: 1000,
            bins_per_metric: 3,
            mutation_rate: DEFAULT_MUTATION_RATE,
            symmetry_axis: SymmetryAxis::default(),
        }
    }
}

impl MapElitesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid dimensions must be >= 1".into()));
        }
        if self.init_pop == 0 {
            return Err(Error::Config("init_pop must be >= 1".into()));
        }
        if self.bins_per_metric == 0 {
            return Err(Error::Config("bins_per_metric must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config(format!(
                "mutation_rate must lie in [0, 1], got {}",
                self.mutation_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Placement {
    /// Fill empty bins only; occupants are never replaced.
    #[default]
    FirstCome,
    /// Replace an occupant when the offspring is fitter.
    ReplaceIfFitter,
}

/// One placement attempt, in run order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementEvent {
    pub iteration: usize,
    pub bin: BinKey,
    pub placed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillPoint {
    pub iteration: usize,
    pub occupied_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub archive: Archive,
    /// Occupancy after the initial population (iteration 0) and after each
    /// iteration.
    pub fill_curve: Vec<FillPoint>,
    /// Mutations whose repair budget ran out.
    pub skipped_mutations: usize,
    pub log: Vec<PlacementEvent>,
}

pub fn run(cfg: &MapElitesConfig, seed: u64) -> Result<RunOutcome> {
    run_inner(cfg, seed, Placement::FirstCome, &mut |_| 0.0)
}

/// Elitist variant: offspring replace occupants they beat on `fitness`.
pub fn run_with_fitness(cfg: &MapElitesConfig, seed: u64, fitness: &mut dyn FnMut(&Genome) -> f64) -> Result<RunOutcome> {
    run_inner(cfg, seed, Placement::ReplaceIfFitter, fitness)
}

fn run_inner(
    cfg: &MapElitesConfig,
    seed: u64,
    placement: Placement,
    fitness: &mut dyn FnMut(&Genome) -> f64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["mapelites"]));
    let mut archive = Archive::new(cfg.bins_per_metric, cfg.symmetry_axis);
    let mut log = Vec::with_capacity(cfg.init_pop + cfg.iterations);
    let mut place = |archive: &mut Archive, g: Genome, iteration: usize, parent: Option<BinKey>| {
        let (bin, placed) = match placement {
            Placement::FirstCome => archive.place_if_empty(g, iteration, parent),
            Placement::ReplaceIfFitter => {
                let f = fitness(&g);
                archive.place_if_fitter(g, f, iteration, parent)
            }
        };
        log.push(PlacementEvent { iteration, bin, placed });
    };

    for _ in 0..cfg.init_pop {
        let g = random_genome_with(&mut rng, cfg.width, cfg.height)?;
        place(&mut archive, g, 0, None);
    }
    let mut fill_curve = Vec::with_capacity(cfg.iterations + 1);
    fill_curve.push(FillPoint {
        iteration: 0,
        occupied_bins: archive.len(),
    });

    let mut skipped = 0;
    for iteration in 1..=cfg.iterations {
        let parent_bin = {
            let k = rng.random_range(0..archive.len());
            *archive.occupied().nth(k).expect("occupied bin")
        };
        let parent = &archive.get(&parent_bin).expect("occupied bin").genome;
        match parent.mutate_with(&mut rng, cfg.mutation_rate) {
            Ok(child) => place(&mut archive, child, iteration, Some(parent_bin)),
            Err(Error::RepairExhausted { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
        fill_curve.push(FillPoint {
            iteration,
            occupied_bins: archive.len(),
        });
    }
    Ok(RunOutcome {
        archive,
        fill_curve,
        skipped_mutations: skipped,
        log,
    })
}

/// Writes `iteration,occupied_bins` rows.
pub fn write_fill_curve_csv<W: std::io::Write>(curve: &[FillPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
