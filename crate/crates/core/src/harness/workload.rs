use serde::{Deserialize, Serialize};

use crate::dataset::ZipfSampler;
use crate::env::Workload;
use crate::error::{Error, Result};
use crate::seed;

/// Which request stream a workload draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Train => seed::tag::REQUESTS,
            Phase::Test => seed::tag::TEST_REQUESTS,
        }
    }
}

/// Independent Zipf requests per SBS. SBS `b` maps popularity rank `r` to
/// content `rankings[b][r]`. Each SBS draws from its own seeded stream, so
/// SBS 0 sees the same requests whatever the number of SBSs.
#[derive(Debug, Clone)]
pub struct ZipfWorkload {
    pub requests_per_sbs: usize,
    pub rankings: Vec<Vec<u32>>,
    pub phase: Phase,
    pub seed: u64,
    sampler: ZipfSampler,
}

impl ZipfWorkload {
    pub fn new(rankings: Vec<Vec<u32>>, exponent: f64, requests_per_sbs: usize, phase: Phase, seed: u64) -> Result<Self> {
        let n = rankings.first().map_or(0, Vec::len);
        if rankings.is_empty() || rankings.iter().any(|r| r.len() != n) {
            return Err(Error::Config("every SBS needs a ranking over the same catalog".into()));
        }
        Ok(ZipfWorkload {
            requests_per_sbs,
            phase,
            seed,
            sampler: ZipfSampler::new(n, exponent)?,
            rankings,
        })
    }

    /// Every SBS ranks content `i` at position `i`.
    pub fn shared(n_sbs: usize, catalog_size: usize, exponent: f64, requests_per_sbs: usize, phase: Phase, seed: u64) -> Result<Self> {
        let ranking: Vec<u32> = (0..catalog_size as u32).collect();
        Self::new(vec![ranking; n_sbs], exponent, requests_per_sbs, phase, seed)
    }

    pub fn n_sbs(&self) -> usize {
        self.rankings.len()
    }

    pub fn catalog_size(&self) -> usize {
        self.sampler.probabilities().len()
    }

    /// Request probability of every content at SBS `b`.
    pub fn content_probabilities(&self, b: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.catalog_size()];
        for (rank, &id) in self.rankings[b].iter().enumerate() {
            p[id as usize] = self.sampler.probabilities()[rank];
        }
        p
    }

    /// The `f_p` most popular contents of SBS `b`, most popular first.
    pub fn top(&self, b: usize, f_p: usize) -> Vec<u32> {
        self.rankings[b][..f_p.min(self.catalog_size())].to_vec()
    }
}

impl Workload for ZipfWorkload {
    fn requests(&self, episode: usize, slot: usize) -> Result<Vec<Vec<u32>>> {
        Ok(self
            .rankings
            .iter()
            .enumerate()
            .map(|(b, ranking)| {
                let mut rng = seed::stream(self.seed, &[self.phase.tag(), episode as u64, slot as u64, b as u64]);
                (0..self.requests_per_sbs)
                    .map(|_| ranking[self.sampler.sample(&mut rng)])
                    .collect()
            })
            .collect())
    }
}
