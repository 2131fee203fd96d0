use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ContentCatalog, UeDataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    /// Uniform draws from the UE's positively rated test contents.
    TestReplay,
    /// Catalog-wide Zipf: P(rank k) proportional to k^-s, rank 1 = catalog position 0.
    Zipf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRequests {
    pub ue_id: usize,
    pub sbs_id: usize,
    pub contents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestBatch {
    pub slot: u64,
    pub per_ue: Vec<UeRequests>,
}

impl RequestBatch {
    /// Requests grouped by SBS, UEs concatenated in ascending UE order.
    pub fn by_sbs(&self, n_sbs: usize) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); n_sbs];
        for ue in &self.per_ue {
            out[ue.sbs_id].extend_from_slice(&ue.contents);
        }
        out
    }
}

/// Precomputed Zipf distribution over catalog ranks.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    index: WeightedIndex<f64>,
    probabilities: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(size: usize, exponent: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("Zipf support must be nonempty".into()));
        }
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::Config(format!("Zipf exponent must be >= 0, got {exponent}")));
        }
        let weights: Vec<f64> = (1..=size).map(|k| (k as f64).powf(-exponent)).collect();
        let total: f64 = weights.iter().sum();
        let probabilities = weights.iter().map(|w| w / total).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(ZipfSampler {
            index,
            probabilities,
        })
    }

    /// Zero-based rank.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Draws one UE's requests for `slot`. Deterministic in `(ue, slot, seed)`.
pub fn sample_requests(
    ue: &UeDataset,
    slot: u64,
    n_requests: usize,
    mode: RequestMode,
    zipf_exponent: f64,
    catalog: &ContentCatalog,
    seed: u64,
) -> Result<RequestBatch> {
    let mut rng = seed::stream(seed, &[seed::tag::REQUESTS, ue.ue_id as u64, slot]);
    let contents = match mode {
        RequestMode::Zipf => {
            let zipf = ZipfSampler::new(catalog.len(), zipf_exponent)?;
            (0..n_requests)
                .map(|_| catalog.ids()[zipf.sample(&mut rng)])
                .collect()
        }
        RequestMode::TestReplay => {
            let mut pool: Vec<u32> = ue
                .test
                .iter()
                .filter(|i| i.rating > 0.0 && catalog.contains(i.content_id))
                .map(|i| i.content_id)
                .collect();
            pool.sort_unstable();
            pool.dedup();
            if pool.is_empty() && n_requests > 0 {
                return Err(Error::Data(format!(
                    "UE {} has no positively rated test contents to replay",
                    ue.ue_id
                )));
            }
            (0..n_requests)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect()
        }
    };
    Ok(RequestBatch {
        slot,
        per_ue: vec![UeRequests {
            ue_id: ue.ue_id,
            sbs_id: ue.sbs_id,
            contents,
        }],
    })
}
