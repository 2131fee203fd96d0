//! Elastic federated training of per-UE adversarial autoencoders.
//!
//! Each SBS runs its own federation over the UEs it serves. A round:
//! every UE downloads the global model, blends it into its previous local
//! model with a distance-derived coefficient, trains locally and uploads the
//! resulting parameter blob; the SBS then aggregates the uploads.
//!
//! Raw rating data lives inside [`UeClient`] and is never exposed; the only
//! payload a client hands out is a [`ModelUpload`].

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aae::{local_train, AaeModel, LayerGroup, LocalTrainConfig};
use crate::dataset::{build_rating_matrix, ContentCatalog, RatingMatrix, Split, UeDataset};
use crate::error::{Error, Result};
use crate::nn::{blend_into, Dense};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// `w <- sum_i (d_i / d) w_i`
    #[default]
    WeightedAverage,
    /// `w <- w - eta * sum_i (d_i / d) w_i`
    LiteralEquation,
}

/// How each UE's local model is initialized before the first round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalInit {
    /// A copy of the initial global model.
    Global,
    /// An independently seeded model of the same architecture.
    #[default]
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub rounds: usize,
    pub local: LocalTrainConfig,
    pub aggregation: AggregationMode,
    /// `eta` of the literal aggregation rule.
    pub aggregation_lr: f64,
    /// Divide the mean layer distance by the number of UEs.
    pub normalize_by_ue_count: bool,
    /// Skip the elastic blend and start every local update from the global
    /// model (plain federated averaging).
    pub full_download: bool,
    pub local_init: LocalInit,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            rounds: 1000,
            local: LocalTrainConfig::default(),
            aggregation: AggregationMode::WeightedAverage,
            aggregation_lr: 0.01,
            normalize_by_ue_count: true,
            full_download: false,
            local_init: LocalInit::Independent,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        self.local.validate()?;
        if !(self.aggregation_lr > 0.0 && self.aggregation_lr <= 1.0) {
            return Err(Error::Config("aggregation_lr must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Elastic blending weight, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ElasticCoefficient(f64);

impl ElasticCoefficient {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Numeric(format!("elastic coefficient {value} outside [0, 1]")));
        }
        Ok(ElasticCoefficient(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `||local - global|| / ||global||` over one layer's weights and bias.
///
/// A zero-norm global layer is reported as `DegenerateLayer(0)`; model-level
/// callers substitute the layer's flat index.
pub fn weight_distance(local: &Dense, global: &Dense) -> Result<f64> {
    if local.weights().dim() != global.weights().dim() || local.bias().len() != global.bias().len() {
        return Err(Error::Shape("layers differ in shape".into()));
    }
    let denom = global
        .weights()
        .iter()
        .chain(global.bias().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateLayer(0));
    }
    let diff: f64 = local
        .weights()
        .iter()
        .zip(global.weights().iter())
        .chain(local.bias().iter().zip(global.bias().iter()))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / denom)
}

/// Distance per layer, in [`AaeModel::layers`] order.
pub fn layer_distances(local: &AaeModel, global: &AaeModel) -> Result<Vec<f64>> {
    if !local.same_architecture(global) {
        return Err(Error::Shape("local and global AAE architectures differ".into()));
    }
    local
        .layers()
        .zip(global.layers())
        .enumerate()
        .map(|(i, ((_, l), (_, g)))| {
            weight_distance(l, g).map_err(|e| match e {
                Error::DegenerateLayer(_) => Error::DegenerateLayer(i),
                other => other,
            })
        })
        .collect()
}

/// Mean layer distance, divided by `n_b` when `normalize_by_ue_count`, clamped to `[0, 1]`.
pub fn coefficient_from_distances(
    distances: &[f64],
    n_b: usize,
    normalize_by_ue_count: bool,
) -> Result<ElasticCoefficient> {
    if n_b == 0 {
        return Err(Error::Config("an SBS needs at least one UE".into()));
    }
    if distances.is_empty() {
        return Err(Error::Shape("model has no layers".into()));
    }
    let mut alpha = distances.iter().sum::<f64>() / distances.len() as f64;
    if normalize_by_ue_count {
        alpha /= n_b as f64;
    }
    if !alpha.is_finite() {
        return Err(Error::Numeric(format!("elastic coefficient is {alpha}")));
    }
    ElasticCoefficient::new(alpha.clamp(0.0, 1.0))
}

pub fn elastic_coefficient(
    local: &AaeModel,
    global: &AaeModel,
    n_b: usize,
    normalize_by_ue_count: bool,
) -> Result<ElasticCoefficient> {
    coefficient_from_distances(&layer_distances(local, global)?, n_b, normalize_by_ue_count)
}

/// `alpha * global + (1 - alpha) * local`, element-wise over all three sub-networks.
pub fn elastic_blend(local: &AaeModel, global: &AaeModel, alpha: ElasticCoefficient) -> Result<AaeModel> {
    if !local.same_architecture(global) {
        return Err(Error::Shape("local and global AAE architectures differ".into()));
    }
    let mut out = local.clone();
    for group in LayerGroup::ALL {
        let src = global.network(group);
        for (t, s) in out.network_mut(group).layers_mut().iter_mut().zip(src.layers()) {
            blend_into(&mut t.weights, &s.weights, alpha.value());
            blend_into(&mut t.bias, &s.bias, alpha.value());
        }
    }
    Ok(out)
}

/// Combines uploaded local models, each weighted by its data size.
pub fn aggregate(
    global: &AaeModel,
    locals: &[(AaeModel, usize)],
    mode: AggregationMode,
    eta: f64,
) -> Result<AaeModel> {
    if locals.is_empty() {
        return Err(Error::Contract("aggregation needs at least one upload".into()));
    }
    let total: usize = locals.iter().map(|(_, d)| d).sum();
    if total == 0 {
        return Err(Error::Contract("total data size must be positive".into()));
    }
    if locals.iter().any(|(m, _)| !m.same_architecture(global)) {
        return Err(Error::Shape("uploaded model architecture differs from the global model".into()));
    }
    let mut out = global.clone();
    for group in LayerGroup::ALL {
        let layers = out.network_mut(group).layers_mut();
        for (li, layer) in layers.iter_mut().enumerate() {
            let mut w = Array2::<f64>::zeros(layer.weights.raw_dim());
            let mut b = Array1::<f64>::zeros(layer.bias.raw_dim());
            for (m, d) in locals {
                let share = *d as f64 / total as f64;
                let src = &m.network(group).layers()[li];
                w.scaled_add(share, &src.weights);
                b.scaled_add(share, &src.bias);
            }
            match mode {
                AggregationMode::WeightedAverage => {
                    layer.weights = w;
                    layer.bias = b;
                }
                AggregationMode::LiteralEquation => {
                    layer.weights.scaled_add(-eta, &w);
                    layer.bias.scaled_add(-eta, &b);
                }
            }
        }
    }
    Ok(out)
}

/// The model UE `ue_id` holds before round 1.
pub fn initial_local_model(global: &AaeModel, ue_id: usize, init: LocalInit, seed: u64) -> Result<AaeModel> {
    match init {
        LocalInit::Global => Ok(global.clone()),
        LocalInit::Independent => AaeModel::new(
            &global.architecture(),
            seed::derive(seed, &[seed::tag::FL, ue_id as u64, u64::MAX]),
        ),
    }
}

/// What a UE sends to its SBS after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpload {
    pub ue_id: usize,
    pub data_size: usize,
    pub blob: Vec<u8>,
}

/// One UE: its private rating data plus its personalized local model.
#[derive(Debug, Clone)]
pub struct UeClient {
    ue_id: usize,
    sbs_id: usize,
    train: RatingMatrix,
    pub(crate) test: RatingMatrix,
    pub(crate) demographics: Array2<f64>,
    local: AaeModel,
}

impl UeClient {
    pub fn from_dataset(ue: &UeDataset, catalog: &ContentCatalog, initial: &AaeModel) -> Result<Self> {
        if initial.catalog_size() != catalog.len() {
            return Err(Error::Shape(format!(
                "model expects {} contents, catalog has {}",
                initial.catalog_size(),
                catalog.len()
            )));
        }
        let train = build_rating_matrix(ue, Split::Train, catalog)?;
        let test = build_rating_matrix(ue, Split::Test, catalog)?;
        let mut demographics = Array2::zeros((ue.user_ids.len(), crate::dataset::Demographics::WIDTH));
        for (row, uid) in ue.user_ids.iter().enumerate() {
            let d = ue.demographics.get(uid).copied().unwrap_or_default();
            demographics.row_mut(row).assign(&ndarray::arr1(&d.to_array()));
        }
        Ok(UeClient {
            ue_id: ue.ue_id,
            sbs_id: ue.sbs_id,
            train,
            test,
            demographics,
            local: initial.clone(),
        })
    }

    /// Replaces the local model, e.g. with [`initial_local_model`].
    pub fn with_local_model(mut self, model: AaeModel) -> Result<Self> {
        if !model.same_architecture(&self.local) {
            return Err(Error::Shape("replacement local model has a different architecture".into()));
        }
        self.local = model;
        Ok(self)
    }

    pub fn ue_id(&self) -> usize {
        self.ue_id
    }

    pub fn sbs_id(&self) -> usize {
        self.sbs_id
    }

    /// Number of training rows, `d_i`.
    pub fn data_size(&self) -> usize {
        self.train.rows()
    }

    pub fn local_model(&self) -> &AaeModel {
        &self.local
    }

    pub fn train_mse(&self, model: &AaeModel) -> Result<f64> {
        crate::aae::reconstruction_mse(model, self.train.values.view())
    }

    /// Blends the downloaded global model into the local one, trains, and
    /// returns the upload together with this UE's round log.
    pub fn local_update(
        &mut self,
        global_blob: &[u8],
        n_b: usize,
        round: usize,
        cfg: &FlConfig,
        seed: u64,
    ) -> Result<(ModelUpload, UeRoundLog)> {
        let global = AaeModel::from_blob(global_blob)?;
        let distances = layer_distances(&self.local, &global)?;
        let alpha = if cfg.full_download {
            ElasticCoefficient(1.0)
        } else {
            coefficient_from_distances(&distances, n_b, cfg.normalize_by_ue_count)?
        };
        let start = elastic_blend(&self.local, &global, alpha)?;
        let local_seed = seed::derive(seed, &[seed::tag::FL, self.ue_id as u64, round as u64]);
        let (trained, report) = local_train(&start, self.train.values.view(), &cfg.local, local_seed)?;
        self.local = trained;
        let (reconstruction, discriminator, generator) = report.mean_losses();
        let log = UeRoundLog {
            round,
            ue_id: self.ue_id,
            alpha: alpha.value(),
            layers: self
                .local
                .layers()
                .map(|(g, _)| g)
                .zip(distances)
                .scan(LayerCursor::default(), |cur, (g, d)| Some((g, cur.next(g), d)))
                .collect(),
            reconstruction_loss: reconstruction,
            discriminator_loss: discriminator,
            generator_loss: generator,
        };
        let upload = ModelUpload {
            ue_id: self.ue_id,
            data_size: self.data_size(),
            blob: self.local.to_blob(),
        };
        Ok((upload, log))
    }
}

#[derive(Default)]
struct LayerCursor {
    group: Option<LayerGroup>,
    index: usize,
}

impl LayerCursor {
    fn next(&mut self, g: LayerGroup) -> usize {
        if self.group == Some(g) {
            self.index += 1;
        } else {
            self.group = Some(g);
            self.index = 0;
        }
        self.index
    }
}

/// Distance of one UE's previous local model to the downloaded global model,
/// per layer, plus the resulting coefficient and mean local losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRoundLog {
    pub round: usize,
    pub ue_id: usize,
    pub alpha: f64,
    /// `(group, index within group, distance)`
    pub layers: Vec<(LayerGroup, usize, f64)>,
    pub reconstruction_loss: f64,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
}

impl UeRoundLog {
    pub fn mean_distance(&self) -> f64 {
        mean(self.layers.iter().map(|l| l.2))
    }

    pub fn group_distance(&self, group: LayerGroup) -> f64 {
        mean(self.layers.iter().filter(|l| l.0 == group).map(|l| l.2))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One SBS federation: the global model, its clients and the round counter.
#[derive(Debug, Clone)]
pub struct FlRoundState {
    pub sbs_id: usize,
    pub round: usize,
    pub global: AaeModel,
    clients: Vec<UeClient>,
    pub history: Vec<Vec<UeRoundLog>>,
}

impl FlRoundState {
    /// Clients keep whatever local model they carry; when all of them equal
    /// `global`, round 1 distances are zero.
    pub fn new(sbs_id: usize, global: AaeModel, clients: Vec<UeClient>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Config(format!("SBS {sbs_id} has no UEs")));
        }
        if clients.iter().any(|c| !c.local.same_architecture(&global)) {
            return Err(Error::Shape("client models differ from the global architecture".into()));
        }
        Ok(FlRoundState {
            sbs_id,
            round: 0,
            global,
            clients,
            history: Vec::new(),
        })
    }

    pub fn clients(&self) -> &[UeClient] {
        &self.clients
    }

    pub fn ue_count(&self) -> usize {
        self.clients.len()
    }

    /// Total data size `d`.
    pub fn total_data(&self) -> usize {
        self.clients.iter().map(UeClient::data_size).sum()
    }

    /// Runs one round; the new global model and the logs are stored in `self`.
    pub fn run_round(&mut self, cfg: &FlConfig, seed: u64) -> Result<()> {
        let blob = self.global.to_blob();
        let n_b = self.clients.len();
        let round = self.round + 1;
        let results: Vec<Result<(ModelUpload, UeRoundLog)>> = self
            .clients
            .par_iter_mut()
            .map(|c| c.local_update(&blob, n_b, round, cfg, seed))
            .collect();
        let mut uploads = Vec::with_capacity(n_b);
        let mut logs = Vec::with_capacity(n_b);
        for r in results {
            let (u, l) = r?;
            uploads.push((AaeModel::from_blob(&u.blob)?, u.data_size));
            logs.push(l);
        }
        self.global = aggregate(&self.global, &uploads, cfg.aggregation, cfg.aggregation_lr)?;
        self.round = round;
        self.history.push(logs);
        Ok(())
    }

    pub fn run(&mut self, cfg: &FlConfig, seed: u64) -> Result<()> {
        cfg.validate()?;
        for _ in 0..cfg.rounds {
            self.run_round(cfg, seed)?;
        }
        Ok(())
    }

    /// Mean layer distance over all UEs for each completed round.
    pub fn mean_distance_by_round(&self) -> Vec<f64> {
        self.history
            .iter()
            .map(|logs| mean(logs.iter().map(UeRoundLog::mean_distance)))
            .collect()
    }

    pub fn into_parts(self) -> (AaeModel, Vec<UeClient>, Vec<Vec<UeRoundLog>>) {
        (self.global, self.clients, self.history)
    }
}

/// Writes `round,sbs,ue,layer,distance,alpha,reconstruction_loss,discriminator_loss,generator_loss`.
pub fn write_round_log_csv(path: &Path, sbs_id: usize, history: &[Vec<UeRoundLog>]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "round,sbs,ue,layer,distance,alpha,reconstruction_loss,discriminator_loss,generator_loss"
    )
    .expect("write to memory");
    for log in history.iter().flatten() {
        for (g, i, d) in &log.layers {
            writeln!(
                out,
                "{},{},{},{}.{},{},{},{},{},{}",
                log.round,
                sbs_id,
                log.ue_id,
                g.name(),
                i,
                d,
                log.alpha,
                log.reconstruction_loss,
                log.discriminator_loss,
                log.generator_loss
            )
            .expect("write to memory");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
