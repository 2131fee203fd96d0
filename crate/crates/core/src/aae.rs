//! Adversarial autoencoder trained on rows of a UE's rating matrix.
//!
//! Each training iteration runs three stages on one minibatch, in order:
//! reconstruction (encoder + decoder), discriminator, then generator (the
//! encoder again, trained to fool the discriminator). The discriminator sees
//! latent codes: encoder outputs `z'(x)` against prior draws `z~`.

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, Activation, Dense, MlpNetwork, OptimizerConfig, ParamBlob};
use crate::seed::{self, Rng};

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AaeArchitecture {
    pub catalog_size: usize,
    pub hidden: usize,
    pub latent: usize,
    pub discriminator_hidden: usize,
}

impl Default for AaeArchitecture {
    fn default() -> Self {
        AaeArchitecture {
            catalog_size: 0,
            hidden: 128,
            latent: 32,
            discriminator_hidden: 64,
        }
    }
}

/// Which sub-network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerGroup {
    Encoder,
    Decoder,
    Discriminator,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 3] = [LayerGroup::Encoder, LayerGroup::Decoder, LayerGroup::Discriminator];

    pub fn name(self) -> &'static str {
        match self {
            LayerGroup::Encoder => "encoder",
            LayerGroup::Decoder => "decoder",
            LayerGroup::Discriminator => "discriminator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AaeModel {
    pub encoder: MlpNetwork,
    pub decoder: MlpNetwork,
    pub discriminator: MlpNetwork,
    latent_dim: usize,
}

impl AaeModel {
    /// Encoder `catalog -> hidden (sigmoid) -> latent (identity)`, decoder
    /// `latent -> hidden (sigmoid) -> catalog (sigmoid)`, discriminator
    /// `latent -> disc_hidden (tanh) -> 1 (sigmoid)`.
    pub fn new(arch: &AaeArchitecture, seed: u64) -> Result<Self> {
        if arch.catalog_size == 0 || arch.hidden == 0 || arch.latent == 0 || arch.discriminator_hidden == 0 {
            return Err(Error::Config("AAE dimensions must all be positive".into()));
        }
        let encoder = MlpNetwork::new(
            &[arch.catalog_size, arch.hidden, arch.latent],
            &[Activation::Sigmoid, Activation::Identity],
            seed::derive(seed, &[seed::tag::AAE_INIT, 0]),
        )?;
        let decoder = MlpNetwork::new(
            &[arch.latent, arch.hidden, arch.catalog_size],
            &[Activation::Sigmoid, Activation::Sigmoid],
            seed::derive(seed, &[seed::tag::AAE_INIT, 1]),
        )?;
        let discriminator = MlpNetwork::new(
            &[arch.latent, arch.discriminator_hidden, 1],
            &[Activation::Tanh, Activation::Sigmoid],
            seed::derive(seed, &[seed::tag::AAE_INIT, 2]),
        )?;
        Self::from_parts(encoder, decoder, discriminator)
    }

    pub fn from_parts(encoder: MlpNetwork, decoder: MlpNetwork, discriminator: MlpNetwork) -> Result<Self> {
        let latent_dim = encoder.output_dim();
        if decoder.input_dim() != latent_dim || discriminator.input_dim() != latent_dim {
            return Err(Error::Shape(format!(
                "latent width {latent_dim} must feed both the decoder ({}) and the discriminator ({})",
                decoder.input_dim(),
                discriminator.input_dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::Shape("decoder output must match the encoder input".into()));
        }
        if discriminator.output_dim() != 1 {
            return Err(Error::Shape("discriminator must output a single confidence".into()));
        }
        Ok(AaeModel {
            encoder,
            decoder,
            discriminator,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Layer widths, as passed to [`AaeModel::new`].
    pub fn architecture(&self) -> AaeArchitecture {
        AaeArchitecture {
            catalog_size: self.catalog_size(),
            hidden: self.encoder.layers()[0].output_dim(),
            latent: self.latent_dim,
            discriminator_hidden: self.discriminator.layers()[0].output_dim(),
        }
    }

    pub fn catalog_size(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn network(&self, group: LayerGroup) -> &MlpNetwork {
        match group {
            LayerGroup::Encoder => &self.encoder,
            LayerGroup::Decoder => &self.decoder,
            LayerGroup::Discriminator => &self.discriminator,
        }
    }

    pub fn network_mut(&mut self, group: LayerGroup) -> &mut MlpNetwork {
        match group {
            LayerGroup::Encoder => &mut self.encoder,
            LayerGroup::Decoder => &mut self.decoder,
            LayerGroup::Discriminator => &mut self.discriminator,
        }
    }

    /// All layers in encoder, decoder, discriminator order.
    pub fn layers(&self) -> impl Iterator<Item = (LayerGroup, &Dense)> {
        LayerGroup::ALL
            .into_iter()
            .flat_map(move |g| self.network(g).layers().iter().map(move |l| (g, l)))
    }

    pub fn layer_count(&self) -> usize {
        self.encoder.layer_count() + self.decoder.layer_count() + self.discriminator.layer_count()
    }

    pub fn same_architecture(&self, other: &AaeModel) -> bool {
        LayerGroup::ALL
            .iter()
            .all(|&g| self.network(g).same_architecture(other.network(g)))
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut blob = ParamBlob::new();
        blob.meta.insert("kind".into(), "aae".into());
        for g in LayerGroup::ALL {
            self.network(g).write_to_blob(&mut blob, &format!("{}.", g.name()));
        }
        blob.to_bytes()
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let blob = ParamBlob::from_bytes(bytes)?;
        if blob.meta.get("kind").map(String::as_str) != Some("aae") {
            return Err(Error::Schema("blob does not hold an AAE model".into()));
        }
        let read = |g: LayerGroup| MlpNetwork::read_from_blob(&blob, &format!("{}.", g.name()));
        Self::from_parts(
            read(LayerGroup::Encoder)?,
            read(LayerGroup::Decoder)?,
            read(LayerGroup::Discriminator)?,
        )
        .map_err(|e| Error::Schema(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    StandardNormal,
}

/// The latent prior the encoder is regularized toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub dim: usize,
}

impl PriorSpec {
    pub fn standard_normal(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("prior dimension must be positive".into()));
        }
        Ok(PriorSpec {
            kind: PriorKind::StandardNormal,
            dim,
        })
    }

    pub fn sample(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        match self.kind {
            PriorKind::StandardNormal => {
                Array2::from_shape_simple_fn((rows, self.dim), || StandardNormal.sample(&mut *rng))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalTrainConfig {
    /// Iterations per local update.
    pub iterations: usize,
    /// Rows drawn (without replacement) per iteration.
    pub minibatch_size: usize,
    pub learning_rate: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            iterations: 20,
            minibatch_size: 16,
            learning_rate: 0.01,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch_size must be positive".into()));
        }
        OptimizerConfig::new(self.learning_rate).map(|_| ())
    }
}

fn check_batch(model: &AaeModel, batch: ArrayView2<'_, f64>) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Contract("minibatch must be nonempty".into()));
    }
    if batch.ncols() != model.catalog_size() {
        return Err(Error::Shape(format!(
            "rating rows have {} entries, the model expects {}",
            batch.ncols(),
            model.catalog_size()
        )));
    }
    Ok(())
}

fn confidence(d: f64) -> Result<f64> {
    if !d.is_finite() {
        return Err(Error::Numeric(format!("discriminator produced {d}")));
    }
    Ok(d.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP))
}

/// `-ln(d)` and its derivative in `d`; zero derivative where the clamp binds.
fn neg_log(d: f64) -> Result<(f64, f64)> {
    let c = confidence(d)?;
    Ok((-c.ln(), if c == d { -1.0 / d } else { 0.0 }))
}

/// `-ln(1 - d)` and its derivative in `d`.
fn neg_log_complement(d: f64) -> Result<(f64, f64)> {
    let c = confidence(d)?;
    Ok((-(1.0 - c).ln(), if c == d { 1.0 / (1.0 - d) } else { 0.0 }))
}

pub fn reconstruct(model: &AaeModel, x: &[f64]) -> Result<Vec<f64>> {
    let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(reconstruct_batch(model, row)?.row(0).to_vec())
}

/// `decoder(encoder(x))` row by row.
pub fn reconstruct_batch(model: &AaeModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.catalog_size() {
        return Err(Error::Shape(format!(
            "rating rows have {} entries, the model expects {}",
            x.ncols(),
            model.catalog_size()
        )));
    }
    if x.nrows() == 0 {
        return Ok(Array2::zeros((0, model.catalog_size())));
    }
    let z = model.encoder.predict(x)?;
    model.decoder.predict(z.view())
}

/// `(1/d) * sum_x ||x - x~||^2` over the batch rows.
pub fn reconstruction_loss(model: &AaeModel, batch: ArrayView2<'_, f64>) -> Result<f64> {
    check_batch(model, batch)?;
    let out = reconstruct_batch(model, batch)?;
    Ok((&out - &batch).mapv(|v| v * v).sum() / batch.nrows() as f64)
}

/// Mean squared error per matrix entry.
pub fn reconstruction_mse(model: &AaeModel, matrix: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(reconstruction_loss(model, matrix)? / matrix.ncols() as f64)
}

/// One SGD step on encoder and decoder; returns the loss before the step.
pub fn reconstruction_step(model: &mut AaeModel, batch: ArrayView2<'_, f64>, lr: f64) -> Result<f64> {
    check_batch(model, batch)?;
    let opt = OptimizerConfig::new(lr)?;
    let n = batch.nrows() as f64;
    let enc = model.encoder.forward_batch(batch)?;
    let dec = model.decoder.forward_batch(enc.output())?;
    let diff = &dec.output() - &batch;
    let loss = diff.mapv(|v| v * v).sum() / n;
    let upstream = diff.mapv(|v| 2.0 * v / n);
    let (dec_grads, dz) = model.decoder.backward(&dec, upstream.view())?;
    let (enc_grads, _) = model.encoder.backward(&enc, dz.view())?;
    sgd_step(&mut model.encoder, &enc_grads, &opt)?;
    sgd_step(&mut model.decoder, &dec_grads, &opt)?;
    Ok(loss)
}

/// `mean_x [-ln D(z~) - ln(1 - D(z'(x)))]` for given prior draws (one per row).
pub fn discriminator_loss(
    model: &AaeModel,
    batch: ArrayView2<'_, f64>,
    prior_draws: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_batch(model, batch)?;
    let fake = model.discriminator.predict(model.encoder.predict(batch)?.view())?;
    let real = model.discriminator.predict(prior_draws)?;
    let mut total = 0.0;
    for (r, f) in real.iter().zip(fake.iter()) {
        total += neg_log(*r)?.0 + neg_log_complement(*f)?.0;
    }
    Ok(total / batch.nrows() as f64)
}

/// Draws one prior sample per row, then one SGD step on the discriminator only.
pub fn discriminator_step(
    model: &mut AaeModel,
    batch: ArrayView2<'_, f64>,
    prior: &PriorSpec,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    check_batch(model, batch)?;
    if prior.dim != model.latent_dim() {
        return Err(Error::Shape("prior dimension differs from the latent width".into()));
    }
    let draws = prior.sample(batch.nrows(), rng);
    discriminator_step_with(model, batch, draws.view(), lr)
}

/// Discriminator step with explicit prior draws.
pub fn discriminator_step_with(
    model: &mut AaeModel,
    batch: ArrayView2<'_, f64>,
    prior_draws: ArrayView2<'_, f64>,
    lr: f64,
) -> Result<f64> {
    check_batch(model, batch)?;
    if prior_draws.nrows() != batch.nrows() {
        return Err(Error::Shape("need exactly one prior draw per batch row".into()));
    }
    let opt = OptimizerConfig::new(lr)?;
    let n = batch.nrows();
    let codes = model.encoder.predict(batch)?;
    let mut inputs = Array2::zeros((2 * n, model.latent_dim()));
    inputs.slice_mut(ndarray::s![..n, ..]).assign(&prior_draws);
    inputs.slice_mut(ndarray::s![n.., ..]).assign(&codes);
    let pass = model.discriminator.forward_batch(inputs.view())?;
    let out = pass.output();
    let mut upstream = Array2::zeros((2 * n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let (l_real, g_real) = neg_log(out[[i, 0]])?;
        let (l_fake, g_fake) = neg_log_complement(out[[n + i, 0]])?;
        loss += l_real + l_fake;
        upstream[[i, 0]] = g_real / n as f64;
        upstream[[n + i, 0]] = g_fake / n as f64;
    }
    let (grads, _) = model.discriminator.backward(&pass, upstream.view())?;
    sgd_step(&mut model.discriminator, &grads, &opt)?;
    Ok(loss / n as f64)
}

/// `mean_x -ln D(z'(x))`.
pub fn generator_loss(model: &AaeModel, batch: ArrayView2<'_, f64>) -> Result<f64> {
    check_batch(model, batch)?;
    let d = model.discriminator.predict(model.encoder.predict(batch)?.view())?;
    let mut total = 0.0;
    for v in d.iter() {
        total += neg_log(*v)?.0;
    }
    Ok(total / batch.nrows() as f64)
}

/// Gradient flows through the discriminator into the encoder; only the encoder moves.
pub fn generator_step(model: &mut AaeModel, batch: ArrayView2<'_, f64>, lr: f64) -> Result<f64> {
    check_batch(model, batch)?;
    let opt = OptimizerConfig::new(lr)?;
    let n = batch.nrows() as f64;
    let enc = model.encoder.forward_batch(batch)?;
    let disc = model.discriminator.forward_batch(enc.output())?;
    let mut upstream = Array2::zeros(disc.output().raw_dim());
    let mut loss = 0.0;
    for (u, d) in upstream.iter_mut().zip(disc.output().iter()) {
        let (l, g) = neg_log(*d)?;
        loss += l;
        *u = g / n;
    }
    let dz = model.discriminator.input_gradient(&disc, upstream.view())?;
    let (enc_grads, _) = model.encoder.backward(&enc, dz.view())?;
    sgd_step(&mut model.encoder, &enc_grads, &opt)?;
    Ok(loss / n)
}

/// Per-iteration losses from [`local_train`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainReport {
    pub reconstruction: Vec<f64>,
    pub discriminator: Vec<f64>,
    pub generator: Vec<f64>,
}

impl LocalTrainReport {
    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_losses(&self) -> (f64, f64, f64) {
        (
            Self::mean(&self.reconstruction),
            Self::mean(&self.discriminator),
            Self::mean(&self.generator),
        )
    }
}

/// Runs `cfg.iterations` rounds of reconstruction, discriminator and
/// generator steps, each on a fresh minibatch of training rows.
pub fn local_train(
    model: &AaeModel,
    train: ArrayView2<'_, f64>,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<(AaeModel, LocalTrainReport)> {
    cfg.validate()?;
    if train.nrows() == 0 {
        return Err(Error::Contract("training matrix must be nonempty".into()));
    }
    check_batch(model, train)?;
    let mut model = model.clone();
    let mut report = LocalTrainReport::default();
    let prior = PriorSpec::standard_normal(model.latent_dim())?;
    let mut rng = seed::stream(seed, &[seed::tag::AAE_TRAIN]);
    let size = cfg.minibatch_size.min(train.nrows());
    for _ in 0..cfg.iterations {
        let rows = rand::seq::index::sample(&mut rng, train.nrows(), size).into_vec();
        let batch = train.select(Axis(0), &rows);
        let lr = cfg.learning_rate;
        report.reconstruction.push(reconstruction_step(&mut model, batch.view(), lr)?);
        report.discriminator.push(discriminator_step(&mut model, batch.view(), &prior, lr, &mut rng)?);
        report.generator.push(generator_step(&mut model, batch.view(), lr)?);
    }
    Ok((model, report))
}
