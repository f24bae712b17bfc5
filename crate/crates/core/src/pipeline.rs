//! The end-to-end semantic communication model and its interactive
//! round-based training.
//!
//! One model is three dense networks around an AWGN channel:
//!
//! ```text
//! x (784) -> encoder -> z (n_c) -> power norm -> + noise -> decoder
//!         -> x_hat (784) -> classifier -> class probabilities (10)
//! ```
//!
//! Training alternates per round: the autoencoder phase updates encoder
//! and decoder against `R + w * max(S - tau, 0)`, where `R` is the
//! reconstruction MSE and `S` is the cross-entropy of the previous
//! round's classifier on the reconstructions (the classifier is frozen
//! but gradients flow through it); the classifier phase then retrains the
//! classifier on freshly reconstructed samples with the autoencoder
//! frozen. `tau` is the classifier's loss on the raw inputs, recomputed
//! at the end of each round.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    apply_awgn, normalize_power, normalize_power_backward, ChannelConfig, NoiseSource,
};
use crate::data::{Dataset, FEATURE_DIM, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{
    cce_grad, cce_loss, mse_grad, mse_loss, Activation, AdamParams, DenseLayer, GradCheckTarget,
    GradientSet, Network, OptimizerState,
};
use crate::seed::derive_seed;

pub const ENCODER_HIDDEN: usize = 196;
pub const DECODER_HIDDEN: usize = 196;
pub const CLASSIFIER_HIDDEN: [usize; 2] = [64, 32];

/// Encoder, decoder and semantic task classifier around one channel.
#[derive(Debug, Clone)]
pub struct SemComModel {
    pub encoder: Network,
    pub decoder: Network,
    pub classifier: Network,
    pub channel: ChannelConfig,
}

impl SemComModel {
    pub fn n_c(&self) -> usize {
        self.channel.n_c
    }
}

/// Builds the three networks at their fixed architecture for the given
/// number of channel uses, Glorot-initialized from `seed` (one derived
/// substream per network).
pub fn build_model(channel: ChannelConfig, seed: u64) -> Result<SemComModel> {
    let n_c = channel.n_c;
    let mut enc_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-encoder", 0));
    let mut dec_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-decoder", 0));
    let mut clf_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-classifier", 0));

    let encoder = Network::new(
        FEATURE_DIM,
        vec![
            DenseLayer::glorot(FEATURE_DIM, ENCODER_HIDDEN, Activation::Relu, &mut enc_rng),
            DenseLayer::glorot(ENCODER_HIDDEN, n_c, Activation::Linear, &mut enc_rng),
        ],
    )?;
    let decoder = Network::new(
        n_c,
        vec![
            DenseLayer::glorot(n_c, n_c, Activation::Relu, &mut dec_rng),
            DenseLayer::glorot(n_c, DECODER_HIDDEN, Activation::Relu, &mut dec_rng),
            DenseLayer::glorot(DECODER_HIDDEN, FEATURE_DIM, Activation::Linear, &mut dec_rng),
        ],
    )?;
    let classifier = Network::new(
        FEATURE_DIM,
        vec![
            DenseLayer::glorot(FEATURE_DIM, CLASSIFIER_HIDDEN[0], Activation::Relu, &mut clf_rng),
            DenseLayer::glorot(
                CLASSIFIER_HIDDEN[0],
                CLASSIFIER_HIDDEN[1],
                Activation::Relu,
                &mut clf_rng,
            ),
            DenseLayer::glorot(CLASSIFIER_HIDDEN[1], NUM_CLASSES, Activation::Softmax, &mut clf_rng),
        ],
    )?;
    Ok(SemComModel {
        encoder,
        decoder,
        classifier,
        channel,
    })
}

/// Runs a batch through encoder, power normalization, AWGN, decoder and
/// classifier. Reconstructions are fed to the classifier unclipped.
pub fn end_to_end_forward(
    model: &SemComModel,
    batch: &Array2<f64>,
    noise: &mut NoiseSource,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if batch.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Numeric(
            "end-to-end input features must lie in [0, 1]".into(),
        ));
    }
    let (z, _) = model.encoder.forward(batch)?;
    let (zn, _) = normalize_power(&z)?;
    let zr = apply_awgn(&zn, &model.channel, noise);
    let (x_hat, _) = model.decoder.forward(&zr)?;
    let (probs, _) = model.classifier.forward(&x_hat)?;
    Ok((x_hat, probs))
}

/// Combined autoencoder loss: `R + w * max(S - tau, 0)`. The hinge keeps
/// the semantic term inactive while the classifier does no worse on
/// reconstructions than on the raw inputs.
pub fn combined_loss(recon: f64, semantic: f64, tau: f64, w: f64) -> f64 {
    recon + w * (semantic - tau).max(0.0)
}

/// The semantic-loss threshold: the classifier's cross-entropy on the raw
/// inputs themselves.
pub fn compute_tau(classifier: &Network, inputs: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    let (probs, _) = classifier.forward(inputs)?;
    cce_loss(&probs, labels)
}

/// Interactive-training parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub rounds: usize,
    pub epochs_ae_per_round: usize,
    pub epochs_clf_per_round: usize,
    pub batch_size: usize,
    /// Semantic-loss weight in the combined loss.
    pub w: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 5,
            epochs_ae_per_round: 10,
            epochs_clf_per_round: 5,
            batch_size: 64,
            w: 0.2,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::Config(format!(
                "batch size {} invalid for {dataset_len} samples",
                self.batch_size
            )));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config(format!("semantic weight w {} invalid", self.w)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Autoencoder,
    Classifier,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Autoencoder => "autoencoder",
            Phase::Classifier => "classifier",
        }
    }
}

/// Per-epoch loss record. Fields a phase does not produce stay `None`
/// (round 0 has no autoencoder yet; the classifier phase computes no
/// frozen-classifier semantic loss).
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub round: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub recon_loss: Option<f64>,
    pub semantic_loss: Option<f64>,
    pub combined_loss: Option<f64>,
    pub classifier_cce: Option<f64>,
    pub tau: f64,
}

/// End-of-round summary used for round-over-round comparisons.
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord {
    pub round: usize,
    pub recon_loss: Option<f64>,
    pub semantic_loss: Option<f64>,
    pub combined_loss: Option<f64>,
    pub classifier_cce: Option<f64>,
    pub tau: f64,
}

/// Training state across rounds: the model, the current threshold, the
/// optimizer moments, and the loss history.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub round: usize,
    pub model: SemComModel,
    pub tau: f64,
    pub history: Vec<RoundRecord>,
    pub epoch_log: Vec<EpochRecord>,
    encoder_opt: OptimizerState,
    decoder_opt: OptimizerState,
    classifier_opt: OptimizerState,
}

impl TrainingState {
    pub fn new(model: SemComModel) -> Self {
        let encoder_opt = OptimizerState::new(&model.encoder, AdamParams::default());
        let decoder_opt = OptimizerState::new(&model.decoder, AdamParams::default());
        let classifier_opt = OptimizerState::new(&model.classifier, AdamParams::default());
        TrainingState {
            round: 0,
            model,
            tau: 0.0,
            history: Vec::new(),
            epoch_log: Vec::new(),
            encoder_opt,
            decoder_opt,
            classifier_opt,
        }
    }
}

/// The per-purpose random streams of one training run, derived from the
/// training seed. Each run owns its streams; nothing is shared across
/// parallel runs.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub noise: NoiseSource,
    shuffle: ChaCha8Rng,
}

impl TrainStreams {
    pub fn from_seed(seed: u64) -> Self {
        TrainStreams {
            noise: NoiseSource::derived(seed, "train-noise", 0),
            shuffle: ChaCha8Rng::seed_from_u64(derive_seed(seed, "train-shuffle", 0)),
        }
    }
}

fn gather_batch(data: &Dataset, indices: &[usize]) -> (Array2<f64>, Vec<u8>) {
    let mut batch = Array2::zeros((indices.len(), FEATURE_DIM));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &idx) in indices.iter().enumerate() {
        batch.row_mut(row).assign(&data.features().row(idx));
        labels.push(data.labels()[idx]);
    }
    (batch, labels)
}

struct PhaseTotals {
    samples: f64,
    recon: f64,
    semantic: f64,
    combined: f64,
}

impl PhaseTotals {
    fn new() -> Self {
        PhaseTotals {
            samples: 0.0,
            recon: 0.0,
            semantic: 0.0,
            combined: 0.0,
        }
    }

    fn add(&mut self, n: usize, recon: f64, semantic: f64, combined: f64) {
        let n = n as f64;
        self.samples += n;
        self.recon += recon * n;
        self.semantic += semantic * n;
        self.combined += combined * n;
    }

    fn means(&self) -> (f64, f64, f64) {
        (
            self.recon / self.samples,
            self.semantic / self.samples,
            self.combined / self.samples,
        )
    }
}

fn divergence_check(
    values: &[f64],
    round: usize,
    phase: Phase,
    epoch: usize,
) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged {
            round,
            phase: phase.name(),
            epoch,
            detail: format!("non-finite loss values {values:?}"),
        });
    }
    Ok(())
}

/// One epoch of classifier training on the given input/label pairs.
/// Returns the sample-weighted mean cross-entropy.
fn classifier_epoch_on(
    classifier: &mut Network,
    opt: &mut OptimizerState,
    mut inputs_of: impl FnMut(&Array2<f64>) -> Result<Array2<f64>>,
    data: &Dataset,
    batch_size: usize,
    shuffle: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(shuffle);
    let mut cce_total = 0.0;
    let mut recon_total = 0.0;
    let mut samples = 0.0;
    for chunk in order.chunks(batch_size) {
        let (xb, yb) = gather_batch(data, chunk);
        let inputs = inputs_of(&xb)?;
        let (probs, cache) = classifier.forward(&inputs)?;
        let cce = cce_loss(&probs, &yb)?;
        let recon = mse_loss(&inputs, &xb)?;
        let upstream = cce_grad(&probs, &yb)?;
        let (grads, _) = classifier.backward(&cache, &upstream)?;
        opt.step(classifier, &grads)?;
        let n = chunk.len() as f64;
        cce_total += cce * n;
        recon_total += recon * n;
        samples += n;
    }
    Ok((cce_total / samples, recon_total / samples))
}

/// One interactive round: autoencoder phase against the combined loss with
/// the classifier frozen (round `t` uses the classifier from round `t-1`),
/// then classifier retraining on fresh reconstructions with the
/// autoencoder frozen, then the threshold update.
pub fn train_round(
    state: &mut TrainingState,
    data: &Dataset,
    cfg: &TrainConfig,
    streams: &mut TrainStreams,
) -> Result<()> {
    cfg.validate(data.len())?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let round = state.round + 1;
    let tau = state.tau;

    // Phase A: encoder/decoder updates; classifier parameters untouched,
    // gradients flow through it into the decoder when the hinge is active.
    let mut last_ae: Option<(f64, f64, f64)> = None;
    for epoch in 0..cfg.epochs_ae_per_round {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut streams.shuffle);
        let mut totals = PhaseTotals::new();
        for chunk in order.chunks(cfg.batch_size) {
            let (xb, yb) = gather_batch(data, chunk);
            let (z, enc_cache) = state.model.encoder.forward(&xb)?;
            let (zn, norm_cache) = normalize_power(&z)?;
            let zr = apply_awgn(&zn, &state.model.channel, &mut streams.noise);
            let (x_hat, dec_cache) = state.model.decoder.forward(&zr)?;
            let recon = mse_loss(&x_hat, &xb)?;
            let (probs, clf_cache) = state.model.classifier.forward(&x_hat)?;
            let semantic = cce_loss(&probs, &yb)?;
            let combined = combined_loss(recon, semantic, tau, cfg.w);
            divergence_check(&[recon, semantic, combined], round, Phase::Autoencoder, epoch)?;

            let mut upstream = mse_grad(&x_hat, &xb)?;
            if cfg.w > 0.0 && semantic > tau {
                let sem_upstream = cce_grad(&probs, &yb)?;
                let sem_input_grad = state
                    .model
                    .classifier
                    .backprop_to_input(&clf_cache, &sem_upstream)?;
                upstream.scaled_add(cfg.w, &sem_input_grad);
            }
            let (dec_grads, d_zr) = state.model.decoder.backward(&dec_cache, &upstream)?;
            // Noise is additive: gradient w.r.t. the normalized signal is d_zr.
            let d_z = normalize_power_backward(&norm_cache, &d_zr);
            let (enc_grads, _) = state.model.encoder.backward(&enc_cache, &d_z)?;
            state.decoder_opt.step(&mut state.model.decoder, &dec_grads)?;
            state.encoder_opt.step(&mut state.model.encoder, &enc_grads)?;
            totals.add(chunk.len(), recon, semantic, combined);
        }
        let (recon, semantic, combined) = totals.means();
        divergence_check(&[recon, semantic, combined], round, Phase::Autoencoder, epoch)?;
        state.epoch_log.push(EpochRecord {
            round,
            phase: Phase::Autoencoder,
            epoch,
            recon_loss: Some(recon),
            semantic_loss: Some(semantic),
            combined_loss: Some(combined),
            classifier_cce: Some(semantic),
            tau,
        });
        last_ae = Some((recon, semantic, combined));
    }

    // Phase B: classifier retraining on reconstructions of the (frozen)
    // autoencoder, fresh channel noise per batch.
    let mut last_clf: Option<(f64, f64)> = None;
    for epoch in 0..cfg.epochs_clf_per_round {
        let encoder = state.model.encoder.clone();
        let decoder = state.model.decoder.clone();
        let channel = state.model.channel;
        let noise = &mut streams.noise;
        let (cce, recon) = classifier_epoch_on(
            &mut state.model.classifier,
            &mut state.classifier_opt,
            |xb| {
                let (z, _) = encoder.forward(xb)?;
                let (zn, _) = normalize_power(&z)?;
                let zr = apply_awgn(&zn, &channel, noise);
                Ok(decoder.forward(&zr)?.0)
            },
            data,
            cfg.batch_size,
            &mut streams.shuffle,
        )?;
        divergence_check(&[cce, recon], round, Phase::Classifier, epoch)?;
        state.epoch_log.push(EpochRecord {
            round,
            phase: Phase::Classifier,
            epoch,
            recon_loss: Some(recon),
            semantic_loss: None,
            combined_loss: None,
            classifier_cce: Some(cce),
            tau,
        });
        last_clf = Some((cce, recon));
    }

    if cfg.epochs_clf_per_round > 0 {
        state.tau = compute_tau(&state.model.classifier, data.features(), data.labels())?;
    }
    state.round = round;

    if last_ae.is_some() || last_clf.is_some() {
        state.history.push(RoundRecord {
            round,
            recon_loss: last_ae.map(|(r, _, _)| r).or(last_clf.map(|(_, r)| r)),
            semantic_loss: last_ae.map(|(_, s, _)| s),
            combined_loss: last_ae.map(|(_, _, l)| l),
            classifier_cce: last_clf.map(|(c, _)| c),
            tau: state.tau,
        });
    }
    Ok(())
}

/// Full training: model init, a round-0 classifier bootstrap on the raw
/// inputs (the first interactive round needs a previous-round classifier
/// and an initial threshold), then `cfg.rounds` interactive rounds.
pub fn train_pipeline(
    data: &Dataset,
    cfg: &TrainConfig,
    channel: ChannelConfig,
) -> Result<TrainingState> {
    cfg.validate(data.len())?;
    let model = build_model(channel, derive_seed(cfg.seed, "init", 0))?;
    let mut state = TrainingState::new(model);
    let mut streams = TrainStreams::from_seed(cfg.seed);

    for epoch in 0..cfg.epochs_clf_per_round {
        let (cce, _) = classifier_epoch_on(
            &mut state.model.classifier,
            &mut state.classifier_opt,
            |xb| Ok(xb.clone()),
            data,
            cfg.batch_size,
            &mut streams.shuffle,
        )?;
        divergence_check(&[cce], 0, Phase::Classifier, epoch)?;
        state.epoch_log.push(EpochRecord {
            round: 0,
            phase: Phase::Classifier,
            epoch,
            recon_loss: None,
            semantic_loss: None,
            combined_loss: None,
            classifier_cce: Some(cce),
            tau: state.tau,
        });
    }
    if cfg.epochs_clf_per_round > 0 {
        state.tau = compute_tau(&state.model.classifier, data.features(), data.labels())?;
    }

    for _ in 0..cfg.rounds {
        train_round(&mut state, data, cfg, &mut streams)?;
    }
    Ok(state)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-epoch loss log as CSV with the fixed header
/// `round,phase,epoch,R,S,L,clf_cce,tau`.
pub fn write_training_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    use std::io::Write;
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut out = |line: String| {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(&display, e))
    };
    out("round,phase,epoch,R,S,L,clf_cce,tau".into())?;
    for rec in log {
        out(format!(
            "{},{},{},{},{},{},{},{}",
            rec.round,
            rec.phase.name(),
            rec.epoch,
            fmt_opt(rec.recon_loss),
            fmt_opt(rec.semantic_loss),
            fmt_opt(rec.combined_loss),
            fmt_opt(rec.classifier_cce),
            rec.tau
        ))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

/// Gradient-check target for the noiseless end-to-end chain: the combined
/// loss differentiated through classifier, decoder, channel scaling and
/// encoder. Checked tensors are the encoder's followed by the decoder's;
/// the classifier stays frozen exactly as in the autoencoder phase.
pub struct ChainGradCheckTarget {
    model: SemComModel,
    batch: Array2<f64>,
    labels: Vec<u8>,
    tau: f64,
    w: f64,
    enc_grads: GradientSet,
    dec_grads: GradientSet,
}

impl ChainGradCheckTarget {
    pub fn new(
        model: SemComModel,
        batch: Array2<f64>,
        labels: Vec<u8>,
        tau: f64,
        w: f64,
    ) -> Result<Self> {
        if !model.channel.is_noiseless() {
            return Err(Error::Config(
                "chain gradient check requires the noiseless channel".into(),
            ));
        }
        let mut target = ChainGradCheckTarget {
            enc_grads: GradientSet::zeros_like(&model.encoder),
            dec_grads: GradientSet::zeros_like(&model.decoder),
            model,
            batch,
            labels,
            tau,
            w,
        };
        let (enc_grads, dec_grads) = target.analytic()?;
        target.enc_grads = enc_grads;
        target.dec_grads = dec_grads;
        Ok(target)
    }

    fn chain_loss(&self) -> Result<f64> {
        let (z, _) = self.model.encoder.forward(&self.batch)?;
        let (zn, _) = normalize_power(&z)?;
        let (x_hat, _) = self.model.decoder.forward(&zn)?;
        let recon = mse_loss(&x_hat, &self.batch)?;
        let (probs, _) = self.model.classifier.forward(&x_hat)?;
        let semantic = cce_loss(&probs, &self.labels)?;
        Ok(combined_loss(recon, semantic, self.tau, self.w))
    }

    fn analytic(&self) -> Result<(GradientSet, GradientSet)> {
        let (z, enc_cache) = self.model.encoder.forward(&self.batch)?;
        let (zn, norm_cache) = normalize_power(&z)?;
        let (x_hat, dec_cache) = self.model.decoder.forward(&zn)?;
        let (probs, clf_cache) = self.model.classifier.forward(&x_hat)?;
        let semantic = cce_loss(&probs, &self.labels)?;
        let mut upstream = mse_grad(&x_hat, &self.batch)?;
        if self.w > 0.0 && semantic > self.tau {
            let sem_upstream = cce_grad(&probs, &self.labels)?;
            let sem_input_grad = self
                .model
                .classifier
                .backprop_to_input(&clf_cache, &sem_upstream)?;
            upstream.scaled_add(self.w, &sem_input_grad);
        }
        let (dec_grads, d_zn) = self.model.decoder.backward(&dec_cache, &upstream)?;
        let d_z = normalize_power_backward(&norm_cache, &d_zn);
        let (enc_grads, _) = self.model.encoder.backward(&enc_cache, &d_z)?;
        Ok((enc_grads, dec_grads))
    }

    fn locate(&self, tensor: usize) -> (&Network, &GradientSet, usize) {
        let enc_tensors = self.model.encoder.layers().len() * 2;
        if tensor < enc_tensors {
            (&self.model.encoder, &self.enc_grads, tensor)
        } else {
            (&self.model.decoder, &self.dec_grads, tensor - enc_tensors)
        }
    }
}

impl GradCheckTarget for ChainGradCheckTarget {
    fn num_tensors(&self) -> usize {
        (self.model.encoder.layers().len() + self.model.decoder.layers().len()) * 2
    }

    fn tensor_len(&self, tensor: usize) -> usize {
        let (net, _, local) = self.locate(tensor);
        let layer = &net.layers()[local / 2];
        if local % 2 == 0 {
            layer.in_dim() * layer.out_dim()
        } else {
            layer.out_dim()
        }
    }

    fn get_param(&self, tensor: usize, idx: usize) -> f64 {
        let (net, _, local) = self.locate(tensor);
        let layer = &net.layers()[local / 2];
        if local % 2 == 0 {
            layer.weights().as_slice().expect("contiguous")[idx]
        } else {
            layer.biases()[idx]
        }
    }

    fn set_param(&mut self, tensor: usize, idx: usize, value: f64) {
        let enc_tensors = self.model.encoder.layers().len() * 2;
        let (net, local) = if tensor < enc_tensors {
            (&mut self.model.encoder, tensor)
        } else {
            (&mut self.model.decoder, tensor - enc_tensors)
        };
        let layer = &mut net.layers_mut()[local / 2];
        if local % 2 == 0 {
            layer.weights_mut().as_slice_mut().expect("contiguous")[idx] = value;
        } else {
            layer.biases_mut()[idx] = value;
        }
    }

    fn analytic_grad(&self, tensor: usize, idx: usize) -> f64 {
        let (_, grads, local) = self.locate(tensor);
        let grad = &grads.layers()[local / 2];
        if local % 2 == 0 {
            grad.d_weights.as_slice().expect("contiguous")[idx]
        } else {
            grad.d_biases[idx]
        }
    }

    fn loss(&mut self) -> Result<f64> {
        self.chain_loss()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_fixture;
    use crate::nn::max_relative_error;

    fn tiny_channel(snr_db: f64) -> ChannelConfig {
        ChannelConfig::new(snr_db, 12).unwrap()
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            rounds: 2,
            epochs_ae_per_round: 2,
            epochs_clf_per_round: 2,
            batch_size: 16,
            w: 0.2,
            seed,
        }
    }

    #[test]
    fn build_model_matches_the_architecture_table() {
        let model = build_model(ChannelConfig::new(5.0, 75).unwrap(), 1).unwrap();
        let enc_dims: Vec<(usize, usize)> = model
            .encoder
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(enc_dims, vec![(784, 196), (196, 75)]);
        let dec_dims: Vec<(usize, usize)> = model
            .decoder
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(dec_dims, vec![(75, 75), (75, 196), (196, 784)]);
        let clf_dims: Vec<(usize, usize)> = model
            .classifier
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(clf_dims, vec![(784, 64), (64, 32), (32, 10)]);
        assert_eq!(
            model.classifier.layers().last().unwrap().activation(),
            Activation::Softmax
        );
    }

    #[test]
    fn architecture_holds_for_all_swept_channel_uses() {
        for n_c in [25usize, 50, 75, 100] {
            let model = build_model(ChannelConfig::new(5.0, n_c).unwrap(), 3).unwrap();
            assert_eq!(model.encoder.output_dim(), n_c);
            assert_eq!(model.decoder.input_dim(), n_c);
            assert_eq!(model.decoder.output_dim(), 784);
            assert_eq!(model.classifier.output_dim(), 10);
        }
    }

    #[test]
    fn encoder_parameter_count_at_25_channel_uses() {
        // 784*196 + 196 + 196*25 + 25, counted programmatically.
        let model = build_model(ChannelConfig::new(5.0, 25).unwrap(), 1).unwrap();
        assert_eq!(model.encoder.num_params(), 158_785);
        assert_eq!(
            model.encoder.num_params(),
            784 * 196 + 196 + 196 * 25 + 25
        );
    }

    #[test]
    fn same_seed_builds_bitwise_identical_models() {
        let a = build_model(tiny_channel(5.0), 9).unwrap();
        let b = build_model(tiny_channel(5.0), 9).unwrap();
        for (la, lb) in a.encoder.layers().iter().zip(b.encoder.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
        for (la, lb) in a.classifier.layers().iter().zip(b.classifier.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
    }

    #[test]
    fn end_to_end_forward_is_finite_and_normalized_untrained() {
        let model = build_model(tiny_channel(f64::INFINITY), 2).unwrap();
        let data = synthetic_fixture(2, 5);
        let mut noise = NoiseSource::from_seed(1);
        let (x_hat, probs) = end_to_end_forward(&model, data.features(), &mut noise).unwrap();
        assert!(x_hat.iter().all(|v| v.is_finite()));
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn end_to_end_forward_is_deterministic_per_seed() {
        let model = build_model(tiny_channel(5.0), 2).unwrap();
        let data = synthetic_fixture(2, 5);
        let a = end_to_end_forward(&model, data.features(), &mut NoiseSource::from_seed(4)).unwrap();
        let b = end_to_end_forward(&model, data.features(), &mut NoiseSource::from_seed(4)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn combined_loss_hinge() {
        // Inactive hinge returns the reconstruction term alone.
        assert_eq!(combined_loss(0.42, 0.3, 0.5, 0.2), 0.42);
        // Active hinge adds w * (S - tau).
        assert!((combined_loss(0.1, 1.5, 0.5, 0.2) - 0.3).abs() < 1e-15);
        // Zero weight reduces to pure reconstruction for any semantic loss.
        assert_eq!(combined_loss(0.7, 99.0, 0.0, 0.0), 0.7);
    }

    #[test]
    fn combined_loss_is_monotone_in_both_terms() {
        let base = combined_loss(0.5, 1.0, 0.2, 0.2);
        assert!(combined_loss(0.6, 1.0, 0.2, 0.2) > base);
        assert!(combined_loss(0.5, 1.2, 0.2, 0.2) >= base);
        assert!(combined_loss(0.5, 0.1, 0.2, 0.2) <= base);
    }

    #[test]
    fn tau_is_ln10_for_an_untrained_classifier_and_zero_for_a_perfect_one() {
        let model = build_model(tiny_channel(5.0), 7).unwrap();
        let data = synthetic_fixture(4, 3);
        let tau = compute_tau(&model.classifier, data.features(), data.labels()).unwrap();
        // Glorot-initialized softmax outputs are near-uniform.
        assert!((tau - 10f64.ln()).abs() < 0.3, "tau {tau}");
    }

    #[test]
    fn training_reduces_reconstruction_loss_from_round_one() {
        let data = synthetic_fixture(8, 11);
        let cfg = TrainConfig {
            w: 0.0,
            ..tiny_config(3)
        };
        let state = train_pipeline(&data, &cfg, tiny_channel(10.0)).unwrap();
        let first_ae: Vec<&EpochRecord> = state
            .epoch_log
            .iter()
            .filter(|r| r.round == 1 && r.phase == Phase::Autoencoder)
            .collect();
        let first = first_ae.first().unwrap().recon_loss.unwrap();
        let last = first_ae.last().unwrap().recon_loss.unwrap();
        assert!(
            last < first,
            "reconstruction loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn two_rounds_improve_over_one() {
        let data = synthetic_fixture(8, 11);
        let cfg = TrainConfig {
            epochs_ae_per_round: 3,
            ..tiny_config(5)
        };
        let state = train_pipeline(&data, &cfg, tiny_channel(10.0)).unwrap();
        assert_eq!(state.history.len(), 2);
        let r1 = &state.history[0];
        let r2 = &state.history[1];
        assert!(r2.recon_loss.unwrap() < r1.recon_loss.unwrap());
        assert!(r2.classifier_cce.unwrap() < r1.classifier_cce.unwrap());
    }

    #[test]
    fn zero_epoch_round_only_advances_the_counter() {
        let data = synthetic_fixture(4, 11);
        let cfg = TrainConfig {
            rounds: 1,
            epochs_ae_per_round: 0,
            epochs_clf_per_round: 0,
            ..tiny_config(3)
        };
        let model = build_model(tiny_channel(5.0), 1).unwrap();
        let before = model.clone();
        let mut state = TrainingState::new(model);
        state.tau = 0.37;
        let mut streams = TrainStreams::from_seed(3);
        train_round(&mut state, &data, &cfg, &mut streams).unwrap();
        assert_eq!(state.round, 1);
        assert_eq!(state.tau, 0.37);
        assert!(state.history.is_empty());
        assert!(state.epoch_log.is_empty());
        for (la, lb) in before.encoder.layers().iter().zip(state.model.encoder.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
    }

    #[test]
    fn classifier_is_frozen_in_phase_a_and_autoencoder_in_phase_b() {
        let data = synthetic_fixture(6, 11);
        let cfg = TrainConfig {
            rounds: 1,
            epochs_ae_per_round: 1,
            epochs_clf_per_round: 0,
            ..tiny_config(3)
        };
        let mut state = TrainingState::new(build_model(tiny_channel(5.0), 1).unwrap());
        state.tau = 0.0;
        let clf_before = state.model.classifier.clone();
        let mut streams = TrainStreams::from_seed(3);
        train_round(&mut state, &data, &cfg, &mut streams).unwrap();
        for (la, lb) in clf_before.layers().iter().zip(state.model.classifier.layers()) {
            assert_eq!(la.weights(), lb.weights());
            assert_eq!(la.biases(), lb.biases());
        }

        let cfg_b = TrainConfig {
            rounds: 1,
            epochs_ae_per_round: 0,
            epochs_clf_per_round: 1,
            ..tiny_config(3)
        };
        let enc_before = state.model.encoder.clone();
        let dec_before = state.model.decoder.clone();
        train_round(&mut state, &data, &cfg_b, &mut streams).unwrap();
        for (la, lb) in enc_before.layers().iter().zip(state.model.encoder.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
        for (la, lb) in dec_before.layers().iter().zip(state.model.decoder.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
    }

    #[test]
    fn training_is_deterministic_from_the_seed() {
        let data = synthetic_fixture(6, 11);
        let cfg = tiny_config(21);
        let a = train_pipeline(&data, &cfg, tiny_channel(5.0)).unwrap();
        let b = train_pipeline(&data, &cfg, tiny_channel(5.0)).unwrap();
        for (la, lb) in a.model.encoder.layers().iter().zip(b.model.encoder.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
        assert_eq!(a.tau, b.tau);
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.recon_loss, rb.recon_loss);
            assert_eq!(ra.classifier_cce, rb.classifier_cce);
        }
    }

    #[test]
    fn end_to_end_chain_gradient_passes_the_oracle() {
        let model = build_model(ChannelConfig::new(f64::INFINITY, 12).unwrap(), 13).unwrap();
        let data = synthetic_fixture(1, 17);
        let batch = data.features().select(ndarray::Axis(0), &[0, 1]).to_owned();
        let labels = vec![data.labels()[0], data.labels()[1]];
        let mut target = ChainGradCheckTarget::new(model, batch, labels, 0.0, 0.2).unwrap();
        let err = max_relative_error(&mut target, 1e-5, Some(60)).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn training_log_round_trips_through_csv() {
        let data = synthetic_fixture(4, 11);
        let cfg = TrainConfig {
            rounds: 1,
            epochs_ae_per_round: 1,
            epochs_clf_per_round: 1,
            ..tiny_config(3)
        };
        let state = train_pipeline(&data, &cfg, tiny_channel(5.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_training_log(&path, &state.epoch_log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "round,phase,epoch,R,S,L,clf_cce,tau");
        assert_eq!(text.lines().count(), 1 + state.epoch_log.len());
        assert!(text.contains("autoencoder"));
        assert!(text.contains("classifier"));
    }
}
