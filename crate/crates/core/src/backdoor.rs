//! Trigger definition and application, dataset poisoning with label
//! flipping, and test-time poisoned-set construction.
//!
//! The image trigger is a plus sign: nine pixels in the top-left region
//! forced to full intensity. Its effect can equivalently be expressed in
//! signal space as the difference between the normalized encoder outputs
//! of a triggered and a clean sample; that per-sample difference vector
//! can be added to the transmitted or received signal instead.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::normalize_power;
use crate::data::{Dataset, FEATURE_DIM, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::seed::derive_seed;

/// Where a trigger is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDomain {
    /// Pixels of the encoder input image.
    ImageInput,
    /// Added to the power-normalized encoder output before the channel.
    TransmittedSignal,
    /// Added to the signal after the channel, before the decoder.
    ReceivedSignal,
}

/// A fixed pixel perturbation: the listed `(row, col)` coordinates are set
/// to `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pixels: Vec<(u8, u8)>,
    value: f64,
    domain: TriggerDomain,
}

impl TriggerSpec {
    pub fn new(mut pixels: Vec<(u8, u8)>, value: f64, domain: TriggerDomain) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::Config("trigger needs at least one pixel".into()));
        }
        for &(i, j) in &pixels {
            if usize::from(i) >= IMAGE_SIDE || usize::from(j) >= IMAGE_SIDE {
                return Err(Error::Config(format!(
                    "trigger pixel ({i}, {j}) outside the {IMAGE_SIDE}x{IMAGE_SIDE} grid"
                )));
            }
        }
        if domain == TriggerDomain::ImageInput && !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!(
                "image-domain trigger value {value} outside [0, 1]"
            )));
        }
        Ok(TriggerSpec {
            pixels,
            value,
            domain,
        })
    }

    pub fn pixels(&self) -> &[(u8, u8)] {
        &self.pixels
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn domain(&self) -> TriggerDomain {
        self.domain
    }

    /// Row-major flat indices (`28 * row + col`) of the trigger pixels.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.pixels
            .iter()
            .map(|&(i, j)| usize::from(i) * IMAGE_SIDE + usize::from(j))
            .collect()
    }
}

/// The plus-sign trigger: column 5 over rows 1..=5 and row 3 over columns
/// 3..=7, nine distinct pixels at full intensity.
pub fn default_trigger() -> TriggerSpec {
    let mut pixels = Vec::new();
    for i in 1..=5u8 {
        pixels.push((i, 5));
    }
    for j in 3..=7u8 {
        pixels.push((3, j));
    }
    TriggerSpec::new(pixels, 1.0, TriggerDomain::ImageInput).expect("default trigger is valid")
}

/// Returns `x` with the trigger pixels set to the trigger value.
/// Idempotent by construction.
pub fn apply_trigger(x: &ArrayView1<f64>, spec: &TriggerSpec) -> Result<Array1<f64>> {
    if spec.domain != TriggerDomain::ImageInput {
        return Err(Error::Config(
            "apply_trigger expects an image-domain trigger".into(),
        ));
    }
    if x.len() != FEATURE_DIM {
        return Err(Error::Shape {
            expected: format!("{FEATURE_DIM}-dim feature vector"),
            got: format!("{}", x.len()),
        });
    }
    let mut out = x.to_owned();
    for idx in spec.flat_indices() {
        out[idx] = spec.value;
    }
    Ok(out)
}

fn apply_trigger_in_place(features: &mut Array2<f64>, row: usize, spec: &TriggerSpec) {
    for idx in spec.flat_indices() {
        features[[row, idx]] = spec.value;
    }
}

/// Poisoning parameters: the trigger, the fraction of non-target-label
/// training samples to poison, the label pair, and the selection seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonConfig {
    pub trigger: TriggerSpec,
    pub trojan_ratio: f64,
    pub non_target_label: u8,
    pub target_label: u8,
    pub seed: u64,
}

impl PoisonConfig {
    pub fn new(
        trigger: TriggerSpec,
        trojan_ratio: f64,
        non_target_label: u8,
        target_label: u8,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&trojan_ratio) {
            return Err(Error::Config(format!(
                "trojan ratio {trojan_ratio} outside [0, 1]"
            )));
        }
        if non_target_label == target_label {
            return Err(Error::Config(format!(
                "non-target and target label are both {target_label}"
            )));
        }
        Ok(PoisonConfig {
            trigger,
            trojan_ratio,
            non_target_label,
            target_label,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Clean,
    Poisoned,
}

/// A dataset with per-sample poisoning provenance. Poisoned samples carry
/// the trigger; in training sets their label is flipped to the target
/// label, while `original_labels` retains the ground truth throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonedDataset {
    data: Dataset,
    provenance: Vec<Provenance>,
    original_labels: Vec<u8>,
    non_target_label: u8,
    target_label: u8,
}

impl PoisonedDataset {
    pub(crate) fn from_parts(
        data: Dataset,
        provenance: Vec<Provenance>,
        original_labels: Vec<u8>,
        non_target_label: u8,
        target_label: u8,
    ) -> Result<Self> {
        if provenance.len() != data.len() || original_labels.len() != data.len() {
            return Err(Error::Shape {
                expected: format!("{} provenance/original-label entries", data.len()),
                got: format!("{}/{}", provenance.len(), original_labels.len()),
            });
        }
        Ok(PoisonedDataset {
            data,
            provenance,
            original_labels,
            non_target_label,
            target_label,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn original_labels(&self) -> &[u8] {
        &self.original_labels
    }

    pub fn non_target_label(&self) -> u8 {
        self.non_target_label
    }

    pub fn target_label(&self) -> u8 {
        self.target_label
    }

    pub fn poisoned_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|&&p| p == Provenance::Poisoned)
            .count()
    }

    pub fn poisoned_indices(&self) -> Vec<usize> {
        self.provenance
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == Provenance::Poisoned)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Training-time poisoning: selects `floor(ratio * N_nt)` of the
/// `N_nt` samples carrying the non-target label uniformly at random
/// without replacement (reproducible from `cfg.seed`), applies the trigger
/// and flips their label to the target label. All other samples are
/// untouched.
pub fn poison_dataset(data: &Dataset, cfg: &PoisonConfig) -> Result<PoisonedDataset> {
    let eligible = data.indices_of_label(cfg.non_target_label);
    let want = (cfg.trojan_ratio * eligible.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "poison-select", 0));
    let mut selected: Vec<usize> = sample_indices(&mut rng, eligible.len(), want)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    selected.sort_unstable();

    let mut poisoned = data.clone();
    let original_labels = data.labels().to_vec();
    let mut provenance = vec![Provenance::Clean; data.len()];
    for &idx in &selected {
        apply_trigger_in_place(poisoned.features_mut(), idx, &cfg.trigger);
        poisoned.labels_mut()[idx] = cfg.target_label;
        provenance[idx] = Provenance::Poisoned;
    }
    PoisonedDataset::from_parts(
        poisoned,
        provenance,
        original_labels,
        cfg.non_target_label,
        cfg.target_label,
    )
}

/// Test-time poisoning: every test sample with the non-target label gets
/// the trigger and is flagged poisoned. Labels are left at the ground
/// truth; attack success is judged against the target label separately.
/// Other samples are untouched.
pub fn build_poisoned_testset(test: &Dataset, cfg: &PoisonConfig) -> Result<PoisonedDataset> {
    let mut poisoned = test.clone();
    let original_labels = test.labels().to_vec();
    let mut provenance = vec![Provenance::Clean; test.len()];
    for idx in test.indices_of_label(cfg.non_target_label) {
        apply_trigger_in_place(poisoned.features_mut(), idx, &cfg.trigger);
        provenance[idx] = Provenance::Poisoned;
    }
    PoisonedDataset::from_parts(
        poisoned,
        provenance,
        original_labels,
        cfg.non_target_label,
        cfg.target_label,
    )
}

/// Signal-domain trigger for one sample: the difference between the
/// normalized encoder outputs with and without the image trigger,
/// `delta = normalize(E(trigger(x))) - normalize(E(x))`.
///
/// Adding `delta` to the clean transmitted (or received) signal reproduces
/// the poisoned signal for that sample exactly. The encoder is nonlinear,
/// so `delta` is per-sample; no universal signal trigger is claimed.
pub fn derive_signal_trigger(
    encoder: &Network,
    x: &ArrayView1<f64>,
    spec: &TriggerSpec,
    domain: TriggerDomain,
) -> Result<Array1<f64>> {
    if domain == TriggerDomain::ImageInput {
        return Err(Error::Config(
            "signal trigger domain must be TransmittedSignal or ReceivedSignal".into(),
        ));
    }
    let triggered = apply_trigger(x, spec)?;
    let clean_batch = x
        .to_owned()
        .into_shape_with_order((1, x.len()))
        .expect("row vector");
    let triggered_batch = triggered
        .into_shape_with_order((1, x.len()))
        .expect("row vector");
    let (clean_z, _) = encoder.forward(&clean_batch)?;
    let (trig_z, _) = encoder.forward(&triggered_batch)?;
    let (clean_n, _) = normalize_power(&clean_z)?;
    let (trig_n, _) = normalize_power(&trig_z)?;
    Ok((&trig_n - &clean_n).row(0).to_owned())
}
