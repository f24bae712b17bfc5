//! The four attack/accuracy measures and reconstruction losses.
//!
//! - attack success: triggered non-target test samples classified as the
//!   target label by the poisoned model,
//! - clean non-target accuracy: untriggered non-target samples classified
//!   correctly by the poisoned model,
//! - clean overall accuracy: untriggered samples of any label classified
//!   correctly by the poisoned model,
//! - no-attack accuracy: the clean-trained model's accuracy on the clean
//!   test set.
//!
//! Every probability is reported with its raw counts; an empty denominator
//! makes the metric undefined (reported as null, never as zero). Metrics
//! are averaged over one channel-noise realization per test sample under a
//! caller-fixed evaluation stream, with optional repeated realizations.

use std::fmt;

use ndarray::Array2;

use crate::backdoor::PoisonedDataset;
use crate::channel::NoiseSource;
use crate::data::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pipeline::{end_to_end_forward, SemComModel};

/// Batch size used when streaming test sets through the model.
const EVAL_CHUNK: usize = 512;

/// A probability with the counts backing it. A zero denominator means the
/// metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counted {
    pub numerator: u64,
    pub denominator: u64,
}

impl Counted {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Counted {
            numerator,
            denominator,
        }
    }

    pub fn undefined() -> Self {
        Counted::default()
    }

    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

/// 10x10 confusion counts, `[true label][predicted label]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl Default for Confusion {
    fn default() -> Self {
        Confusion([[0; NUM_CLASSES]; NUM_CLASSES])
    }
}

impl Confusion {
    pub fn record(&mut self, true_label: u8, predicted: u8) {
        self.0[usize::from(true_label)][usize::from(predicted)] += 1;
    }

    pub fn per_label(&self, label: u8) -> Counted {
        let row = &self.0[usize::from(label)];
        Counted::new(row[usize::from(label)], row.iter().sum())
    }

    pub fn overall(&self) -> Counted {
        let mut correct = 0;
        let mut total = 0;
        for (label, row) in self.0.iter().enumerate() {
            correct += row[label];
            total += row.iter().sum::<u64>();
        }
        Counted::new(correct, total)
    }
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> u8 {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u8
}

/// Streams `features` through the model in chunks, returning the predicted
/// label per row. Noise consumption is row-major and independent of the
/// chunk size.
pub fn predict_labels(
    model: &SemComModel,
    features: &Array2<f64>,
    noise: &mut NoiseSource,
) -> Result<Vec<u8>> {
    let mut preds = Vec::with_capacity(features.nrows());
    let mut start = 0;
    while start < features.nrows() {
        let end = (start + EVAL_CHUNK).min(features.nrows());
        let chunk = features.slice(ndarray::s![start..end, ..]).to_owned();
        let (_, probs) = end_to_end_forward(model, &chunk, noise)?;
        preds.extend(probs.rows().into_iter().map(argmax_row));
        start = end;
    }
    Ok(preds)
}

fn check_repeats(repeats: u32) -> Result<()> {
    if repeats == 0 {
        return Err(Error::Config("eval repeats must be at least 1".into()));
    }
    Ok(())
}

/// Attack success probability: over the triggered (poisoned-flagged) test
/// samples, the fraction the model classifies as the target label.
pub fn eval_attack_success(
    model: &SemComModel,
    poisoned_test: &PoisonedDataset,
    noise: &mut NoiseSource,
    repeats: u32,
) -> Result<Counted> {
    check_repeats(repeats)?;
    let indices = poisoned_test.poisoned_indices();
    if indices.is_empty() {
        return Ok(Counted::undefined());
    }
    let subset = poisoned_test.data().select(&indices)?;
    let target = poisoned_test.target_label();
    let mut hits = 0u64;
    let mut total = 0u64;
    for _ in 0..repeats {
        let preds = predict_labels(model, subset.features(), noise)?;
        hits += preds.iter().filter(|&&p| p == target).count() as u64;
        total += preds.len() as u64;
    }
    Ok(Counted::new(hits, total))
}

/// Accuracy of the (poisoned) model on the untouched clean test set:
/// over the non-target-label samples, and over all samples. The full
/// confusion counts are returned for downstream consistency checks.
pub struct CleanAccuracy {
    pub non_target: Counted,
    pub overall: Counted,
    pub confusion: Confusion,
}

pub fn eval_clean_accuracy(
    model: &SemComModel,
    clean_test: &Dataset,
    non_target_label: u8,
    noise: &mut NoiseSource,
    repeats: u32,
) -> Result<CleanAccuracy> {
    check_repeats(repeats)?;
    if clean_test.is_empty() {
        return Ok(CleanAccuracy {
            non_target: Counted::undefined(),
            overall: Counted::undefined(),
            confusion: Confusion::default(),
        });
    }
    let mut confusion = Confusion::default();
    for _ in 0..repeats {
        let preds = predict_labels(model, clean_test.features(), noise)?;
        for (&pred, &truth) in preds.iter().zip(clean_test.labels()) {
            confusion.record(truth, pred);
        }
    }
    Ok(CleanAccuracy {
        non_target: confusion.per_label(non_target_label),
        overall: confusion.overall(),
        confusion,
    })
}

/// No-attack benchmark: overall accuracy of a clean-trained model on the
/// clean test set.
pub fn eval_no_attack(
    model_clean: &SemComModel,
    clean_test: &Dataset,
    noise: &mut NoiseSource,
    repeats: u32,
) -> Result<(Counted, Confusion)> {
    let acc = eval_clean_accuracy(model_clean, clean_test, 0, noise, repeats)?;
    Ok((acc.overall, acc.confusion))
}

/// Reconstruction MSE on the clean test set and on the triggered subset of
/// the poisoned test set. The poisoned loss is measured against the
/// triggered inputs (the trigger is part of the signal to reconstruct);
/// it is `None` when no sample carries the trigger.
pub fn eval_reconstruction(
    model: &SemComModel,
    clean_test: &Dataset,
    poisoned_test: &PoisonedDataset,
    noise: &mut NoiseSource,
    repeats: u32,
) -> Result<(f64, Option<f64>)> {
    check_repeats(repeats)?;
    let mse_of = |features: &Array2<f64>, noise: &mut NoiseSource| -> Result<f64> {
        let mut sse = 0.0;
        let mut entries = 0.0;
        let mut start = 0;
        while start < features.nrows() {
            let end = (start + EVAL_CHUNK).min(features.nrows());
            let chunk = features.slice(ndarray::s![start..end, ..]).to_owned();
            let (x_hat, _) = end_to_end_forward(model, &chunk, noise)?;
            sse += (&x_hat - &chunk).mapv(|v| v * v).sum();
            entries += chunk.len() as f64;
            start = end;
        }
        Ok(sse / entries)
    };

    let mut clean_total = 0.0;
    for _ in 0..repeats {
        clean_total += mse_of(clean_test.features(), noise)?;
    }
    let clean_mse = clean_total / f64::from(repeats);

    let indices = poisoned_test.poisoned_indices();
    let poisoned_mse = if indices.is_empty() {
        None
    } else {
        let subset = poisoned_test.data().select(&indices)?;
        let mut total = 0.0;
        for _ in 0..repeats {
            total += mse_of(subset.features(), noise)?;
        }
        Some(total / f64::from(repeats))
    };
    Ok((clean_mse, poisoned_mse))
}

/// The experimental condition a report was measured under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionDesc {
    pub snr_db: f64,
    pub n_c: usize,
    pub trojan_ratio: f64,
    pub non_target: u8,
    pub target: u8,
    pub seed: u64,
}

/// All measures for one experimental condition, with raw counts.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub condition: ConditionDesc,
    /// Attack success probability of the poisoned model.
    pub attack_success: Counted,
    /// Poisoned-model accuracy on clean non-target-label samples.
    pub clean_non_target_acc: Counted,
    /// Poisoned-model accuracy on all clean samples.
    pub clean_overall_acc: Counted,
    /// Clean-model accuracy on the clean test set (from the paired run).
    pub no_attack_acc: Counted,
    pub recon_mse_clean: Option<f64>,
    pub recon_mse_poisoned: Option<f64>,
    /// Clean-model reconstruction MSE on the clean test set.
    pub recon_mse_clean_no_attack: Option<f64>,
    /// Confusion counts behind the clean-accuracy figures.
    pub confusion: Confusion,
    pub eval_repeats: u32,
}

fn fmt_counted(c: &Counted) -> String {
    match c.value() {
        Some(v) => format!("{v:.4} ({}/{})", c.numerator, c.denominator),
        None => "undefined (0/0)".into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.condition;
        writeln!(
            f,
            "condition: snr_db={} n_c={} trojan_ratio={} labels {}->{} seed={}",
            c.snr_db, c.n_c, c.trojan_ratio, c.non_target, c.target, c.seed
        )?;
        writeln!(f, "  attack success:            {}", fmt_counted(&self.attack_success))?;
        writeln!(
            f,
            "  clean non-target accuracy: {}",
            fmt_counted(&self.clean_non_target_acc)
        )?;
        writeln!(
            f,
            "  clean overall accuracy:    {}",
            fmt_counted(&self.clean_overall_acc)
        )?;
        writeln!(
            f,
            "  no-attack accuracy:        {}",
            fmt_counted(&self.no_attack_acc)
        )?;
        writeln!(f, "  recon MSE clean:           {}", fmt_opt(self.recon_mse_clean))?;
        writeln!(
            f,
            "  recon MSE poisoned:        {}",
            fmt_opt(self.recon_mse_poisoned)
        )?;
        writeln!(
            f,
            "  recon MSE clean no-attack: {}",
            fmt_opt(self.recon_mse_clean_no_attack)
        )?;
        write!(f, "  eval repeats:              {}", self.eval_repeats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backdoor::{build_poisoned_testset, default_trigger, PoisonConfig};
    use crate::channel::ChannelConfig;
    use crate::data::{synthetic_fixture, FEATURE_DIM, IMAGE_SIDE};
    use crate::nn::{Activation, DenseLayer, Network};
    use ndarray::{Array1, Array2};

    /// Identity autoencoder (n_c = 784) with a hand-built classifier that
    /// reads the class band of the synthetic fixture. Power normalization
    /// rescales rows positively, which band-energy argmax is invariant to.
    fn stub_model(permute_by: usize, snr_db: f64) -> SemComModel {
        let identity = || {
            Network::new(
                FEATURE_DIM,
                vec![DenseLayer::new(
                    Array2::eye(FEATURE_DIM),
                    Array1::zeros(FEATURE_DIM),
                    Activation::Linear,
                )
                .unwrap()],
            )
            .unwrap()
        };
        let mut weights = Array2::zeros((10, FEATURE_DIM));
        for class in 0..10usize {
            let out = (class + permute_by) % 10;
            for band_row in [7 + 2 * class, 8 + 2 * class] {
                for col in 4..24 {
                    weights[[out, band_row * IMAGE_SIDE + col]] = 1.0;
                }
            }
        }
        let classifier = Network::new(
            FEATURE_DIM,
            vec![DenseLayer::new(weights, Array1::zeros(10), Activation::Softmax).unwrap()],
        )
        .unwrap();
        SemComModel {
            encoder: identity(),
            decoder: identity(),
            classifier,
            channel: ChannelConfig::new(snr_db, FEATURE_DIM).unwrap(),
        }
    }

    /// Classifier that always answers `target` regardless of input.
    fn constant_model(target: u8) -> SemComModel {
        let mut model = stub_model(0, f64::INFINITY);
        let mut biases = Array1::zeros(10);
        biases[usize::from(target)] = 50.0;
        model.classifier = Network::new(
            FEATURE_DIM,
            vec![DenseLayer::new(Array2::zeros((10, FEATURE_DIM)), biases, Activation::Softmax).unwrap()],
        )
        .unwrap();
        model
    }

    fn poison_cfg() -> PoisonConfig {
        PoisonConfig::new(default_trigger(), 0.25, 4, 9, 5).unwrap()
    }

    #[test]
    fn constant_target_classifier_gives_full_attack_success() {
        let test = synthetic_fixture(4, 2);
        let poisoned = build_poisoned_testset(&test, &poison_cfg()).unwrap();
        let model = constant_model(9);
        let p = eval_attack_success(&model, &poisoned, &mut NoiseSource::from_seed(1), 1).unwrap();
        assert_eq!(p.value(), Some(1.0));
        assert_eq!(p.denominator, 4);
    }

    #[test]
    fn perfect_stub_has_full_clean_accuracy() {
        let test = synthetic_fixture(5, 2);
        let model = stub_model(0, f64::INFINITY);
        let acc =
            eval_clean_accuracy(&model, &test, 4, &mut NoiseSource::from_seed(1), 1).unwrap();
        assert_eq!(acc.non_target.value(), Some(1.0));
        assert_eq!(acc.overall.value(), Some(1.0));
        let (p_na, _) = eval_no_attack(&model, &test, &mut NoiseSource::from_seed(1), 1).unwrap();
        assert_eq!(p_na.value(), Some(1.0));
    }

    #[test]
    fn label_permuted_stub_is_never_correct() {
        let test = synthetic_fixture(5, 2);
        let model = stub_model(1, f64::INFINITY);
        let acc =
            eval_clean_accuracy(&model, &test, 4, &mut NoiseSource::from_seed(1), 1).unwrap();
        assert_eq!(acc.non_target.value(), Some(0.0));
        assert_eq!(acc.overall.value(), Some(0.0));
    }

    #[test]
    fn empty_poisoned_subset_yields_undefined_attack_metric() {
        let test = synthetic_fixture(3, 2);
        let not_four: Vec<usize> = test
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 4)
            .map(|(i, _)| i)
            .collect();
        let without_fours = test.select(&not_four).unwrap();
        let poisoned = build_poisoned_testset(&without_fours, &poison_cfg()).unwrap();
        let model = constant_model(9);
        let p = eval_attack_success(&model, &poisoned, &mut NoiseSource::from_seed(1), 1).unwrap();
        assert_eq!(p.value(), None);
        assert_eq!(p, Counted::undefined());
    }

    #[test]
    fn metrics_match_brute_force_recount_with_deterministic_stub() {
        let test = synthetic_fixture(6, 9);
        let cfg = poison_cfg();
        let poisoned = build_poisoned_testset(&test, &cfg).unwrap();
        let model = stub_model(0, f64::INFINITY);

        // Brute-force oracle: one prediction list per dataset, counted by hand.
        let mut noise = NoiseSource::from_seed(3);
        let clean_preds = predict_labels(&model, test.features(), &mut noise).unwrap();
        let mut correct_nt = 0u64;
        let mut total_nt = 0u64;
        let mut correct_all = 0u64;
        for (&p, &t) in clean_preds.iter().zip(test.labels()) {
            if t == cfg.non_target_label {
                total_nt += 1;
                correct_nt += u64::from(p == t);
            }
            correct_all += u64::from(p == t);
        }
        let subset = poisoned.data().select(&poisoned.poisoned_indices()).unwrap();
        let attack_preds =
            predict_labels(&model, subset.features(), &mut NoiseSource::from_seed(4)).unwrap();
        let attack_hits = attack_preds
            .iter()
            .filter(|&&p| p == cfg.target_label)
            .count() as u64;

        let acc =
            eval_clean_accuracy(&model, &test, 4, &mut NoiseSource::from_seed(3), 1).unwrap();
        assert_eq!(acc.non_target, Counted::new(correct_nt, total_nt));
        assert_eq!(
            acc.overall,
            Counted::new(correct_all, clean_preds.len() as u64)
        );
        let p_a =
            eval_attack_success(&model, &poisoned, &mut NoiseSource::from_seed(4), 1).unwrap();
        assert_eq!(p_a, Counted::new(attack_hits, attack_preds.len() as u64));
    }

    #[test]
    fn overall_accuracy_is_consistent_with_confusion_counts() {
        let test = synthetic_fixture(7, 9);
        let model = stub_model(3, 10.0);
        let acc =
            eval_clean_accuracy(&model, &test, 4, &mut NoiseSource::from_seed(8), 2).unwrap();
        let mut correct = 0u64;
        let mut total = 0u64;
        for label in 0..10u8 {
            let per = acc.confusion.per_label(label);
            correct += per.numerator;
            total += per.denominator;
        }
        assert_eq!(acc.overall, Counted::new(correct, total));
        // Two repeats double every denominator.
        assert_eq!(total, 2 * test.len() as u64);
    }

    #[test]
    fn metrics_are_deterministic_given_the_eval_seed() {
        let test = synthetic_fixture(4, 9);
        let poisoned = build_poisoned_testset(&test, &poison_cfg()).unwrap();
        let model = stub_model(0, 5.0);
        let a = eval_attack_success(&model, &poisoned, &mut NoiseSource::from_seed(11), 1).unwrap();
        let b = eval_attack_success(&model, &poisoned, &mut NoiseSource::from_seed(11), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_stub_in_noiseless_mode_reconstructs_prenormalized_rows() {
        // Rows at exactly unit average power pass through untouched, so
        // both reconstruction losses vanish.
        let mut features = Array2::zeros((10, FEATURE_DIM));
        for (i, mut row) in features.rows_mut().into_iter().enumerate() {
            // Unit average power and within [0, 1]: 784 entries of 1.
            let _ = i;
            row.fill(1.0);
        }
        let labels: Vec<u8> = (0..10u8).collect();
        let data = Dataset::new(features, labels, crate::data::SplitTag::Test).unwrap();
        // Trigger pixels are already at 1.0, so triggered rows stay identical.
        let poisoned = build_poisoned_testset(&data, &poison_cfg()).unwrap();
        let model = stub_model(0, f64::INFINITY);
        let (clean_mse, poisoned_mse) =
            eval_reconstruction(&model, &data, &poisoned, &mut NoiseSource::from_seed(2), 1)
                .unwrap();
        assert!(clean_mse < 1e-24, "clean mse {clean_mse}");
        assert_eq!(poisoned_mse.map(|v| v < 1e-24), Some(true));
    }

    #[test]
    fn report_display_includes_counts_and_undefined_markers() {
        let report = MetricsReport {
            condition: ConditionDesc {
                snr_db: 5.0,
                n_c: 75,
                trojan_ratio: 0.25,
                non_target: 4,
                target: 9,
                seed: 1,
            },
            attack_success: Counted::new(3, 4),
            clean_non_target_acc: Counted::new(9, 10),
            clean_overall_acc: Counted::new(95, 100),
            no_attack_acc: Counted::undefined(),
            recon_mse_clean: Some(0.01),
            recon_mse_poisoned: None,
            recon_mse_clean_no_attack: None,
            confusion: Confusion::default(),
            eval_repeats: 1,
        };
        let text = report.to_string();
        assert!(text.contains("0.7500 (3/4)"));
        assert!(text.contains("undefined (0/0)"));
        assert!(text.contains("labels 4->9"));
    }
}
