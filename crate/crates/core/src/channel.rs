//! Transmit-power normalization and the AWGN channel.
//!
//! The transmitted signal is the encoder output `z` (one real symbol per
//! channel use). Each sample's row is scaled to unit average power per
//! channel use, so a configured SNR of `s` dB corresponds to per-dimension
//! noise variance `10^(-s/10)`.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Rows below this L2 norm cannot be power-normalized.
pub const DEGENERATE_NORM_THRESHOLD: f64 = 1e-12;

/// Power-normalization rule applied before transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerNormalization {
    /// Scale each sample so its average power per channel use is 1.
    #[default]
    PerSampleUnitAveragePower,
}

/// AWGN channel parameters: SNR in dB and the number of channel uses
/// (the encoder's output dimensionality).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub n_c: usize,
    pub normalization: PowerNormalization,
}

impl ChannelConfig {
    /// `snr_db = f64::INFINITY` is the documented noiseless sentinel.
    pub fn new(snr_db: f64, n_c: usize) -> Result<Self> {
        if n_c == 0 {
            return Err(Error::Config("channel uses n_c must be at least 1".into()));
        }
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid snr_db {snr_db}")));
        }
        Ok(ChannelConfig {
            snr_db,
            n_c,
            normalization: PowerNormalization::PerSampleUnitAveragePower,
        })
    }

    pub fn noise_std(&self) -> f64 {
        snr_to_noise_std(self.snr_db)
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_std() == 0.0
    }
}

/// Per-dimension noise standard deviation for unit signal power:
/// `sigma = sqrt(10^(-snr_db / 10))`.
pub fn snr_to_noise_std(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0).sqrt()
}

/// Seeded Gaussian noise stream. Identical seeds give identical streams;
/// parallel runs each derive their own source, never share one.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn from_seed(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Substream at `(master, label, index)`; see the seeding policy in
    /// [`crate::seed`].
    pub fn derived(master: u64, label: &str, index: u64) -> Self {
        Self::from_seed(derive_seed(master, label, index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Cache for backpropagation through the normalization scaling.
#[derive(Debug, Clone)]
pub struct NormalizeCache {
    input: Array2<f64>,
    norms: Array1<f64>,
}

/// Scales each row of `z` to unit average power per channel use:
/// `z_i <- z_i * sqrt(n_c / ||z_i||^2)`.
///
/// Near-zero rows are surfaced as [`Error::DegenerateSignal`]; silently
/// rescaling a collapsed encoder output would mask training pathologies.
pub fn normalize_power(z: &Array2<f64>) -> Result<(Array2<f64>, NormalizeCache)> {
    let n_c = z.ncols() as f64;
    let mut norms = Array1::zeros(z.nrows());
    let mut out = z.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM_THRESHOLD {
            return Err(Error::DegenerateSignal {
                row: i,
                threshold: DEGENERATE_NORM_THRESHOLD,
            });
        }
        let scale = n_c.sqrt() / norm;
        row.mapv_inplace(|v| v * scale);
        norms[i] = norm;
    }
    Ok((
        out,
        NormalizeCache {
            input: z.clone(),
            norms,
        },
    ))
}

/// Backpropagates `upstream` through the per-row scaling of
/// [`normalize_power`]:
/// `dL/dz = sqrt(n_c)/||z|| * (u - z (u . z) / ||z||^2)` per row.
pub fn normalize_power_backward(cache: &NormalizeCache, upstream: &Array2<f64>) -> Array2<f64> {
    let n_c = cache.input.ncols() as f64;
    let mut grad = upstream.clone();
    for ((mut g_row, z_row), &norm) in grad
        .rows_mut()
        .into_iter()
        .zip(cache.input.rows())
        .zip(cache.norms.iter())
    {
        let dot: f64 = g_row.iter().zip(z_row.iter()).map(|(u, z)| u * z).sum();
        let scale = n_c.sqrt() / norm;
        let proj = dot / (norm * norm);
        for (g, &z) in g_row.iter_mut().zip(z_row.iter()) {
            *g = scale * (*g - z * proj);
        }
    }
    grad
}

/// Adds white Gaussian noise at the configured SNR. The signal is assumed
/// power-normalized. In noiseless mode the input is returned unchanged and
/// the noise stream is not consumed. Gradients pass through unchanged (the
/// realized noise is a constant).
pub fn apply_awgn(z: &Array2<f64>, cfg: &ChannelConfig, noise: &mut NoiseSource) -> Array2<f64> {
    let sigma = cfg.noise_std();
    if sigma == 0.0 {
        return z.clone();
    }
    let mut out = z.clone();
    for v in out.iter_mut() {
        *v += sigma * noise.standard_normal();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn snr_conversions_match_direct_formula() {
        assert!((snr_to_noise_std(0.0) - 1.0).abs() < 1e-15);
        assert!((snr_to_noise_std(10.0) - 0.31622776601683794).abs() < 1e-15);
        assert!((snr_to_noise_std(5.0) - 0.5623413251903491).abs() < 1e-15);
        assert_eq!(snr_to_noise_std(f64::INFINITY), 0.0);
    }

    #[test]
    fn unit_vector_row_is_scaled_to_sqrt_nc() {
        let z = array![[1.0, 0.0, 0.0, 0.0]];
        let (out, _) = normalize_power(&z).unwrap();
        assert_eq!(out, array![[2.0, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn unit_average_power_row_is_a_fixed_point() {
        // ||row||^2 = 4 = n_c, so average power is already 1.
        let z = array![[1.0, -1.0, 1.0, -1.0]];
        let (out, _) = normalize_power(&z).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn random_batch_rows_come_out_at_unit_average_power() {
        let mut noise = NoiseSource::from_seed(5);
        let z = Array2::from_shape_fn((32, 7), |_| noise.standard_normal() * 3.0 + 0.5);
        let (out, _) = normalize_power(&z).unwrap();
        for row in out.rows() {
            let avg_power = row.iter().map(|v| v * v).sum::<f64>() / 7.0;
            assert!((avg_power - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_row_raises_degenerate_signal() {
        let z = array![[1.0, 1.0], [0.0, 0.0]];
        assert!(matches!(
            normalize_power(&z),
            Err(Error::DegenerateSignal { row: 1, .. })
        ));
    }

    #[test]
    fn noiseless_sentinel_returns_signal_exactly() {
        let cfg = ChannelConfig::new(f64::INFINITY, 3).unwrap();
        assert!(cfg.is_noiseless());
        let z = array![[0.5, -0.25, 1.0]];
        let mut noise = NoiseSource::from_seed(0);
        let out = apply_awgn(&z, &cfg, &mut noise);
        assert_eq!(out, z);
    }

    #[test]
    fn fixed_seed_reproduces_noise_exactly() {
        let cfg = ChannelConfig::new(5.0, 4).unwrap();
        let z = Array2::from_elem((3, 4), 1.0);
        let a = apply_awgn(&z, &cfg, &mut NoiseSource::from_seed(77));
        let b = apply_awgn(&z, &cfg, &mut NoiseSource::from_seed(77));
        assert_eq!(a, b);
    }

    #[test]
    fn successive_calls_draw_independent_noise() {
        let cfg = ChannelConfig::new(5.0, 4).unwrap();
        let z = Array2::from_elem((3, 4), 1.0);
        let mut noise = NoiseSource::from_seed(77);
        let a = apply_awgn(&z, &cfg, &mut noise);
        let b = apply_awgn(&z, &cfg, &mut noise);
        assert_ne!(a, b);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ChannelConfig::new(5.0, 0).is_err());
        assert!(ChannelConfig::new(f64::NAN, 4).is_err());
        assert!(ChannelConfig::new(f64::NEG_INFINITY, 4).is_err());
    }

    #[test]
    fn empirical_noise_statistics_match_sigma() {
        // Sample-statistics oracle at reduced scale; the acceptance suite
        // runs the full 1e5-sample version.
        let cfg = ChannelConfig::new(5.0, 16).unwrap();
        let sigma = cfg.noise_std();
        let z = Array2::zeros((2000, 16));
        // Bypass normalization (zero signal) to isolate the noise itself.
        let mut noise = NoiseSource::from_seed(123);
        let out = apply_awgn(&z, &cfg, &mut noise);
        let n = out.len() as f64;
        let mean: f64 = out.iter().sum::<f64>() / n;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "noise mean {mean}");
        assert!(
            (var / (sigma * sigma) - 1.0).abs() < 0.02,
            "variance ratio {}",
            var / (sigma * sigma)
        );
    }

    #[test]
    fn normalization_gradient_matches_finite_differences() {
        // Loss = sum of (normalized entries * fixed coefficients), checked
        // against central differences through the scaling.
        let mut src = NoiseSource::from_seed(9);
        let z = Array2::from_shape_fn((3, 5), |_| src.standard_normal());
        let coef = Array2::from_shape_fn((3, 5), |_| src.standard_normal());
        let loss = |z: &Array2<f64>| -> f64 {
            let (out, _) = normalize_power(z).unwrap();
            (out * &coef).sum()
        };
        let (_, cache) = normalize_power(&z).unwrap();
        let analytic = normalize_power_backward(&cache, &coef);
        let eps = 1e-6;
        let mut worst = 0.0_f64;
        let mut z_pert = z.clone();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let orig = z_pert[[i, j]];
                z_pert[[i, j]] = orig + eps;
                let plus = loss(&z_pert);
                z_pert[[i, j]] = orig - eps;
                let minus = loss(&z_pert);
                z_pert[[i, j]] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[[i, j]];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }
}
