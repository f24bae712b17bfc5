//! Dense layers, networks, batched forward pass and exact backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Element-wise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// One dense layer: `y = activation(W x + b)` with `W` of shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::Shape {
                expected: format!("biases of length {}", weights.nrows()),
                got: format!("length {}", biases.len()),
            });
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Config("layer dimensions must be nonzero".into()));
        }
        if weights.iter().any(|v| !v.is_finite()) || biases.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot/Xavier uniform init: weights from `U(-l, l)` with
    /// `l = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("valid uniform bounds");
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(rng));
        let biases = Array1::zeros(out_dim);
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut Array1<f64> {
        &mut self.biases
    }
}

/// Numerically stable softmax over each row (max-subtraction before exp).
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// A feed-forward stack of dense layers.
///
/// Layer dimensions must chain, and softmax may appear only as the final
/// activation (its backward pass propagates the full Jacobian, which is
/// only wired for the output layer).
#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("network input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut prev = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() != prev {
                return Err(Error::Shape {
                    expected: format!("layer {k} in_dim {prev}"),
                    got: format!("{}", layer.in_dim()),
                });
            }
            if layer.activation() == Activation::Softmax && k + 1 != layers.len() {
                return Err(Error::Config(
                    "softmax is only supported as the final activation".into(),
                ));
            }
            prev = layer.out_dim();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Total number of scalar parameters (weights + biases).
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    fn dims_signature(&self) -> Vec<usize> {
        let mut sig = vec![self.input_dim];
        sig.extend(self.layers.iter().map(|l| l.out_dim()));
        sig
    }

    /// Batched forward pass. Returns the final activations and a cache
    /// holding every layer's post-activation output for `backward`.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.ncols() != self.input_dim {
            return Err(Error::Shape {
                expected: format!("batch with {} columns", self.input_dim),
                got: format!("{} columns", batch.ncols()),
            });
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward input contains non-finite values".into()));
        }

        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let prev = acts.last().expect("at least the input batch");
            let mut z = prev.dot(&layer.weights().t());
            z += &layer.biases().view().insert_axis(Axis(0));
            match layer.activation() {
                Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
                Activation::Linear => {}
                Activation::Softmax => softmax_rows(&mut z),
            }
            acts.push(z);
        }
        let output = acts.last().expect("output").clone();
        Ok((
            output,
            ForwardCache {
                dims: self.dims_signature(),
                acts,
            },
        ))
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<()> {
        if cache.dims != self.dims_signature() {
            return Err(Error::StaleCache(format!(
                "cache built for dims {:?}, network has {:?}",
                cache.dims,
                self.dims_signature()
            )));
        }
        let out = cache.acts.last().expect("cache output");
        if upstream.dim() != out.dim() {
            return Err(Error::Shape {
                expected: format!("upstream gradient of shape {:?}", out.dim()),
                got: format!("{:?}", upstream.dim()),
            });
        }
        Ok(())
    }

    /// Maps an upstream gradient w.r.t. a layer's post-activation output to
    /// the gradient w.r.t. its pre-activation input.
    fn activation_backward(
        layer: &DenseLayer,
        output: &Array2<f64>,
        upstream: &Array2<f64>,
    ) -> Array2<f64> {
        match layer.activation() {
            Activation::Linear => upstream.clone(),
            Activation::Relu => {
                let mut dz = upstream.clone();
                dz.zip_mut_with(output, |d, &o| {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz
            }
            Activation::Softmax => {
                // Row-wise Jacobian-vector product:
                // dz_i = p_i * (u_i - sum_j u_j p_j)
                let mut dz = upstream.clone();
                for (mut dz_row, p_row) in dz.rows_mut().into_iter().zip(output.rows()) {
                    let dot: f64 = dz_row
                        .iter()
                        .zip(p_row.iter())
                        .map(|(u, p)| u * p)
                        .sum();
                    for (d, &p) in dz_row.iter_mut().zip(p_row.iter()) {
                        *d = p * (*d - dot);
                    }
                }
                dz
            }
        }
    }

    /// Exact backpropagation. `upstream` is the gradient of a scalar loss
    /// w.r.t. the network output (post-activation). Returns parameter
    /// gradients and the gradient w.r.t. the network input, which lets
    /// callers chain networks through intermediate transforms.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> Result<(GradientSet, Array2<f64>)> {
        self.check_cache(cache, upstream)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let output = &cache.acts[k + 1];
            let input = &cache.acts[k];
            let dz = Self::activation_backward(layer, output, &delta);
            let d_weights = dz.t().dot(input);
            let d_biases = dz.sum_axis(Axis(0));
            delta = dz.dot(layer.weights());
            grads.push(LayerGrad {
                d_weights,
                d_biases,
            });
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, delta))
    }

    /// Backpropagates `upstream` to the network input without forming
    /// parameter gradients. Used when this network is frozen but sits in
    /// the middle of a differentiated chain.
    pub fn backprop_to_input(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_cache(cache, upstream)?;
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let output = &cache.acts[k + 1];
            let dz = Self::activation_backward(layer, output, &delta);
            delta = dz.dot(layer.weights());
        }
        Ok(delta)
    }
}

/// Post-activation outputs of every layer from one `forward` call, plus the
/// input batch itself. `backward` validates that the cache matches the
/// network it is replayed against.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    /// `acts[0]` is the input batch; `acts[k + 1]` is layer `k`'s output.
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }

    /// Final post-activation output.
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache output")
    }
}

/// One gradient tensor pair per layer, shape-identical to the layer.
#[derive(Debug, Clone)]
pub struct GradientSet {
    layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub d_weights: Array2<f64>,
    pub d_biases: Array1<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    d_weights: Array2::zeros((l.out_dim(), l.in_dim())),
                    d_biases: Array1::zeros(l.out_dim()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers().len()
            && self
                .layers
                .iter()
                .zip(net.layers())
                .all(|(g, l)| g.d_weights.dim() == (l.out_dim(), l.in_dim()) && g.d_biases.len() == l.out_dim())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.d_weights.iter().chain(g.d_biases.iter()).cloned())
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn single_layer(weights: Array2<f64>, biases: Array1<f64>, act: Activation) -> Network {
        let in_dim = weights.ncols();
        Network::new(in_dim, vec![DenseLayer::new(weights, biases, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let net = single_layer(Array2::eye(3), Array1::zeros(3), Activation::Linear);
        let x = array![[1.0, -2.0, 0.5], [0.0, 4.0, -1.0]];
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let net = single_layer(Array2::zeros((10, 4)), Array1::zeros(10), Activation::Softmax);
        let x = Array2::zeros((3, 4));
        let (y, _) = net.forward(&x).unwrap();
        for v in y.iter() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let net = single_layer(array![[1.0, -1.0]], array![0.0], Activation::Relu);
        let (y, _) = net.forward(&array![[2.0, 3.0]]).unwrap();
        assert_eq!(y, array![[0.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_lie_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = DenseLayer::glorot(7, 10, Activation::Softmax, &mut rng);
        let net = Network::new(7, vec![layer]).unwrap();
        let x = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64).sin() * 3.0);
        let (y, _) = net.forward(&x).unwrap();
        for row in y.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(
            5,
            vec![
                DenseLayer::glorot(5, 8, Activation::Relu, &mut rng),
                DenseLayer::glorot(8, 4, Activation::Linear, &mut rng),
            ],
        )
        .unwrap();
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_bad_width_and_nonfinite_input() {
        let net = single_layer(Array2::eye(3), Array1::zeros(3), Activation::Linear);
        assert!(matches!(
            net.forward(&Array2::zeros((2, 4))),
            Err(Error::Shape { .. })
        ));
        let mut x = Array2::zeros((2, 3));
        x[[1, 1]] = f64::NAN;
        assert!(matches!(net.forward(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn glorot_init_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let la = DenseLayer::glorot(6, 4, Activation::Relu, &mut a);
        let lb = DenseLayer::glorot(6, 4, Activation::Relu, &mut b);
        assert_eq!(la.weights(), lb.weights());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::new(
            4,
            vec![
                DenseLayer::glorot(4, 6, Activation::Relu, &mut rng),
                DenseLayer::glorot(6, 3, Activation::Linear, &mut rng),
            ],
        )
        .unwrap();
        let x = Array2::from_shape_fn((2, 4), |(i, j)| 0.1 * (i + j) as f64 + 0.05);
        let (y, cache) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &Array2::zeros(y.dim())).unwrap();
        assert!(grads.iter_values().all(|v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_linear_mse_gradient_matches_hand_derivation() {
        // y = Wx, L = mean((y - t)^2) over N*D entries;
        // dL/dW = (2 / (N*D)) * (y - t)^T x
        let w = array![[0.5, -0.2], [0.1, 0.3]];
        let net = single_layer(w, Array1::zeros(2), Activation::Linear);
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let t = array![[0.0, 1.0], [1.0, 0.0]];
        let (y, cache) = net.forward(&x).unwrap();
        let upstream = (&y - &t) * (2.0 / 4.0);
        let (grads, _) = net.backward(&cache, &upstream).unwrap();
        let expected = upstream.t().dot(&x);
        let diff = (&grads.layers()[0].d_weights - &expected)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net_a = Network::new(4, vec![DenseLayer::glorot(4, 3, Activation::Linear, &mut rng)]).unwrap();
        let net_b = Network::new(4, vec![DenseLayer::glorot(4, 2, Activation::Linear, &mut rng)]).unwrap();
        let x = Array2::zeros((2, 4));
        let (_, cache) = net_a.forward(&x).unwrap();
        let up = Array2::zeros((2, 2));
        assert!(matches!(
            net_b.backward(&cache, &up),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn softmax_only_allowed_as_final_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bad = Network::new(
            4,
            vec![
                DenseLayer::glorot(4, 5, Activation::Softmax, &mut rng),
                DenseLayer::glorot(5, 2, Activation::Linear, &mut rng),
            ],
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn layer_dims_must_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bad = Network::new(
            4,
            vec![
                DenseLayer::glorot(4, 5, Activation::Relu, &mut rng),
                DenseLayer::glorot(6, 2, Activation::Linear, &mut rng),
            ],
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }
}
