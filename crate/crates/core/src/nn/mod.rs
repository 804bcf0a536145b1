//! Minimal dense function-approximator stack.
//!
//! A fixed-topology multilayer perceptron over `f64` with rectifier hidden
//! layers and a linear output layer, hand-written reverse-mode gradients and
//! an Adam optimizer. Weights are stored flat per layer in row-major order
//! (`out_dim x in_dim`); every learned component in the workspace builds on
//! this module.

mod adam;

pub use adam::{adam_step, AdamParams, AdamState};

use rand::distributions::{Distribution, Uniform};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Dense feed-forward network: rectifier hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    /// Per layer, row-major `(layer_sizes[k+1] x layer_sizes[k])`.
    weights: Vec<Vec<f64>>,
    /// Per layer, length `layer_sizes[k+1]`.
    biases: Vec<Vec<f64>>,
}

/// Gradients of a scalar with respect to every parameter and the input.
///
/// Shapes mirror the owning [`MlpModel`] exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

/// Reusable per-layer activation storage for a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `layers[k]` holds the post-activation output of layer `k`
    /// (rectified for hidden layers, linear for the last).
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn for_model(model: &MlpModel) -> Self {
        Self {
            layers: model.layer_sizes[1..]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("at least one layer")
    }
}

/// Initializes a model with He-style fan-in scaled uniform weights and zero
/// biases, deterministically for a fixed seed.
pub fn init_model(layer_sizes: &[usize], rng_seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(CoreError::Config(format!(
            "layer_sizes needs at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(CoreError::Config(format!(
            "layer_sizes entries must be >= 1, got {layer_sizes:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        weights.push((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect());
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

/// Forward pass; allocates fresh output storage.
pub fn forward(model: &MlpModel, input: &[f64]) -> Result<Vec<f64>> {
    let mut acts = Activations::for_model(model);
    forward_into(model, input, &mut acts)?;
    Ok(acts.output().to_vec())
}

/// Forward pass into caller-provided activation buffers (training hot path).
pub fn forward_into(model: &MlpModel, input: &[f64], acts: &mut Activations) -> Result<()> {
    if input.len() != model.layer_sizes[0] {
        return Err(CoreError::Shape(format!(
            "forward: input length {} does not match first layer size {}",
            input.len(),
            model.layer_sizes[0]
        )));
    }
    let n_layers = model.weights.len();
    for k in 0..n_layers {
        let in_dim = model.layer_sizes[k];
        let out_dim = model.layer_sizes[k + 1];
        let (prev, rest) = if k == 0 {
            (input, &mut acts.layers[..])
        } else {
            let (done, rest) = acts.layers.split_at_mut(k);
            (&done[k - 1][..], rest)
        };
        let out = &mut rest[0][..];
        debug_assert_eq!(out.len(), out_dim);
        let w = &model.weights[k];
        let b = &model.biases[k];
        let rectify = k != n_layers - 1;
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut sum = b[o];
            for (wi, xi) in row.iter().zip(prev.iter()) {
                sum += wi * xi;
            }
            out[o] = if rectify && sum < 0.0 { 0.0 } else { sum };
        }
    }
    Ok(())
}

/// Exact reverse-mode gradients of `dot(upstream, forward(model, input))`.
pub fn backward(model: &MlpModel, input: &[f64], upstream: &[f64]) -> Result<GradBundle> {
    let mut acts = Activations::for_model(model);
    forward_into(model, input, &mut acts)?;
    let mut grads = GradBundle::zeros_like(model);
    accumulate_backward(model, input, &acts, upstream, &mut grads)?;
    Ok(grads)
}

/// Backward pass accumulating into `grads` (`+=` semantics), given the
/// activations of a prior [`forward_into`] call on the same input.
pub fn accumulate_backward(
    model: &MlpModel,
    input: &[f64],
    acts: &Activations,
    upstream: &[f64],
    grads: &mut GradBundle,
) -> Result<()> {
    let n_layers = model.weights.len();
    let out_len = model.layer_sizes[n_layers];
    if upstream.len() != out_len {
        return Err(CoreError::Shape(format!(
            "backward: upstream length {} does not match output length {}",
            upstream.len(),
            out_len
        )));
    }
    if input.len() != model.layer_sizes[0] {
        return Err(CoreError::Shape(format!(
            "backward: input length {} does not match first layer size {}",
            input.len(),
            model.layer_sizes[0]
        )));
    }

    // delta = dL/d(pre-activation) of the current layer, walking backwards.
    let mut delta = upstream.to_vec();
    for k in (0..n_layers).rev() {
        let in_dim = model.layer_sizes[k];
        let out_dim = model.layer_sizes[k + 1];
        let prev: &[f64] = if k == 0 { input } else { &acts.layers[k - 1] };
        let w = &model.weights[k];

        // Hidden layers: gate the incoming gradient through the rectifier.
        // The post-activation value is zero exactly where the unit was off.
        if k != n_layers - 1 {
            let post = &acts.layers[k];
            for (d, p) in delta.iter_mut().zip(post.iter()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let gw = &mut grads.weights[k];
        let gb = &mut grads.biases[k];
        let mut prev_delta = vec![0.0; in_dim];
        for o in 0..out_dim {
            let dz = delta[o];
            gb[o] += dz;
            if dz == 0.0 {
                continue;
            }
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                grow[i] += dz * prev[i];
                prev_delta[i] += row[i] * dz;
            }
        }
        delta = prev_delta;
    }
    for (gi, di) in grads.input.iter_mut().zip(delta.iter()) {
        *gi += di;
    }
    Ok(())
}

impl MlpModel {
    /// Builds a model from explicit parameters, validating all shapes.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(CoreError::Config(format!(
                "invalid layer_sizes {layer_sizes:?}"
            )));
        }
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(CoreError::Shape(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for k in 0..n_layers {
            if weights[k].len() != layer_sizes[k] * layer_sizes[k + 1] {
                return Err(CoreError::Shape(format!(
                    "layer {k} weights have {} entries, expected {}",
                    weights[k].len(),
                    layer_sizes[k] * layer_sizes[k + 1]
                )));
            }
            if biases[k].len() != layer_sizes[k + 1] {
                return Err(CoreError::Shape(format!(
                    "layer {k} biases have {} entries, expected {}",
                    biases[k].len(),
                    layer_sizes[k + 1]
                )));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Applies `param += scale * grad` over all parameters (test utility and
    /// finite-difference probes).
    pub fn nudge(&mut self, grads: &GradBundle, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(grads.weights.iter()) {
            for (wi, gi) in w.iter_mut().zip(g.iter()) {
                *wi += scale * gi;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(grads.biases.iter()) {
            for (bi, gi) in b.iter_mut().zip(g.iter()) {
                *bi += scale * gi;
            }
        }
    }

    /// Mutable view of one flat parameter by global index, weights first then
    /// biases, both in layer order. Used by finite-difference oracles.
    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for w in &mut self.weights {
            if i < w.len() {
                return &mut w[i];
            }
            i -= w.len();
        }
        for b in &mut self.biases {
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Reads the flat parameter at `index` with the same ordering as
    /// [`Self::param_mut`].
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for w in &self.weights {
            if i < w.len() {
                return w[i];
            }
            i -= w.len();
        }
        for b in &self.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }
}

/// Per-dimension standardization statistics for network inputs.
///
/// Training runs on `(x - mean) / std`; afterwards the affine map is folded
/// exactly into the first layer, so saved models consume raw inputs.
#[derive(Debug, Clone)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Fits mean and (floored) standard deviation over sample rows.
    pub fn fit<'a, I>(samples: I, dim: usize) -> Self
    where
        I: Iterator<Item = &'a [f64]> + Clone,
    {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in samples.clone() {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in samples {
            for ((v, x), m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(1e-3)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            input
                .iter()
                .zip(self.mean.iter())
                .zip(self.std.iter())
                .map(|((x, m), s)| (x - m) / s),
        );
    }
}

/// Folds `(x - mean) / std` into the first layer in place:
/// `W' = W / std` (per input column), `b' = b - W' mean`.
pub fn fold_input_norm(model: &mut MlpModel, norm: &InputNorm) -> Result<()> {
    let in_dim = model.layer_sizes[0];
    if norm.mean.len() != in_dim || norm.std.len() != in_dim {
        return Err(CoreError::Shape(format!(
            "normalization has {} dims, model input has {in_dim}",
            norm.mean.len()
        )));
    }
    let out_dim = model.layer_sizes[1];
    let w = &mut model.weights[0];
    let b = &mut model.biases[0];
    for o in 0..out_dim {
        let row = &mut w[o * in_dim..(o + 1) * in_dim];
        let mut shift = 0.0;
        for ((wi, s), m) in row.iter_mut().zip(&norm.std).zip(&norm.mean) {
            *wi /= s;
            shift += *wi * m;
        }
        b[o] -= shift;
    }
    Ok(())
}

impl GradBundle {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; model.layer_sizes[0]],
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
        self.input.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for wi in w.iter_mut() {
                *wi *= factor;
            }
        }
        for b in &mut self.biases {
            for bi in b.iter_mut() {
                *bi *= factor;
            }
        }
        for gi in &mut self.input {
            *gi *= factor;
        }
    }

    /// Flat parameter gradient with the ordering of [`MlpModel::param_mut`].
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for w in &self.weights {
            if i < w.len() {
                return w[i];
            }
            i -= w.len();
        }
        for b in &self.biases {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index {index} out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
            && self.biases.iter().flatten().all(|v| v.is_finite())
            && self.input.iter().all(|v| v.is_finite())
    }
}

// --- serialization ------------------------------------------------------
//
// On disk a model is a single JSON document with nested row-major weight
// matrices. JSON floats use the shortest representation that round-trips,
// so save/load is exact at double precision.

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = ModelDoc {
            layer_sizes: self.layer_sizes.clone(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let in_dim = self.layer_sizes[k];
                    w.chunks(in_dim).map(<[f64]>::to_vec).collect()
                })
                .collect(),
            biases: self.biases.clone(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(deserializer)?;
        let weights = doc
            .weights
            .into_iter()
            .map(|rows| rows.into_iter().flatten().collect())
            .collect();
        MlpModel::from_parts(doc.layer_sizes, weights, doc.biases)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_model() -> MlpModel {
        init_model(&[4, 8, 3], 99).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[2, 1], 7).unwrap();
        let b = init_model(&[2, 1], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_biases_are_zero() {
        let m = init_model(&[5, 7, 2], 3).unwrap();
        assert!(m.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_weight_shapes() {
        let m = fixed_model();
        assert_eq!(m.weights[0].len(), 8 * 4);
        assert_eq!(m.weights[1].len(), 3 * 8);
        assert_eq!(m.biases[0].len(), 8);
        assert_eq!(m.biases[1].len(), 3);
    }

    #[test]
    fn init_rejects_degenerate_sizes() {
        assert!(matches!(init_model(&[4], 0), Err(CoreError::Config(_))));
        assert!(matches!(init_model(&[], 0), Err(CoreError::Config(_))));
        assert!(matches!(init_model(&[4, 0, 2], 0), Err(CoreError::Config(_))));
    }

    #[test]
    fn forward_zero_model_is_zero() {
        let m = MlpModel::from_parts(
            vec![3, 2],
            vec![vec![0.0; 6]],
            vec![vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(forward(&m, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_single_layer_is_affine() {
        // W = [[1,2],[3,4]], b = [0.5, -0.5], x = [1, -1]
        let m = MlpModel::from_parts(
            vec![2, 2],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![vec![0.5, -0.5]],
        )
        .unwrap();
        let y = forward(&m, &[1.0, -1.0]).unwrap();
        assert_eq!(y, vec![1.0 - 2.0 + 0.5, 3.0 - 4.0 - 0.5]);
    }

    /// Straight-line scalar re-computation, independent of the forward pass.
    fn forward_oracle(m: &MlpModel, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = m.weights.len();
        for k in 0..n {
            let in_dim = m.layer_sizes[k];
            let out_dim = m.layer_sizes[k + 1];
            let mut y = Vec::with_capacity(out_dim);
            for o in 0..out_dim {
                let mut s = m.biases[k][o];
                for (i, xi) in x.iter().enumerate().take(in_dim) {
                    s += m.weights[k][o * in_dim + i] * xi;
                }
                if k != n - 1 && s < 0.0 {
                    s = 0.0;
                }
                y.push(s);
            }
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let m = fixed_model();
        let input = [0.3, -1.2, 0.7, 2.1];
        let got = forward(&m, &input).unwrap();
        let want = forward_oracle(&m, &input);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-15, "got {g}, want {w}");
        }
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let m = fixed_model();
        assert!(matches!(forward(&m, &[1.0]), Err(CoreError::Shape(_))));
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let m = fixed_model();
        let g = backward(&m, &[0.5, 0.5, -0.5, 1.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.weights.iter().flatten().all(|&v| v == 0.0));
        assert!(g.biases.iter().flatten().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_linear_layer_is_outer_product() {
        let m = MlpModel::from_parts(
            vec![3, 2],
            vec![vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        let x = [1.0, -2.0, 3.0];
        let up = [2.0, -1.0];
        let g = backward(&m, &x, &up).unwrap();
        // dW[o][i] = upstream[o] * x[i]
        let want = [2.0, -4.0, 6.0, -1.0, 2.0, -3.0];
        for (got, w) in g.weights[0].iter().zip(want.iter()) {
            assert!((got - w).abs() < 1e-15);
        }
        assert_eq!(g.biases[0], vec![2.0, -1.0]);
    }

    #[test]
    fn backward_matches_central_differences() {
        let m = init_model(&[3, 6, 5, 2], 1234).unwrap();
        let input = [0.4, -0.9, 1.3];
        let upstream = [0.8, -1.1];
        let grads = backward(&m, &input, &upstream).unwrap();
        let scalar = |m: &MlpModel, x: &[f64]| -> f64 {
            forward(m, x)
                .unwrap()
                .iter()
                .zip(upstream.iter())
                .map(|(y, u)| y * u)
                .sum()
        };
        let h = 1e-5;
        for p in 0..m.param_count() {
            let mut plus = m.clone();
            *plus.param_mut(p) += h;
            let mut minus = m.clone();
            *minus.param_mut(p) -= h;
            let numeric = (scalar(&plus, &input) - scalar(&minus, &input)) / (2.0 * h);
            let analytic = grads.param(p);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "param {p}: analytic {analytic}, numeric {numeric}"
            );
        }
        for i in 0..input.len() {
            let mut xp = input;
            xp[i] += h;
            let mut xm = input;
            xm[i] -= h;
            let numeric = (scalar(&m, &xp) - scalar(&m, &xm)) / (2.0 * h);
            let analytic = grads.input[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!((analytic - numeric).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn folded_normalization_matches_normalized_forward() {
        let model = init_model(&[4, 6, 2], 404).unwrap();
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, -2.0, 0.5, 3.0],
            vec![0.5, -1.0, 0.25, 2.0],
            vec![1.5, -3.0, 0.75, 4.0],
        ];
        let norm = InputNorm::fit(rows.iter().map(Vec::as_slice), 4);
        let mut folded = model.clone();
        fold_input_norm(&mut folded, &norm).unwrap();
        let mut buf = Vec::new();
        for raw in &rows {
            norm.apply(raw, &mut buf);
            let a = forward(&model, &buf).unwrap();
            let b = forward(&folded, raw).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn serialization_roundtrip_is_exact() {
        let m = init_model(&[4, 3, 2], 2024).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn serialized_weights_are_nested_row_major() {
        let m = MlpModel::from_parts(
            vec![2, 2],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["weights"][0][0], serde_json::json!([1.0, 2.0]));
        assert_eq!(v["weights"][0][1], serde_json::json!([3.0, 4.0]));
    }
}
