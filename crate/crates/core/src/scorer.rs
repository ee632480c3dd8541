//! Per-point foreground scorer: a small ReLU MLP with a sigmoid output, the
//! multi-level cross-entropy objective, hand-written gradients, and a
//! plain gradient-descent trainer.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SegmentationLabels};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::sampling::ForegroundScores;
use crate::scalar::Scalar;

/// Fully connected layer computing `W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension {
                what: "layer bias",
                expected: weights.rows(),
                found: bias.len(),
            });
        }
        if !weights.all_finite() || !bias.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidInput(
                "layer parameters must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, &b)| {
            self.weights
                .row(o)
                .iter()
                .zip(input)
                .fold(b, |acc, (&w, &x)| acc + w * x)
        }));
    }
}

/// Feed-forward stack; ReLU between layers, linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let s = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    s.max(T::min_positive_value()).min(hi)
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "an MLP needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::Dimension {
                    what: "layer composition",
                    expected: pair[0].out_width(),
                    found: pair[1].in_width(),
                });
            }
        }
        Ok(Self { layers })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer widths must list at least input and output, all positive: {widths:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        Self::new(
            widths
                .windows(2)
                .map(|w| DenseLayer {
                    weights: Matrix::zeros(w[1], w[0]),
                    bias: vec![T::zero(); w[1]],
                })
                .collect(),
        )
    }

    /// Parameters drawn uniformly from `+-1/sqrt(fan_in)` with a seeded stream.
    pub fn init_uniform(widths: &[usize], seed: u64) -> Result<Self> {
        Self::check_widths(widths)?;
        let mut rng = SplitMix64::new(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || T::lit(rng.uniform(-bound, bound));
                let data = (0..w[0] * w[1]).map(|_| draw()).collect();
                let bias = (0..w[1]).map(|_| draw()).collect();
                DenseLayer {
                    weights: Matrix::from_vec(w[1], w[0], data).expect("sized above"),
                    bias,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// `[input, hidden..., output]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(DenseLayer::out_width))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").out_width()
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    fn check_input(&self, features: &Matrix<T>) -> Result<()> {
        if features.cols() != self.input_width() {
            return Err(Error::Dimension {
                what: "feature width",
                expected: self.input_width(),
                found: features.cols(),
            });
        }
        Ok(())
    }

    /// Output of the last (linear) layer for one input row.
    pub fn forward_row(&self, input: &[T]) -> Vec<T> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l != last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Row-wise linear outputs (logits for a scorer).
    pub fn forward_raw(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(features)?;
        let out_w = self.output_width();
        let mut data = Vec::with_capacity(features.rows() * out_w);
        for row in features.iter_rows() {
            data.extend(self.forward_row(row));
        }
        Matrix::from_vec(features.rows(), out_w, data)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.all_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn apply_update(&mut self, grads: &MlpGradients<T>, step: T) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            for (w, &g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w = *w - step * g;
            }
            for (b, &g) in layer.bias.iter_mut().zip(gb) {
                *b = *b - step * g;
            }
        }
    }
}

/// Foreground scores `sigmoid(M(f_i))` for every feature row.
pub fn mlp_forward<T: Scalar>(mlp: &Mlp<T>, features: &Matrix<T>) -> Result<ForegroundScores<T>> {
    if mlp.output_width() != 1 {
        return Err(Error::Dimension {
            what: "scorer output width",
            expected: 1,
            found: mlp.output_width(),
        });
    }
    let logits = mlp.forward_raw(features)?;
    ForegroundScores::new(logits.as_slice().iter().map(|&z| sigmoid(z)).collect())
}

fn clamp_eps<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon())
}

/// `-[w_pos * y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
fn cross_entropy<T: Scalar>(p: T, y: T, positive_weight: T) -> T {
    let eps = clamp_eps::<T>();
    let pc = p.max(eps).min(T::one() - eps);
    -(positive_weight * y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
}

/// `d CE / d logit` consistent with the clamped loss.
fn cross_entropy_logit_grad<T: Scalar>(p: T, y: T, positive_weight: T) -> T {
    let eps = clamp_eps::<T>();
    let in_range = p >= eps && p <= T::one() - eps;
    if !in_range {
        return T::zero();
    }
    positive_weight * y * (p - T::one()) + (T::one() - y) * p
}

fn mean_ce<T: Scalar>(scores: &[T], targets: &[T], positive_weight: T) -> T {
    if scores.is_empty() {
        return T::zero();
    }
    let total = scores.iter().zip(targets).fold(T::zero(), |acc, (&p, &y)| {
        acc + cross_entropy(p, y, positive_weight)
    });
    total / T::lit(scores.len() as f64)
}

/// Multi-level segmentation loss `sum_k lambda_k / N_k * sum_i CE(p_i, y_i)`.
pub fn seg_loss<T: Scalar>(
    scores_per_level: &[ForegroundScores<T>],
    labels_per_level: &[SegmentationLabels],
    level_weights: &[T],
) -> Result<T> {
    if scores_per_level.len() != labels_per_level.len() {
        return Err(Error::Dimension {
            what: "label levels",
            expected: scores_per_level.len(),
            found: labels_per_level.len(),
        });
    }
    if scores_per_level.len() != level_weights.len() {
        return Err(Error::Dimension {
            what: "level weights",
            expected: scores_per_level.len(),
            found: level_weights.len(),
        });
    }
    let mut total = T::zero();
    for ((scores, labels), &lambda) in scores_per_level
        .iter()
        .zip(labels_per_level)
        .zip(level_weights)
    {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: scores.len(),
                found: labels.len(),
            });
        }
        total = total + lambda * mean_ce(scores.as_slice(), &labels.targets::<T>(), T::one());
    }
    Ok(total)
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> MlpGradients<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_width(), l.in_width()))
                .collect(),
            biases: mlp
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.out_width()])
                .collect(),
        }
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = *x + y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for m in &mut self.weights {
            m.as_mut_slice().iter_mut().for_each(|x| *x = *x * factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    /// Flattened parameters in layer order: weights row-major, then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == T::zero())
    }
}

fn check_scorer_shapes<T: Scalar>(
    mlp: &Mlp<T>,
    features: &Matrix<T>,
    labels: &SegmentationLabels,
) -> Result<()> {
    mlp.check_input(features)?;
    if mlp.output_width() != 1 {
        return Err(Error::Dimension {
            what: "scorer output width",
            expected: 1,
            found: mlp.output_width(),
        });
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension {
            what: "labels",
            expected: features.rows(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Single-level loss `lambda / N * sum_i CE_w(p_i, y_i)` and its exact gradient.
pub fn loss_and_gradients<T: Scalar>(
    mlp: &Mlp<T>,
    features: &Matrix<T>,
    labels: &SegmentationLabels,
    level_weight: T,
    positive_class_weight: T,
) -> Result<(T, MlpGradients<T>)> {
    check_scorer_shapes(mlp, features, labels)?;
    let n = features.rows();
    let mut grads = MlpGradients::zeros_like(mlp);
    if n == 0 {
        return Ok((T::zero(), grads));
    }
    let scale = level_weight / T::lit(n as f64);
    let nl = mlp.layers.len();
    let mut loss = T::zero();
    // activations[l] is the input to layer l; pre[l] its linear output.
    let mut activations: Vec<Vec<T>> = vec![Vec::new(); nl + 1];
    let mut pre: Vec<Vec<T>> = vec![Vec::new(); nl];
    let mut delta = Vec::new();
    let mut prev_delta = Vec::new();

    for (i, row) in features.iter_rows().enumerate() {
        activations[0].clear();
        activations[0].extend_from_slice(row);
        for l in 0..nl {
            let (lo, hi) = activations.split_at_mut(l + 1);
            mlp.layers[l].apply(&lo[l], &mut pre[l]);
            hi[0].clear();
            if l + 1 == nl {
                hi[0].extend_from_slice(&pre[l]);
            } else {
                hi[0].extend(pre[l].iter().map(|&v| relu(v)));
            }
        }
        let p = sigmoid(pre[nl - 1][0]);
        let y = if labels.get(i) { T::one() } else { T::zero() };
        loss = loss + cross_entropy(p, y, positive_class_weight);

        delta.clear();
        delta.push(scale * cross_entropy_logit_grad(p, y, positive_class_weight));
        for l in (0..nl).rev() {
            let input = &activations[l];
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (g, &a) in gw.row_mut(o).iter_mut().zip(input) {
                    *g = *g + d * a;
                }
                grads.biases[l][o] = grads.biases[l][o] + d;
            }
            if l > 0 {
                let w = &mlp.layers[l].weights;
                prev_delta.clear();
                prev_delta.extend((0..w.cols()).map(|c| {
                    if pre[l - 1][c] > T::zero() {
                        delta
                            .iter()
                            .enumerate()
                            .fold(T::zero(), |acc, (o, &d)| acc + d * w[(o, c)])
                    } else {
                        T::zero()
                    }
                }));
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }
    }
    Ok((scale * loss, grads))
}

/// Exact gradients of the single-level segmentation loss.
pub fn mlp_backward<T: Scalar>(
    mlp: &Mlp<T>,
    features: &Matrix<T>,
    labels: &SegmentationLabels,
    level_weight: T,
) -> Result<MlpGradients<T>> {
    loss_and_gradients(mlp, features, labels, level_weight, T::one()).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainConfig<T> {
    pub learning_rate: T,
    pub epochs: usize,
    /// Loss weight of each level the scorer is supervised at.
    pub level_weights: Vec<T>,
    pub rng_seed: u64,
    pub positive_class_weight: T,
}

impl<T: Scalar> Default for SegTrainConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(10.0),
            epochs: 200,
            level_weights: vec![T::lit(0.01), T::lit(0.1)],
            rng_seed: 0,
            positive_class_weight: T::one(),
        }
    }
}

impl<T: Scalar> SegTrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= T::zero()) {
            return Err(Error::Config(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.level_weights.is_empty()
            || self
                .level_weights
                .iter()
                .any(|&w| !w.is_finite() || w < T::zero())
        {
            return Err(Error::Config(
                "level weights must be non-empty, finite and non-negative".into(),
            ));
        }
        if !(self.positive_class_weight > T::zero() && self.positive_class_weight.is_finite()) {
            return Err(Error::Config(
                "positive class weight must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Seeded starting network for `train_segmenter`.
    pub fn initial_mlp(&self, widths: &[usize]) -> Result<Mlp<T>> {
        Mlp::init_uniform(widths, self.rng_seed)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub mlp: Mlp<T>,
    /// Objective value at the start of every epoch.
    pub loss_history: Vec<T>,
}

/// Full-batch gradient descent on the segmentation objective.
///
/// The scorer is supervised at every configured level with the same points,
/// so each scene contributes `sum_k lambda_k * mean CE`; scenes are averaged.
pub fn train_segmenter<T: Scalar>(
    scenes: &[(PointCloud<T>, SegmentationLabels)],
    mlp: Mlp<T>,
    config: &SegTrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidInput(
            "training needs at least one scene".into(),
        ));
    }
    let mut inputs = Vec::with_capacity(scenes.len());
    for (cloud, labels) in scenes {
        let f = cloud.features().ok_or(Error::MissingFeatures)?;
        check_scorer_shapes(&mlp, f, labels)?;
        inputs.push((f, labels));
    }
    let level_sum = config.level_weights.iter().fold(T::zero(), |a, &b| a + b);
    let scene_weight = level_sum / T::lit(scenes.len() as f64);

    let mut mlp = mlp;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = T::zero();
        let mut grads = MlpGradients::zeros_like(&mlp);
        for (features, labels) in &inputs {
            let (loss, g) = loss_and_gradients(
                &mlp,
                features,
                labels,
                T::one(),
                config.positive_class_weight,
            )?;
            total = total + loss;
            grads.accumulate(&g);
        }
        grads.scale(scene_weight);
        history.push(total * scene_weight);
        if config.learning_rate > T::zero() {
            mlp.apply_update(&grads, config.learning_rate);
        }
        if !mlp.all_finite() {
            return Err(Error::Invariant(
                "training diverged to non-finite parameters".into(),
            ));
        }
    }
    Ok(TrainOutcome {
        mlp,
        loss_history: history,
    })
}

/// Magic bytes of the binary model format.
pub const MODEL_MAGIC: &[u8; 8] = b"SASAMLP\x01";

impl<T: Scalar> Mlp<T> {
    /// Binary layout, all little-endian:
    /// magic (8 bytes), `u32` layer count `L`, `L + 1` `u32` widths, then per
    /// layer the `out x in` weights row-major and the `out` biases as `f64`.
    /// Hidden layers use ReLU and the output a sigmoid.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for width in self.widths() {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for &v in layer.weights.as_slice().iter().chain(&layer.bias) {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, path: &Path) -> Result<Self> {
        let fmt = |m: &str| Error::format(path, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| fmt("missing model header"))?;
        if &magic != MODEL_MAGIC {
            return Err(fmt("bad magic, not a scorer model file"));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        let layers = read_u32(&mut r)? as usize;
        if layers == 0 || layers > 64 {
            return Err(fmt("implausible layer count"));
        }
        let widths = (0..=layers)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(layers);
        for w in widths.windows(2) {
            let count = w[0]
                .checked_mul(w[1])
                .and_then(|c| c.checked_add(w[1]))
                .filter(|&c| c <= 1 << 28)
                .ok_or_else(|| fmt("implausible layer size"))?;
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)
                .map_err(|_| fmt("truncated parameters"))?;
            let vals: Vec<T> = buf
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            let (wv, bv) = vals.split_at(w[0] * w[1]);
            out.push(DenseLayer::new(
                Matrix::from_vec(w[1], w[0], wv.to_vec())?,
                bv.to_vec(),
            )?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(fmt("trailing bytes after parameters"));
        }
        Mlp::new(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file), path)
    }
}

/// Convenience used by callers scoring whole clouds.
pub fn score_cloud<T: Scalar>(mlp: &Mlp<T>, cloud: &PointCloud<T>) -> Result<ForegroundScores<T>> {
    let f = cloud.features().ok_or(Error::MissingFeatures)?;
    mlp_forward(mlp, f)
}
