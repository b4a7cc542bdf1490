//! Recurrent networks mapping a log-mel spectrogram to per-bin outputs: the
//! embedding network (one K-vector per time-mel bin) and the mask-inference
//! baseline (one sigmoid mask per class and bin).

pub mod checkpoint;
pub mod layers;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{Activation, BlstmCache, Dense, Param, RecurrentStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNetConfig {
    pub num_recurrent_layers: usize,
    pub hidden_units_per_direction: usize,
    pub embedding_dim: usize,
    pub mel_bins: usize,
    pub unit_normalize: bool,
}

impl Default for EmbeddingNetConfig {
    fn default() -> Self {
        Self {
            num_recurrent_layers: 4,
            hidden_units_per_direction: 300,
            embedding_dim: 15,
            mel_bins: 300,
            unit_normalize: false,
        }
    }
}

impl EmbeddingNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_recurrent_layers == 0
            || self.hidden_units_per_direction == 0
            || self.embedding_dim == 0
            || self.mel_bins == 0
        {
            return Err(Error::Config("embedding network sizes must be >= 1".into()));
        }
        if self.embedding_dim > 2 * self.hidden_units_per_direction {
            return Err(Error::Config(format!(
                "embedding dim {} exceeds recurrent output width {}",
                self.embedding_dim,
                2 * self.hidden_units_per_direction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub num_recurrent_layers: usize,
    pub hidden_units_per_direction: usize,
    pub mel_bins: usize,
    pub num_classes: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            num_recurrent_layers: 4,
            hidden_units_per_direction: 300,
            mel_bins: 300,
            num_classes: 4,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_recurrent_layers == 0 || self.hidden_units_per_direction == 0 || self.mel_bins == 0 {
            return Err(Error::Config("baseline network sizes must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("baseline needs at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Per-bin embeddings `V`, shaped `(T, M, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    values: Array3<f64>,
}

impl Embeddings {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embeddings contain non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn num_frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn mel_bins(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn num_bins(&self) -> usize {
        self.num_frames() * self.mel_bins()
    }

    /// Row `t * M + m` holds the embedding of frame `t`, mel bin `m`.
    pub fn flattened(&self) -> Array2<f64> {
        let (t, m, k) = self.values.dim();
        self.values
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t * m, k))
            .expect("contiguous embeddings")
    }

    pub fn from_flattened(flat: Array2<f64>, frames: usize, mel_bins: usize) -> Result<Self> {
        let k = flat.ncols();
        let values = flat
            .into_shape_with_order((frames, mel_bins, k))
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(values)
    }

    /// Concatenates along time.
    pub fn concat(parts: &[Embeddings]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|e| e.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(values)
    }
}

/// Recurrent stack followed by a dense head emitting `width` values per mel bin.
#[derive(Debug, Clone)]
pub struct BinwiseNet {
    pub stack: RecurrentStack,
    pub head: Dense,
    mel_bins: usize,
    width: usize,
}

pub struct BinwiseCache {
    stack: Vec<BlstmCache>,
    features: Array2<f64>,
    output: Array2<f64>,
    steps: usize,
    batch: usize,
}

impl BinwiseNet {
    pub fn new(
        mel_bins: usize,
        hidden: usize,
        layers: usize,
        width: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = RecurrentStack::new(mel_bins, hidden, layers, &mut rng);
        let head = Dense::new("head", stack.output_dim(), mel_bins * width, activation, &mut rng);
        Self {
            stack,
            head,
            mel_bins,
            width,
        }
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Runs a batch of `M x T` inputs that share `T`. Returns one `(T, M, width)`
    /// tensor per input.
    pub fn forward(&self, inputs: &[&Array2<f64>]) -> Result<(Vec<Array3<f64>>, BinwiseCache)> {
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let steps = inputs[0].ncols();
        for x in inputs {
            if x.nrows() != self.mel_bins {
                return Err(Error::shape(format!(
                    "input has {} mel bins, network expects {}",
                    x.nrows(),
                    self.mel_bins
                )));
            }
            if x.ncols() != steps {
                return Err(Error::shape("batch inputs must share the frame count"));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("network input contains non-finite values"));
            }
        }
        let mut seq = Array3::zeros((steps, batch, self.mel_bins));
        for (b, x) in inputs.iter().enumerate() {
            seq.index_axis_mut(Axis(1), b).assign(&x.t());
        }
        let (hidden, stack_caches) = self.stack.run(seq);
        let features = hidden
            .into_shape_with_order((steps * batch, self.stack.output_dim()))
            .expect("contiguous hidden");
        let output = self.head.forward(&features);
        let outs = (0..batch)
            .map(|b| {
                let mut o = Array3::zeros((steps, self.mel_bins, self.width));
                for t in 0..steps {
                    let row = output.row(t * batch + b);
                    let row = row
                        .into_shape_with_order((self.mel_bins, self.width))
                        .expect("row reshape");
                    o.index_axis_mut(Axis(0), t).assign(&row);
                }
                o
            })
            .collect();
        Ok((
            outs,
            BinwiseCache {
                stack: stack_caches,
                features,
                output,
                steps,
                batch,
            },
        ))
    }

    /// Accumulates parameter gradients given output gradients `(T, M, width)` per input.
    pub fn backward(&mut self, cache: &BinwiseCache, grads: &[Array3<f64>]) {
        let (steps, batch) = (cache.steps, cache.batch);
        let mut dout = Array2::zeros(cache.output.dim());
        for (b, g) in grads.iter().enumerate() {
            for t in 0..steps {
                let src = g.index_axis(Axis(0), t);
                let mut row = dout.row_mut(t * batch + b);
                for (dst, v) in row.iter_mut().zip(src.iter()) {
                    *dst = *v;
                }
            }
        }
        let dfeat = self.head.backward(&cache.features, &cache.output, &dout);
        let dhidden = dfeat
            .into_shape_with_order((steps, batch, self.stack.output_dim()))
            .expect("grad reshape");
        self.stack.backprop(&cache.stack, dhidden);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.stack.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.stack.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Embedding network: BLSTM stack, dense tanh head, optional unit normalization.
#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    config: EmbeddingNetConfig,
    pub net: BinwiseNet,
}

pub struct EmbedCache {
    inner: BinwiseCache,
    raw: Vec<Array3<f64>>,
}

impl EmbeddingNet {
    pub fn new(config: EmbeddingNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = BinwiseNet::new(
            config.mel_bins,
            config.hidden_units_per_direction,
            config.num_recurrent_layers,
            config.embedding_dim,
            Activation::Tanh,
            seed,
        );
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &EmbeddingNetConfig {
        &self.config
    }

    pub fn embed(&self, logmel: &Array2<f64>) -> Result<Embeddings> {
        let (mut out, _) = self.forward_batch(&[logmel])?;
        Ok(out.remove(0))
    }

    pub fn forward_batch(&self, inputs: &[&Array2<f64>]) -> Result<(Vec<Embeddings>, EmbedCache)> {
        let (raw, inner) = self.net.forward(inputs)?;
        let embeddings = raw
            .iter()
            .map(|r| {
                let mut v = r.clone();
                if self.config.unit_normalize {
                    for mut lane in v.lanes_mut(Axis(2)) {
                        let norm = lane.dot(&lane).sqrt().max(1e-12);
                        lane /= norm;
                    }
                }
                Embeddings::new(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((embeddings, EmbedCache { inner, raw }))
    }

    pub fn backward_batch(&mut self, cache: &EmbedCache, grads: &[Array3<f64>]) {
        let grads: Vec<Array3<f64>> = if self.config.unit_normalize {
            grads
                .iter()
                .zip(&cache.raw)
                .map(|(g, raw)| {
                    let mut out = g.clone();
                    for (mut dl, rl) in out.lanes_mut(Axis(2)).into_iter().zip(raw.lanes(Axis(2))) {
                        let norm = rl.dot(&rl).sqrt().max(1e-12);
                        let unit = &rl / norm;
                        let proj = unit.dot(&dl);
                        let d = (&dl - &(&unit * proj)) / norm;
                        dl.assign(&d);
                    }
                    out
                })
                .collect()
        } else {
            grads.to_vec()
        };
        self.net.backward(&cache.inner, &grads);
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

/// Mask-inference baseline: the same stack with one sigmoid output per class and bin.
#[derive(Debug, Clone)]
pub struct BaselineNet {
    config: BaselineConfig,
    pub net: BinwiseNet,
}

impl BaselineNet {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = BinwiseNet::new(
            config.mel_bins,
            config.hidden_units_per_direction,
            config.num_recurrent_layers,
            config.num_classes,
            Activation::Sigmoid,
            seed,
        );
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    /// Per-class mel-domain masks `(T, M, C)` in `(0, 1)`; not constrained to sum to one.
    pub fn baseline_forward(&self, logmel: &Array2<f64>) -> Result<Array3<f64>> {
        let (mut out, _) = self.net.forward(&[logmel])?;
        Ok(out.remove(0))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}
