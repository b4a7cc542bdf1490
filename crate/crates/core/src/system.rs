//! A complete separation model: frontend settings, class list and either the
//! embedding network with its class-conditional mixture or the mask baseline.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classgmm::{
    generate_params, posterior_mask_backward, posterior_mask_flat, AuxCache, AuxNet, CovarianceType, GaussianParams,
    ParamGrads,
};
use crate::error::{Error, Result};
use crate::features::{Frontend, FrontendConfig};
use crate::model::checkpoint::Checkpoint;
use crate::model::layers::Param;
use crate::model::{BaselineConfig, BaselineNet, BinwiseCache, EmbedCache, EmbeddingNet, EmbeddingNetConfig, Embeddings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_recurrent_layers: usize,
    pub hidden_units_per_direction: usize,
    pub embedding_dim: usize,
    pub unit_normalize: bool,
}

impl NetworkConfig {
    pub fn full_scale() -> Self {
        Self {
            num_recurrent_layers: 4,
            hidden_units_per_direction: 300,
            embedding_dim: 15,
            unit_normalize: false,
        }
    }

    pub fn desk_scale() -> Self {
        Self {
            num_recurrent_layers: 2,
            hidden_units_per_direction: 64,
            embedding_dim: 8,
            unit_normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Gmm { covariance: CovarianceType },
    Baseline,
}

impl ModelKind {
    /// Row label in separation reports.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gmm { covariance } => covariance.report_label(),
            ModelKind::Baseline => "BLSTM",
        }
    }

    pub fn is_baseline(self) -> bool {
        self == ModelKind::Baseline
    }
}

/// Everything needed to rebuild a model before loading weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub frontend: FrontendConfig,
    pub network: NetworkConfig,
    pub seed: u64,
    /// Training excerpt length; inference chunks long inputs to this length.
    pub excerpt_seconds: f64,
}

#[derive(Debug, Clone)]
pub enum Net {
    Gmm {
        embedder: EmbeddingNet,
        aux: AuxNet,
        covariance: CovarianceType,
    },
    Baseline(BaselineNet),
}

/// Forward results for a batch of clips.
pub struct BatchOutput {
    /// Mel-domain masks `(T, M, C)`.
    pub masks: Vec<Array3<f64>>,
    /// Flattened embeddings `(T*M, K)`, embedding models only.
    pub embeddings: Option<Vec<Array2<f64>>>,
    pub params: Option<GaussianParams>,
}

pub enum BatchCache {
    Gmm {
        embed: EmbedCache,
        aux: AuxCache,
        flats: Vec<Array2<f64>>,
        posteriors: Vec<Array2<f64>>,
        params: GaussianParams,
        frames: usize,
    },
    Baseline(BinwiseCache),
}

/// Inference output for one clip.
pub struct Inference {
    pub masks: Array3<f64>,
    pub embeddings: Option<Embeddings>,
}

#[derive(Debug, Clone)]
pub struct SeparationModel {
    spec: ModelSpec,
    frontend: Frontend,
    net: Net,
}

impl SeparationModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let frontend = Frontend::new(spec.frontend.clone())?;
        let c = spec.classes.len();
        crate::classgmm::class_labels(&spec.classes)?;
        if !(spec.excerpt_seconds > 0.0) {
            return Err(Error::Config("excerpt length must be positive".into()));
        }
        let mel_bins = spec.frontend.mel_bins;
        let n = &spec.network;
        let net = match spec.kind {
            ModelKind::Gmm { covariance } => {
                let embedder = EmbeddingNet::new(
                    EmbeddingNetConfig {
                        num_recurrent_layers: n.num_recurrent_layers,
                        hidden_units_per_direction: n.hidden_units_per_direction,
                        embedding_dim: n.embedding_dim,
                        mel_bins,
                        unit_normalize: n.unit_normalize,
                    },
                    spec.seed,
                )?;
                let aux = AuxNet::new(c, n.embedding_dim, covariance, spec.seed.wrapping_add(1))?;
                Net::Gmm {
                    embedder,
                    aux,
                    covariance,
                }
            }
            ModelKind::Baseline => Net::Baseline(BaselineNet::new(
                BaselineConfig {
                    num_recurrent_layers: n.num_recurrent_layers,
                    hidden_units_per_direction: n.hidden_units_per_direction,
                    mel_bins,
                    num_classes: c,
                },
                spec.seed,
            )?),
        };
        Ok(Self { spec, frontend, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    pub fn classes(&self) -> &[String] {
        &self.spec.classes
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    /// Current class-conditional mixture (embedding models only).
    pub fn gaussian_params(&self) -> Option<GaussianParams> {
        match &self.net {
            Net::Gmm { aux, covariance, .. } => generate_params(aux, *covariance).ok().map(|(p, _)| p),
            Net::Baseline(_) => None,
        }
    }

    pub fn embedder(&self) -> Option<&EmbeddingNet> {
        match &self.net {
            Net::Gmm { embedder, .. } => Some(embedder),
            Net::Baseline(_) => None,
        }
    }

    pub fn forward_batch(&self, inputs: &[&Array2<f64>]) -> Result<(BatchOutput, BatchCache)> {
        match &self.net {
            Net::Gmm { embedder, aux, covariance } => {
                let (params, aux_cache) = generate_params(aux, *covariance)?;
                let (embs, embed) = embedder.forward_batch(inputs)?;
                let frames = embs[0].num_frames();
                let mel = embs[0].mel_bins();
                let c = params.num_classes();
                let mut flats = Vec::with_capacity(embs.len());
                let mut posteriors = Vec::with_capacity(embs.len());
                let mut masks = Vec::with_capacity(embs.len());
                for e in &embs {
                    let flat = e.flattened();
                    let post = posterior_mask_flat(&flat, &params)?;
                    masks.push(
                        post.clone()
                            .into_shape_with_order((frames, mel, c))
                            .map_err(|e| Error::shape(e.to_string()))?,
                    );
                    flats.push(flat);
                    posteriors.push(post);
                }
                Ok((
                    BatchOutput {
                        masks,
                        embeddings: Some(flats.clone()),
                        params: Some(params.clone()),
                    },
                    BatchCache::Gmm {
                        embed,
                        aux: aux_cache,
                        flats,
                        posteriors,
                        params,
                        frames,
                    },
                ))
            }
            Net::Baseline(net) => {
                let (masks, cache) = net.net.forward(inputs)?;
                Ok((
                    BatchOutput {
                        masks,
                        embeddings: None,
                        params: None,
                    },
                    BatchCache::Baseline(cache),
                ))
            }
        }
    }

    /// Accumulates parameter gradients from mask gradients `(T, M, C)` and,
    /// for embedding models, direct embedding gradients `(T*M, K)`.
    pub fn backward_batch(
        &mut self,
        cache: &BatchCache,
        d_masks: &[Array3<f64>],
        d_embeddings: Option<&[Array2<f64>]>,
    ) -> Result<()> {
        match (&mut self.net, cache) {
            (
                Net::Gmm { embedder, aux, .. },
                BatchCache::Gmm {
                    embed,
                    aux: aux_cache,
                    flats,
                    posteriors,
                    params,
                    frames,
                },
            ) => {
                let (c, k) = (params.num_classes(), params.dim());
                let mut pgrads = ParamGrads::zeros(params.kind(), c, k);
                let mut d_emb = Vec::with_capacity(flats.len());
                for (b, (flat, post)) in flats.iter().zip(posteriors).enumerate() {
                    let n = flat.nrows();
                    let dm = d_masks[b]
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((n, c))
                        .map_err(|e| Error::shape(e.to_string()))?;
                    let g = posterior_mask_backward(flat, params, post, &dm)?;
                    pgrads.accumulate(&g.params);
                    let mut dv = g.embeddings;
                    if let Some(extra) = d_embeddings {
                        dv += &extra[b];
                    }
                    d_emb.push(
                        dv.into_shape_with_order((*frames, n / frames, k))
                            .map_err(|e| Error::shape(e.to_string()))?,
                    );
                }
                embedder.backward_batch(embed, &d_emb);
                aux.backward(aux_cache, &pgrads);
                Ok(())
            }
            (Net::Baseline(net), BatchCache::Baseline(cache)) => {
                net.net.backward(cache, d_masks);
                Ok(())
            }
            _ => Err(Error::invalid("cache does not belong to this model")),
        }
    }

    pub fn infer(&self, input: &Array2<f64>) -> Result<Inference> {
        let (mut out, _) = self.forward_batch(&[input])?;
        let masks = out.masks.remove(0);
        let embeddings = match out.embeddings {
            Some(mut e) => {
                let flat = e.remove(0);
                Some(Embeddings::from_flattened(flat, masks.dim().0, masks.dim().1)?)
            }
            None => None,
        };
        Ok(Inference { masks, embeddings })
    }

    pub fn params(&self) -> Vec<&Param> {
        match &self.net {
            Net::Gmm { embedder, aux, .. } => {
                let mut p = embedder.params();
                p.extend(aux.params());
                p
            }
            Net::Baseline(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.net {
            Net::Gmm { embedder, aux, .. } => {
                let mut p = embedder.params_mut();
                p.extend(aux.params_mut());
                p
            }
            Net::Baseline(net) => net.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Checkpoint holding the model spec under `model` and every weight array.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = serde_json::Map::new();
        meta.insert("format".into(), Value::from("condsep-model"));
        meta.insert("model".into(), serde_json::to_value(&self.spec).expect("plain data"));
        if let Some(p) = self.gaussian_params() {
            meta.insert("gaussians".into(), p.to_json());
        }
        let mut ckpt = Checkpoint::new(meta);
        for p in self.params() {
            ckpt.push(p.name.clone(), p.value.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let spec: ModelSpec = ckpt
            .metadata
            .get("model")
            .cloned()
            .ok_or_else(|| bad("missing model description".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| bad(format!("bad model description: {e}"))))?;
        let mut model = SeparationModel::new(spec)?;
        for p in model.params_mut() {
            let value = ckpt.array(&p.name).ok_or_else(|| bad(format!("missing array `{}`", p.name)))?;
            if value.dim() != p.value.dim() {
                return Err(bad(format!(
                    "array `{}` has shape {:?}, expected {:?}",
                    p.name,
                    value.dim(),
                    p.value.dim()
                )));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("array `{}` holds non-finite values", p.name)));
            }
            p.value.assign(value);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?, path)
    }
}
