//! Joint context-content embeddings.
//!
//! A [`JcceModel`] holds two encoder towers, one for content and one for
//! context, mapping sparse inputs into a shared `E`-dimensional space. It is
//! trained with the bidirectional N-pairs objective in [`loss`] over batches
//! whose contents are pairwise distinct, and serves recommendations by cosine
//! similarity against precomputed content embeddings.

mod encoder;
mod io;
pub mod loss;
mod rank;
mod sampler;
mod train;

pub use encoder::{Encoder, EncoderConfig, EncoderKind, Layer};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use loss::{jcce_loss, jcce_loss_value, npairs_loss, npairs_loss_value, RegScope};
pub use rank::{cosine, order_by_score, precompute_content_embeddings, rank_of, recommend, score, ContentIndex, Ranked};
pub use sampler::{exhaustive_batches, sample_batch, GenreIndex};
pub use train::{train, train_with_progress, EpochLog, TrainConfig, TrainLog};

use thiserror::Error;

use crate::features::{AttrSource, FeatureError, FeatureSpace, SparseVec};
use crate::tensor::{ParamStore, RngState, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input dimension mismatch: encoder expects {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding batches differ in shape: {left:?} vs {right:?}")]
    Shape { left: (usize, usize), right: (usize, usize) },
    #[error("training diverged (non-finite loss) in epoch {epoch} at learning rate {learning_rate}")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("zero-norm {0} embedding; the model is degenerate for this input")]
    ZeroNorm(&'static str),
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("schema fingerprint mismatch: expected {expected}, model has {found}")]
    Fingerprint { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Both towers plus the feature space they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct JcceModel {
    pub space: FeatureSpace,
    pub content: Encoder,
    pub context: Encoder,
    pub store: ParamStore,
}

impl JcceModel {
    pub fn new(
        space: FeatureSpace,
        content_cfg: EncoderConfig,
        context_cfg: EncoderConfig,
        rng: &mut RngState,
    ) -> Result<Self> {
        if content_cfg.out_dim != context_cfg.out_dim {
            return Err(ModelError::Config(format!(
                "content and context embeddings must share a dimension ({} vs {})",
                content_cfg.out_dim, context_cfg.out_dim
            )));
        }
        let mut store = ParamStore::new();
        let content = Encoder::new(content_cfg, space.content_dim(), &mut store, rng)?;
        let context = Encoder::new(context_cfg, space.context_dim(), &mut store, rng)?;
        Ok(JcceModel {
            space,
            content,
            context,
            store,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.content.out_dim()
    }

    pub fn schema_fingerprint(&self) -> String {
        self.space.schema().fingerprint()
    }

    pub fn embed_contexts(&self, inputs: &[&SparseVec]) -> Result<Tensor> {
        self.context.embed(&self.store, inputs)
    }

    pub fn embed_contents(&self, inputs: &[&SparseVec]) -> Result<Tensor> {
        self.content.embed(&self.store, inputs)
    }

    /// Encodes and embeds one context.
    pub fn context_embedding(&self, src: &dyn AttrSource) -> Result<Vec<f64>> {
        let x = self.space.encode_context(src)?;
        self.context.embed_one(&self.store, &x)
    }
}
