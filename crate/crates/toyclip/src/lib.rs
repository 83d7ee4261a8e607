//! A small dual linear encoder trained with the symmetric image-text
//! contrastive loss on synthetic multi-view caption data, with retrieval
//! metrics and an ablation harness.

pub mod ablation;
pub mod data;
pub mod encoder;
pub mod loss;
pub mod optim;
pub mod retrieval;
pub mod train;

pub use ablation::{ablation_sweep, sign_test_one_sided, AblationAxis, AblationBase, AblationRow};
pub use data::{PairCorpus, SyntheticCorpusConfig};
pub use encoder::EncoderParams;
pub use loss::{contrastive_loss, ContrastiveLoss};
pub use optim::OptimizerKind;
pub use retrieval::{eval_retrieval, Direction, RetrievalReport};
pub use train::{train, TrainConfig, TrainOutcome, ViewPolicy, ViewSampling};

#[derive(Debug, thiserror::Error)]
pub enum ToyClipError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in input features")]
    NonFiniteInput,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("training diverged at step {step}")]
    DivergenceDetected { step: usize },
    #[error("io: {0}")]
    Io(String),
}
