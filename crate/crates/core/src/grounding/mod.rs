//! Phrase-grounding operations over supplied feature matrices.

pub mod features;
pub mod loss;
pub mod matrix;
pub mod prompt;
pub mod scores;

pub use features::{decode_matrix, encode_matrix, read_matrix, write_matrix, FeatureDtype};
pub use loss::{
    classification_loss, grounding_loss, localization_loss, ClassificationPath, ClsInput, LocLoss, LossBreakdown,
    LossOptions, TargetMatrices,
};
pub use matrix::Matrix;
pub use prompt::{build_prompt, tokenize_prompt, GroundingPrompt, PhraseSpanMap, SubwordTable};
pub use scores::{
    aggregate_phrase_probs, alignment_logits, alignment_scores, expand_targets, sigmoid, AlignmentBundle,
    Aggregation,
};
