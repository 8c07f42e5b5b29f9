//! One-stage grid detector: model, decoding, losses, synthetic corpus and
//! training.

pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use corpus::{generate_corpus, load_corpus, save_corpus, Annotation, CorpusParams, Sample};
pub use decode::{decode, decode_slot, Detection};
pub use loss::{detector_loss, detector_loss_grad, match_anchor, training_loss_grad, DetectorLossWeights};
pub use model::{DetectorConfig, DetectorGrads, DetectorModel, ForwardCache, RawGridPrediction};
pub use train::{evaluate_ap, mean_ap, train_from_params, train_toy_detector, TrainParams, TrainReport, EVAL_CONF, EVAL_NMS_IOU};
