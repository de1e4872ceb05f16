//! Post-hoc interpretation: saliency maps from perception attention, and
//! calibrated task probabilities decoded from latent decisions.

mod decoder;
mod saliency;
mod svm;

pub use decoder::{
    build_decoder, build_decoder_from_params, cap_per_class, collect_decisions, decision_from_probabilities,
    decode_decision, decoder_classes, entropy, fit_decoder, DecodedDecision, DecoderConfig, DecoderMeta,
    DecoderModel,
};
pub use saliency::{bilinear_upscale, saliency_from_attention, SaliencyMap};
pub use svm::{argmax, fit_binary_svm, fit_calibration, fit_svm, LinearSvm};
