//! Learnable models of the 1D problem: periodic fields and latent predictors.

mod field;
mod latent;

pub use field::{
    field_eval, render_predicted_crop, render_predicted_crops, ExplicitField1D, Field1D, NeuralField1D, OutputAffine,
    EXPLICIT_NODES, FIELD_HIDDEN, FIELD_LAYERS, PE_BANDS,
};
pub use latent::{
    encoder_forward, standardize, Encoder1D, FreeAngles, LatentBatch, LatentModel, ENCODER_CHANNELS, ENCODER_FC,
    ENCODER_FINAL_LEN, ENCODER_GROUPS,
};
