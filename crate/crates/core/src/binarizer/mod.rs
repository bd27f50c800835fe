//! Grayscale → binary ridge maps: the classical oracle and the trainable
//! differentiable autoencoder supervised by it.

mod net;
mod oracle;

pub use net::{
    apply_binarizer, binarize_net, recon_loss, train_binarizer, BinarizerArch, BinarizerConfig,
    BinarizerTraining, BinarizerWeights, LabelledImage, KIND,
};
pub use oracle::{
    binarize_enhanced, binarize_oracle, binarize_oracle_with, majority_cleanup, ridge_map_to_gray,
    OracleConfig,
};
