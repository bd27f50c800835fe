//! Value types shared across the pipeline: images, latent noise, manifests.

mod image;
pub mod io;
pub mod manifest;
pub mod noise;

pub use self::image::{BinaryRidgeMap, GrayFingerprint, Ppi};
pub use self::manifest::{read_manifest, read_manifest_unverified, write_manifest, DatasetManifest, ManifestRecord};
pub use self::noise::{derive_seed, sample_noise, NoiseKind, NoiseTriple, Z_DISTORT_DIM, Z_ID_DIM, Z_TEXTURE_DIM};
