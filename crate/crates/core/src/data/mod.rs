//! Synthetic NDCT phantoms, LDCT degradation, datasets and image files.

mod dataset;
pub mod io;
mod noise;
mod phantom;

pub use io::{
    load_dataset, read_image, read_manifest, save_dataset, write_image, write_manifest, ImageFormat, ManifestEntry,
    MANIFEST_NAME,
};
pub use dataset::{make_dataset, ImagePair};
pub use noise::{sample_poisson, simulate_ldct, NoiseParams, LDCT_MAX, POISSON_INVERSION_MAX_MEAN};
pub use phantom::{generate_phantom, MIN_PHANTOM_EXTENT};
