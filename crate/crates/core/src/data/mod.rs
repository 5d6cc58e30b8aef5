//! Dataset ingestion, feature tables and model bundles.

mod bundle;
mod dataset;
mod idx;
mod synth;
mod table;

pub use bundle::{load_bundle, save_bundle, Bundle, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use dataset::Dataset;
pub use idx::{load_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::{synth_ood_pair, synth_ood_pair_with, SynthConfig};
pub use table::{read_features, write_features, FeatureTable};
