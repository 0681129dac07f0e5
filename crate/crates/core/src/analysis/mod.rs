//! Diagnostics and comparison tools: mutual-information estimators, energy
//! profiles, synthetic data with known label bins and baseline augmentations.

mod baseline;
mod mi;
mod synthetic;

pub use baseline::{baseline_augment, BaselineKind};
pub use mi::{
    mean_energy_profile, mi_frequency_profile, mi_histogram, mi_histogram_detailed,
    mi_timestamp_curve, top_k_energy_fraction, write_index_value_csv, FrequencyFeature, MICurve,
    MIEstimate, DEFAULT_BINS, MAX_DIM, SAMPLES_PER_BIN,
};
pub use synthetic::{generate_synthetic, oracle_scores, ClassBins, SyntheticSpec};
