//! Datasets, sampling, joint pretraining, linear evaluation and checkpoints.

mod checkpoint;
pub mod dataset;
mod eval;
mod sampler;
mod train;

pub use checkpoint::{
    checkpoint_arrays, load_checkpoint, manifest_of, read_manifest, save_checkpoint, ArraySpec,
    CheckpointManifest, ARRAYS_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
pub use dataset::{
    load_dataset, load_dataset_raw, parse_ucr_line, stratified_split, write_csv_dir, CsvManifest,
    DataFormat, Dataset, DatasetSplits, Normalization, Split, UcrRow, VARIANCE_FLOOR,
};
pub use eval::{
    evaluate_encoder, evaluate_features, extract_features, fit_probe, linear_evaluate, score,
    LinearEvalReport, ProbeConfig, ProbeTrace, Scores, SoftmaxProbe,
};
pub use sampler::BatchSampler;
pub use train::{
    frera_view, objective_step, pretrain, pretrain_with, probe_accuracy, Augmentation, Checkpoint,
    EpochRecord, SelectedEncoder, StepOutput, StepViews, TrainConfig,
};
