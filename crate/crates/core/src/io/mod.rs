//! Persistence: the array container, CSV convergence logs and PNG dumps.

mod container;
mod log;
pub mod render;

pub use container::{
    dataset_fingerprint, load_dataset, load_reconstruction, save_dataset, save_dataset_with, save_reconstruction,
    ArrayEntry, ContainerReader, ContainerWriter, Dtype, Manifest, Metadata, Reconstruction, DATASET_KIND,
    FORMAT_VERSION, MANIFEST_FILE, RECONSTRUCTION_KIND,
};
pub use log::{read_log_csv, read_run_record, write_log_csv, write_run_record, RunRecord, CERT_COLUMN, LOG_COLUMNS};
