//! Coarse-grained supervision and representational alignment toolkit.
//!
//! - [`data`]: embedding matrices and the EMB1 file format
//! - [`pca`] and [`labeler`]: PCA bases and recursive median-split labels
//! - [`rdm`], [`stats`] and [`rsa`]: dissimilarity matrices and alignment statistics
//! - [`encoding`]: cross-validated ridge encoding models
//! - [`probe`]: top-k principal component reconstruction probes
//! - [`synth`] and [`trainer`]: planted hierarchies and a small MLP classifier

pub mod data;
pub mod encoding;
pub mod error;
pub mod labeler;
pub mod pca;
pub mod probe;
pub mod rdm;
pub mod rsa;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use data::{align_by_ids, read_embedding, write_embedding, EmbeddingMatrix, Width};
pub use error::{Error, Result};
pub use labeler::{read_labels, recursive_median_partition, write_labels, LabelSet, SplitMode};
pub use pca::{fit_pca, fit_pca_full, project_2d, PcaBasis};
pub use rdm::{compute_rdm, read_rdm, write_rdm, Metric, Rdm};
pub use rsa::{bootstrap_ci, min_k_overlap, per_concept_alignment, rsa_align, AlignmentResult};
