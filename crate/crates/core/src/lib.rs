//! Near-field unsourced random access (URA) toolkit.
//!
//! The crate covers the full receive pipeline for a massive-MIMO base
//! station serving users inside the Rayleigh distance:
//!
//! * [`array`] — ULA geometry, far/near-field responses, multipath channels.
//! * [`dictionary`] — polar-domain (angle x distance-ring) channel
//!   dictionaries, the angular DFT, and a beta-controlled comparison grid.
//! * [`codec`] — common-codebook encoding and slot-wise transmission.
//! * [`recovery`] — Turbo-CoSaMP joint activity detection / channel
//!   estimation plus S-OMP and two-stage baselines.
//! * [`refine`] — Newtonized off-grid refinement (N-Turbo-CoSaMP).
//! * [`cluster`] — constrained K-medoids message stitching with Hungarian
//!   assignment and collision repair.
//! * [`metrics`] — per-user error rate, channel NMSE, and empirical
//!   restricted-isometry estimation.

pub mod array;
pub mod cluster;
pub mod codec;
pub mod dictionary;
pub mod error;
pub mod metrics;
pub mod recovery;
pub mod refine;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

pub use array::{
    coherence, far_response, near_response, synth_channel, ArrayConfig, FieldRegion, Path,
    PathSet, SpatialChannel,
};
pub use cluster::{cluster_decode, hungarian, update_medoid, ClusterOptions, SlotChannels};
pub use codec::{demap, split_and_encode, transmit_slot, Codebook, MessageSet, SlotObservation};
pub use dictionary::{
    build_angular_dft, build_polar, build_polar_beta, max_adjacent_coherence, unitary_extension,
    Dictionary, DictionaryKind, PolarGrid,
};
pub use error::{Error, Result};
pub use metrics::{eb_n0_db, nmse, per_user_error, rip_estimate, spectral_efficiency};
pub use recovery::{
    entry_proxy_select, ls_on_support, row_proxy_select, s_omp, theorem1_check, turbo_cosamp,
    two_stage, RecoveryConfig, RecoveryOutput,
};
pub use refine::{
    cyclic_refine, e_gradient, e_hessian, n_turbo_cosamp, newton_step, objective_e, AtomParam,
    RefineConfig, RefineOutput,
};
