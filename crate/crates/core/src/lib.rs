//! Prediction of the interior shape of a transtibial prosthetic socket from a
//! 3D scan of the residual limb.
//!
//! The crate is organised as a pipeline:
//!
//! * [`mesh`] — triangle-mesh container, OBJ/PLY/STL I/O, BVH-accelerated
//!   closest-point queries and surface-to-surface distances (millimetres).
//! * [`preprocess`] — anatomical reorientation, left/right mirroring,
//!   template-to-scan registration that brings every scan and socket into
//!   vertex-wise correspondence, and socket adaptation fields.
//! * [`pca`] — principal-component compression of corresponded shapes.
//! * [`models`] — the three regression back-ends (random forest, feedforward
//!   network, point-set network) together with their shared training
//!   machinery (Adam, smooth-L1 loss, batch-norm/dropout layers).
//! * [`synth`] — parametric generator of stump/socket pairs used to build
//!   reproducible development corpora.
//! * [`eval`] — surface-distance metrics, per-sample records and report
//!   aggregation.
//! * [`experiment`] — k-fold cross-validation driver tying the above
//!   together, plus model/report persistence.
//!
//! All geometry is in millimetres; all randomness flows from explicit `u64`
//! seeds so every result is reproducible bit for bit.

pub mod eval;
pub mod experiment;
pub mod io_bin;
pub mod mesh;
pub mod models;
pub mod pca;
pub mod preprocess;
pub mod synth;
