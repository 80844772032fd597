//! Frame-rate aware full-reference video quality assessment.
//!
//! The pipeline fuses one spatial quality index (SSIM, MS-SSIM, or an
//! externally computed score) with fourteen temporal entropic-difference
//! features. The temporal features come from a three-level biorthogonal 2.2
//! wavelet packet decomposition along time, a generalized Gaussian entropy
//! model fitted on 5×5 spatial patches, and a pseudo-reference that removes
//! the entropy bias introduced by frame-rate changes. The fused 15-vector is
//! regressed onto opinion scores with an ε-SVR, and [`eval`] reproduces the
//! content-disjoint, repeated-split evaluation protocol.

pub mod error;
pub mod eval;
pub mod filterbank;
pub mod fusion;
pub mod ggd;
pub mod manifest;
pub mod spatial;
pub mod synth;
pub mod tgreed;
pub mod video;

pub use error::{Error, Result};
pub use filterbank::{decompose, FilterBankConfig, SubbandVolume};
pub use fusion::{GstFeatureVector, Hyperparams, Kernel, SvrModel};
pub use spatial::{SpatialIndex, SpatialModel};
pub use tgreed::{compute_tgreed, TgreedFeatures};
pub use video::{Fps, PlanarVideo};
