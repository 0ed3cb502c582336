//! Analytic compressed iterative reconstruction.

pub mod adversary;
pub mod engine;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod lab;
pub mod recon;
pub mod sparsity;

pub use error::{Error, Result};
pub use forward::{ForwardModel, FourierMask, MaskPattern, RadonGeometry};
pub use grid::{psnr, ssim, Image, Measurement, MeasurementKind, MetricsReport};
pub use engine::{acid_ablate, acid_run, contraction_probe, data_sweep, AcidConfig, AcidHistory, AcidVariant};
pub use adversary::{attack_acid, attack_network, AttackConfig, AttackResult};
pub use lab::{add_noise, insert_structure, make_phantom, EllipsePhantomSpec, Glyph, StructuralInsert};
pub use recon::{bren_ratio, lipschitz_estimate, AutomapMini, ReconOperator};
