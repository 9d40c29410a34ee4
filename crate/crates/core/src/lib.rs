//! Virtual chest tomosynthesis from CT volumes: bed removal, cone-beam
//! projection, projected lung masks, N/A ensemble diagnosis, lung-masked
//! activation maps and the evaluation harness around them.

pub mod bed;
pub mod cam;
pub mod drr;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod mask;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod tables;
pub mod volume;

pub use error::{Error, Result};
pub use exec::Exec;
pub use mask::Mask2;
pub use volume::{BinaryVolume, CtVolume};
