//! File formats, experiment drivers and the `logattn` command-line tool built
//! on [`logattn_core`].
//!
//! - [`voc`]: Pascal VOC XML annotations
//! - [`pnm`]: 8-bit P5/P6 images
//! - [`dataset`]: manifests and loading/writing whole datasets
//! - [`weights`]: little-endian weight files with a JSON sidecar
//! - [`reports`]: CSV, JSON and text reports
//! - [`commands`]: one function per subcommand

pub mod commands;
pub mod dataset;
pub mod pnm;
pub mod reports;
pub mod voc;
pub mod weights;

pub use logattn_core as core;
