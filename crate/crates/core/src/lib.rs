//! Hybrid beamfocusing for near-field simultaneous wireless information and power
//! transfer (SWIPT).
//!
//! - [`channel`]: ULA geometry, spherical-wave array responses and LoS + cluster channels.
//! - [`digital_sdr`]: optimal digital beamformers for a fixed analog precoder (SDR and
//!   rank-one reconstruction without dedicated energy beams).
//! - [`ptl`]: penalty-based two-layer joint analog/digital design.
//! - [`two_stage`]: alignment-based two-stage design and the baseline schemes.
//! - [`harness`]: metrics, experiment drivers and file output used by the CLI.

pub mod channel;
pub mod cplx;
pub mod digital_sdr;
pub mod harness;
pub mod ptl;
pub mod sdp;
pub mod two_stage;

pub use channel::{ChannelSet, PolarPoint, Scenario, SystemConfig};
pub use cplx::{CMatrix, CVector, C64};

