//! Room occupancy estimation from Wi-Fi probe-request traffic.
//!
//! The pipeline: decode radiotap/802.11 probe requests ([`frame`]), classify
//! each source MAC as vendor-registered or randomized ([`oui`]), reduce each
//! sniffing window to per-threshold unique-MAC counts ([`counter`]), and map
//! those counts to a head count with a linear model calibrated against
//! operator-supplied ground truth ([`estimator`]).
//!
//! [`sensor`] runs that pipeline window by window against a [`backend`], which
//! distributes ground truth and stores reports. [`simulator`] produces
//! synthetic traces and [`eval`] scores a calibrated model on labeled data.

pub mod backend;
pub mod counter;
pub mod dataset;
pub mod estimator;
pub mod eval;
pub mod frame;
pub mod mac;
pub mod message;
pub mod oui;
pub mod sensor;
pub mod simulator;

pub use counter::{close_window, CounterRegister, CounterSnapshot, ThresholdGrid, WindowObservations};
pub use dataset::LabeledDataset;
pub use estimator::{estimate, objective, train, Fit, ModelParams, SearchGrid, TrainingBuffer, TrainingSample};
pub use eval::{cross_validate, EvalReport, SplitSpec};
pub use frame::{decode_frame, encode_probe_request, ProbeRecord};
pub use mac::{MacAddress, Oui};
pub use oui::{ClassifyPolicy, MacClass, OuiRegistry};
