//! Lumbar spinal stenosis grading toolkit.
//!
//! * [`report`] turns free-text MRI reports into per-level ordinal grades.
//! * [`volume`] and [`labels`] handle the on-disk volume and label formats.
//! * [`segmentation`] labels vertebrae from probability masks and scores detections.
//! * [`curve`] fits the spine curve, places disc frames and resamples disc volumes.
//! * [`grading`] holds the softmax heads, weighted cross-entropy, Adadelta and a small
//!   multi-task classifier.
//! * [`evaluation`] splits datasets and computes accuracy and AUC metrics.
//! * [`phantom`] generates synthetic studies with analytic ground truth.
//! * [`pipeline`] chains the stages over directories of studies.

pub mod anatomy;
pub mod curve;
pub mod evaluation;
pub mod grading;
pub mod labels;
pub mod phantom;
pub mod pipeline;
pub mod report;
pub mod resample;
pub mod segmentation;
pub mod volume;

pub use anatomy::{DiscLevel, Grade, Site, Vertebra};
