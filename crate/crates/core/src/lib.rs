//! Sequential 6-DoF camera relocalization for visually ambiguous scenes.
//!
//! The pipeline builds a landmark map from posed training frames, localizes
//! a query sequence against it with global retrieval plus PnP, grows a set of
//! confidently localized *anchor* frames by iterative temporal matching, and
//! finally registers the remaining frames with a bundle-adjusted incremental
//! reconstruction that keeps the map and the anchors fixed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
pub mod features;
pub mod raster;
pub mod pnp;
pub mod refine;
pub mod mapdb;
pub mod seed;
pub mod synth;
pub mod temporal;
pub mod harness;
