// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod mog;
pub mod plot;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod scorenet;
pub mod seesaw;
pub mod source;
pub mod tid;
