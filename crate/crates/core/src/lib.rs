//! Workbench for detuned series-series inductive power transfer links:
//! phasor analysis, switched time-domain simulation, coupler geometry to
//! coupling estimation, and primary detuning design.

// Range checks are written as negated comparisons so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod cli;
pub mod config;
pub mod design;
pub mod fha;
pub mod magnetics;
pub mod numeric;
pub mod table;
pub mod transient;
