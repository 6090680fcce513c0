//! Behavioral and cycle-level simulator of a regulated subthreshold SRAM
//! compute-in-memory accelerator for spiking neural networks.
//!
//! The crate models the stack end to end: ternary-weight network IR and
//! config ingestion ([`ir`]), the weak-inversion cell current and supply
//! regulation loop ([`device`]), the differential SRAM array with replica
//! thresholds ([`array`]), integrate-and-fire neuron semantics ([`neuron`]),
//! dataflow latency and buffer analytics ([`sched`]), energy accounting
//! ([`energy`]) and a variation-aware training loop ([`train`]).

pub mod array;
pub mod device;
pub mod energy;
pub mod ir;
pub mod neuron;
pub mod sched;
pub mod tensor;
pub mod train;
