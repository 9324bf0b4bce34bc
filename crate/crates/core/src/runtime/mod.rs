//! Networked split execution: wire protocol, cloud daemon, edge client and
//! the HTTP control plane.

mod control;
pub mod edge;
pub mod link;
pub mod server;
pub mod wire;

pub use edge::{
    device_inference, measure_end_to_end, mode_split, run_edge_inference, EdgeSession, InferMode, MeasuredOracle,
};
pub use link::paced_write;
pub use server::{serve_cloud, CloudServer, CloudState, LiveEvent, ServeOptions};
pub use wire::{decode_frame, decode_message, encode_frame, AckStatus, DecodeError, FeatureFrame, Message, ResultFrame};
