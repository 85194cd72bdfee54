//! Small neural-network toolkit on top of candle tensors.

pub mod layers;
pub mod ops;
pub mod params;

pub use params::ParamStore;
