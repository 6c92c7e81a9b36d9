pub mod ams;
pub mod cgr;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fusion;
pub mod graph_conv;
pub mod haze;
pub mod imaging;
pub mod metrics;
pub mod net;
pub mod params;
pub mod sgr;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::Error;
pub use imaging::Image;
pub use net::{DehazeNet, NetConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{Graph, Real, Tensor, TensorError, Var};
pub use train::TrainConfig;
