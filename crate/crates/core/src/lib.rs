pub mod analysis;
pub mod colored;
pub mod error;
pub mod fit;
pub mod infoflow;
pub mod linalg;
pub mod optimize;
pub mod simulate;
pub mod timeseries;
pub mod white;

pub use error::{Error, Result};
