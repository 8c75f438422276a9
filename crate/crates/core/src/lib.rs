pub mod curriculum;
pub mod error;
pub mod io;
pub mod model;
pub mod objective;
pub mod preproc;
pub mod pruning;
pub mod sim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
