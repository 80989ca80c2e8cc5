pub mod allocate;
pub mod detect;
pub mod envgen;
pub mod error;
pub mod geom;
pub mod grid;
pub mod imgproc;
pub mod io;
pub mod pathplan;
pub mod scene;
pub mod shapemodel;
pub mod sim;

pub use error::{Error, Result};
