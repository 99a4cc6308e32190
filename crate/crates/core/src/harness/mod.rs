mod data;
mod experiment;
mod io;
mod report;

pub use data::*;
pub use experiment::*;
pub use io::*;
pub use report::*;
