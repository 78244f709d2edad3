//! Pipeline stages and rendering behind the `nj` binary, exposed as a
//! library so integration tests can drive them without shelling out.

pub mod pipeline;
pub mod render;
