pub mod composition;
pub mod corpus;
pub mod discriminators;
pub mod encoding;
pub mod evaluation;
pub mod generator;
pub mod layout;
pub mod model;
pub mod nn;
pub mod raster;
pub mod sampling;
pub mod training;
