pub mod attention;
pub mod data;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;
