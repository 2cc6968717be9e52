pub mod numerics;
pub mod pinyin;
pub mod corpus;
pub mod model;
pub mod training;
pub mod decode;
pub mod metrics;
pub mod service;
pub mod synth;
