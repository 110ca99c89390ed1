pub mod classifier;
pub mod data;
pub mod fusion;
pub mod gat;
pub mod linalg;
pub mod metrics;
pub mod modality;
pub mod mpca;
pub mod pipeline;
pub mod preprocess;
pub mod tensor;
