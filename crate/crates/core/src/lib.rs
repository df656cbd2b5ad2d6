pub mod arch;
pub mod augment;
pub mod cropper;
pub mod geom;
pub mod label;
pub mod nn;
pub mod scalar;
pub mod surface;
pub mod synthetic;
pub mod train;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
