pub mod cifar;
pub mod container;
pub mod idx;
