pub mod catalysis;
pub mod diffusion;
pub mod linear;
