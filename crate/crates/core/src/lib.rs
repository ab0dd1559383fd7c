pub mod circuit;
pub mod dynamics;
pub mod expr;
pub mod linalg;
pub mod model;
pub mod optimizers;
pub mod synthesis;
