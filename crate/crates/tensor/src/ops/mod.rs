mod binary;
mod layout;
mod matmul;
mod reduce;
mod softmax;
mod unary;

pub use binary::BinaryKind;
pub use reduce::ReduceKind;
pub use unary::UnaryKind;
