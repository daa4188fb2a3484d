pub mod constellation;
pub mod error;
pub mod oracle;
pub mod par;
pub mod quadrature;
pub mod replica;
pub mod scalar;
pub mod sweep;
