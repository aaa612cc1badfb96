pub mod cipher;
pub mod prp;
