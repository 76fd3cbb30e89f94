pub mod backbone;
pub mod bench;
pub mod clio;
pub mod engine;
pub mod error;
pub mod gradsuite;
pub mod head;
pub mod init;
pub mod model;
pub mod numkern;
pub mod refine;
pub mod tokenizer;
pub mod trainkit;

pub use error::{Error, Result};
