//! Long-sequence vision encoder for gigapixel images.
//!
//! Images are streamed from disk, cut into fixed-size patches and embedded;
//! a pre-norm transformer with multi-head dilated attention encodes the token
//! sequence and mean pooling yields one image vector for the task heads.

pub mod attention;
pub mod bench;
pub mod encoder;
pub mod error;
pub mod image;
pub mod init;
pub mod par;
pub mod seqpar;
pub mod tasks;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
