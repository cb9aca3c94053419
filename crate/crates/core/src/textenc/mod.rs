//! Text side of the shared space: tokenization, frozen word vectors and the
//! stacked-LSTM encoder with its linear projection head.

mod encoder;
mod tokenize;
mod wordvec;

pub use encoder::{
    encode, encode_backward, encode_batch, encode_forward, EncodeTrace, EncoderConfig, EncoderParams, TextEncoder,
};
pub use tokenize::{tokenize, StopWords, TokenSequence};
pub use wordvec::WordVectorTable;
