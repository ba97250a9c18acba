pub mod atom;
pub mod bpe;
pub mod case;
pub mod codec;
pub mod decoder;
pub mod harness;
pub mod matching;
pub mod normalize;
pub mod packet;
