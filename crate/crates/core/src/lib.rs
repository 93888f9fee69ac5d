//! Non-neural machinery for large-scale processing of handwritten census
//! lists: the tagged transcript codec, household reconstruction, evaluation
//! metrics, archive metadata ingestion, IIIF integrity checks, a staged batch
//! pipeline for internet-isolated compute nodes and a throughput simulator.

pub mod domain;
pub mod label_codec;

pub use domain::{
    tag_from_token, validate_record, EntityTag, Household, PageClass, PageTranscript, PersonRecord,
    RecordPos, RegisterDocument, RegisterPage, TagAlphabet, Violation,
};
pub use label_codec::{
    decode_lenient, decode_strict, encode, DecodeReport, LabelCodec, LabelString,
};
pub mod household;
pub mod iiif;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod simulate;
