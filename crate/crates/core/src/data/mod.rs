//! Utterance records, their file format, the corpus manifest and the
//! feature preprocessing applied before modeling.

pub mod io;
pub mod manifest;
pub mod preprocess;
pub mod record;

pub use io::{decode_record, encode_record, read_record, write_record, RecordError};
pub use manifest::{Manifest, ManifestError, MANIFEST_FILE};
pub use preprocess::{
    length_regulate, phoneme_pool, preprocess_energy, savgol_smooth, EnergyConfig, PreprocessError,
};
pub use record::{UtteranceRecord, Violation, DEFAULT_FRAME_HOP_MS, MEL_BANDS};
