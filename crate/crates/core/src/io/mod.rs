//! On-disk formats: newline-delimited JSON records, lane files, trajectory
//! CSVs and per-stage manifests.

pub mod manifest;
pub mod records;
pub mod tracks;

pub use manifest::{CorpusManifest, FileEntry};
pub use records::{
    read_lane_graph, read_records, write_lane_graph, write_records, Record, RejectRecord,
    ScenePredictions, SCHEMA_VERSION,
};
pub use tracks::{parse_trajectory_csv, parse_trajectory_reader, scene_to_csv, CsvScene, RejectedRow};
