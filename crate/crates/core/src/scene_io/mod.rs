//! Reading and writing scenes, cameras, label images and segmentation masks.

mod cameras;
mod masks;
mod ply;

pub use cameras::{parse_cameras, write_transforms_json, CameraFormat, CameraModel, CameraSource};
pub use masks::{
    load_mask_set, mask_set_from_labels, parse_mask_metadata, write_mask_set, Bitmap, LabelMap,
    Mask, MaskSet, MaskSource,
};
pub use ply::{
    decode_opacity, decode_scale, encode_opacity, encode_scale, normalize_rotation,
    float_column, parse_gaussian_ply, write_gaussian_ply, ColumnData, GaussianCloud, PlyColumn, PlyEncoding,
    ShCoeffs,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SceneIoError {
    #[error("malformed PLY header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("PLY vertex element is missing required property `{property}` (header ends at byte {offset})")]
    MissingProperty { offset: usize, property: String },
    #[error("PLY payload truncated at byte {offset} while reading `{property}` of vertex {vertex}")]
    Truncated {
        offset: usize,
        property: String,
        vertex: usize,
    },
    #[error("invalid value for `{property}` at byte {offset}: {reason}")]
    InvalidValue {
        offset: usize,
        property: String,
        reason: String,
    },
    #[error("column `{name}` has {got} entries, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown camera format `{0}`")]
    UnknownCameraFormat(String),
    #[error("camera file is missing field `{0}`")]
    MissingField(String),
    #[error("camera `{view}`: {reason}")]
    InvalidCamera { view: String, reason: String },
    #[error("camera `{view}`: rotation is not orthonormal (max |RᵀR − I| = {deviation:.3e})")]
    NonOrthonormal { view: String, deviation: f64 },
    #[error("camera file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("view `{view}`: mask is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    DimensionMismatch {
        view: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("view `{view}`: duplicate segment id {segment_id}")]
    DuplicateSegment { view: String, segment_id: u32 },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SceneIoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SceneIoError::Io {
            path: path.into(),
            source,
        }
    }
}
