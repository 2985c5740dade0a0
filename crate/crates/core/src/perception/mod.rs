//! Masks and per-segment materials, from external services or fixtures.
//!
//! Live mode talks to two HTTP services: an automatic-mask generator and a
//! chat-completions vision model. Fixture mode reads masks in the scene_io
//! format and answers from per-view text files, so runs are deterministic.

mod annotate;
mod filter;
mod http;
mod lmm;
mod prompt;
mod segment;
mod triptych;

use std::path::{Path, PathBuf};

pub use annotate::{annotate_view, annotations_text, AnnotateConfig, AnnotatedView};
pub use filter::{filter_masks, select_level, FilterThresholds};
pub use http::{png_base64, png_data_url, JsonEndpoint, RetryPolicy, TokenBucket};
pub use lmm::{
    query_description, query_material, AnnotationStatus, ChatMessage, ChatTransport, FixtureStore, HttpLmm,
    LmmConfig, MaterialSource, Role, SegmentAnnotation, LMM_TOKEN_ENV,
};
pub use prompt::{
    build_prompt, description_prompt, parse_answer, repair_instruction, Candidate, ParsedAnswer, PromptBundle,
    GROUP_THRESHOLD,
};
pub use segment::{Rle, SegmentationClient, SegmentationConfig, SEG_TOKEN_ENV};
pub use triptych::{compose_triptych, Triptych, CROP_PADDING, HIGHLIGHT};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("mask hierarchy is empty")]
    EmptyHierarchy,
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask is {}x{} but image is {}x{}", mask.0, mask.1, image.0, image.1)]
    MaskImageMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("view {0}: live mode needs the view image")]
    MissingImage(String),
    #[error("environment variable {0} is not set")]
    MissingToken(&'static str),
    #[error("endpoint rejected credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("endpoint kept rate-limiting after all retries")]
    RateLimited,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("{}:{line}: {reason}", path.display())]
    Fixture { path: PathBuf, line: usize, reason: String },
    #[error("view {0}: no segment could be resolved to a library material")]
    ViewUnusable(String),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl PerceptionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Failures attributable to a remote service rather than local data.
    pub fn is_endpoint(&self) -> bool {
        matches!(
            self,
            Self::MissingToken(_)
                | Self::Auth { .. }
                | Self::RateLimited
                | Self::Http { .. }
                | Self::Transport(_)
                | Self::BadResponse(_)
        )
    }
}
