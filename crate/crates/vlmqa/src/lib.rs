//! Scene-understanding evaluation: renders the configured input (camera,
//! full fusion or pixelwise fusion) for every simulated scene, asks a
//! vision-language service the scene's questions, parses the free-text
//! answers and scores Top-1 accuracy per category and lighting condition.

pub mod endpoint;
pub mod error;
pub mod eval;
pub mod parse;
pub mod transcript;

pub use endpoint::{Endpoint, EndpointSpec, HttpEndpoint, MockEndpoint, MockPolicy, ReplayEndpoint, VlmRequest};
pub use error::{Result, VlmError};
pub use eval::{
    evaluate, eval_image, truth_table, Cell, EvalMode, EvalOptions, EvalReport, Evaluation, GanSource,
    PromptTemplates, Row, SampleRecord,
};
pub use parse::parse_answer;
pub use transcript::{read_transcript, write_transcript, TranscriptEntry};
