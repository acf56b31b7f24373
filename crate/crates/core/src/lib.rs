//! Interaction-aware trajectory labeling, auxiliary pretext targets, losses
//! and evaluation metrics for multi-agent motion forecasting.

pub mod cli;
pub mod error;
pub mod geom;
pub mod io;
pub mod labeler;
pub mod lanes;
pub mod loss;
pub mod metrics;
pub mod pretext;
pub mod scenario;
pub mod trajectory;

pub use error::{Error, Result};
pub use geom::Vec2;
pub use labeler::{label_interactions, label_scene, IntentClass, InteractionPair, LabelConfig, SceneLabels};
pub use lanes::{Lane, LaneGraph, LaneId};
pub use metrics::{CamMode, MetricsConfig, MetricsReport, PredictionSet};
pub use pretext::{InteractionType, PretextConfig, ScenePretext};
pub use scenario::{generate, generate_suite, OracleAnnotation, ScenarioKind, ScenarioSpec, SuiteConfig};
pub use trajectory::{AgentId, AgentTracks, Scene, TrajKind, TrajPoint, Trajectory};
