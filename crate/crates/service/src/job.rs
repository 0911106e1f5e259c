//! The persisted job document and its state machine.

use serde::{Deserialize, Serialize};
use stylegallery_core::clustering::mask_io::MaskSidecar;
use stylegallery_core::{LossReport, MatchTable, Override, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Created,
    Masked,
    Matched,
    Running,
    Done,
    Failed,
}

/// Requested stage changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    ComputeMasks,
    PreviewMatches,
    Override,
    Run,
    Finish,
    Fail,
}

impl JobState {
    /// State after `action`, or `None` when the transition is illegal.
    pub fn apply(self, action: Action) -> Option<JobState> {
        use Action::*;
        use JobState::*;
        match (self, action) {
            (Created, ComputeMasks) => Some(Masked),
            (Masked | Matched, PreviewMatches) => Some(Matched),
            (Matched, Override) => Some(Matched),
            (Matched | Running | Done | Failed, Run) => Some(Running),
            (Running, Finish) => Some(Done),
            (Created | Masked | Matched | Running, Fail) => Some(Failed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Created => "created",
            JobState::Masked => "masked",
            JobState::Matched => "matched",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    /// Blob hash of the encoded PNG.
    pub blob: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRef {
    pub image_id: String,
    /// Blob hash of the 16-bit label PNG.
    pub blob: String,
    pub sidecar: MaskSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMasks {
    pub content: MaskRef,
    pub styles: Vec<MaskRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Progress {
    /// Run counter; bumped by every `run` request.
    pub run: u64,
    pub step: usize,
    pub total: usize,
    pub percent: f64,
    pub last: Option<LossReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub run: u64,
    pub uri: String,
    pub blob: String,
    pub image_id: String,
    /// Match table the run used, with the origin of every entry.
    pub matches: MatchTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferJob {
    pub id: String,
    /// Bumped on every persisted change.
    pub version: u64,
    pub state: JobState,
    pub content_image: ImageRef,
    pub style_images: Vec<ImageRef>,
    pub config: PipelineConfig,
    pub masks: Option<JobMasks>,
    pub matches: Option<MatchTable>,
    pub progress: Progress,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

impl TransferJob {
    /// Illegal transitions come back as the name of the current state.
    pub fn transition(&mut self, action: Action) -> Result<(), JobState> {
        match self.state.apply(action) {
            Some(next) => {
                self.state = next;
                Ok(())
            }
            None => Err(self.state),
        }
    }

    pub fn overrides(&self) -> Vec<Override> {
        self.matches.as_ref().map(MatchTable::overrides).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Progress,
    Done,
    Failed,
    Cancelled,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        self != EventKind::Progress
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Progress => "progress",
            EventKind::Done => "done",
            EventKind::Failed => "failed",
            EventKind::Cancelled => "cancelled",
        }
    }
}

/// One entry of a job's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub job_id: String,
    pub run: u64,
    /// Position in the run's stream, from 1.
    pub seq: usize,
    pub kind: EventKind,
    pub step: usize,
    pub total: usize,
    pub rsl: f64,
    pub gcl: f64,
    pub total_loss: f64,
    pub percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_uri: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_forward_transitions() {
        use Action::*;
        use JobState::*;
        assert_eq!(Created.apply(ComputeMasks), Some(Masked));
        assert_eq!(Created.apply(Run), None);
        assert_eq!(Created.apply(PreviewMatches), None);
        assert_eq!(Masked.apply(ComputeMasks), None);
        assert_eq!(Masked.apply(Override), None);
        assert_eq!(Matched.apply(Run), Some(Running));
        assert_eq!(Running.apply(Override), None);
        assert_eq!(Running.apply(Run), Some(Running));
        assert_eq!(Done.apply(Finish), None);
        assert_eq!(Done.apply(Fail), None);
        assert_eq!(Done.apply(PreviewMatches), None);
    }
}
