//! Interleaved global-local optimization.

mod adam;
mod config;
mod schedule;
mod trainer;

#[cfg(test)]
mod tests;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

pub use adam::{adam_update, AdamState, ADAM_EPSILON};
pub use config::{sample_camera, CameraDistribution, CameraMode, TrainConfig};
pub use schedule::{EventKind, EventLosses, Schedule, StepKind, TrainEvent};
pub use trainer::{preview_camera, StepOutcome, TrainSummary, Trainer, UpdateMask};

use crate::field::FieldError;
use crate::geometry::GeometryError;
use crate::render::{ImageError, RenderError};
use crate::scene::Violation;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("invalid scene: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidScene(Vec<Violation>),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("no object group {0}")]
    UnknownGroup(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Sees every event as it happens and may stop the run between steps.
pub trait TrainObserver {
    fn on_event(&mut self, event: &TrainEvent, trainer: &Trainer) -> Result<(), TrainError>;

    fn cancelled(&self) -> bool {
        false
    }
}

impl TrainObserver for () {
    fn on_event(&mut self, _: &TrainEvent, _: &Trainer) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for Vec<TrainEvent> {
    fn on_event(&mut self, event: &TrainEvent, _: &Trainer) -> Result<(), TrainError> {
        self.push(event.clone());
        Ok(())
    }
}

type ProgressFn = Box<dyn FnMut(&TrainEvent, Option<&Path>) + Send>;

/// Writes `events.jsonl`, periodic previews under `previews/` and periodic
/// checkpoints under `checkpoints/iter_NNNNNN/`.
pub struct RunRecorder {
    out_dir: PathBuf,
    events: BufWriter<File>,
    preview_interval: u64,
    checkpoint_interval: u64,
    latest_preview: Option<PathBuf>,
    cancel: Option<Arc<AtomicBool>>,
    progress: Option<ProgressFn>,
}

impl RunRecorder {
    pub fn create(out_dir: impl Into<PathBuf>, config: &TrainConfig) -> Result<Self, TrainError> {
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir)?;
        let events = BufWriter::new(File::create(out_dir.join("events.jsonl"))?);
        Ok(Self {
            out_dir,
            events,
            preview_interval: config.preview_interval,
            checkpoint_interval: config.checkpoint_interval,
            latest_preview: None,
            cancel: None,
            progress: None,
        })
    }

    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    /// Called after each event with the newest preview path, if any.
    pub fn with_progress(mut self, f: impl FnMut(&TrainEvent, Option<&Path>) + Send + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn latest_preview(&self) -> Option<&Path> {
        self.latest_preview.as_deref()
    }

    fn write_preview(&mut self, iter: u64, trainer: &Trainer) -> Result<(), TrainError> {
        let dir = self.out_dir.join("previews");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("iter_{iter:06}.png"));
        trainer.preview(trainer.config().render_resolution)?.write_png(&path)?;
        self.latest_preview = Some(path);
        Ok(())
    }
}

impl TrainObserver for RunRecorder {
    fn on_event(&mut self, event: &TrainEvent, trainer: &Trainer) -> Result<(), TrainError> {
        serde_json::to_writer(&mut self.events, event).map_err(std::io::Error::other)?;
        self.events.write_all(b"\n")?;
        self.events.flush()?;
        if self.preview_interval > 0 && event.iter.is_multiple_of(self.preview_interval) {
            self.write_preview(event.iter, trainer)?;
        }
        if self.checkpoint_interval > 0 && event.iter.is_multiple_of(self.checkpoint_interval) {
            let dir = self.out_dir.join("checkpoints").join(format!("iter_{:06}", event.iter));
            trainer.fields().save_checkpoints(&dir)?;
        }
        if let Some(f) = self.progress.as_mut() {
            f(event, self.latest_preview.as_deref());
        }
        Ok(())
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }
}
