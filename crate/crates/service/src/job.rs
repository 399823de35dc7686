//! Job state machine and the background evolution loop.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use figac::config::PipelineConfig;
use figac::contour::Polyline;
use figac::edges::PromptSet;
use figac::io::ContourDoc;
use figac::levelset::extract_contour;
use figac::pipeline::{Fields, Runner};
use figac::ScalarField;
use serde::{Deserialize, Serialize};

use crate::store::{JobRecord, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Created,
    FieldsReady,
    Running,
    Paused,
    Converged,
    Failed,
}

impl JobState {
    pub fn accepts_prompts(self) -> bool {
        matches!(self, JobState::Created | JobState::FieldsReady | JobState::Paused)
    }

    pub fn can_run(self) -> bool {
        matches!(self, JobState::FieldsReady | JobState::Paused)
    }
}

/// Mutable part of a job; locked only briefly.
pub struct JobCore {
    pub state: JobState,
    pub config: PipelineConfig,
    pub fields: Arc<Fields>,
    /// Taken by the evolution task while running.
    pub runner: Option<Runner>,
    pub field_version: u64,
    pub error: Option<String>,
    /// Level set after the latest completed iteration.
    pub phi: Arc<ScalarField>,
    pub iteration: usize,
    pub snapshots: BTreeMap<usize, Arc<Vec<Polyline>>>,
}

pub struct Job {
    pub id: String,
    pub slice_id: String,
    core: Mutex<JobCore>,
    pause: AtomicBool,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: String,
    pub slice_id: String,
    pub state: JobState,
    pub iteration: usize,
    pub field_version: u64,
    pub error: Option<String>,
    pub config: PipelineConfig,
}

/// Why a transition was refused.
#[derive(Debug, thiserror::Error)]
pub enum TransitionError {
    #[error("job is {0:?}; {1}")]
    Illegal(JobState, &'static str),
    #[error(transparent)]
    Invalid(#[from] figac::Error),
}

impl Job {
    pub fn new(id: String, slice_id: String, core: JobCore) -> Self {
        Self {
            id,
            slice_id,
            core: Mutex::new(core),
            pause: AtomicBool::new(false),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, JobCore> {
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn view(&self) -> JobView {
        let c = self.lock();
        JobView {
            id: self.id.clone(),
            slice_id: self.slice_id.clone(),
            state: c.state,
            iteration: c.iteration,
            field_version: c.field_version,
            error: c.error.clone(),
            config: c.config.clone(),
        }
    }

    fn record(&self, c: &JobCore) -> JobRecord {
        JobRecord {
            slice_id: self.slice_id.clone(),
            state: c.state,
            iteration: c.iteration,
            field_version: c.field_version,
            error: c.error.clone(),
        }
    }

    pub fn persist(&self, store: &Store) -> std::io::Result<()> {
        let c = self.lock();
        store.save_job(&self.id, &self.record(&c), &c.config, &c.phi)
    }

    /// Replaces the prompt set, recomputing the stopping set and distance factor.
    /// The level set is kept so a paused evolution resumes where it stopped.
    pub fn set_prompts(&self, prompts: PromptSet) -> Result<u64, TransitionError> {
        let mut c = self.lock();
        if !c.state.accepts_prompts() {
            return Err(TransitionError::Illegal(c.state, "prompts can only change before running or while paused"));
        }
        let mut fields = (*c.fields).clone();
        fields.set_prompts(&prompts)?;
        if let Some(r) = c.runner.as_mut() {
            r.set_beta(fields.beta.clone());
        }
        c.fields = Arc::new(fields);
        c.config.prompts = prompts;
        c.field_version += 1;
        c.state = JobState::FieldsReady;
        Ok(c.field_version)
    }

    /// Moves to `running` and hands out what the evolution task needs.
    pub fn start(&self) -> Result<(Runner, PipelineConfig), TransitionError> {
        let mut c = self.lock();
        if !c.state.can_run() {
            return Err(TransitionError::Illegal(c.state, "only ready or paused jobs can run"));
        }
        let runner = c
            .runner
            .take()
            .ok_or(TransitionError::Illegal(c.state, "evolution state missing"))?;
        self.pause.store(false, Ordering::SeqCst);
        c.state = JobState::Running;
        Ok((runner, c.config.clone()))
    }

    pub fn request_pause(&self) -> Result<(), TransitionError> {
        let c = self.lock();
        if c.state != JobState::Running {
            return Err(TransitionError::Illegal(c.state, "only running jobs can pause"));
        }
        self.pause.store(true, Ordering::SeqCst);
        Ok(())
    }

    fn publish(&self, store: &Store, runner: &Runner) {
        let phi = Arc::new(runner.state.phi.clone());
        let iteration = runner.iter();
        let polylines = Arc::new(extract_contour(&phi));
        let doc = ContourDoc {
            iteration,
            polylines: (*polylines).clone(),
        };
        {
            let mut c = self.lock();
            c.phi = phi;
            c.iteration = iteration;
            c.snapshots.insert(iteration, polylines);
        }
        if let Err(e) = store.save_snapshot(&self.id, &doc) {
            log::warn!("job {}: cannot persist snapshot: {e}", self.id);
        }
    }

    /// Evolution loop; runs on a blocking thread. Publishes a snapshot every
    /// `snapshot_every` iterations (50 when unset) and after the last step.
    pub fn evolve(&self, store: &Store, mut runner: Runner, config: &PipelineConfig, iters: usize) {
        let every = config.snapshot_every.unwrap_or(50);
        let target = runner.iter() + iters;
        let mut outcome = Ok(false);
        while runner.iter() < target {
            if self.pause.load(Ordering::SeqCst) {
                break;
            }
            outcome = runner.step();
            if !matches!(outcome, Ok(false)) {
                break;
            }
            if runner.iter().is_multiple_of(every) && runner.iter() < target {
                self.publish(store, &runner);
            }
        }
        self.publish(store, &runner);
        {
            let mut c = self.lock();
            c.state = match &outcome {
                Ok(true) => JobState::Converged,
                Ok(false) => JobState::Paused,
                Err(e) => {
                    c.error = Some(e.to_string());
                    JobState::Failed
                }
            };
            c.runner = Some(runner);
        }
        if let Err(e) = self.persist(store) {
            log::warn!("job {}: cannot persist state: {e}", self.id);
        }
    }
}
