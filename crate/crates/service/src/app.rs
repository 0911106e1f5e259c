//! Job stages on top of the stores. Every method here is synchronous and
//! may take seconds; HTTP handlers call them on the blocking pool.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stylegallery_core::clustering::mask_io::{decode_labels, encode_png, MaskSidecar};
use stylegallery_core::clustering::ClusterMask;
use stylegallery_core::matching::apply_overrides;
use stylegallery_core::pipeline::{analyze_image, match_images, prepare_image, run_transfer, ImageAnalysis};
use stylegallery_core::{BackendKind, Error as CoreError, ImageRecord, ImageRole, Override, PipelineConfig, Providers};

use crate::error::ApiError;
use crate::events::EventHub;
use crate::job::{
    Action, EventKind, ImageRef, JobMasks, JobResult, JobState, MaskRef, Progress, ProgressEvent, TransferJob,
};
use crate::store::{BlobStore, JobStore};

pub const ENV_DATA_DIR: &str = "STYLEGALLERY_DATA_DIR";
pub const ENV_PORT: &str = "STYLEGALLERY_PORT";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Backend for jobs whose config does not name one.
    pub backend: BackendKind,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("stylegallery-data"),
            port: 8080,
            backend: BackendKind::Synthetic,
        }
    }
}

impl ServiceConfig {
    /// Reads `STYLEGALLERY_DATA_DIR`, `STYLEGALLERY_PORT` and
    /// `STYLEGALLERY_BACKEND` over the defaults.
    pub fn from_env() -> Result<Self, ApiError> {
        let mut cfg = Self::default();
        if let Ok(dir) = std::env::var(ENV_DATA_DIR) {
            cfg.data_dir = dir.into();
        }
        if let Ok(port) = std::env::var(ENV_PORT) {
            cfg.port = port
                .parse()
                .map_err(|_| ApiError::Validation(format!("{ENV_PORT}=`{port}` is not a port number")))?;
        }
        if let Ok(kind) = std::env::var(stylegallery_core::config::ENV_BACKEND) {
            cfg.backend = kind.parse()?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ImageUpload {
    #[serde(default)]
    pub id: Option<String>,
    pub png_base64: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateJobRequest {
    pub content: ImageUpload,
    #[serde(default)]
    pub styles: Vec<ImageUpload>,
    /// Partial config tree merged over the defaults.
    #[serde(default)]
    pub config: Option<Value>,
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct OverridesRequest {
    pub overrides: Vec<Override>,
    /// Job version the edit was based on; a newer job refuses it.
    #[serde(default)]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedMask {
    pub image_id: String,
    pub png_base64: String,
    pub sidecar: MaskSidecar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasksResponse {
    pub content: EncodedMask,
    pub styles: Vec<EncodedMask>,
}

struct Analyses {
    content: ImageAnalysis,
    styles: Vec<ImageAnalysis>,
}

#[derive(Default)]
struct JobRuntime {
    hub: EventHub,
    analyses: Mutex<Option<Arc<Analyses>>>,
    cancel: Mutex<Option<Arc<AtomicBool>>>,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub blobs: BlobStore,
    pub jobs: JobStore,
    runtime: Mutex<HashMap<String, Arc<JobRuntime>>>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// `patch` merged over `base`, validated.
pub fn patched_config(base: &PipelineConfig, patch: Option<Value>) -> Result<PipelineConfig, ApiError> {
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    if !patch.is_object() {
        return Err(ApiError::Validation("config patch must be a JSON object".into()));
    }
    let mut tree = serde_json::to_value(base).map_err(|e| ApiError::Internal(e.to_string()))?;
    merge(&mut tree, patch);
    let cfg: PipelineConfig =
        serde_json::from_value(tree).map_err(|e| ApiError::Validation(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

fn conflict(job: &TransferJob, what: &str) -> ApiError {
    ApiError::Conflict(format!("cannot {what} job `{}` in state {}", job.id, job.state.as_str()))
}

fn check(job: &TransferJob, action: Action, what: &str) -> Result<(), ApiError> {
    job.state.apply(action).map(|_| ()).ok_or_else(|| conflict(job, what))
}

impl AppState {
    /// Opens the stores under `config.data_dir`. Jobs left running by a
    /// previous process are marked failed.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ApiError> {
        let blobs = BlobStore::open(&config.data_dir.join("blobs"))?;
        let jobs = JobStore::open(&config.data_dir.join("jobs"))?;
        let state = Arc::new(Self {
            config,
            blobs,
            jobs,
            runtime: Mutex::new(HashMap::new()),
        });
        for entry in std::fs::read_dir(state.config.data_dir.join("jobs"))? {
            let path = entry?.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            if path.extension().is_some_and(|e| e == "json") && state.jobs.get(&id)?.state == JobState::Running {
                state.jobs.update(&id, None, |j| {
                    j.state = JobState::Failed;
                    j.error = Some("service restarted while the run was in progress".into());
                    Ok(())
                })?;
            }
        }
        Ok(state)
    }

    fn runtime(&self, id: &str) -> Arc<JobRuntime> {
        self.runtime
            .lock()
            .expect("runtime map")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn providers(cfg: &PipelineConfig) -> Result<Providers, ApiError> {
        Ok(Providers::from_config(&cfg.backend)?)
    }

    fn load_image(&self, r: &ImageRef, role: ImageRole) -> Result<ImageRecord, ApiError> {
        Ok(ImageRecord::decode(r.id.clone(), &self.blobs.get(&r.blob)?, role)?)
    }

    fn load_mask(&self, r: &MaskRef) -> Result<ClusterMask, ApiError> {
        let labels = decode_labels(&self.blobs.get(&r.blob)?)?;
        if labels.iter().any(Option::is_none) {
            return Err(ApiError::Internal(format!("stored mask for `{}` has unknown cells", r.image_id)));
        }
        let mut mask = ClusterMask::from_labels(r.image_id.clone(), labels.mapv(Option::unwrap), r.sidecar.provenance);
        mask.warnings = r.sidecar.warnings.clone();
        Ok(mask)
    }

    pub fn create_job(&self, req: CreateJobRequest) -> Result<TransferJob, ApiError> {
        if req.styles.is_empty() {
            return Err(ApiError::Validation("at least one style image is required".into()));
        }
        let mut base = PipelineConfig::default();
        base.backend.kind = self.config.backend;
        let config = patched_config(&base, req.config)?;
        config.validate()?;
        let providers = Self::providers(&config)?;

        let store = |up: &ImageUpload, default_id: String, role| -> Result<ImageRef, ApiError> {
            let bytes = b64()
                .decode(up.png_base64.trim())
                .map_err(|e| ApiError::Format(format!("image `{default_id}` is not valid base64: {e}")))?;
            let id = up.id.clone().filter(|s| !s.is_empty()).unwrap_or(default_id);
            let img = ImageRecord::decode(id.clone(), &bytes, role)?;
            providers.denoiser.feature_grid(img.height(), img.width())?;
            Ok(ImageRef {
                id,
                blob: self.blobs.put(&img.encode_png()?)?,
                height: img.height(),
                width: img.width(),
            })
        };
        let content = store(&req.content, "content".into(), ImageRole::Content)?;
        let styles = req
            .styles
            .iter()
            .enumerate()
            .map(|(i, s)| store(s, format!("style-{i}"), ImageRole::Style))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ids: Vec<&str> = styles.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ApiError::Validation("style image ids must be unique".into()));
        }
        self.jobs.create(TransferJob {
            id: String::new(),
            version: 0,
            state: JobState::Created,
            content_image: content,
            style_images: styles,
            config,
            masks: None,
            matches: None,
            progress: Progress::default(),
            result: None,
            error: None,
        })
    }

    pub fn get_job(&self, id: &str) -> Result<TransferJob, ApiError> {
        self.jobs.get(id)
    }

    fn fail(&self, id: &str, err: &ApiError) {
        let msg = err.to_string();
        let _ = self.jobs.update(id, None, |j| {
            if j.transition(Action::Fail).is_ok() {
                j.error = Some(msg);
            }
            Ok(())
        });
    }

    /// Clusters the content and every style image. `patch` may adjust the
    /// job config first (for example `{"clustering": {"k_max": 6}}`).
    pub fn compute_masks(&self, id: &str, patch: Option<Value>) -> Result<TransferJob, ApiError> {
        let job = self.jobs.get(id)?;
        check(&job, Action::ComputeMasks, "compute masks for")?;
        let config = patched_config(&job.config, patch)?;
        let analyses = match self.analyze_all(&job, &config) {
            Ok(a) => a,
            Err(e) => {
                self.fail(id, &e);
                return Err(e);
            }
        };
        let mask_ref = |a: &ImageAnalysis| -> Result<MaskRef, ApiError> {
            Ok(MaskRef {
                image_id: a.image_id.clone(),
                blob: self.blobs.put(&encode_png(&a.mask)?)?,
                sidecar: MaskSidecar {
                    image_id: a.image_id.clone(),
                    n_clusters: a.mask.n_clusters,
                    provenance: a.mask.provenance,
                    grid_shape: a.mask.grid_shape(),
                    config: config.clustering.clone(),
                    warnings: a.mask.warnings.clone(),
                },
            })
        };
        let masks = JobMasks {
            content: mask_ref(&analyses.content)?,
            styles: analyses.styles.iter().map(mask_ref).collect::<Result<_, _>>()?,
        };
        let (job, _) = self.jobs.update(id, Some(job.version), |j| {
            j.transition(Action::ComputeMasks).map_err(|_| conflict(j, "compute masks for"))?;
            j.config = config;
            j.masks = Some(masks);
            Ok(())
        })?;
        *self.runtime(id).analyses.lock().expect("analyses") = Some(Arc::new(analyses));
        Ok(job)
    }

    fn analyze_all(&self, job: &TransferJob, config: &PipelineConfig) -> Result<Analyses, ApiError> {
        let providers = Self::providers(config)?;
        let content = self.load_image(&job.content_image, ImageRole::Content)?;
        let content = analyze_image(&providers, &content, config, None)?;
        let styles = job
            .style_images
            .iter()
            .map(|r| {
                let img = self.load_image(r, ImageRole::Style)?;
                Ok(analyze_image(&providers, &img, config, None)?)
            })
            .collect::<Result<_, ApiError>>()?;
        Ok(Analyses { content, styles })
    }

    /// Cached analyses, or features recomputed and combined with the stored
    /// masks (after a restart).
    fn analyses(&self, job: &TransferJob) -> Result<Arc<Analyses>, ApiError> {
        let rt = self.runtime(&job.id);
        if let Some(a) = rt.analyses.lock().expect("analyses").clone() {
            return Ok(a);
        }
        let masks = job.masks.as_ref().ok_or_else(|| conflict(job, "match"))?;
        let providers = Self::providers(&job.config)?;
        let rebuild = |r: &ImageRef, m: &MaskRef, role| -> Result<ImageAnalysis, ApiError> {
            let img = self.load_image(r, role)?;
            let mask = self.load_mask(m)?;
            let prep = prepare_image(&providers, &img, job.config.inversion.steps)?;
            Ok(ImageAnalysis {
                image_id: prep.image_id,
                fused: prep.fused,
                tokens: prep.tokens,
                depth: prep.depth,
                initial: mask.clone(),
                mask,
                extraction_site: prep.extraction_site,
            })
        };
        let a = Arc::new(Analyses {
            content: rebuild(&job.content_image, &masks.content, ImageRole::Content)?,
            styles: job
                .style_images
                .iter()
                .zip(&masks.styles)
                .map(|(r, m)| rebuild(r, m, ImageRole::Style))
                .collect::<Result<_, _>>()?,
        });
        *rt.analyses.lock().expect("analyses") = Some(a.clone());
        Ok(a)
    }

    pub fn masks(&self, id: &str) -> Result<MasksResponse, ApiError> {
        let job = self.jobs.get(id)?;
        let masks = job
            .masks
            .as_ref()
            .ok_or_else(|| ApiError::Conflict(format!("job `{id}` has no masks yet (state {})", job.state.as_str())))?;
        let enc = |m: &MaskRef| -> Result<EncodedMask, ApiError> {
            Ok(EncodedMask {
                image_id: m.image_id.clone(),
                png_base64: b64().encode(self.blobs.get(&m.blob)?),
                sidecar: m.sidecar.clone(),
            })
        };
        Ok(MasksResponse {
            content: enc(&masks.content)?,
            styles: masks.styles.iter().map(enc).collect::<Result<_, _>>()?,
        })
    }

    /// Automatic gallery matching; replaces any earlier table and overrides.
    pub fn preview_matches(&self, id: &str) -> Result<TransferJob, ApiError> {
        let job = self.jobs.get(id)?;
        check(&job, Action::PreviewMatches, "preview matches for")?;
        let a = self.analyses(&job)?;
        let table = match match_images(&a.content, &a.styles, &job.config, &[]) {
            Ok((t, _, _)) => t,
            Err(e) => {
                let e = ApiError::from(e);
                self.fail(id, &e);
                return Err(e);
            }
        };
        let (job, _) = self.jobs.update(id, Some(job.version), |j| {
            j.transition(Action::PreviewMatches)
                .map_err(|_| conflict(j, "preview matches for"))?;
            j.matches = Some(table);
            Ok(())
        })?;
        Ok(job)
    }

    pub fn put_overrides(&self, id: &str, req: OverridesRequest) -> Result<TransferJob, ApiError> {
        let job = self.jobs.get(id)?;
        check(&job, Action::Override, "override matches of")?;
        let a = self.analyses(&job)?;
        let c = a.content.describe(job.config.matching.min_tokens)?;
        let mut s = Vec::new();
        for st in &a.styles {
            s.extend(st.describe(job.config.matching.min_tokens)?);
        }
        let table = job.matches.as_ref().ok_or_else(|| conflict(&job, "override matches of"))?;
        let table = apply_overrides(table, &req.overrides, &c, &s, &job.config.matching.similarity)?;
        let expected = req.version.unwrap_or(job.version);
        let (job, _) = self.jobs.update(id, Some(expected), |j| {
            j.transition(Action::Override).map_err(|_| conflict(j, "override matches of"))?;
            j.matches = Some(table);
            Ok(())
        })?;
        Ok(job)
    }

    /// Starts a transfer on a worker thread, cancelling any run in flight.
    /// `patch` may adjust the job config (for example `{"transfer":
    /// {"lambda_c": 0.29}}`).
    pub fn start_run(self: &Arc<Self>, id: &str, patch: Option<Value>) -> Result<TransferJob, ApiError> {
        let job = self.jobs.get(id)?;
        check(&job, Action::Run, "run")?;
        if job.matches.is_none() || job.masks.is_none() {
            return Err(conflict(&job, "run"));
        }
        let config = patched_config(&job.config, patch)?;
        let rt = self.runtime(id);
        let cancel = Arc::new(AtomicBool::new(false));
        let (job, run) = self.jobs.update(id, Some(job.version), |j| {
            j.transition(Action::Run).map_err(|_| conflict(j, "run"))?;
            let run = j.progress.run + 1;
            j.config = config;
            j.progress = Progress {
                run,
                step: 0,
                total: j.config.transfer.opt_steps,
                percent: 0.0,
                last: None,
            };
            j.result = None;
            j.error = None;
            rt.hub.start_run(run);
            if let Some(prev) = rt.cancel.lock().expect("cancel slot").replace(cancel.clone()) {
                prev.store(true, Ordering::Relaxed);
            }
            Ok(run)
        })?;
        let state = Arc::clone(self);
        let snapshot = job.clone();
        std::thread::spawn(move || state.run_worker(snapshot, run, cancel));
        Ok(job)
    }

    fn event(job: &TransferJob, run: u64, seq: usize, kind: EventKind) -> ProgressEvent {
        ProgressEvent {
            job_id: job.id.clone(),
            run,
            seq,
            kind,
            step: 0,
            total: job.config.transfer.opt_steps,
            rsl: 0.0,
            gcl: 0.0,
            total_loss: 0.0,
            percent: 0.0,
            result_uri: None,
            error: None,
        }
    }

    fn run_worker(&self, job: TransferJob, run: u64, cancel: Arc<AtomicBool>) {
        let rt = self.runtime(&job.id);
        let total = job.config.transfer.opt_steps;
        let mut seq = 0;
        let outcome = (|| -> Result<_, ApiError> {
            let providers = Self::providers(&job.config)?;
            let masks = job.masks.as_ref().expect("checked before start");
            let content = self.load_image(&job.content_image, ImageRole::Content)?;
            let styles = job
                .style_images
                .iter()
                .map(|r| self.load_image(r, ImageRole::Style))
                .collect::<Result<Vec<_>, _>>()?;
            let content_mask = self.load_mask(&masks.content)?;
            let style_masks = masks.styles.iter().map(|m| self.load_mask(m)).collect::<Result<Vec<_>, _>>()?;
            let table = job.matches.clone().expect("checked before start");
            let mut observer = |r: &stylegallery_core::LossReport, _: &stylegallery_core::LatentState| {
                seq += 1;
                let percent = 100.0 * r.step as f64 / total as f64;
                rt.hub.publish(ProgressEvent {
                    step: r.step,
                    rsl: r.rsl,
                    gcl: r.gcl,
                    total_loss: r.total,
                    percent,
                    ..Self::event(&job, run, seq, EventKind::Progress)
                });
                let _ = self.jobs.update(&job.id, None, |j| {
                    if j.progress.run == run && j.state == JobState::Running {
                        j.progress.step = r.step;
                        j.progress.percent = percent;
                        j.progress.last = Some(r.clone());
                    }
                    Ok(())
                });
            };
            let out = run_transfer(
                &providers,
                &content,
                &styles,
                &content_mask,
                &style_masks,
                &table,
                &job.config.transfer,
                &mut observer,
                Some(&cancel),
            );
            Ok((out, table))
        })();
        seq += 1;
        let uri = format!("/jobs/{}/result", job.id);
        match outcome {
            Ok((Ok(out), table)) => {
                let stored = out
                    .image
                    .encode_png()
                    .map_err(ApiError::from)
                    .and_then(|png| Ok(self.blobs.put(&png)?));
                match stored {
                    Ok(blob) => {
                        let image_id = out.image.id.clone();
                        let updated = self.jobs.update(&job.id, None, |j| {
                            if j.progress.run != run || j.transition(Action::Finish).is_err() {
                                return Ok(false);
                            }
                            j.result = Some(JobResult {
                                run,
                                uri: uri.clone(),
                                blob,
                                image_id,
                                matches: table,
                            });
                            Ok(true)
                        });
                        if matches!(updated, Ok((_, true))) {
                            rt.hub.publish(ProgressEvent {
                                step: total,
                                percent: 100.0,
                                result_uri: Some(uri),
                                ..Self::event(&job, run, seq, EventKind::Done)
                            });
                        } else {
                            rt.hub.publish(Self::event(&job, run, seq, EventKind::Cancelled));
                        }
                    }
                    Err(e) => self.finish_failed(&job, run, seq, &e),
                }
            }
            Ok((Err(CoreError::Cancelled(step)), _)) => rt.hub.publish(ProgressEvent {
                step,
                ..Self::event(&job, run, seq, EventKind::Cancelled)
            }),
            Ok((Err(e), _)) => self.finish_failed(&job, run, seq, &ApiError::from(e)),
            Err(e) => self.finish_failed(&job, run, seq, &e),
        }
    }

    fn finish_failed(&self, job: &TransferJob, run: u64, seq: usize, err: &ApiError) {
        let msg = err.to_string();
        let _ = self.jobs.update(&job.id, None, |j| {
            if j.progress.run == run && j.transition(Action::Fail).is_ok() {
                j.error = Some(msg.clone());
            }
            Ok(())
        });
        self.runtime(&job.id).hub.publish(ProgressEvent {
            error: Some(msg),
            ..Self::event(job, run, seq, EventKind::Failed)
        });
    }

    /// The stylized PNG of a finished job.
    pub fn result_png(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let job = self.jobs.get(id)?;
        match (&job.state, &job.result) {
            (JobState::Done, Some(r)) => Ok(self.blobs.get(&r.blob)?),
            _ => Err(ApiError::Conflict(format!("job `{id}` has no result (state {})", job.state.as_str()))),
        }
    }

    /// Replay of the current run's events and a receiver for live ones.
    /// When nothing is in memory for a finished job, its terminal event is
    /// rebuilt from the document.
    pub fn subscribe(
        &self,
        id: &str,
    ) -> Result<(u64, Vec<ProgressEvent>, tokio::sync::broadcast::Receiver<ProgressEvent>, bool), ApiError> {
        let job = self.jobs.get(id)?;
        let (run, mut replay, rx) = self.runtime(id).hub.subscribe();
        if replay.is_empty() {
            let terminal = match job.state {
                JobState::Done => Some(ProgressEvent {
                    step: job.progress.total,
                    percent: 100.0,
                    result_uri: job.result.as_ref().map(|r| r.uri.clone()),
                    ..Self::event(&job, job.progress.run, 1, EventKind::Done)
                }),
                JobState::Failed => Some(ProgressEvent {
                    error: job.error.clone(),
                    ..Self::event(&job, job.progress.run, 1, EventKind::Failed)
                }),
                _ => None,
            };
            replay.extend(terminal);
        }
        let follow = job.state == JobState::Running && !replay.last().is_some_and(|e| e.kind.is_terminal());
        Ok((run, replay, rx, follow))
    }
}
