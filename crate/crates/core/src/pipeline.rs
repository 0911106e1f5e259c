//! Stage composition shared by the CLI and the service: per-image analysis
//! (inversion, fusion, clustering), gallery matching, guided transfer, and
//! the run manifest.

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Providers, SemanticTokenGrid};
use crate::clustering::{
    classification_accuracy, fuse_features, ingest_labels, initial_clusters, optimize_clusters, ClusterMask,
    ClusterOptConfig, FusionWeights,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::metrics::{block_features, gram_loss, style_score, MetricReport};
use crate::fixtures::AnnotatedFixture;
use crate::image::ImageRecord;
use crate::matching::{apply_overrides, describe_regions, match_gallery, MatchTable, Override, RegionDescriptor};
use crate::backends::LatentState;
use crate::transfer::{guided_sampling, LossConfig, LossReport, TransferInputs, TransferOutcome};

/// Everything clustering produced for one image.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    pub image_id: String,
    pub fused: Array3<f64>,
    pub tokens: SemanticTokenGrid,
    pub depth: Option<Array2<f64>>,
    pub initial: ClusterMask,
    pub mask: ClusterMask,
    pub extraction_site: String,
}

/// Inversion features fused and clustered once; optimization can then be
/// re-run cheaply with other settings.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image_id: String,
    pub fused: Array3<f64>,
    pub tokens: SemanticTokenGrid,
    pub depth: Option<Array2<f64>>,
    pub extraction_site: String,
}

pub fn prepare_image(providers: &Providers, image: &ImageRecord, inversion_steps: usize) -> Result<PreparedImage> {
    let den = &providers.denoiser;
    let (gh, _) = den.feature_grid(image.height(), image.width())?;
    let (stack, _) = den.invert_and_extract(image, inversion_steps)?;
    let stack = fuse_features(stack, &FusionWeights::new(inversion_steps)?)?;
    let tokens = providers.semantic.semantic_tokens(image)?;
    let depth = match &providers.depth {
        Some(d) => Some(d.depth_features(image, image.height() / gh)?),
        None => {
            log::info!("no depth provider; depth-guided split skipped for `{}`", image.id);
            None
        }
    };
    Ok(PreparedImage {
        image_id: image.id.clone(),
        fused: stack.fused.expect("fusion populates"),
        tokens,
        depth,
        extraction_site: stack.extraction_site,
    })
}

impl PreparedImage {
    /// Clusters from scratch (or from an external base mask, `None` marking
    /// unknown cells) and optimizes.
    pub fn cluster(
        &self,
        cfg: &ClusterOptConfig,
        seed: u64,
        base: Option<&Array2<Option<usize>>>,
    ) -> Result<(ClusterMask, ClusterMask)> {
        let (_, gh, gw) = self.fused.dim();
        let mut initial = match base {
            Some(ext) => ingest_labels(&self.image_id, ext, (gh, gw))?,
            None => initial_clusters(&self.image_id, &self.fused, cfg, seed)?,
        };
        let mut mask = optimize_clusters(&initial, self.depth.as_ref(), &self.tokens, cfg)?;
        if self.depth.is_none() && cfg.use_depth_split {
            mask.warnings.push("depth unavailable: split step skipped".into());
        }
        initial.warnings.dedup();
        Ok((initial, mask))
    }

    pub fn analyze(self, cfg: &ClusterOptConfig, seed: u64, base: Option<&Array2<Option<usize>>>) -> Result<ImageAnalysis> {
        let (initial, mask) = self.cluster(cfg, seed, base)?;
        Ok(ImageAnalysis {
            image_id: self.image_id,
            fused: self.fused,
            tokens: self.tokens,
            depth: self.depth,
            initial,
            mask,
            extraction_site: self.extraction_site,
        })
    }
}

pub fn analyze_image(
    providers: &Providers,
    image: &ImageRecord,
    cfg: &PipelineConfig,
    base: Option<&Array2<Option<usize>>>,
) -> Result<ImageAnalysis> {
    prepare_image(providers, image, cfg.inversion.steps)?.analyze(&cfg.clustering, cfg.backend.seed, base)
}

impl ImageAnalysis {
    pub fn describe(&self, min_tokens: usize) -> Result<Vec<RegionDescriptor>> {
        describe_regions(&self.mask, &self.fused, &self.tokens, min_tokens)
    }

    /// Replaces the mask (user edits), keeping features.
    pub fn with_mask(mut self, mask: ClusterMask) -> Self {
        self.mask = mask;
        self
    }
}

/// Region descriptors for content and the pooled gallery, and the match table.
pub fn match_images(
    content: &ImageAnalysis,
    styles: &[ImageAnalysis],
    cfg: &PipelineConfig,
    overrides: &[Override],
) -> Result<(MatchTable, Vec<RegionDescriptor>, Vec<RegionDescriptor>)> {
    let c = content.describe(cfg.matching.min_tokens)?;
    let mut s = Vec::new();
    for a in styles {
        s.extend(a.describe(cfg.matching.min_tokens)?);
    }
    let table = match_gallery(&c, &s, &cfg.matching.similarity)?;
    let table = apply_overrides(&table, overrides, &c, &s, &cfg.matching.similarity)?;
    Ok((table, c, s))
}

pub fn run_transfer(
    providers: &Providers,
    content: &ImageRecord,
    styles: &[ImageRecord],
    content_mask: &ClusterMask,
    style_masks: &[ClusterMask],
    table: &MatchTable,
    cfg: &LossConfig,
    observer: &mut dyn FnMut(&LossReport, &LatentState),
    cancel: Option<&AtomicBool>,
) -> Result<TransferOutcome> {
    let inputs = TransferInputs {
        content,
        styles,
        content_mask,
        style_masks,
        matches: table,
    };
    guided_sampling(providers.denoiser.as_ref(), &inputs, cfg, observer, cancel)
}

/// Output of the full content-plus-gallery pipeline.
#[derive(Debug, Clone)]
pub struct Stylized {
    pub content: ImageAnalysis,
    pub styles: Vec<ImageAnalysis>,
    pub table: MatchTable,
    pub outcome: TransferOutcome,
}

/// Clusters every image, matches against the pooled gallery and runs the
/// guided transfer.
pub fn stylize(
    providers: &Providers,
    content: &ImageRecord,
    styles: &[ImageRecord],
    cfg: &PipelineConfig,
    overrides: &[Override],
    observer: &mut dyn FnMut(&LossReport, &LatentState),
) -> Result<Stylized> {
    cfg.validate()?;
    let c = analyze_image(providers, content, cfg, None)?;
    let s = styles
        .iter()
        .map(|img| analyze_image(providers, img, cfg, None))
        .collect::<Result<Vec<_>>>()?;
    let (table, _, _) = match_images(&c, &s, cfg, overrides)?;
    let masks: Vec<ClusterMask> = s.iter().map(|a| a.mask.clone()).collect();
    let outcome = run_transfer(providers, content, styles, &c.mask, &masks, &table, &cfg.transfer, observer, None)?;
    Ok(Stylized {
        content: c,
        styles: s,
        table,
        outcome,
    })
}

/// Style score and Gram loss of `stylized` against `style`; FID and LPIPS
/// come from outside when available.
pub fn evaluate(
    providers: &Providers,
    stylized: &ImageRecord,
    style: &ImageRecord,
    fid: Option<f64>,
    lpips: Option<f64>,
) -> Result<MetricReport> {
    let a = block_features(stylized, providers.blocks.as_ref());
    let b = block_features(style, providers.blocks.as_ref());
    MetricReport::new(style_score(&a, &b)?.value, gram_loss(&a, &b)?.value, fid, lpips)
}

/// Suite accuracy at one merge threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub merge_threshold: f64,
    pub accuracy: f64,
    pub per_image: Vec<(String, f64)>,
}

/// Semantic classification accuracy of an annotated suite at each merge
/// threshold. Features and initial clusters are computed once per image.
pub fn threshold_sweep(
    providers: &Providers,
    suite: &[AnnotatedFixture],
    cfg: &PipelineConfig,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    if suite.is_empty() {
        return Err(Error::Argument("empty fixture suite".into()));
    }
    let mut points: Vec<SweepPoint> = thresholds
        .iter()
        .map(|&t| SweepPoint {
            merge_threshold: t,
            accuracy: 0.0,
            per_image: Vec::new(),
        })
        .collect();
    for f in suite {
        let prep = prepare_image(providers, &f.image, cfg.inversion.steps)?;
        let init = initial_clusters(&f.image.id, &prep.fused, &cfg.clustering, cfg.backend.seed)?;
        for p in &mut points {
            let c = ClusterOptConfig {
                merge_threshold: p.merge_threshold,
                ..cfg.clustering.clone()
            };
            let mask = optimize_clusters(&init, prep.depth.as_ref(), &prep.tokens, &c)?;
            let acc = classification_accuracy(&mask, &f.regions)?;
            p.accuracy += acc / suite.len() as f64;
            p.per_image.push((f.image.id.clone(), acc));
        }
    }
    Ok(points)
}

/// Config keys a sweep can vary.
pub const SWEEP_KEYS: &[&str] = &["lambda_c", "eta", "opt_steps", "k_max", "merge_threshold"];

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(text: &str) -> Result<(String, Vec<f64>)> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("sweep `{text}` is not of the form key=v1,v2")))?;
    let key = key.trim();
    if !SWEEP_KEYS.contains(&key) {
        return Err(Error::Argument(format!("cannot sweep `{key}`; expected one of {}", SWEEP_KEYS.join(", "))));
    }
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("sweep value `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((key.to_string(), values))
}

/// `cfg` with sweep key `key` set to `value`, validated.
pub fn with_knob(cfg: &PipelineConfig, key: &str, value: f64) -> Result<PipelineConfig> {
    let mut out = cfg.clone();
    let count = |v: f64| {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Argument(format!("{key} must be a whole number, got {v}")))
        }
    };
    match key {
        "lambda_c" => out.transfer.lambda_c = value,
        "eta" => out.transfer.eta = value,
        "opt_steps" => out.transfer.opt_steps = count(value)?,
        "k_max" => out.clustering.k_max = count(value)?,
        "merge_threshold" => out.clustering.merge_threshold = value,
        other => return Err(Error::Argument(format!("unknown sweep key `{other}`"))),
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub content: String,
    pub style: String,
    pub result_hash: String,
    pub metrics: MetricReport,
}

/// Mean metrics of every pair at one value of the swept key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub key: String,
    pub value: f64,
    pub style: f64,
    pub gram: f64,
    pub pairs: Vec<PairScore>,
}

/// Stylizes every (content, style) pair at every value and scores the
/// result against its style. Pairs are spread over `jobs` threads; the
/// output does not depend on `jobs`.
pub fn eval_sweep(
    providers: &Providers,
    pairs: &[(ImageRecord, ImageRecord)],
    cfg: &PipelineConfig,
    key: &str,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<EvalPoint>> {
    if pairs.is_empty() || values.is_empty() {
        return Err(Error::Argument("sweep needs at least one pair and one value".into()));
    }
    let configs = values.iter().map(|&v| with_knob(cfg, key, v)).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|v| (0..pairs.len()).map(move |p| (v, p))).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new((0..tasks.len()).map(|_| None).collect::<Vec<_>>());
    let run = |(v, p): (usize, usize)| -> Result<PairScore> {
        let (content, style) = &pairs[p];
        let out = stylize(providers, content, std::slice::from_ref(style), &configs[v], &[], &mut |_, _| {})?;
        Ok(PairScore {
            content: content.id.clone(),
            style: style.id.clone(),
            result_hash: out.outcome.image.content_hash(),
            metrics: evaluate(providers, &out.outcome.image, style, None, None)?,
        })
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let r = run(tasks[i]);
                results.lock().expect("results")[i] = Some(r);
            });
        }
    });
    let mut scores = results.into_inner().expect("results").into_iter().map(|r| r.expect("every task ran"));
    values
        .iter()
        .map(|&value| {
            let pairs = scores.by_ref().take(pairs.len()).collect::<Result<Vec<_>>>()?;
            let n = pairs.len() as f64;
            Ok(EvalPoint {
                key: key.to_string(),
                value,
                style: pairs.iter().map(|p| p.metrics.style).sum::<f64>() / n,
                gram: pairs.iter().map(|p| p.metrics.gram).sum::<f64>() / n,
                pairs,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one scripted run: enough to reproduce it and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub extraction_site: String,
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            seed: config.transfer.seed,
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, image: &ImageRecord) {
        self.input_hashes.insert(image.id.clone(), image.content_hash());
    }

    pub fn add_output(&mut self, name: &str, path: &str, bytes: &[u8]) {
        self.outputs.insert(name.into(), path.into());
        self.output_hashes.insert(name.into(), sha256_hex(bytes));
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(stage.into(), start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{checker, landscape, two_tone};

    #[test]
    fn sweep_spec_parses() {
        let (k, v) = parse_sweep("lambda_c=0.22,0.26, 0.29").unwrap();
        assert_eq!(k, "lambda_c");
        assert_eq!(v, vec![0.22, 0.26, 0.29]);
        assert!(parse_sweep("lambda_c").is_err());
        assert!(parse_sweep("gamma=1").is_err());
        assert!(parse_sweep("eta=x").is_err());
    }

    #[test]
    fn knobs_are_validated() {
        let cfg = PipelineConfig::default();
        assert_eq!(with_knob(&cfg, "k_max", 6.0).unwrap().clustering.k_max, 6);
        assert_eq!(with_knob(&cfg, "lambda_c", 0.29).unwrap().transfer.lambda_c, 0.29);
        assert!(with_knob(&cfg, "k_max", 2.5).is_err());
        assert!(with_knob(&cfg, "eta", -1.0).is_err());
    }

    #[test]
    fn style_against_itself_scores_perfectly() {
        let providers = Providers::synthetic(0);
        let img = landscape(128, 128);
        let r = evaluate(&providers, &img, &img, None, None).unwrap();
        assert!((r.style - 1.0).abs() < 1e-12);
        assert!(r.gram.abs() < 1e-12);
        assert_eq!(r.artfid, None);
    }

    #[test]
    fn sweep_output_ignores_thread_count() {
        let providers = Providers::synthetic(0);
        let mut s1 = checker(128, 128);
        s1.id = "s1".into();
        let mut s2 = two_tone(128, 128);
        s2.id = "s2".into();
        let c = landscape(128, 128);
        let pairs = vec![(c.clone(), s1), (c, s2)];
        let mut cfg = PipelineConfig::default();
        cfg.transfer.opt_steps = 3;
        let one = eval_sweep(&providers, &pairs, &cfg, "lambda_c", &[0.1, 0.5], 1).unwrap();
        let four = eval_sweep(&providers, &pairs, &cfg, "lambda_c", &[0.1, 0.5], 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].pairs[1].style, "s2");
        assert_ne!(one[0].pairs[0].result_hash, one[1].pairs[0].result_hash);
    }
}
