use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use stylegallery_core::clustering::mask_io::{decode_labels, write_mask};
use stylegallery_core::fixtures::annotated_suite;
use stylegallery_core::pipeline::{
    analyze_image, eval_sweep, evaluate, match_images, parse_sweep, run_transfer, threshold_sweep, ImageAnalysis,
};
use stylegallery_core::{
    ClusterMask, ImageRecord, ImageRole, LossReport, MatchTable, Override, PipelineConfig, Provenance, Providers,
    RunManifest,
};
use stylegallery_service::ServiceConfig;

use crate::{Cli, CliError, ClusterArgs, Command, EvalArgs, FixturesArgs, Knobs, MatchArgs, ServeArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Cluster(a) if a.suite => cluster_suite(cli, a),
        Command::Cluster(a) => cluster(cli, a),
        Command::Match(a) => matching(cli, a, false),
        Command::Transfer(a) => matching(cli, a, true),
        Command::Eval(a) if a.sweep.is_some() => eval_sweep_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Serve(a) => serve(cli, a),
        Command::Fixtures(a) => fixtures(a),
    }
}

/// Defaults, then the config file, `STYLEGALLERY_BACKEND`, `--backend`, and
/// the knob flags.
fn config(cli: &Cli, knobs: &Knobs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Validation(format!("config file {} does not exist", p.display())))
        }
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(kind) = cli.backend {
        cfg.backend.kind = kind;
    }
    if let Some(v) = knobs.lambda_c {
        cfg.transfer.lambda_c = v;
    }
    if let Some(v) = knobs.k_max {
        cfg.clustering.k_max = v;
    }
    if let Some(v) = knobs.merge_threshold {
        cfg.clustering.merge_threshold = v;
    }
    if let Some(v) = knobs.opt_steps {
        cfg.transfer.opt_steps = v;
    }
    if let Some(v) = knobs.eta {
        cfg.transfer.eta = v;
    }
    if let Some(v) = knobs.seed {
        cfg.backend.seed = v;
        cfg.transfer.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn providers(cfg: &PipelineConfig) -> Result<Providers, CliError> {
    Ok(Providers::from_config(&cfg.backend)?)
}

fn load(path: &Path, role: ImageRole) -> Result<ImageRecord, CliError> {
    ImageRecord::load(path, role).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

struct Artifacts {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Artifacts {
    fn new(dir: &Path, command: &str, cfg: &PipelineConfig, providers: &Providers) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = RunManifest::new(command, cfg);
        manifest.extraction_site = providers.denoiser.extraction_site().to_string();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn write(&mut self, name: &str, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.manifest.add_output(name, rel, bytes);
        Ok(())
    }

    fn json(&mut self, name: &str, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, rel, &serde_json::to_vec_pretty(value)?)
    }

    fn mask(&mut self, mask: &ClusterMask, cfg: &PipelineConfig) -> Result<(), CliError> {
        let (png, json) = write_mask(&self.dir.join("masks"), &mask.image_id, mask, &cfg.clustering)?;
        for (kind, path) in [("mask", png), ("sidecar", json)] {
            let rel = path.strip_prefix(&self.dir).unwrap_or(&path).display().to_string();
            self.manifest.add_output(&format!("{kind}:{}", mask.image_id), &rel, &std::fs::read(&path)?);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        let manifest = std::mem::take(&mut self.manifest);
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        std::fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn mask_summary(mask: &ClusterMask) -> serde_json::Value {
    json!({
        "image": mask.image_id,
        "n_clusters": mask.n_clusters,
        "areas": mask.areas(),
        "provenance": mask.provenance,
        "warnings": mask.warnings,
    })
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> Result<(), CliError> {
    let cfg = config(cli, &a.knobs)?;
    let providers = providers(&cfg)?;
    let path = a.image.as_ref().expect("clap requires --image without --suite");
    let image = load(path, ImageRole::Content)?;
    let base = match &a.base_mask {
        Some(p) => Some(decode_labels(&std::fs::read(p).map_err(|e| {
            CliError::Validation(format!("{}: {e}", p.display()))
        })?)?),
        None => None,
    };
    let mut out = Artifacts::new(&a.out, "cluster", &cfg, &providers)?;
    out.manifest.add_input(&image);
    let analysis = out.manifest.timed("cluster", || analyze_image(&providers, &image, &cfg, base.as_ref()))?;
    out.mask(&analysis.mask, &cfg)?;
    out.json("report", "report.json", &mask_summary(&analysis.mask))?;
    println!("{}: {} clusters", image.id, analysis.mask.n_clusters);
    for w in &analysis.mask.warnings {
        log::warn!("{}: {w}", image.id);
    }
    out.finish()
}

fn cluster_suite(cli: &Cli, a: &ClusterArgs) -> Result<(), CliError> {
    let cfg = config(cli, &a.knobs)?;
    let providers = providers(&cfg)?;
    let thresholds = if a.thresholds.is_empty() {
        vec![cfg.clustering.merge_threshold]
    } else {
        a.thresholds.clone()
    };
    let mut out = Artifacts::new(&a.out, "cluster --suite", &cfg, &providers)?;
    let suite = annotated_suite();
    for f in &suite {
        out.manifest.add_input(&f.image);
    }
    let points = out
        .manifest
        .timed("sweep", || threshold_sweep(&providers, &suite, &cfg, &thresholds))?;
    for p in &points {
        println!("merge_threshold {:.2}: accuracy {:.3}", p.merge_threshold, p.accuracy);
    }
    out.json("report", "report.json", &json!({ "fixtures": suite.len(), "points": points }))?;
    out.finish()
}

fn read_overrides(path: Option<&PathBuf>) -> Result<Vec<Override>, CliError> {
    let Some(p) = path else {
        return Ok(Vec::new());
    };
    let bytes = std::fs::read(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

#[derive(Serialize)]
struct TransferReport<'a> {
    result_hash: String,
    steps: usize,
    final_loss: Option<&'a LossReport>,
    matches: &'a MatchTable,
    losses: Vec<[f64; 3]>,
}

fn matching(cli: &Cli, a: &MatchArgs, transfer: bool) -> Result<(), CliError> {
    let cfg = config(cli, &a.knobs)?;
    let providers = providers(&cfg)?;
    let overrides = read_overrides(a.overrides.as_ref())?;
    let content = load(&a.content, ImageRole::Content)?;
    let styles = a
        .styles
        .iter()
        .map(|p| load(p, ImageRole::Style))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ids: Vec<&str> = std::iter::once(&content).chain(&styles).map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Validation("input images need distinct file names".into()));
    }

    let mut out = Artifacts::new(&a.out, if transfer { "transfer" } else { "match" }, &cfg, &providers)?;
    for img in std::iter::once(&content).chain(&styles) {
        out.manifest.add_input(img);
    }
    let (c, s) = out.manifest.timed("cluster", || -> Result<_, CliError> {
        let c = analyze_image(&providers, &content, &cfg, None)?;
        let s = styles
            .iter()
            .map(|img| analyze_image(&providers, img, &cfg, None))
            .collect::<Result<Vec<ImageAnalysis>, _>>()?;
        Ok((c, s))
    })?;
    for m in std::iter::once(&c.mask).chain(s.iter().map(|a| &a.mask)) {
        out.mask(m, &cfg)?;
    }
    let (table, _, _) = out.manifest.timed("match", || match_images(&c, &s, &cfg, &overrides))?;
    out.json("matches", "matches.json", &table)?;
    println!("{} content regions matched across {} style images", table.entries.len(), styles.len());
    if !transfer {
        return out.finish();
    }

    let masks: Vec<ClusterMask> = s.iter().map(|a| a.mask.clone()).collect();
    let total = cfg.transfer.opt_steps;
    let mut observer = |r: &LossReport, _: &_| {
        if r.step % 10 == 0 || r.step == total {
            log::info!("step {}/{total}: rsl {:.4e} gcl {:.4e} total {:.4e}", r.step, r.rsl, r.gcl, r.total);
        }
    };
    let outcome = out.manifest.timed("transfer", || {
        run_transfer(&providers, &content, &styles, &c.mask, &masks, &table, &cfg.transfer, &mut observer, None)
    })?;
    let png = outcome.image.encode_png()?;
    out.write("result", "result.png", &png)?;
    let report = TransferReport {
        result_hash: outcome.image.content_hash(),
        steps: outcome.reports.len(),
        final_loss: outcome.reports.last(),
        matches: &table,
        losses: outcome.reports.iter().map(|r| [r.rsl, r.gcl, r.total]).collect(),
    };
    out.json("report", "report.json", &report)?;
    println!("result {}", report.result_hash);
    out.finish()
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let cfg = config(cli, &a.knobs)?;
    let providers = providers(&cfg)?;
    let stylized = load(a.stylized.as_ref().expect("clap requires --stylized"), ImageRole::Content)?;
    let style = load(a.style.as_ref().expect("clap requires --style"), ImageRole::Style)?;
    let report = evaluate(&providers, &stylized, &style, a.fid, a.lpips)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = &a.out {
        let mut out = Artifacts::new(dir, "eval", &cfg, &providers)?;
        out.manifest.add_input(&stylized);
        out.manifest.add_input(&style);
        out.json("report", "report.json", &report)?;
        out.finish()?;
    }
    Ok(())
}

fn eval_sweep_cmd(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let cfg = config(cli, &a.knobs)?;
    let providers = providers(&cfg)?;
    let (key, values) = parse_sweep(a.sweep.as_deref().expect("checked by caller"))?;
    if a.jobs == 0 {
        return Err(CliError::Validation("--jobs must be >= 1".into()));
    }
    let contents = a
        .content
        .iter()
        .map(|p| load(p, ImageRole::Content))
        .collect::<Result<Vec<_>, _>>()?;
    let styles = a
        .styles
        .iter()
        .map(|p| load(p, ImageRole::Style))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<_> = contents
        .iter()
        .flat_map(|c| styles.iter().map(move |s| (c.clone(), s.clone())))
        .collect();
    let start = std::time::Instant::now();
    let points = eval_sweep(&providers, &pairs, &cfg, &key, &values, a.jobs)?;
    let elapsed = start.elapsed();
    for p in &points {
        println!("{}={}: style {:.4} gram {:.4e} ({} pairs)", p.key, p.value, p.style, p.gram, p.pairs.len());
    }
    if let Some(dir) = &a.out {
        let mut out = Artifacts::new(dir, "eval --sweep", &cfg, &providers)?;
        for img in contents.iter().chain(&styles) {
            out.manifest.add_input(img);
        }
        out.manifest.timings_ms.insert("sweep".into(), elapsed.as_secs_f64() * 1e3);
        out.json("report", "report.json", &json!({ "key": key, "jobs": a.jobs, "points": points }))?;
        out.finish()?;
    }
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<(), CliError> {
    let mut sc = ServiceConfig::from_env().map_err(|e| CliError::Validation(e.to_string()))?;
    if cli.config.is_some() || cli.backend.is_some() {
        sc.backend = config(cli, &Knobs::default())?.backend.kind;
    }
    if let Some(p) = a.port {
        sc.port = p;
    }
    if let Some(d) = &a.data_dir {
        sc.data_dir = d.clone();
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("serving on port {} with data in {}", sc.port, sc.data_dir.display());
    rt.block_on(stylegallery_service::serve(sc))
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn fixtures(a: &FixturesArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.out)?;
    let suite = annotated_suite();
    for f in &suite {
        f.image.save_png(&a.out.join(format!("{}.png", f.image.id)))?;
        let regions = ClusterMask::from_labels(f.image.id.clone(), f.regions.clone(), Provenance::ExternalBase);
        write_mask(&a.out, &f.image.id, &regions, &PipelineConfig::default().clustering)?;
    }
    println!("wrote {} fixtures to {}", suite.len(), a.out.display());
    Ok(())
}
