//! End-to-end experiment pipelines shared by the subcommands.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use spadfuse_core::akf::{deblur_window, fuse, FusionConfig, FusionOutput, TriggerRecord};
use spadfuse_core::events::simulate_events_with;
use spadfuse_core::io::{
    decode_image_stack, encode_aggregates, encode_binary_frames, encode_events, encode_image_stack, read_binary_frames,
    read_events,
};
use spadfuse_core::metrics::{
    bandwidth, mtf_from_star, psnr_pooled, MtfCurve, StreamDescriptor, StreamKind,
};
use spadfuse_core::params::log_flux;
use spadfuse_core::scene::StarGeometry;
use spadfuse_core::snr::{calibration_report, emit_curves, emit_table, reference_curves, Sensor, SnrCurveRequest, SnrModels};
use spadfuse_core::spad::{aggregate_stream, simulate_binary_frames, spad_response};
use spadfuse_core::{
    BandwidthReport, EventStream, Method, MtfReport, SceneClip, SceneSpec, SensorParams, SpadAggregateFrame,
    SpadBinaryFrame,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, ArtifactDir, Manifest};

pub const CONFIG_FILE: &str = "config.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.bin";
pub const EVENTS_FILE: &str = "events.bin";
pub const BINARY_FILE: &str = "spad_binary.bin";
pub const AGGREGATE_FILE: &str = "spad_aggregate.bin";
pub const LATENT_FILE: &str = "latent.bin";
pub const RECON_FILE: &str = "recon.bin";
pub const RECON_INDEX_FILE: &str = "recon_index.json";

/// Flags that override values of a loaded config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub adaptive: Option<bool>,
    pub u_threshold: Option<f64>,
    pub n_bins: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.adaptive {
            cfg.fusion.adaptive = a;
        }
        if let Some(u) = self.u_threshold {
            cfg.fusion.u_threshold = u;
        }
        if let Some(n) = self.n_bins {
            cfg.fusion.n_bins_per_frame = n;
        }
        cfg.validate()
    }
}

/// Simulated sensor streams of one clip.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clip: SceneClip,
    pub events: EventStream,
    pub binary: Vec<SpadBinaryFrame>,
}

impl Dataset {
    pub fn aggregates(&self, n_bins: usize) -> CliResult<Vec<SpadAggregateFrame>> {
        Ok(aggregate_stream(&self.binary, n_bins)?)
    }
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Dataset> {
    let seeds = cfg.seeds();
    let clip = cfg.scene.build(seeds.scene)?;
    let events = simulate_events_with(&clip, &cfg.params, seeds.event, &cfg.event_sim)?;
    let binary = simulate_binary_frames(&clip, &cfg.params, 0.0, clip.duration, seeds.spad)?;
    log::info!(
        "simulated {}x{} for {} s: {} events, {} binary frames",
        clip.width,
        clip.height,
        clip.duration,
        events.len(),
        binary.len()
    );
    Ok(Dataset { clip, events, binary })
}

/// Publication ticks of a full-rate run: one per aggregate window boundary.
pub fn window_ticks(n_windows: usize, cfg: &RunConfig) -> Vec<f64> {
    let interval = cfg.fusion.n_bins_per_frame as f64 * cfg.params.t_bin;
    (0..=n_windows).map(|k| k as f64 * interval).collect()
}

/// Log flux of the scene at `t`.
pub fn ground_truth_log(clip: &SceneClip, t: f64) -> CliResult<Array2<f64>> {
    Ok(clip.render_flux(t.min(clip.duration))?.flux.mapv(log_flux))
}

/// Log images of a method at publication times.
#[derive(Debug, Clone)]
pub struct MethodFrames {
    pub times: Vec<f64>,
    pub images: Vec<Array2<f64>>,
}

impl From<&FusionOutput> for MethodFrames {
    fn from(out: &FusionOutput) -> Self {
        Self {
            times: out.frames.iter().map(|f| f.t).collect(),
            images: out.frames.iter().map(|f| f.log_intensity.clone()).collect(),
        }
    }
}

/// Latest completed aggregate window, without deblurring, at each time.
pub fn naive_frames(aggs: &[SpadAggregateFrame], times: &[f64], p: &SensorParams) -> MethodFrames {
    let logs: Vec<Array2<f64>> = aggs
        .iter()
        .map(|a| a.mean_counts().mapv(|n| log_flux(spad_response(n, p))))
        .collect();
    let images = times
        .iter()
        .map(|&t| {
            let k = aggs.partition_point(|a| a.t_end() <= t + 1e-12);
            logs[k.saturating_sub(1)].clone()
        })
        .collect();
    MethodFrames {
        times: times.to_vec(),
        images,
    }
}

/// Log-domain PSNR pooled over frames at or after `t_min`; the peak is the
/// log range of the ground truth over those frames.
pub fn log_psnr(frames: &MethodFrames, clip: &SceneClip, t_min: f64) -> CliResult<f64> {
    let mut pairs = Vec::new();
    for (t, img) in frames.times.iter().zip(&frames.images) {
        if *t >= t_min - 1e-12 {
            pairs.push((img, ground_truth_log(clip, *t)?));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Config(format!("no frames after t = {t_min} to evaluate")));
    }
    let (lo, hi) = pairs.iter().flat_map(|(_, g)| g.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    let peak = (hi - lo).max(1.0);
    Ok(psnr_pooled(pairs.iter().map(|(a, b)| (*a, b)), peak)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub sensors: String,
    pub psnr_db: f64,
    pub bandwidth_khz_per_pixel: f64,
    pub bits: u64,
    pub aggregate_frames: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u_threshold: f64,
    pub captured: usize,
    pub fraction: f64,
    pub psnr_db: f64,
    pub psnr_drop_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub config_hash: String,
    pub n_windows: usize,
    pub duration: f64,
    pub rows: Vec<MethodRow>,
    pub sweep: Vec<SweepPoint>,
    /// Streams of the full-rate clip: events, binary, aggregate, conventional.
    pub bandwidth: BandwidthReport,
    /// Streams consumed by the primary (configured) NEDI+AKF run.
    pub primary_bandwidth: BandwidthReport,
    pub trigger_log: Vec<TriggerRecord>,
}

impl E2eReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table_csv(&self) -> String {
        let mut s = String::from("method,sensors,bandwidth_khz_per_pixel,psnr_db\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6},{:.4}\n", r.method, r.sensors, r.bandwidth_khz_per_pixel, r.psnr_db));
        }
        s
    }

    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("u_threshold,captured,fraction,psnr_db,psnr_drop_db\n");
        for p in &self.sweep {
            s.push_str(&format!(
                "{:.6e},{},{:.6},{:.4},{:.4}\n",
                p.u_threshold, p.captured, p.fraction, p.psnr_db, p.psnr_drop_db
            ));
        }
        s
    }
}

fn descriptor(kind: StreamKind, clip: &SceneClip, duration: f64, count: usize) -> StreamDescriptor {
    StreamDescriptor {
        kind,
        width: clip.width,
        height: clip.height,
        duration,
        count: count as u64,
    }
}

fn row(method: &str, sensors: &str, psnr_db: f64, streams: &[StreamDescriptor]) -> MethodRow {
    let rep = bandwidth(streams);
    let count = |k: StreamKind| rep.get(k).map_or(0, |s| s.records as usize);
    MethodRow {
        method: method.into(),
        sensors: sensors.into(),
        psnr_db,
        bandwidth_khz_per_pixel: rep.streams.iter().map(|s| s.khz_per_pixel).sum(),
        bits: rep.streams.iter().map(|s| s.bits).sum(),
        aggregate_frames: count(StreamKind::SpadAggregate),
        events: count(StreamKind::Events),
    }
}

/// Geometric grid between the smallest post-capture uncertainty of the
/// full-rate run and the largest uncertainty of the events-only run.
fn auto_sweep(full: &FusionOutput, events_only: &FusionOutput, t_min: f64, n: usize) -> Vec<f64> {
    let lo = full
        .uncertainty
        .iter()
        .filter(|(t, _)| *t >= t_min - 1e-12)
        .map(|u| u.1)
        .fold(f64::INFINITY, f64::min);
    let hi = events_only.uncertainty.iter().map(|u| u.1).fold(0.0, f64::max);
    if !(lo.is_finite() && lo > 0.0 && hi > lo) {
        return vec![lo.max(0.0)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Runs every reconstruction method on a simulated clip and scores it.
pub fn evaluate(cfg: &RunConfig, data: &Dataset) -> CliResult<(E2eReport, FusionOutput)> {
    let p = &cfg.params;
    let clip = &data.clip;
    let aggs = data.aggregates(cfg.fusion.n_bins_per_frame)?;
    let n_windows = aggs.len();
    let duration = n_windows as f64 * cfg.fusion.n_bins_per_frame as f64 * p.t_bin;
    let t_min = aggs[0].t_end();

    let base = FusionConfig {
        adaptive: false,
        ..cfg.fusion
    };
    let nedi_full = fuse(&aggs, &data.events, p, &FusionConfig { method: Method::Nedi, ..base })?;
    let edi_full = fuse(&aggs, &data.events, p, &FusionConfig { method: Method::Edi, ..base })?;
    let events_only = fuse(
        &aggs,
        &data.events,
        p,
        &FusionConfig {
            method: Method::Nedi,
            adaptive: true,
            u_threshold: f64::INFINITY,
            ..base
        },
    )?;
    let ticks: Vec<f64> = nedi_full.frames.iter().map(|f| f.t).collect();
    let naive = naive_frames(&aggs, &ticks, p);

    let n_events = data.events.len();
    let ev = descriptor(StreamKind::Events, clip, duration, n_events);
    let agg = |n: usize| descriptor(StreamKind::SpadAggregate, clip, duration, n);

    let psnr_nedi = log_psnr(&(&nedi_full).into(), clip, t_min)?;
    let mut rows = vec![
        row("naive", "S", log_psnr(&naive, clip, t_min)?, &[agg(n_windows)]),
        row("edi+akf", "S+E", log_psnr(&(&edi_full).into(), clip, t_min)?, &[ev, agg(n_windows)]),
        row("nedi+akf", "S+E", psnr_nedi, &[ev, agg(n_windows)]),
        row(
            "events-only",
            "E",
            log_psnr(&(&events_only).into(), clip, t_min)?,
            &[ev, agg(events_only.captured())],
        ),
    ];

    let primary = if cfg.fusion.adaptive {
        let out = fuse(&aggs, &data.events, p, &cfg.fusion)?;
        rows.push(row(
            "nedi+akf-adaptive",
            "S+E",
            log_psnr(&(&out).into(), clip, t_min)?,
            &[ev, agg(out.captured())],
        ));
        out
    } else {
        nedi_full.clone()
    };

    let thresholds = if cfg.eval.u_sweep.is_empty() {
        auto_sweep(&nedi_full, &events_only, t_min, cfg.eval.sweep_points)
    } else {
        cfg.eval.u_sweep.clone()
    };
    let mut sweep = Vec::with_capacity(thresholds.len());
    for u in thresholds {
        let out = fuse(
            &aggs,
            &data.events,
            p,
            &FusionConfig {
                adaptive: true,
                u_threshold: u,
                method: Method::Nedi,
                ..base
            },
        )?;
        let psnr_db = log_psnr(&(&out).into(), clip, t_min)?;
        sweep.push(SweepPoint {
            u_threshold: u,
            captured: out.captured(),
            fraction: out.captured() as f64 / n_windows as f64,
            psnr_db,
            psnr_drop_db: psnr_nedi - psnr_db,
        });
    }

    let conventional_frames = (duration / p.t_exp).floor() as usize;
    let report = E2eReport {
        config_hash: cfg.hash(),
        n_windows,
        duration,
        rows,
        sweep,
        bandwidth: bandwidth(&[
            ev,
            descriptor(StreamKind::SpadBinary, clip, duration, n_windows * cfg.fusion.n_bins_per_frame),
            agg(n_windows),
            descriptor(StreamKind::Conventional, clip, duration, conventional_frames),
        ]),
        primary_bandwidth: bandwidth(&[
            ev,
            descriptor(StreamKind::SpadBinary, clip, duration, n_windows * cfg.fusion.n_bins_per_frame),
            agg(primary.captured()),
        ]),
        trigger_log: primary.trigger_log.clone(),
    };
    Ok((report, primary))
}

fn recon_stack(out: &FusionOutput) -> CliResult<Vec<u8>> {
    let times: Vec<f64> = out.frames.iter().map(|f| f.t).collect();
    let images: Vec<Vec<&Array2<f64>>> = out.frames.iter().map(|f| vec![&f.log_intensity, &f.variance]).collect();
    Ok(encode_image_stack(
        "reconstruction",
        &times,
        &images,
        serde_json::json!({"planes": ["log_intensity", "variance"]}),
    )?)
}

fn ground_truth_stack(clip: &SceneClip, times: &[f64]) -> CliResult<Vec<u8>> {
    let frames = times
        .iter()
        .map(|t| Ok(clip.render_flux(t.min(clip.duration))?.flux))
        .collect::<CliResult<Vec<_>>>()?;
    let images: Vec<Vec<&Array2<f64>>> = frames.iter().map(|f| vec![f]).collect();
    Ok(encode_image_stack(
        "ground_truth_flux",
        times,
        &images,
        serde_json::json!({"units": "photons/s"}),
    )?)
}

/// Writes the simulated dataset and its manifest.
pub fn run_simulate(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    let mut dir = ArtifactDir::create(out)?;
    let data = dir.timed("simulate", || simulate(cfg))?;
    let aggs = data.aggregates(cfg.fusion.n_bins_per_frame)?;
    let ticks = window_ticks(aggs.len(), cfg);
    dir.write(CONFIG_FILE, cfg.to_json().as_bytes())?;
    dir.write(GROUND_TRUTH_FILE, &ground_truth_stack(&data.clip, &ticks)?)?;
    dir.write(EVENTS_FILE, &encode_events(&data.events)?)?;
    dir.write(BINARY_FILE, &encode_binary_frames(&data.binary)?)?;
    dir.write(AGGREGATE_FILE, &encode_aggregates(&aggs)?)?;
    let duration = data.clip.duration;
    let bw = bandwidth(&[
        descriptor(StreamKind::Events, &data.clip, duration, data.events.len()),
        descriptor(StreamKind::SpadBinary, &data.clip, duration, data.binary.len()),
        descriptor(StreamKind::SpadAggregate, &data.clip, duration, aggs.len()),
    ]);
    dir.finish("simulate", cfg.hash(), cfg.params.digest(), Some(bw), Vec::new())
}

/// Config and streams of a dataset written by [`run_simulate`].
pub fn load_dataset(input: &Path) -> CliResult<(RunConfig, Dataset)> {
    let cfg = RunConfig::load(input.join(CONFIG_FILE))?;
    let clip = cfg.scene.build(cfg.seeds().scene)?;
    let events = read_events(input.join(EVENTS_FILE))?;
    let binary = read_binary_frames(input.join(BINARY_FILE))?;
    if events.width != clip.width || events.height != clip.height {
        return Err(CliError::Core(spadfuse_core::Error::ShapeMismatch {
            expected: (clip.height, clip.width),
            got: (events.height, events.width),
        }));
    }
    Ok((cfg, Dataset { clip, events, binary }))
}

/// Deblurs every aggregate window of a dataset.
pub fn run_deblur(input: &Path, out: &Path, overrides: &Overrides, method: Method) -> CliResult<Manifest> {
    let (mut cfg, data) = load_dataset(input)?;
    overrides.apply(&mut cfg)?;
    cfg.fusion.method = method;
    let mut dir = ArtifactDir::create(out)?;
    let aggs = data.aggregates(cfg.fusion.n_bins_per_frame)?;
    let index = data.events.index();
    let latents = dir.timed("deblur", || {
        aggs.iter()
            .map(|a| deblur_window(a, &index, &cfg.params, &cfg.fusion))
            .collect::<spadfuse_core::Result<Vec<_>>>()
    })?;
    let times: Vec<f64> = latents.iter().map(|l| l.f).collect();
    let images: Vec<Vec<&Array2<f64>>> = latents.iter().map(|l| vec![&l.n_latent]).collect();
    let saturated: Vec<usize> = latents.iter().map(|l| l.saturated.len()).collect();
    let meta = serde_json::json!({
        "method": method,
        "exposure": aggs[0].exposure,
        "units": "counts per binary frame",
        "saturated_pixels": saturated,
    });
    dir.write(CONFIG_FILE, cfg.to_json().as_bytes())?;
    dir.write(LATENT_FILE, &encode_image_stack("latent", &times, &images, meta)?)?;
    dir.finish("deblur", cfg.hash(), cfg.params.digest(), None, Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconIndex {
    pub times: Vec<f64>,
    pub n_windows: usize,
    pub skipped_measurements: usize,
    pub uncertainty: Vec<(f64, f64)>,
    pub trigger_log: Vec<TriggerRecord>,
    pub bandwidth: BandwidthReport,
}

/// Fuses a dataset with the configured filter.
pub fn run_fuse(input: &Path, out: &Path, overrides: &Overrides) -> CliResult<Manifest> {
    let (mut cfg, data) = load_dataset(input)?;
    overrides.apply(&mut cfg)?;
    let mut dir = ArtifactDir::create(out)?;
    let aggs = data.aggregates(cfg.fusion.n_bins_per_frame)?;
    let fused = dir.timed("fuse", || fuse(&aggs, &data.events, &cfg.params, &cfg.fusion))?;
    let duration = aggs.len() as f64 * aggs[0].exposure;
    let bw = bandwidth(&[
        descriptor(StreamKind::Events, &data.clip, duration, data.events.len()),
        descriptor(StreamKind::SpadAggregate, &data.clip, duration, fused.captured()),
    ]);
    let index = ReconIndex {
        times: fused.frames.iter().map(|f| f.t).collect(),
        n_windows: fused.n_windows,
        skipped_measurements: fused.skipped_measurements,
        uncertainty: fused.uncertainty.clone(),
        trigger_log: fused.trigger_log.clone(),
        bandwidth: bw.clone(),
    };
    dir.write(CONFIG_FILE, cfg.to_json().as_bytes())?;
    dir.write(RECON_FILE, &recon_stack(&fused)?)?;
    dir.write_json(RECON_INDEX_FILE, &index)?;
    dir.finish("fuse", cfg.hash(), cfg.params.digest(), Some(bw), fused.trigger_log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: f64,
    pub frames: usize,
    pub bandwidth_khz_per_pixel: f64,
    pub bandwidth: BandwidthReport,
}

/// Scores a reconstruction written by [`run_fuse`] against the scene.
pub fn run_eval(recon: &Path, out: &Path) -> CliResult<Manifest> {
    let cfg = RunConfig::load(recon.join(CONFIG_FILE))?;
    let clip = cfg.scene.build(cfg.seeds().scene)?;
    let (header, stack) = decode_image_stack(&std::fs::read(recon.join(RECON_FILE))?)?;
    let index: ReconIndex = serde_json::from_slice(&std::fs::read(recon.join(RECON_INDEX_FILE))?)?;
    let frames = MethodFrames {
        times: header.times.clone(),
        images: stack.into_iter().map(|mut planes| planes.swap_remove(0)).collect(),
    };
    let t_min = cfg.fusion.n_bins_per_frame as f64 * cfg.params.t_bin;
    let mut dir = ArtifactDir::create(out)?;
    let psnr_db = dir.timed("eval", || log_psnr(&frames, &clip, t_min))?;
    let report = EvalReport {
        psnr_db,
        frames: frames.times.len(),
        bandwidth_khz_per_pixel: index.bandwidth.streams.iter().map(|s| s.khz_per_pixel).sum(),
        bandwidth: index.bandwidth.clone(),
    };
    dir.write_json("eval.json", &report)?;
    dir.write(
        "eval.csv",
        format!(
            "method,sensors,bandwidth_khz_per_pixel,psnr_db\n{:?}+akf,S+E,{:.6},{:.4}\n",
            cfg.fusion.method, report.bandwidth_khz_per_pixel, report.psnr_db
        )
        .to_lowercase()
        .as_bytes(),
    )?;
    dir.finish("eval", cfg.hash(), cfg.params.digest(), Some(index.bandwidth), index.trigger_log)
}

/// Simulates, reconstructs with every method and writes the report.
pub fn run_e2e(cfg: &RunConfig, out: &Path) -> CliResult<(Manifest, E2eReport)> {
    let mut dir = ArtifactDir::create(out)?;
    let data = dir.timed("simulate", || simulate(cfg))?;
    let (report, primary) = dir.timed("evaluate", || evaluate(cfg, &data))?;
    dir.write(CONFIG_FILE, cfg.to_json().as_bytes())?;
    dir.write(RECON_FILE, &recon_stack(&primary)?)?;
    dir.write_json("report.json", &report)?;
    dir.write("table.csv", report.table_csv().as_bytes())?;
    dir.write("sweep.csv", report.sweep_csv().as_bytes())?;
    let manifest = dir.finish("e2e", cfg.hash(), cfg.params.digest(),
        Some(report.primary_bandwidth.clone()),
        report.trigger_log.clone(),
    )?;
    Ok((manifest, report))
}

/// Default MTF radii: from just inside the image edge down to where a spoke
/// period spans four pixels.
pub fn default_mtf_radii(star: &StarGeometry, width: usize, height: usize) -> Vec<f64> {
    let r_max = (star.cx.min(star.cy).min(width as f64 - 1.0 - star.cx).min(height as f64 - 1.0 - star.cy) - 1.0)
        .floor();
    let r_min = (4.0 * star.spokes as f64 / (2.0 * std::f64::consts::PI)).ceil();
    let n = 6;
    (0..n)
        .map(|i| r_max * (r_min / r_max).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// MTF on a Siemens star, averaged over the ends of all aggregate windows:
/// single windows of the star held still, the fused reconstruction of the
/// rotating star, and single windows of the rotating star.
pub fn mtf_experiment(cfg: &RunConfig) -> CliResult<MtfReport> {
    let SceneSpec::SiemensStar { omega, .. } = cfg.scene else {
        return Err(CliError::Config("mtf needs a siemens_star scene".into()));
    };
    if omega == 0.0 {
        log::warn!("star does not rotate; all curves will coincide");
    }
    let mut still = cfg.clone();
    if let SceneSpec::SiemensStar { omega, .. } = &mut still.scene {
        *omega = 0.0;
    }
    let full = FusionConfig {
        adaptive: false,
        method: Method::Nedi,
        ..cfg.fusion
    };
    let moving = simulate(cfg)?;
    let star = moving.clip.star.expect("star scene carries geometry");
    let radii = if cfg.eval.mtf_radii.is_empty() {
        default_mtf_radii(&star, moving.clip.width, moving.clip.height)
    } else {
        let mut r = cfg.eval.mtf_radii.clone();
        r.sort_by(|a, b| b.partial_cmp(a).expect("finite radii"));
        r
    };
    let freqs: Vec<f64> = radii.iter().map(|r| star.frequency_for_radius(*r)).collect();

    let windows = |data: &Dataset| -> CliResult<(Vec<Array2<f64>>, Vec<SpadAggregateFrame>)> {
        let aggs = data.aggregates(full.n_bins_per_frame)?;
        let imgs = aggs
            .iter()
            .map(|a| a.mean_counts().mapv(|n| spad_response(n, &cfg.params)))
            .collect();
        Ok((imgs, aggs))
    };
    let (naive, aggs) = windows(&moving)?;
    let fused = fuse(&aggs, &moving.events, &cfg.params, &full)?;
    // frame k + 1 is published at the end of window k
    let ours: Vec<Array2<f64>> = fused.frames[1..=aggs.len()]
        .iter()
        .map(|f| f.log_intensity.mapv(f64::exp))
        .collect();
    let (static_imgs, _) = windows(&simulate(&still)?)?;

    let mut report = MtfReport {
        frequencies: freqs.clone(),
        radii,
        curves: Vec::new(),
    };
    for (name, imgs) in [("static", &static_imgs), ("ours", &ours), ("naive", &naive)] {
        let mut mean = vec![0.0; freqs.len()];
        for img in imgs {
            let r = mtf_from_star(img, &star, &freqs)?;
            for (m, v) in mean.iter_mut().zip(&r.curves[0].mtf) {
                *m += v / imgs.len() as f64;
            }
        }
        report.curves.push(MtfCurve {
            method: name.into(),
            mtf: mean,
        });
    }
    Ok(report)
}

pub fn mtf_csv(report: &MtfReport) -> String {
    let mut s = String::from("lp_per_mm,radius_px");
    for c in &report.curves {
        s.push(',');
        s.push_str(&c.method);
    }
    s.push('\n');
    for (i, f) in report.frequencies.iter().enumerate() {
        s.push_str(&format!("{f:.6},{:.3}", report.radii[i]));
        for c in &report.curves {
            s.push_str(&format!(",{:.6}", c.mtf[i]));
        }
        s.push('\n');
    }
    s
}

pub fn run_mtf(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    let mut dir = ArtifactDir::create(out)?;
    let report = dir.timed("mtf", || mtf_experiment(cfg))?;
    dir.write(CONFIG_FILE, cfg.to_json().as_bytes())?;
    dir.write_json("mtf.json", &report)?;
    dir.write("mtf.csv", mtf_csv(&report).as_bytes())?;
    dir.finish("mtf", cfg.hash(), cfg.params.digest(), None, Vec::new())
}

/// Writes SNR curves for every sensor plus the fit against the bundled
/// reference curves.
pub fn run_snr(out: &Path, grid: &[f64], delta_phis: &[f64], models: &SnrModels) -> CliResult<Manifest> {
    let mut dir = ArtifactDir::create(out)?;
    let curve = |sensor: Sensor, delta_phi: f64| {
        emit_curves(&SnrCurveRequest {
            grid: grid.to_vec(),
            sensor,
            delta_phi,
            models: *models,
        })
    };
    dir.write("snr_camera.csv", curve(Sensor::Camera, 0.0)?.as_bytes())?;
    dir.write("snr_spad.csv", curve(Sensor::Spad, 0.0)?.as_bytes())?;
    for d in delta_phis {
        let name = format!("snr_event_{}.csv", (d * 100.0).round() as i64);
        dir.write(&name, curve(Sensor::Event, *d)?.as_bytes())?;
    }
    dir.write("snr_table.csv", emit_table(grid, models).as_bytes())?;
    let reference = reference_curves()?;
    dir.write_json("calibration.json", &calibration_report(&reference, models, 0.5))?;
    let models_json = serde_json::to_vec(models)?;
    dir.finish("snr", sha256_hex(&models_json), models.params.digest(), None, Vec::new())
}
