//! `modspike`: simulate spike streams, encode modulo sequences, unwrap and score them.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use modspike_core::encoder::{aligned_query_spec, encode_stream_with, query_ideal_counts};
use modspike_core::io::{self, HdrDtype};
use modspike_core::metrics::{bandwidth_report, psnr_linear, psnr_mu, ssim_linear, SSIM_WINDOW};
use modspike_core::scene::smooth_scene;
use modspike_core::spike_sim::{
    integrate_and_fire_with, mosaic_sample, synthesize_clip_with, MosaicLayout, Motion,
};
use modspike_core::unwrap::{unwrap_sequence, UnwrapResult};
use modspike_core::{EncoderConfig, Exec, HdrImage, ModuloSequence, SensorConfig, SpikeStream};

use config::parse_sensor_config;

/// Environment variable holding the default worker thread count.
const THREADS_ENV: &str = "MODSPIKE_THREADS";

#[derive(Parser)]
#[command(name = "modspike", version, about = "Exposure-decoupled modulo imaging from spike streams")]
struct Cli {
    /// Run every stage single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an LHDR scene through the integrate-and-fire sensor into an SPKB stream.
    Simulate(SimulateArgs),
    /// Slide the modulo encoder over an SPKB stream.
    Encode(EncodeArgs),
    /// Unwrap every frame of a MODQ sequence.
    Unwrap(UnwrapArgs),
    /// Compare two LHDR images.
    Eval(EvalArgs),
    /// Raw versus modulo output bandwidth.
    Bandwidth(BandwidthArgs),
    /// simulate, encode, unwrap and eval in one seeded run.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SensorArgs {
    /// Global motion: identity, translate:DX,DY or affine:DX,DY,ROT,SCALE (per micro-interval).
    #[arg(long, default_value = "identity")]
    motion: Motion,
    /// Sensor settings as a TOML file or a key=value list.
    #[arg(long)]
    config: Option<String>,
    /// Sample through the 2x2 RGB mosaic (half resolution, three channels).
    #[arg(long)]
    mosaic: bool,
    /// Shot-noise seed; overrides rng_seed from --config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EncoderArgs {
    #[arg(long, default_value_t = 25)]
    window: usize,
    #[arg(long, default_value_t = 20)]
    stride: usize,
    #[arg(long, default_value_t = 15.0)]
    gain: f64,
    #[arg(long, default_value_t = 8)]
    bits: u8,
}

impl EncoderArgs {
    fn config(&self) -> EncoderConfig {
        EncoderConfig {
            window: self.window,
            stride: self.stride,
            gain: self.gain,
            bit_depth: self.bits,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    sensor: SensorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UnwrapArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 5000.0)]
    mu: f64,
    #[arg(long, default_value_t = 4095.0)]
    peak: f64,
}

#[derive(Args)]
struct BandwidthArgs {
    #[arg(long)]
    height: u64,
    #[arg(long)]
    width: u64,
    #[arg(long, default_value_t = 20_000)]
    readout_hz: u64,
    #[arg(long, default_value_t = 8)]
    bits: u64,
    #[arg(long, default_value_t = 20)]
    stride: u64,
    /// Channels per pixel without the mosaic.
    #[arg(long, default_value_t = 1)]
    channels: u64,
    #[arg(long)]
    mosaic: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// LHDR radiance scene; a seeded smooth scene is generated when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[command(flatten)]
    sensor: SensorArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long, default_value_t = 5000.0)]
    mu: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Simulate(a) => simulate(a, exec),
        Command::Encode(a) => encode(a, exec),
        Command::Unwrap(a) => unwrap(a, exec),
        Command::Eval(a) => eval(a),
        Command::Bandwidth(a) => bandwidth(a),
        Command::Pipeline(a) => pipeline(a, exec),
    }
}

#[cfg(feature = "rayon")]
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "rayon"))]
fn configure_threads() -> Result<()> {
    let _ = THREADS_ENV;
    Ok(())
}

fn sensor_config(a: &SensorArgs) -> Result<SensorConfig> {
    let mut cfg = parse_sensor_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

fn run_sensor(scene: &HdrImage, a: &SensorArgs, cfg: &SensorConfig, exec: Exec) -> Result<SpikeStream> {
    let mut clip = synthesize_clip_with(scene, a.motion, cfg, exec)?;
    if a.mosaic {
        clip = mosaic_sample(&clip, &MosaicLayout::default())?;
    }
    let (stream, trace) = integrate_and_fire_with(&clip, cfg, exec)?;
    if trace.max_per_readout > 1 {
        eprintln!(
            "warning: up to {} firings fell in one readout interval; recorded counts are collapsed",
            trace.max_per_readout
        );
    }
    Ok(stream)
}

fn simulate(a: SimulateArgs, exec: Exec) -> Result<()> {
    let scene = io::read_hdr(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let cfg = sensor_config(&a.sensor)?;
    let stream = run_sensor(&scene, &a.sensor, &cfg, exec)?;
    io::write_spikes(&a.out, &stream).with_context(|| format!("writing {}", a.out.display()))?;
    println!("frames={}", stream.frame_count());
    println!("shape={}x{}x{}", stream.height(), stream.width(), stream.channels());
    Ok(())
}

fn encode(a: EncodeArgs, exec: Exec) -> Result<()> {
    let stream = io::read_spikes(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seq = encode_stream_with(&stream, &a.encoder.config(), exec)?;
    io::write_modulo(&a.out, &seq).with_context(|| format!("writing {}", a.out.display()))?;
    println!("frames={}", seq.frames.len());
    println!("effective_rate_hz={}", seq.effective_rate_hz());
    Ok(())
}

fn frame_path(dir: &Path, prefix: &str, j: usize) -> PathBuf {
    dir.join(format!("{prefix}_{j:04}.lhdr"))
}

fn write_image(path: &Path, img: &HdrImage) -> Result<()> {
    let dtype = if img.to_counts().is_some() { HdrDtype::U16 } else { HdrDtype::F32 };
    io::write_hdr(path, img, dtype).with_context(|| format!("writing {}", path.display()))
}

fn residual_report(results: &[UnwrapResult]) -> String {
    let mut s = String::from("frame\tl_mod\tl_grad\tl_lap\tgradient_mismatch\tconverged\tmax_rollover\n");
    for (j, r) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{j}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\t{}",
            r.residuals.l_mod,
            r.residuals.l_grad,
            r.residuals.l_lap,
            r.gradient_mismatch,
            r.converged,
            r.rollover_map.iter().max().copied().unwrap_or(0)
        );
    }
    s
}

fn unwrap_to_dir(seq: &ModuloSequence, dir: &Path, exec: Exec) -> Result<Vec<UnwrapResult>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let results = unwrap_sequence(&seq.frames, exec)?;
    for (j, r) in results.iter().enumerate() {
        write_image(&frame_path(dir, "frame", j), &r.hdr)?;
    }
    let report = dir.join("residuals.tsv");
    fs::write(&report, residual_report(&results)).with_context(|| format!("writing {}", report.display()))?;
    Ok(results)
}

fn unwrap(a: UnwrapArgs, exec: Exec) -> Result<()> {
    let seq = io::read_modulo(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let results = unwrap_to_dir(&seq, &a.out_dir, exec)?;
    println!("frames={}", results.len());
    println!("converged={}", results.iter().filter(|r| r.converged).count());
    Ok(())
}

struct Scores {
    psnr_l: f64,
    ssim_l: Option<f64>,
    psnr_mu: f64,
}

fn score(reference: &HdrImage, test: &HdrImage, mu: f64, peak: f64) -> Result<Scores> {
    let ssim_l = if reference.height() >= SSIM_WINDOW && reference.width() >= SSIM_WINDOW {
        Some(ssim_linear(reference, test, peak)?)
    } else {
        None
    };
    Ok(Scores {
        psnr_l: psnr_linear(reference, test, peak)?,
        ssim_l,
        psnr_mu: psnr_mu(reference, test, mu, peak)?,
    })
}

fn print_scores(s: &Scores) {
    println!("psnr_l={}", s.psnr_l);
    match s.ssim_l {
        Some(v) => println!("ssim_l={v}"),
        None => println!("ssim_l=nan"),
    }
    println!("psnr_mu={}", s.psnr_mu);
}

fn eval(a: EvalArgs) -> Result<()> {
    let r = io::read_hdr(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let t = io::read_hdr(&a.test).with_context(|| format!("reading {}", a.test.display()))?;
    ensure!(r.dims() == t.dims(), "images differ in shape: {:?} vs {:?}", r.dims(), t.dims());
    print_scores(&score(&r, &t, a.mu, a.peak)?);
    Ok(())
}

fn bandwidth(a: BandwidthArgs) -> Result<()> {
    let r = bandwidth_report(a.height, a.width, a.channels, a.readout_hz, a.bits, a.stride, a.mosaic)?;
    println!("raw_bps={}", r.raw_bps);
    println!("raw_gbps={}", r.raw_gbps());
    match r.modulo_bps_exact() {
        Some(v) => println!("modulo_bps={v}"),
        None => println!("modulo_bps={}", r.modulo_bps),
    }
    println!("modulo_gbps={}", r.modulo_gbps());
    println!("modulo_bits_per_frame={}", r.modulo_bits_per_frame);
    println!("output_frame_rate_hz={}", r.output_frame_rate());
    println!("reduction_ratio={}", r.reduction_ratio);
    Ok(())
}

fn pipeline(a: PipelineArgs, exec: Exec) -> Result<()> {
    let cfg = sensor_config(&a.sensor)?;
    let enc = a.encoder.config();
    let seed = a.sensor.seed.unwrap_or(cfg.rng_seed);
    let scene = match &a.scene {
        Some(p) => io::read_hdr(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            // brightest pixel stays under one firing per readout interval, and
            // neighbouring window counts stay well inside half a wrap period
            let no_collapse = cfg.readout_rate_hz as f64 * cfg.threshold / cfg.conversion_gain;
            let half_period = (1u64 << (enc.bit_depth - 1)) as f64;
            let max_step = 0.5 * half_period * no_collapse / (enc.gain * enc.window as f64);
            let channels = if a.sensor.mosaic { 3 } else { 1 };
            smooth_scene(a.height, a.width, channels, 0.95 * no_collapse, max_step.max(1.0), seed)?
        }
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_image(&a.out_dir.join("scene.lhdr"), &scene)?;

    let mut clip = synthesize_clip_with(&scene, a.sensor.motion, &cfg, exec)?;
    if a.sensor.mosaic {
        clip = mosaic_sample(&clip, &MosaicLayout::default())?;
    }
    let (stream, trace) = integrate_and_fire_with(&clip, &cfg, exec)?;
    io::write_spikes(a.out_dir.join("spikes.spkb"), &stream)?;
    let seq = encode_stream_with(&stream, &enc, exec)?;
    if seq.frames.is_empty() {
        bail!("stream of {} frames produced no modulo frames", stream.frame_count());
    }
    io::write_modulo(a.out_dir.join("modulo.modq"), &seq)?;
    let results = unwrap_to_dir(&seq, &a.out_dir.join("unwrapped"), exec)?;

    // reference: the ideal pre-wrap measurement on the aligned windows
    let spec = aligned_query_spec(&cfg, &enc)?;
    let ideal = query_ideal_counts(&clip, &spec)?;
    let (h, w, c) = (clip.height(), clip.width(), clip.channels());
    let mut lines = String::from("frame\tpsnr_l\tssim_l\tpsnr_mu\n");
    let (mut sum_l, mut sum_mu, mut finite) = (0.0, 0.0, 0usize);
    for (j, (r, counts)) in results.iter().zip(&ideal).enumerate() {
        let reference = HdrImage::from_counts(h, w, c, counts)?;
        write_image(&frame_path(&a.out_dir.join("unwrapped"), "reference", j), &reference)?;
        let peak = reference.max_value().max(1.0) as f64;
        let s = score(&reference, &r.hdr, a.mu, peak)?;
        let _ = writeln!(
            lines,
            "{j}\t{}\t{}\t{}",
            s.psnr_l,
            s.ssim_l.map_or("nan".into(), |v| v.to_string()),
            s.psnr_mu
        );
        if s.psnr_l.is_finite() && s.psnr_mu.is_finite() {
            sum_l += s.psnr_l;
            sum_mu += s.psnr_mu;
            finite += 1;
        }
    }
    fs::write(a.out_dir.join("metrics.tsv"), lines)?;

    println!("seed={seed}");
    println!("spike_frames={}", stream.frame_count());
    println!("max_firings_per_readout={}", trace.max_per_readout);
    println!("modulo_frames={}", seq.frames.len());
    println!("effective_rate_hz={}", seq.effective_rate_hz());
    println!("converged={}", results.iter().filter(|r| r.converged).count());
    println!("finite_psnr_frames={finite}");
    if finite > 0 {
        println!("mean_psnr_l={}", sum_l / finite as f64);
        println!("mean_psnr_mu={}", sum_mu / finite as f64);
    }
    Ok(())
}
