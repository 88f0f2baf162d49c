//! Training-pair synthesis: degrade an image, simulate a static-scene spike
//! stream from it, and convert the stream to ETFI. The untouched crop is the
//! ground truth.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::codec::write_pgm;
use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::isi::{etfi, isi_search, EtfiImage};
use crate::recon::WHITE_RATE;
use crate::resample::{from_plane, resize_plane, to_plane};
use crate::rng::{hash3, mix64};
use crate::sensor::{simulate_stream, LuminanceVideo, SensorConfig};
use crate::stream::{slice_window, SpikeStream};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ETFI_DIR: &str = "etfi";
pub const GT_DIR: &str = "gt";

const CROP_STREAM: u64 = 0x63726f70;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub crop_size: usize,
    /// Bilinear down/up-scale ratio; 1 leaves the image untouched.
    pub degrade_factor: f64,
    pub stream_frames: usize,
    /// Sensor template; resolution is taken from each image.
    pub sensor: SensorConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            crop_size: 512,
            degrade_factor: 2.0,
            stream_frames: 256,
            sensor: SensorConfig::new(1, 1),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be at least 1".into()));
        }
        if !(self.degrade_factor >= 1.0 && self.degrade_factor.is_finite()) {
            return Err(Error::Config(format!(
                "degrade factor must be >= 1, got {}",
                self.degrade_factor
            )));
        }
        if self.stream_frames < 3 {
            return Err(Error::Config("stream needs at least 3 frames".into()));
        }
        let mut probe = self.sensor.clone();
        probe.width = 1;
        probe.height = 1;
        probe.validate()
    }
}

/// Bilinear downscale by `factor` followed by bilinear upscale to the
/// original size.
pub fn degrade_image(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::Config(format!(
            "degrade factor must be >= 1, got {factor}"
        )));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let sw = ((w as f64 / factor).round() as usize).max(1);
    let sh = ((h as f64 / factor).round() as usize).max(1);
    let small = resize_plane(&to_plane(img), w, h, sw, sh);
    let back = resize_plane(&small, sw, sh, w, h);
    Ok(from_plane(w, h, &back))
}

/// Static scene where gray level 255 fires at [`WHITE_RATE`].
pub fn image_to_stream(img: &GrayImage, cfg: &SynthConfig) -> Result<SpikeStream> {
    cfg.validate()?;
    let mut sensor = cfg.sensor.clone();
    sensor.width = img.width();
    sensor.height = img.height();
    let per_level = sensor.current_for_rate(WHITE_RATE) / 255.0;
    let video = LuminanceVideo::from_image(img, per_level, cfg.stream_frames)?;
    simulate_stream(&video, &sensor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub etfi: EtfiImage,
    pub ground_truth: GrayImage,
}

/// Degrade, simulate and take ETFI at the centre of the widest symmetric
/// window the stream allows.
pub fn synth_sample(img: &GrayImage, cfg: &SynthConfig) -> Result<SynthSample> {
    let degraded = degrade_image(img, cfg.degrade_factor)?;
    let stream = image_to_stream(&degraded, cfg)?;
    let k = stream.center_index()?;
    let delta_t = (stream.len() - 1) / 2;
    let window = slice_window(&stream, k, delta_t)?;
    let etfi = etfi(&isi_search(&window, k)?)?;
    Ok(SynthSample {
        etfi,
        ground_truth: img.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source: String,
    /// Relative to the output directory.
    pub etfi: String,
    /// Relative to the output directory.
    pub ground_truth: String,
    pub seed: u64,
}

/// Tab-separated `source, etfi, ground truth, seed`, one sample per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SampleManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Config(format!("manifest line {}: malformed", n + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                source: fields[0].to_string(),
                etfi: fields[1].to_string(),
                ground_truth: fields[2].to_string(),
                seed: fields[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { entries })
    }

    pub fn line(entry: &ManifestEntry) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            entry.source, entry.etfi, entry.ground_truth, entry.seed
        )
    }
}

#[derive(Debug, Default)]
pub struct SynthReport {
    /// Full manifest after the run, including entries from earlier runs.
    pub manifest: SampleManifest,
    pub written: usize,
    pub resumed: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Per-image seed, derived from the file name so it does not depend on the
/// corpus listing order.
pub fn image_seed(base_seed: u64, file_name: &str) -> u64 {
    let name_hash = file_name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    mix64(base_seed ^ mix64(name_hash))
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    GrayImage::new(w as usize, h as usize, img.into_raw())
}

fn process_one(
    path: &Path,
    name: &str,
    out_dir: &Path,
    cfg: &SynthConfig,
) -> Result<ManifestEntry> {
    let img = load_gray(path)?;
    let c = cfg.crop_size;
    if img.width() < c || img.height() < c {
        return Err(Error::Config(format!(
            "{}x{} image smaller than crop {c}",
            img.width(),
            img.height()
        )));
    }
    let seed = image_seed(cfg.seed, name);
    let x0 = (hash3(seed, CROP_STREAM, 0) % (img.width() - c + 1) as u64) as usize;
    let y0 = (hash3(seed, CROP_STREAM, 1) % (img.height() - c + 1) as u64) as usize;
    let crop = img.crop(x0, y0, c, c)?;

    let mut sample_cfg = cfg.clone();
    sample_cfg.sensor.noise.seed = seed;
    let sample = synth_sample(&crop, &sample_cfg)?;

    let out_name = format!("{name}.pgm");
    let etfi_rel = format!("{ETFI_DIR}/{out_name}");
    let gt_rel = format!("{GT_DIR}/{out_name}");
    write_atomic(&out_dir.join(&etfi_rel), &write_pgm(&sample.etfi.image))?;
    write_atomic(&out_dir.join(&gt_rel), &write_pgm(&sample.ground_truth))?;
    Ok(ManifestEntry {
        source: path.display().to_string(),
        etfi: etfi_rel,
        ground_truth: gt_rel,
        seed,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("pgm.part");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs [`synth_sample`] over every file in `corpus_dir`.
///
/// Images are processed on the current rayon pool; manifest lines are appended
/// in file-name order once all workers finish. Sources already listed in the
/// manifest with both outputs present are skipped, so an interrupted run can
/// be resumed. Unreadable or too-small images are logged and skipped.
pub fn synth_dataset(corpus_dir: &Path, out_dir: &Path, cfg: &SynthConfig) -> Result<SynthReport> {
    cfg.validate()?;
    let mut sources: Vec<(PathBuf, String)> = fs::read_dir(corpus_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_string();
            Some((e.path(), name))
        })
        .collect();
    sources.sort_by(|a, b| a.1.cmp(&b.1));

    fs::create_dir_all(out_dir.join(ETFI_DIR))?;
    fs::create_dir_all(out_dir.join(GT_DIR))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut manifest = match fs::read_to_string(&manifest_path) {
        Ok(text) => SampleManifest::parse(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => SampleManifest::default(),
        Err(e) => return Err(e.into()),
    };

    let complete: HashSet<&str> = manifest
        .entries
        .iter()
        .filter(|e| out_dir.join(&e.etfi).is_file() && out_dir.join(&e.ground_truth).is_file())
        .map(|e| e.source.as_str())
        .collect();
    let listed: HashSet<String> = manifest.entries.iter().map(|e| e.source.clone()).collect();
    let todo: Vec<&(PathBuf, String)> = sources
        .iter()
        .filter(|(p, _)| !complete.contains(p.display().to_string().as_str()))
        .collect();
    let resumed = sources.len() - todo.len();

    let done = AtomicUsize::new(0);
    let total = todo.len();
    let results: Vec<(PathBuf, Result<ManifestEntry>)> = todo
        .par_iter()
        .map(|(path, name)| {
            let r = process_one(path, name, out_dir, cfg);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            log::info!("[{n}/{total}] {name}");
            (path.clone(), r)
        })
        .collect();

    let mut report = SynthReport {
        resumed,
        ..SynthReport::default()
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)?;
    for (path, r) in results {
        match r {
            Ok(entry) => {
                if !listed.contains(&entry.source) {
                    file.write_all(SampleManifest::line(&entry).as_bytes())?;
                    manifest.entries.push(entry);
                }
                report.written += 1;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
            }
        }
    }
    file.flush()?;
    report.manifest = manifest;
    Ok(report)
}
