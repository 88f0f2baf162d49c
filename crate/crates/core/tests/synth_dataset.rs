use std::fs;
use std::path::Path;

use spikeline_core::codec::write_pgm;
use spikeline_core::synth::{synth_dataset, SampleManifest, SynthConfig, MANIFEST_FILE};
use spikeline_core::GrayImage;

fn toy_config() -> SynthConfig {
    SynthConfig {
        crop_size: 24,
        degrade_factor: 1.5,
        stream_frames: 64,
        seed: 11,
        ..SynthConfig::default()
    }
}

fn write_corpus(dir: &Path, n: usize) {
    for i in 0..n {
        let img = GrayImage::from_fn(32 + i, 30, |x, y| {
            ((x * 5 + y * 3 + i * 11) % 220 + 30) as u8
        });
        fs::write(dir.join(format!("img{i:02}.pgm")), write_pgm(&img)).unwrap();
    }
}

fn count_pgm(dir: &Path) -> usize {
    walk(dir)
        .into_iter()
        .filter(|p| p.ends_with(".pgm"))
        .count()
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = vec![];
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.display().to_string());
        }
    }
    out
}

#[test]
fn sixteen_images_sixteen_lines() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 16);
    let report = synth_dataset(corpus.path(), out.path(), &toy_config()).unwrap();
    assert_eq!(report.written, 16);
    assert!(report.skipped.is_empty());
    let text = fs::read_to_string(out.path().join(MANIFEST_FILE)).unwrap();
    let manifest = SampleManifest::parse(&text).unwrap();
    assert_eq!(manifest.entries.len(), 16);
    assert_eq!(count_pgm(out.path()), 32);
    for e in &manifest.entries {
        assert!(out.path().join(&e.etfi).is_file());
        assert!(out.path().join(&e.ground_truth).is_file());
    }

    // Resume: nothing new to do, manifest untouched.
    let again = synth_dataset(corpus.path(), out.path(), &toy_config()).unwrap();
    assert_eq!(again.written, 0);
    assert_eq!(again.resumed, 16);
    assert_eq!(
        fs::read_to_string(out.path().join(MANIFEST_FILE)).unwrap(),
        text
    );
}

#[test]
fn rerun_is_byte_identical() {
    let corpus = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 4);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = toy_config();
    cfg.sensor.noise.shot_noise = true;
    cfg.sensor.noise.hot_pixel_fraction = 0.01;
    synth_dataset(corpus.path(), a.path(), &cfg).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| synth_dataset(corpus.path(), b.path(), &cfg).unwrap());
    let mut files_a = walk(a.path());
    files_a.sort();
    assert_eq!(files_a.len(), 9);
    for fa in files_a {
        let rel = Path::new(&fa).strip_prefix(a.path()).unwrap();
        assert_eq!(
            fs::read(&fa).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel:?}"
        );
    }
}

#[test]
fn corrupt_file_is_skipped() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 7);
    fs::write(
        corpus.path().join("broken.png"),
        b"\x89PNG\r\n\x1a\nnot really",
    )
    .unwrap();
    let report = synth_dataset(corpus.path(), out.path(), &toy_config()).unwrap();
    assert_eq!(report.written, 7);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].0.ends_with("broken.png"));
    let text = fs::read_to_string(out.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn interrupted_run_resumes_remaining() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 5);
    synth_dataset(corpus.path(), out.path(), &toy_config()).unwrap();
    // Lose one sample's outputs and manifest line.
    let text = fs::read_to_string(out.path().join(MANIFEST_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dropped = SampleManifest::parse(lines[2]).unwrap().entries.remove(0);
    fs::remove_file(out.path().join(&dropped.etfi)).unwrap();
    let kept: String = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 2)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(out.path().join(MANIFEST_FILE), kept).unwrap();

    let report = synth_dataset(corpus.path(), out.path(), &toy_config()).unwrap();
    assert_eq!(report.written, 1);
    assert_eq!(report.resumed, 4);
    assert_eq!(report.manifest.entries.len(), 5);
    assert!(out.path().join(&dropped.etfi).is_file());
}
