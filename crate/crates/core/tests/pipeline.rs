use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use prism_core::backend::{Capability, DenoiseBackend, ToyBackend};
use prism_core::ddim::LatentTensor;
use prism_core::imagecore::{save_mask, ImageRgb};
use prism_core::pipeline::*;
use prism_core::prism::NoiseKind;
use prism_core::Error;

fn write_masks(dir: &Path, n: usize, size: usize) -> PathBuf {
    let masks = dir.join("masks");
    std::fs::create_dir_all(&masks).unwrap();
    for i in 0..n {
        save_mask(&synthetic_dendrite(size, size, i as u64), masks.join(format!("mask{i}.png"))).unwrap();
    }
    masks
}

fn config(dir: &Path, n_masks: usize, samples: usize) -> JobConfig {
    JobConfig {
        masks: vec![write_masks(dir, n_masks, 32)],
        samples_per_mask: samples,
        output_dir: dir.join("out"),
        seed: 7,
        workers: 2,
        ..Default::default()
    }
}

/// Toy backend whose `encode` fails on one chosen call.
struct FailingOnce {
    inner: ToyBackend,
    calls: AtomicUsize,
    fail_at: usize,
}

impl DenoiseBackend for FailingOnce {
    fn capabilities(&self) -> BTreeSet<Capability> {
        self.inner.capabilities()
    }
    fn model_id(&self) -> String {
        "failing-stub".into()
    }
    fn encode(&self, image: &ImageRgb) -> prism_core::Result<LatentTensor> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(Error::Decode("stub failure".into()));
        }
        self.inner.encode(image)
    }
    fn decode(&self, z: &LatentTensor) -> prism_core::Result<ImageRgb> {
        self.inner.decode(z)
    }
    fn predict_eps(&self, z: &LatentTensor, t: usize, prompt: &str, guidance: f64) -> prism_core::Result<LatentTensor> {
        self.inner.predict_eps(z, t, prompt, guidance)
    }
}

#[test]
fn two_masks_three_samples_give_six_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 2, 3);
    let m = generate_dataset(&cfg, &ToyBackend::default(), RunOptions::default()).unwrap();
    assert_eq!((m.ok_count(), m.failed_count()), (6, 0));
    let images: Vec<_> = std::fs::read_dir(cfg.output_dir.join(IMAGES_DIR)).unwrap().collect();
    assert_eq!(images.len(), 6);
    for r in &m.records {
        assert!(r.image_path.as_ref().unwrap().exists());
        assert!(r.metrics.as_ref().unwrap().entropy_bits.is_some());
    }
}

#[test]
fn a_failing_sample_is_recorded_and_the_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = JobConfig {
        workers: 1,
        ..config(dir.path(), 2, 3)
    };
    let backend = FailingOnce {
        inner: ToyBackend::default(),
        calls: AtomicUsize::new(0),
        fail_at: 2,
    };
    let m = generate_dataset(&cfg, &backend, RunOptions::default()).unwrap();
    assert_eq!((m.ok_count(), m.failed_count()), (5, 1));
    let failed = m.records.iter().find(|r| r.status == Status::Failed).unwrap();
    assert_eq!(failed.id, "m0000-s002");
    assert!(failed.error.as_ref().unwrap().contains("stub failure"));
    assert!(failed.image_path.is_none());

    // resume retries only the failed id
    let again = generate_dataset(&cfg, &ToyBackend::default(), RunOptions { resume: true, force: false }).unwrap();
    assert_eq!(again.records.len(), 7);
    assert_eq!(again.completed_ids().len(), 6);
    assert_eq!(again.records.last().unwrap().id, "m0000-s002");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg_a = config(a.path(), 2, 2);
    // same mask content and relative layout, different root
    let cfg_b = JobConfig {
        masks: vec![write_masks(b.path(), 2, 32)],
        output_dir: b.path().join("out"),
        workers: 3,
        ..cfg_a.clone()
    };
    generate_dataset(&cfg_a, &ToyBackend::default(), RunOptions::default()).unwrap();
    generate_dataset(&cfg_b, &ToyBackend::default(), RunOptions::default()).unwrap();
    let read = |p: &Path| std::fs::read_to_string(p.join(MANIFEST_FILE)).unwrap();
    let normalize = |s: String, root: &Path| s.replace(root.to_str().unwrap(), "<root>");
    assert_eq!(
        normalize(read(&cfg_a.output_dir), a.path()),
        normalize(read(&cfg_b.output_dir), b.path())
    );
    for i in 0..2 {
        for s in 0..2 {
            let name = format!("m{i:04}-s{s:03}.png");
            let img = |c: &JobConfig| std::fs::read(c.output_dir.join(IMAGES_DIR).join(&name)).unwrap();
            assert_eq!(img(&cfg_a), img(&cfg_b), "{name}");
        }
    }
}

#[test]
fn existing_output_needs_force_or_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 2);
    let toy = ToyBackend::default();
    generate_dataset(&cfg, &toy, RunOptions::default()).unwrap();
    let err = generate_dataset(&cfg, &toy, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::OutputExists(_)));
    assert!(err.is_config());

    let resumed = generate_dataset(&cfg, &toy, RunOptions { resume: true, force: false }).unwrap();
    assert_eq!(resumed.records.len(), 2);
    let forced = generate_dataset(&cfg, &toy, RunOptions { force: true, resume: false }).unwrap();
    assert_eq!(forced.records.len(), 2);
}

#[test]
fn torn_manifest_resumes_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 3);
    let toy = ToyBackend::default();
    generate_dataset(&cfg, &toy, RunOptions::default()).unwrap();
    let path = cfg.output_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&path, format!("{}\n{}", lines[0], &lines[1][..lines[1].len() / 2])).unwrap();
    let m = generate_dataset(&cfg, &toy, RunOptions { resume: true, force: false }).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.completed_ids().len(), 3);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn config_echo_holds_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 1);
    generate_dataset(&cfg, &ToyBackend::default(), RunOptions::default()).unwrap();
    let echo = std::fs::read_to_string(cfg.output_dir.join(CONFIG_ECHO_FILE)).unwrap();
    let back = JobConfig::from_json(&echo).unwrap();
    assert_eq!(back, cfg);
    for key in ["\"diffusion\"", "\"strength\"", "\"chroma\"", "\"noise_mean\"", "\"eval\"", "\"schedule\""] {
        assert!(echo.contains(key), "{key}");
    }
}

#[test]
fn empty_mask_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("none")).unwrap();
    let cfg = JobConfig {
        masks: vec![dir.path().join("none")],
        output_dir: dir.path().join("out"),
        ..Default::default()
    };
    let err = generate_dataset(&cfg, &ToyBackend::default(), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyInput));
}

#[test]
fn sweep_points_share_seeds_and_carry_sample_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 2, 2);
    let r = run_noise_sweep(&cfg, &[0.0, 0.1], &ToyBackend::default()).unwrap();
    assert_eq!(r.points.len(), 2);
    for p in &r.points {
        assert!(p.metrics.n_samples >= r.min_samples);
        assert!(p.metrics.report.ssim.is_some());
        assert!(p.metrics.diversity.is_some());
    }
    assert!(run_noise_sweep(&cfg, &[], &ToyBackend::default()).unwrap_err().is_config());
}

#[test]
fn fid_without_reference_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1, 2);
    cfg.eval.fid = true;
    let err = run_noise_sweep(&cfg, &[0.1], &ToyBackend::default()).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn fid_against_a_reference_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 2, 3);
    cfg.eval.fid = true;
    cfg.eval.nfid_normalizer = Some(100.0);
    cfg.eval.reference = Some(write_masks(&dir.path().join("ref"), 4, 32));
    let r = run_noise_sweep(&cfg, &[0.05], &ToyBackend::default()).unwrap();
    let rep = &r.points[0].metrics.report;
    let (fid, nfid) = (rep.fid.unwrap().value, rep.nfid.unwrap().value);
    assert!(fid >= 0.0 && nfid > 0.0 && nfid <= 1.0);
}

#[test]
fn noise_type_study_tabulates_entropies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 2);
    let kinds = [NoiseKind::Gaussian, NoiseKind::SaltPepper, NoiseKind::Perlin];
    let r = run_noise_type_study(&cfg, &kinds, &ToyBackend::default()).unwrap();
    assert_eq!(r.rows.iter().map(|r| r.kind).collect::<Vec<_>>(), kinds);
    for row in &r.rows {
        assert!(row.metrics.entropy_input.is_some() && row.metrics.report.entropy_bits.is_some());
    }
    assert!(run_noise_type_study(&cfg, &[], &ToyBackend::default()).unwrap_err().is_config());
}

#[test]
fn ablation_has_four_arms_over_one_mask_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 2, 2);
    let r = run_ablation(&cfg, &ToyBackend::default()).unwrap();
    assert_eq!(r.arms.iter().map(|a| a.arm).collect::<Vec<_>>(), Arm::ALL);
    assert_eq!(r.masks.len(), 2);
    for a in &r.arms {
        assert_eq!(a.metrics.n_samples, 4);
    }
    let dir_out = dir.path().join("report");
    let files = emit_report(&Report::Ablation(r), &dir_out).unwrap();
    assert!(files.contains(&dir_out.join(REPORT_CSV)));
    let csv = std::fs::read_to_string(dir_out.join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn manifest_evaluation_matches_record_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 2, 2);
    let toy = ToyBackend::default();
    let m = generate_dataset(&cfg, &toy, RunOptions::default()).unwrap();
    let set = evaluate_manifest(&m.path, &cfg.eval, cfg.mask_threshold, cfg.seed, &toy).unwrap();
    assert_eq!(set.n_samples, 4);
    assert!(set.report.ssim.unwrap().value > 0.5);
}

#[test]
fn unwritable_report_dir_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 2);
    let r = run_noise_sweep(&cfg, &[0.0], &ToyBackend::default()).unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = emit_report(&Report::Sweep(r), blocker.join("sub")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
