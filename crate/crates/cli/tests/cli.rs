use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;

use phaseret::formats::{
    decode_image, decode_measurements, decode_model, decode_pgm, encode_image, encode_measurements, encode_model,
    encode_pgm,
};
use phaseret_core::denoiser::{DenoiserArch, DenoiserModel};
use phaseret_core::{ImageGrid, MagnitudeMeasurements};

const SMALL: &str = "\
image_dim = 8
padded_dim = 16
count = 3
init.restarts = 6
init.keep = 2
init.refine_iters = 100
train.epochs = 2
train.hidden_channels = 4
train.layers = 2
train.embed_dim = 4
";

fn phaseret(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_phaseret"))
        .args(args)
        .args(["--config", "c.txt", "--work-dir", "w"])
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn phaseret");
    out.status.code().expect("exit code")
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), format!("{SMALL}{extra}")).unwrap();
    dir
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn eval_psnr(dir: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(dir.join("w/eval.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,psnr,ssim,ambiguity,shift_search"));
    lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn every_subcommand_is_deterministic() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let d = setup("aggregate.p = 1\n");
            let p = d.path();
            for cmd in [
                &["synth"][..],
                &["init"],
                &["train-denoiser"],
                &["reconstruct", "--snapshots"],
                &["aggregate", "--p", "2"],
                &["eval"],
                &["run"],
            ] {
                assert_eq!(phaseret(p, cmd), 0, "{cmd:?}");
            }
            let f = files(&p.join("w"));
            (d, f)
        })
        .collect();
    assert!(runs[0].1.len() > 20);
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn oracle_run_recovers_noiseless_records() {
    let d = setup("alpha = 0\ncount = 1\n");
    assert_eq!(phaseret(d.path(), &["synth"]), 0);
    assert_eq!(phaseret(d.path(), &["run", "--oracle-denoiser"]), 0);
    let psnr = eval_psnr(d.path());
    assert_eq!(psnr.len(), 1);
    assert!(psnr[0] > 50.0, "{psnr:?}");
}

#[test]
fn one_combined_run_writes_two_samples() {
    let d = setup("count = 1\n");
    assert_eq!(phaseret(d.path(), &["synth"]), 0);
    assert_eq!(phaseret(d.path(), &["run", "--oracle-denoiser", "--p", "1"]), 0);
    let samples = std::fs::read_dir(d.path().join("w/aggregate/img00000"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("sample_"))
        .count();
    assert_eq!(samples, 2);
}

#[test]
fn empty_corpus_succeeds() {
    let d = setup("count = 0\n");
    assert_eq!(phaseret(d.path(), &["synth"]), 0);
    let manifest = std::fs::read_to_string(d.path().join("w/corpus/manifest.csv")).unwrap();
    assert_eq!(manifest, "id,image_seed,noise_seed,alpha,snr_db\n");
}

#[test]
fn exit_codes() {
    let d = setup("");
    assert_eq!(phaseret(d.path(), &["init"]), 2, "missing corpus");
    assert_eq!(phaseret(d.path(), &["synth", "--set", "nonsense=1"]), 2);
    assert_eq!(phaseret(d.path(), &["synth", "--alpha", "-1"]), 2);
    assert_eq!(phaseret(d.path(), &["synth"]), 0);
    assert_eq!(phaseret(d.path(), &["reconstruct"]), 2, "missing model");
    std::fs::write(d.path().join("w/corpus/measurements/img00001.i2im"), b"junk").unwrap();
    assert_eq!(phaseret(d.path(), &["init"]), 1, "one broken record");
    assert!(d.path().join("w/init/img00000/manifest.csv").exists());
    assert!(d.path().join("w/init/img00002/manifest.csv").exists());
}

fn frame(n: usize) -> impl Strategy<Value = ImageGrid> {
    let p = 2 * n;
    prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), p * p)
        .prop_map(move |v| ImageGrid::from_frame(n, p, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn image_round_trip(x in frame(3)) {
        let bytes = encode_image(&x);
        let back = decode_image(&bytes).unwrap();
        prop_assert_eq!(&back, &x);
        prop_assert_eq!(encode_image(&back), bytes);
    }

    #[test]
    fn measurement_round_trip(m in prop::collection::vec(0.0..1e6f64, 36), alpha in 0.0..10.0f64, seed in any::<u64>()) {
        let y = MagnitudeMeasurements::new(6, m, alpha, seed).unwrap();
        let bytes = encode_measurements(&y);
        let back = decode_measurements(&bytes).unwrap();
        prop_assert_eq!(&back, &y);
        prop_assert_eq!(encode_measurements(&back), bytes);
    }

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let arch = DenoiserArch { hidden_channels: 3, layers: 2, embed_dim: 4, ..DenoiserArch::new(2) };
        let m = DenoiserModel::random(arch, 8, seed).unwrap();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        prop_assert_eq!(&back.params, &m.params);
        prop_assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn pgm_round_trip(px in prop::collection::vec(any::<u8>(), 16)) {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend(&px);
        let x = decode_pgm(&bytes, None).unwrap();
        prop_assert_eq!(encode_pgm(&x), bytes);
    }
}
