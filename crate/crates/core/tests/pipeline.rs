use phaseret_core::aggregation::{aggregate, EquivariantTransform, TransformKind};
use phaseret_core::denoiser::{DenoiserArch, DenoiserModel};
use phaseret_core::initialization::{initialize, InitConfig};
use phaseret_core::metrics::resolve_ambiguity;
use phaseret_core::refinement::{reconstruct, OracleDenoiser, RefinementConfig};
use phaseret_core::synth::SyntheticCorpusSpec;
use phaseret_core::{measure, NoiseModel};

fn small_init() -> InitConfig {
    InitConfig {
        restarts: 8,
        keep: 2,
        refine_iters: 200,
        ..InitConfig::desk()
    }
}

#[test]
fn oracle_refinement_recovers_noiseless_image() {
    let x = SyntheticCorpusSpec::new(1, 8, 11).image(0).unwrap();
    let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
    let ens = initialize(&y, 8, &small_init(), 5).unwrap();
    let oracle = OracleDenoiser { truth: x.clone() };
    let out = reconstruct(&y, &ens, &oracle, &RefinementConfig::new(4, 9)).unwrap();
    let (_, m) = resolve_ambiguity(&out, &x, false).unwrap();
    assert!(m.psnr_db > 50.0, "{}", m.psnr_db);
}

#[test]
fn pipeline_is_deterministic_and_counts_samples() {
    let x = SyntheticCorpusSpec::new(1, 8, 3).image(0).unwrap();
    let y = measure(&x, &NoiseModel::new(3.0).with_intensity_scale(255.0), 1).unwrap();
    let cfg = small_init();
    let a = initialize(&y, 8, &cfg, 42).unwrap();
    let b = initialize(&y, 8, &cfg, 42).unwrap();
    assert_eq!(a, b);

    let model = DenoiserModel::random(DenoiserArch::new(2), 8, 7).unwrap();
    let rc = RefinementConfig::new(3, 13);
    let t = EquivariantTransform::new(TransformKind::Rot180, 8);
    let r1 = aggregate(&y, &a, &model, &rc, &t, 1).unwrap();
    let r2 = aggregate(&y, &a, &model, &rc, &t, 1).unwrap();
    assert_eq!(r1.samples.len(), 2);
    assert_eq!(r1, r2);
    assert!(r1.mean.values().iter().all(|v| v.is_finite()));
}
