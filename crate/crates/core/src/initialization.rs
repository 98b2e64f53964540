//! Multi-restart initialization: random-phase HIO exploration, top-k
//! selection by residual, then alternating HIO / accelerated-ER refinement of
//! each survivor.
//!
//! Every residual used here is measured on the space-projected estimate
//! `P_S x`, i.e. on the image the stage would actually hand downstream.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::aggregation::{apply_transform, EquivariantTransform, TransformKind};
use crate::error::{check_dim, invalid, Error, Result};
use crate::fourier::{plan, residual_of_values};
use crate::grid::{mean_image, ImageGrid, MagnitudeMeasurements};
use crate::projections::project_space_in_place;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::solvers::{run_aer_with_state, run_hio, AccelState, SolverParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    /// Random-phase restarts explored with HIO.
    pub restarts: usize,
    /// HIO iterations per restart.
    pub explore_iters: usize,
    /// Survivors refined and returned.
    pub keep: usize,
    /// Total refinement iterations per survivor.
    pub refine_iters: usize,
    pub hio_block: usize,
    pub aer_block: usize,
    pub solver: SolverParams,
    /// Rotate each survivor onto the orientation of the best one (by
    /// distance), so the ensemble mean does not superpose twin images.
    pub align_twins: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            explore_iters: 50,
            keep: 10,
            refine_iters: 1700,
            hio_block: 40,
            aer_block: 10,
            solver: SolverParams {
                accel_period: 3,
                ..SolverParams::default()
            },
            align_twins: true,
        }
    }
}

impl InitConfig {
    /// Reduced schedule for small images: 20 restarts, 3 survivors, 400
    /// refinement iterations.
    pub fn desk() -> Self {
        Self {
            restarts: 20,
            keep: 3,
            refine_iters: 400,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.restarts == 0 || self.explore_iters == 0 {
            return Err(invalid("restarts", "restarts and explore_iters must be positive"));
        }
        if self.keep == 0 || self.keep > self.restarts {
            return Err(invalid(
                "keep",
                format!("{} must be in 1..={}", self.keep, self.restarts),
            ));
        }
        if self.hio_block == 0 {
            return Err(invalid("hio_block", "must be positive"));
        }
        if self.refine_iters < self.hio_block {
            return Err(invalid("refine_iters", "must cover at least one HIO block"));
        }
        Ok(())
    }
}

/// One explored restart.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub seed: u64,
    /// Raw HIO iterate (the solver state, not space-projected).
    pub image: ImageGrid,
    /// Residual of the space-projected iterate; `+∞` when the run aborted.
    pub residual: f64,
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitEnsemble {
    /// Feasible estimates, best residual first.
    pub estimates: Vec<ImageGrid>,
    pub residuals: Vec<f64>,
    /// Restart seeds the estimates descend from.
    pub seeds: Vec<u64>,
    /// Elementwise mean of the estimates.
    pub mean: ImageGrid,
}

impl InitEnsemble {
    /// Builds an ensemble from estimates, computing the mean.
    pub fn from_estimates(estimates: Vec<ImageGrid>, residuals: Vec<f64>, seeds: Vec<u64>) -> Result<Self> {
        check_dim("residual count", estimates.len(), residuals.len())?;
        check_dim("seed count", estimates.len(), seeds.len())?;
        let mean = mean_image(&estimates)?;
        Ok(Self {
            estimates,
            residuals,
            seeds,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

fn projected(x: &ImageGrid, cfg: &InitConfig) -> ImageGrid {
    let mut v = x.values().to_vec();
    project_space_in_place(&mut v, x.support(), cfg.solver.constraint);
    x.with_values(v)
}

/// `P_S A†(y ⊙ e^{iθ})` for explicit phases `θ` (one per frequency).
pub fn phase_start(y: &MagnitudeMeasurements, inner_dim: usize, phases: &[f64]) -> Result<ImageGrid> {
    let p = y.padded_dim();
    check_dim("phase count", p * p, phases.len())?;
    let spec: Vec<Complex64> = y
        .magnitudes()
        .iter()
        .zip(phases)
        .map(|(&m, &t)| Complex64::from_polar(m, t))
        .collect();
    let mut values = plan(p).inverse_real(spec);
    let template = ImageGrid::zeros(inner_dim, p);
    project_space_in_place(&mut values, template.support(), Default::default());
    ImageGrid::from_frame(inner_dim, p, values)
}

/// Start from uniformly random phases on `[0, 2π)`.
pub fn random_phase_start(y: &MagnitudeMeasurements, inner_dim: usize, seed: u64) -> Result<ImageGrid> {
    let p = y.padded_dim();
    let mut rng = rng_from_seed(seed);
    let phases: Vec<f64> = (0..p * p).map(|_| rng.random::<f64>() * TAU).collect();
    phase_start(y, inner_dim, &phases)
}

/// Runs `restarts` short HIO explorations, one per derived seed.
pub fn explore(
    y: &MagnitudeMeasurements,
    inner_dim: usize,
    cfg: &InitConfig,
    seed: u64,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    (0..cfg.restarts)
        .into_par_iter()
        .map(|index| {
            let restart_seed = derive_seed(seed, stream::RESTART, index as u64);
            let x0 = random_phase_start(y, inner_dim, restart_seed)?;
            Ok(match run_hio(&x0, y, &cfg.solver, cfg.explore_iters)? {
                Ok(trace) => {
                    let residual = residual_of_values(projected(&trace.final_image, cfg).values(), y);
                    Candidate {
                        index,
                        seed: restart_seed,
                        image: trace.final_image,
                        residual,
                        aborted: false,
                    }
                }
                Err(abort) => Candidate {
                    index,
                    seed: restart_seed,
                    image: abort.trace.final_image,
                    residual: f64::INFINITY,
                    aborted: true,
                },
            })
        })
        .collect()
}

/// The `keep` lowest-residual candidates, ties broken by lower index.
pub fn select_top_k(candidates: &[Candidate], keep: usize) -> Result<Vec<Candidate>> {
    if keep > candidates.len() {
        return Err(Error::NotEnough {
            what: "candidates",
            required: keep,
            actual: candidates.len(),
        });
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.residual.total_cmp(&b.residual).then(a.index.cmp(&b.index)));
    sorted.truncate(keep);
    Ok(sorted)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    /// Best feasible estimate seen at a block boundary (or the start).
    pub image: ImageGrid,
    pub residual: f64,
    /// Set when a solver block aborted; `image` is then the best so far.
    pub aborted: bool,
}

/// Alternates `hio_block` HIO iterations with `aer_block` AER iterations
/// until `refine_iters` are spent, keeping the best estimate seen.
pub fn refine_candidate(x: &ImageGrid, y: &MagnitudeMeasurements, cfg: &InitConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    check_dim("padded dimension", x.padded_dim(), y.padded_dim())?;
    let start = projected(x, cfg);
    let mut best = RefineOutcome {
        residual: residual_of_values(start.values(), y),
        image: start,
        aborted: false,
    };
    let mut current = x.clone();
    let mut remaining = cfg.refine_iters;
    let mut use_hio = true;
    while remaining > 0 {
        let block = if use_hio { cfg.hio_block } else { cfg.aer_block }.min(remaining);
        if block > 0 {
            let run = if use_hio {
                run_hio(&current, y, &cfg.solver, block)?
            } else {
                let mut state = AccelState::default();
                run_aer_with_state(&current, y, &cfg.solver, block, &mut state)?
            };
            match run {
                Ok(trace) => current = trace.final_image,
                Err(_) => {
                    best.aborted = true;
                    return Ok(best);
                }
            }
            let estimate = projected(&current, cfg);
            let r = residual_of_values(estimate.values(), y);
            if r < best.residual {
                best.residual = r;
                best.image = estimate;
            }
            remaining -= block;
        }
        use_hio = !use_hio;
    }
    Ok(best)
}

/// Full procedure: explore, select, refine, and assemble the ensemble.
pub fn initialize(
    y: &MagnitudeMeasurements,
    inner_dim: usize,
    cfg: &InitConfig,
    seed: u64,
) -> Result<InitEnsemble> {
    let candidates = explore(y, inner_dim, cfg, seed)?;
    let selected = select_top_k(&candidates, cfg.keep)?;
    let refined: Vec<(RefineOutcome, u64)> = selected
        .par_iter()
        .map(|c| refine_candidate(&c.image, y, cfg).map(|o| (o, c.seed)))
        .collect::<Result<_>>()?;
    let mut refined = refined;
    // stable: equal residuals keep selection order
    refined.sort_by(|a, b| a.0.residual.total_cmp(&b.0.residual));
    let mut estimates: Vec<ImageGrid> = refined.iter().map(|(o, _)| o.image.clone()).collect();
    if cfg.align_twins {
        align_to_first(&mut estimates);
    }
    let residuals = refined.iter().map(|(o, _)| o.residual).collect();
    let seeds = refined.iter().map(|(_, s)| *s).collect();
    InitEnsemble::from_estimates(estimates, residuals, seeds)
}

/// Replaces each estimate after the first by its 180° twin when the twin is
/// closer to the first estimate.
pub fn align_to_first(estimates: &mut [ImageGrid]) {
    let Some((first, rest)) = estimates.split_first_mut() else {
        return;
    };
    let rot = EquivariantTransform::new(TransformKind::Rot180, first.inner_dim());
    for e in rest {
        let twin = apply_transform(e, &rot);
        if twin.distance(first) < e.distance(first) {
            *e = twin;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::measure;
    use crate::grid::NoiseModel;

    fn instance() -> (ImageGrid, MagnitudeMeasurements) {
        let px: Vec<f64> = (0..36).map(|i| 0.2 + ((i * 5 % 7) as f64) / 10.0).collect();
        let x = ImageGrid::from_inner(6, 12, &px).unwrap();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        (x, y)
    }

    fn cand(index: usize, residual: f64) -> Candidate {
        Candidate {
            index,
            seed: index as u64,
            image: ImageGrid::zeros(1, 2),
            residual,
            aborted: false,
        }
    }

    #[test]
    fn top_k_selection_and_ties() {
        let c = vec![cand(0, 3.0), cand(1, 1.0), cand(2, 2.0)];
        let s = select_top_k(&c, 2).unwrap();
        assert_eq!(s.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 2]);
        let all = select_top_k(&c, 3).unwrap();
        assert_eq!(all.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 2, 0]);
        let t = vec![cand(0, 1.0), cand(1, 1.0), cand(2, 2.0)];
        assert_eq!(select_top_k(&t, 1).unwrap()[0].index, 0);
        assert!(select_top_k(&t, 4).is_err());
    }

    #[test]
    fn zero_measurements_give_zero_start() {
        let y = MagnitudeMeasurements::new(8, vec![0.0; 64], 0.0, 0).unwrap();
        let x = random_phase_start(&y, 4, 17).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_phase_start_is_projected_backprojection() {
        let (_, y) = instance();
        let x = phase_start(&y, 6, &vec![0.0; 144]).unwrap();
        let spec: Vec<Complex64> = y.magnitudes().iter().map(|&m| Complex64::new(m, 0.0)).collect();
        let mut expected = plan(12).inverse_real(spec);
        project_space_in_place(&mut expected, x.support(), Default::default());
        for (a, b) in x.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn refining_the_solution_keeps_it() {
        let (x, y) = instance();
        let cfg = InitConfig { refine_iters: 100, ..InitConfig::desk() };
        let out = refine_candidate(&x, &y, &cfg).unwrap();
        assert!(out.residual < 1e-20);
        assert!(out.image.distance(&x) < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut cfg = InitConfig::desk();
        cfg.keep = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = InitConfig::desk();
        cfg.refine_iters = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_restart_ensemble() {
        let (_, y) = instance();
        let cfg = InitConfig { restarts: 1, keep: 1, refine_iters: 60, ..InitConfig::desk() };
        let e = initialize(&y, 6, &cfg, 3).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.mean, e.estimates[0]);
        assert_eq!(e, initialize(&y, 6, &cfg, 3).unwrap());
    }
}
