//! Finite-difference verification of the analytic objective gradient.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{Point3, Vec3};
use crate::config::AlignmentForm;
use crate::error::Result;
use crate::loss::{loss_gradients, GaussianParams, Objective, PARAMS_PER_POINT};
use crate::sampling::draw_noise;

pub const GAUSSIANS_PER_CASE: usize = 8;
pub const GT_PER_CASE: usize = 32;
pub const CASE_RATE: usize = 4;
pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Components smaller than this are not compared.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// Deliberate damage applied to the analytic gradient, used to show the
/// checker actually rejects a wrong gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Corruption {
    /// Multiply every offset-gradient component by this factor.
    ScaleOffsets(f64),
    /// Drop the alignment term's contribution by evaluating with λ = 0.
    DropAlignment,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockErrors {
    pub offset: f64,
    pub logits: f64,
    pub quat: f64,
}

impl BlockErrors {
    pub fn max(&self) -> f64 {
        self.offset.max(self.logits).max(self.quat)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub cases: usize,
    pub form: AlignmentForm,
    pub components_checked: usize,
    pub max_rel_error: BlockErrors,
    pub worst: Option<Offender>,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_point(rng: &mut ChaCha8Rng) -> Point3 {
    Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// The component with the largest relative error seen so far.
#[derive(Debug, Clone, Serialize)]
pub struct Offender {
    pub case: usize,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// One random configuration: `(analytic, central difference)` for every
/// flat parameter component, laid out as in [`GaussianParams::to_flat`].
pub fn check_case(
    seed: u64,
    case: usize,
    form: AlignmentForm,
    step: f64,
    corruption: Option<Corruption>,
) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::key(&[seed, case as u64]));
    let anchors: Vec<Point3> = (0..GAUSSIANS_PER_CASE).map(|_| random_point(&mut rng)).collect();
    let gt: Vec<Point3> = (0..GT_PER_CASE).map(|_| random_point(&mut rng)).collect();
    let eps = draw_noise(GAUSSIANS_PER_CASE, CASE_RATE, 2.0, rng.random());
    let mut params = GaussianParams::identity(GAUSSIANS_PER_CASE);
    for i in 0..GAUSSIANS_PER_CASE {
        params.offsets[i] = Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        params.logits[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        params.quats[i] = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
    }
    let obj = Objective {
        anchors: &anchors,
        gt: &gt,
        eps: &eps,
        rate: CASE_RATE,
        lambda: rng.random_range(0.2..2.0),
        scale_gain: rng.random_range(0.1..0.5),
        form,
    };
    let (_, mut grad, assign) = match corruption {
        Some(Corruption::DropAlignment) => loss_gradients(&Objective { lambda: 0.0, ..obj }, &params)?,
        _ => loss_gradients(&obj, &params)?,
    };
    if let Some(Corruption::ScaleOffsets(f)) = corruption {
        grad.offsets.iter_mut().for_each(|g| *g *= f);
    }
    let base = params.to_flat();
    let mut probe = base.clone();
    grad.to_flat()
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            probe[k] = base[k] + step;
            let fp = obj.evaluate(&GaussianParams::from_flat(&probe), &assign)?.total;
            probe[k] = base[k] - step;
            let fm = obj.evaluate(&GaussianParams::from_flat(&probe), &assign)?.total;
            probe[k] = base[k];
            Ok((a, (fp - fm) / (2.0 * step)))
        })
        .collect()
}

/// Runs `cases` random configurations of the objective with alignment `form`.
pub fn run(seed: u64, cases: usize, form: AlignmentForm, corruption: Option<Corruption>) -> Result<GradCheckReport> {
    let mut worst = [0.0f64; 3];
    let mut worst_component: Option<Offender> = None;
    let mut checked = 0;
    for case in 0..cases {
        for (k, (a, numeric)) in check_case(seed, case, form, FD_STEP, corruption)?.into_iter().enumerate() {
            if a.abs() <= MAGNITUDE_FLOOR {
                continue;
            }
            checked += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            let block = match k % PARAMS_PER_POINT {
                0..=2 => 0,
                3..=5 => 1,
                _ => 2,
            };
            worst[block] = worst[block].max(rel);
            if worst_component.as_ref().is_none_or(|w| rel > w.rel_error) {
                worst_component = Some(Offender {
                    case,
                    component: k,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    let max_rel_error = BlockErrors {
        offset: worst[0],
        logits: worst[1],
        quat: worst[2],
    };
    let passed = max_rel_error.max() < REL_TOLERANCE;
    Ok(GradCheckReport {
        seed,
        cases,
        form,
        components_checked: checked,
        max_rel_error,
        worst: worst_component,
        tolerance: REL_TOLERANCE,
        passed,
    })
}
