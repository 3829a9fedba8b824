//! Training objective over the free per-point parameters and its analytic
//! gradient.
//!
//! Each input point `p_i` owns an offset `Δ_i`, scale logits `z_i` and a raw
//! quaternion `q_i`. These realize a Gaussian with
//!
//! * mean `μ_i = p_i + Δ_i`
//! * scales `s_i = gain · softmax(z_i)`
//! * rotation `R_i = R(q_i / ‖q_i‖)`
//!
//! Fixed whitened noise `ε_ij` turns each Gaussian into `rate` samples
//! `y_ij = μ_i + R_i diag(s_i) ε_ij`. The objective is
//! `Chamfer(Y, G) + λ · (1/|G|) Σ_t (g_t − μ_a(t))ᵀ Σ_a(t) (g_t − μ_a(t))`
//! where `a(t)` is the nearest mean of ground-truth point `g_t`.
//!
//! Nearest-neighbor assignments make the objective piecewise smooth. The
//! gradient is taken with an [`Assignment`] held fixed.

use nalgebra::{Matrix3, Vector4};

use crate::cloud::{Point3, Vec3};
use crate::config::AlignmentForm;
use crate::error::{Error, Result};
use crate::gaussian::{rotation_from_unit, AnisotropicGaussian, ScaleTriple, UnitQuaternion, MAHALANOBIS_RIDGE};
use crate::neighbors::KdTree;

/// Scalars per point in the flat layout: `Δ (3) | z (3) | q (4)`.
pub const PARAMS_PER_POINT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub offsets: Vec<Vec3>,
    pub logits: Vec<Vec3>,
    pub quats: Vec<Vector4<f64>>,
}

impl GaussianParams {
    /// Zero offsets, uniform scales, identity rotations.
    pub fn identity(n: usize) -> Self {
        Self {
            offsets: vec![Vec3::zeros(); n],
            logits: vec![Vec3::zeros(); n],
            quats: vec![Vector4::new(1.0, 0.0, 0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * PARAMS_PER_POINT);
        for i in 0..self.len() {
            out.extend(self.offsets[i].iter());
            out.extend(self.logits[i].iter());
            out.extend(self.quats[i].iter());
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % PARAMS_PER_POINT, 0);
        let chunks = flat.chunks_exact(PARAMS_PER_POINT);
        let mut p = Self::identity(0);
        for c in chunks {
            p.offsets.push(Vec3::new(c[0], c[1], c[2]));
            p.logits.push(Vec3::new(c[3], c[4], c[5]));
            p.quats.push(Vector4::new(c[6], c[7], c[8], c[9]));
        }
        p
    }

    /// Rescales every quaternion to unit length.
    pub fn renormalize_quats(&mut self) -> Result<()> {
        for q in &mut self.quats {
            let n = q.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateRotation);
            }
            *q /= n;
        }
        Ok(())
    }

    pub fn realize(&self, anchors: &[Point3], scale_gain: f64) -> Result<Vec<AnisotropicGaussian>> {
        (0..self.len())
            .map(|i| {
                let q = self.quats[i];
                Ok(AnisotropicGaussian::new(
                    anchors[i] + self.offsets[i],
                    ScaleTriple::new(scales_from_logits(&self.logits[i], scale_gain).into())?,
                    UnitQuaternion::new(q[0], q[1], q[2], q[3])?,
                    i,
                ))
            })
            .collect()
    }
}

pub(crate) fn softmax(z: &Vec3) -> Vec3 {
    let m = z.max();
    let e = z.map(|v| (v - m).exp());
    e / e.sum()
}

pub fn scales_from_logits(z: &Vec3, gain: f64) -> Vec3 {
    softmax(z) * gain
}

/// Same layout as [`GaussianParams`].
pub type ParamGrad = GaussianParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub chamfer: f64,
    pub alignment: f64,
    pub total: f64,
}

/// Frozen nearest-neighbor choices.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// For each sample, its nearest ground-truth point.
    pub sample_to_gt: Vec<usize>,
    /// For each ground-truth point, its nearest sample.
    pub gt_to_sample: Vec<usize>,
    /// For each ground-truth point, its nearest Gaussian mean.
    pub gt_to_mean: Vec<usize>,
}

struct Realized {
    means: Vec<Point3>,
    rot: Vec<Matrix3<f64>>,
    unit_q: Vec<Vector4<f64>>,
    probs: Vec<Vec3>,
    scales: Vec<Vec3>,
    factor: Vec<Matrix3<f64>>,
    samples: Vec<Point3>,
}

/// The objective for one patch: anchors, target, and fixed noise.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub anchors: &'a [Point3],
    pub gt: &'a [Point3],
    /// Whitened noise, `rate` entries per anchor, anchor-major.
    pub eps: &'a [Vec3],
    pub rate: usize,
    pub lambda: f64,
    pub scale_gain: f64,
    pub form: AlignmentForm,
}

impl Objective<'_> {
    fn check(&self, params: &GaussianParams) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::EmptyInput("anchors"));
        }
        if self.gt.is_empty() {
            return Err(Error::EmptyInput("ground truth"));
        }
        if params.len() != self.anchors.len() || self.eps.len() != self.anchors.len() * self.rate || self.rate == 0 {
            return Err(Error::InvalidConfig(format!(
                "shape mismatch: {} anchors, {} params, {} noise draws at rate {}",
                self.anchors.len(),
                params.len(),
                self.eps.len(),
                self.rate
            )));
        }
        Ok(())
    }

    fn realize(&self, params: &GaussianParams) -> Result<Realized> {
        self.check(params)?;
        let n = params.len();
        let mut r = Realized {
            means: Vec::with_capacity(n),
            rot: Vec::with_capacity(n),
            unit_q: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            factor: Vec::with_capacity(n),
            samples: Vec::with_capacity(n * self.rate),
        };
        for i in 0..n {
            let q = params.quats[i];
            let qn = q.norm();
            if !(qn > 0.0 && qn.is_finite()) {
                return Err(Error::DegenerateRotation);
            }
            let u = q / qn;
            let rot = rotation_from_unit(u[0], u[1], u[2], u[3]);
            let p = softmax(&params.logits[i]);
            let s = p * self.scale_gain;
            let a = Matrix3::from_columns(&[rot.column(0) * s[0], rot.column(1) * s[1], rot.column(2) * s[2]]);
            let mean = self.anchors[i] + params.offsets[i];
            for e in &self.eps[i * self.rate..(i + 1) * self.rate] {
                r.samples.push(mean + a * e);
            }
            r.means.push(mean);
            r.rot.push(rot);
            r.unit_q.push(u);
            r.probs.push(p);
            r.scales.push(s);
            r.factor.push(a);
        }
        Ok(r)
    }

    /// Computes nearest-neighbor choices at `params`.
    pub fn assign(&self, params: &GaussianParams) -> Result<Assignment> {
        let r = self.realize(params)?;
        let gt_tree = KdTree::build(self.gt);
        let sample_tree = KdTree::build(&r.samples);
        let mean_tree = KdTree::build(&r.means);
        Ok(Assignment {
            sample_to_gt: r.samples.iter().map(|y| gt_tree.nearest(y).0).collect(),
            gt_to_sample: self.gt.iter().map(|g| sample_tree.nearest(g).0).collect(),
            gt_to_mean: self.gt.iter().map(|g| mean_tree.nearest(g).0).collect(),
        })
    }

    /// Objective value with the given assignment held fixed.
    pub fn evaluate(&self, params: &GaussianParams, assign: &Assignment) -> Result<LossTerms> {
        let r = self.realize(params)?;
        Ok(self.terms(&r, assign))
    }

    fn terms(&self, r: &Realized, assign: &Assignment) -> LossTerms {
        let ns = r.samples.len() as f64;
        let ng = self.gt.len() as f64;
        let fwd: f64 = r
            .samples
            .iter()
            .zip(&assign.sample_to_gt)
            .map(|(y, &t)| (y - self.gt[t]).norm_squared())
            .sum();
        let bwd: f64 = self
            .gt
            .iter()
            .zip(&assign.gt_to_sample)
            .map(|(g, &s)| (g - r.samples[s]).norm_squared())
            .sum();
        let chamfer = fwd / ns + bwd / ng;
        let align: f64 = self
            .gt
            .iter()
            .zip(&assign.gt_to_mean)
            .map(|(g, &j)| {
                let d = g - r.means[j];
                let a = &r.factor[j];
                match self.form {
                    AlignmentForm::Covariance => {
                        let at_d = a.transpose() * d;
                        at_d.norm_squared()
                    }
                    AlignmentForm::Mahalanobis => {
                        let m = ridge_inverse(a);
                        d.dot(&(m * d))
                    }
                }
            })
            .sum::<f64>()
            / ng;
        LossTerms {
            chamfer,
            alignment: align,
            total: chamfer + self.lambda * align,
        }
    }

    /// Objective value and gradient with the given assignment held fixed.
    pub fn gradient(&self, params: &GaussianParams, assign: &Assignment) -> Result<(LossTerms, ParamGrad)> {
        let r = self.realize(params)?;
        let terms = self.terms(&r, assign);
        let n = params.len();
        let ns = r.samples.len() as f64;
        let ng = self.gt.len() as f64;

        // dL/dy for every sample
        let mut g_samples = vec![Vec3::zeros(); r.samples.len()];
        for (s, &t) in assign.sample_to_gt.iter().enumerate() {
            g_samples[s] += (r.samples[s] - self.gt[t]) * (2.0 / ns);
        }
        for (t, &s) in assign.gt_to_sample.iter().enumerate() {
            g_samples[s] += (r.samples[s] - self.gt[t]) * (2.0 / ng);
        }

        let mut g_mean = vec![Vec3::zeros(); n];
        let mut g_factor = vec![Matrix3::zeros(); n];
        for (slot, gy) in g_samples.iter().enumerate() {
            let i = slot / self.rate;
            g_mean[i] += gy;
            g_factor[i] += gy * self.eps[slot].transpose();
        }

        if self.lambda != 0.0 {
            let c = self.lambda / ng;
            for (t, &j) in assign.gt_to_mean.iter().enumerate() {
                let d = self.gt[t] - r.means[j];
                let a = &r.factor[j];
                match self.form {
                    AlignmentForm::Covariance => {
                        let sigma = a * a.transpose();
                        g_mean[j] -= sigma * d * (2.0 * c);
                        g_factor[j] += d * (d.transpose() * a) * (2.0 * c);
                    }
                    AlignmentForm::Mahalanobis => {
                        let m = ridge_inverse(a);
                        let md = m * d;
                        g_mean[j] -= md * (2.0 * c);
                        g_factor[j] -= md * (md.transpose() * a) * (2.0 * c);
                    }
                }
            }
        }

        let mut grad = GaussianParams::identity(n);
        for i in 0..n {
            grad.offsets[i] = g_mean[i];

            let ga = &g_factor[i];
            let rot = &r.rot[i];
            let s = r.scales[i];
            let mut g_rot = Matrix3::zeros();
            let mut g_s = Vec3::zeros();
            for l in 0..3 {
                g_rot.set_column(l, &(ga.column(l) * s[l]));
                g_s[l] = ga.column(l).dot(&rot.column(l));
            }

            let p = r.probs[i];
            let mix = p.dot(&g_s);
            grad.logits[i] = p.component_mul(&g_s.add_scalar(-mix)) * self.scale_gain;

            let u = r.unit_q[i];
            let g_u = rotation_vjp(&u, &g_rot);
            let qn = params.quats[i].norm();
            grad.quats[i] = (g_u - u * u.dot(&g_u)) / qn;
        }

        let finite = terms.total.is_finite()
            && grad
                .to_flat()
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NumericalFailure {
                step: 0,
                what: "non-finite loss or gradient".into(),
            });
        }
        Ok((terms, grad))
    }
}

fn ridge_inverse(a: &Matrix3<f64>) -> Matrix3<f64> {
    (a * a.transpose() + Matrix3::identity() * MAHALANOBIS_RIDGE)
        .try_inverse()
        .unwrap_or_else(|| Matrix3::from_element(f64::NAN))
}

/// Pulls `dL/dR` back to the unit quaternion `u = (w, x, y, z)`.
fn rotation_vjp(u: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    Vector4::new(g.dot(&dw), g.dot(&dx), g.dot(&dy), g.dot(&dz))
}

/// Assigns at `params`, then returns the objective and its gradient.
pub fn loss_gradients(objective: &Objective<'_>, params: &GaussianParams) -> Result<(LossTerms, ParamGrad, Assignment)> {
    let assign = objective.assign(params)?;
    let (terms, grad) = objective.gradient(params, &assign)?;
    Ok((terms, grad, assign))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::draw_noise;

    fn fd_grad(obj: &Objective<'_>, params: &GaussianParams, assign: &Assignment, h: f64) -> Vec<f64> {
        let base = params.to_flat();
        (0..base.len())
            .map(|k| {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[k] += h;
                minus[k] -= h;
                let fp = obj.evaluate(&GaussianParams::from_flat(&plus), assign).unwrap().total;
                let fm = obj.evaluate(&GaussianParams::from_flat(&minus), assign).unwrap().total;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_alignment_gradient_at_minimum() {
        let anchors = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let gt = anchors.clone();
        let eps = vec![Vec3::zeros(); 2];
        let obj = Objective {
            anchors: &anchors,
            gt: &gt,
            eps: &eps,
            rate: 1,
            lambda: 3.0,
            scale_gain: 0.2,
            form: AlignmentForm::Covariance,
        };
        let params = GaussianParams::identity(2);
        let (terms, grad, _) = loss_gradients(&obj, &params).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(grad.offsets.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn single_gaussian_mean_gradient_closed_form() {
        // one gt point, one Gaussian, zero noise: only the alignment term
        // depends on μ beyond the Chamfer pull, so isolate it with a
        // Chamfer-free check: d/dμ [λ (x−μ)ᵀΣ(x−μ)/N] = −(2λ/N) Σ (x−μ)
        let anchors = vec![Point3::new(0.1, -0.2, 0.3)];
        let gt = vec![Point3::new(0.5, 0.4, -0.1)];
        let eps = vec![Vec3::zeros()];
        let lambda = 2.0;
        let obj = Objective {
            anchors: &anchors,
            gt: &gt,
            eps: &eps,
            rate: 1,
            lambda,
            scale_gain: 0.6,
            form: AlignmentForm::Covariance,
        };
        let mut params = GaussianParams::identity(1);
        params.logits[0] = Vec3::new(0.3, -0.1, 0.5);
        let (_, grad, assign) = loss_gradients(&obj, &params).unwrap();
        let s = scales_from_logits(&params.logits[0], 0.6);
        let sigma = Matrix3::from_diagonal(&s.component_mul(&s));
        let d = gt[0] - anchors[0];
        // Chamfer part with one sample at μ: 2(μ−x)·(1 + 1)
        let chamfer_part = -d * 4.0;
        let align_part = -(sigma * d) * (2.0 * lambda);
        let want = chamfer_part + align_part;
        assert!((grad.offsets[0] - want).amax() < 1e-12);
        let fd = fd_grad(&obj, &params, &assign, 1e-5);
        for k in 0..3 {
            assert!((fd[k] - want[k]).abs() < 1e-8 * want[k].abs().max(1.0));
        }
    }

    #[test]
    fn random_configuration_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        for form in [AlignmentForm::Covariance, AlignmentForm::Mahalanobis] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let rate = 4;
            let anchors: Vec<Point3> = (0..8)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let gt: Vec<Point3> = (0..32)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let eps = draw_noise(8, rate, 2.0, 3);
            let mut params = GaussianParams::identity(8);
            for i in 0..8 {
                params.offsets[i] = Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1));
                params.logits[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                params.quats[i] = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            }
            let obj = Objective {
                anchors: &anchors,
                gt: &gt,
                eps: &eps,
                rate,
                lambda: 0.7,
                scale_gain: 0.3,
                form,
            };
            let (_, grad, assign) = loss_gradients(&obj, &params).unwrap();
            let fd = fd_grad(&obj, &params, &assign, 1e-5);
            for (a, n) in grad.to_flat().iter().zip(&fd) {
                if a.abs() > 1e-8 {
                    let rel = (a - n).abs() / a.abs().max(n.abs());
                    assert!(rel < 1e-4, "{form:?}: analytic {a} fd {n}");
                }
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p = GaussianParams::identity(3);
        p.offsets[1] = Vec3::new(1.0, 2.0, 3.0);
        p.quats[2] = Vector4::new(0.1, 0.2, 0.3, 0.4);
        assert_eq!(GaussianParams::from_flat(&p.to_flat()), p);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let anchors = vec![Point3::origin()];
        let eps = vec![Vec3::zeros(); 3];
        let obj = Objective {
            anchors: &anchors,
            gt: &anchors,
            eps: &eps,
            rate: 2,
            lambda: 1.0,
            scale_gain: 1.0,
            form: AlignmentForm::Covariance,
        };
        assert!(obj.assign(&GaussianParams::identity(1)).is_err());
    }
}
