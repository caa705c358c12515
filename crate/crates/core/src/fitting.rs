//! Weighted least-squares template fitting and the local hypothesis score.
//!
//! For fixed geometry the image model `I = k T + m` is linear in `(k, m)` and
//! solved exactly ([`solve_linear`]). Geometry is refined by damped
//! Gauss-Newton on the window-weighted residual with `(k, m)` re-solved after
//! every step ([`fit_template`]).

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{orthonormal_basis, Point3};
use crate::template::{profile_from_dist_sq, sample_stencil, TemplateParams, WeightWindow, SUPPORT_CUTOFF};
use crate::volume::Volume;

/// Where the image is read during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    /// Voxel centers inside the window support, thinned on a coarser voxel
    /// lattice when more than `max_samples` would be used.
    Voxels { max_samples: usize },
    /// Template-frame grid at `density` samples per mm, read by trilinear interpolation.
    Stencil { density: f64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Voxels { max_samples: 2500 }
    }
}

/// Local score formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFormula {
    /// `k / std(k)`: invariant to affine intensity changes.
    #[default]
    ContrastSnr,
    /// `(k - m) / std(k)`.
    ContrastMinusMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer_iters: usize,
    pub step_tol_mm: f64,
    pub sampling: Sampling,
    pub r_min: f64,
    pub r_max: f64,
    pub score: ScoreFormula,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 25,
            step_tol_mm: 1e-4,
            sampling: Sampling::default(),
            r_min: 1.0,
            r_max: 10.0,
            score: ScoreFormula::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return Err(Error::param(format!("radius bounds [{}, {}] are invalid", self.r_min, self.r_max)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::param("max_outer_iters must be at least 1"));
        }
        if !(self.step_tol_mm > 0.0) {
            return Err(Error::param("step_tol_mm must be positive"));
        }
        match self.sampling {
            Sampling::Voxels { max_samples } if max_samples < 3 => {
                Err(Error::param("max_samples must be at least 3"))
            }
            Sampling::Stencil { density } if !(density > 0.0) => Err(Error::param("density must be positive")),
            _ => Ok(()),
        }
    }
}

/// Image samples a fit runs on.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub points: Vec<Point3>,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads the image around `params` according to `sampling`.
    pub fn gather(volume: &Volume, params: &TemplateParams, win: &WeightWindow, sampling: Sampling) -> Result<Self> {
        let set = match sampling {
            Sampling::Stencil { density } => {
                let stencil = sample_stencil(params, win, density)?;
                let values = stencil.iter().map(|(p, _)| volume.sample(p)).collect();
                SampleSet { points: stencil.into_iter().map(|(p, _)| p).collect(), values }
            }
            Sampling::Voxels { max_samples } => gather_voxels(volume, params, win, max_samples),
        };
        if set.len() < 3 {
            return Err(Error::EmptyStencil(format!("{} samples in the window support", set.len())));
        }
        Ok(set)
    }
}

fn gather_voxels(volume: &Volume, params: &TemplateParams, win: &WeightWindow, max_samples: usize) -> SampleSet {
    let r = params.radius;
    let v = params.direction;
    let (radial, behind, ahead) = win.support(r, SUPPORT_CUTOFF);
    let a = params.center - v * behind;
    let b = params.center + v * ahead;
    let spacing = volume.spacing();
    let dims = volume.dims();

    let expected = std::f64::consts::PI * radial * radial * (behind + ahead) / (spacing[0] * spacing[1] * spacing[2]);
    let stride = ((expected / max_samples as f64).cbrt().ceil() as usize).max(1);

    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for ax in 0..3 {
        let reach = radial * (1.0 - v[ax] * v[ax]).max(0.0).sqrt();
        let min = a[ax].min(b[ax]) - reach;
        let max = a[ax].max(b[ax]) + reach;
        let o = volume.origin()[ax];
        let i0 = ((min - o) / spacing[ax]).ceil().max(0.0);
        let i1 = ((max - o) / spacing[ax]).floor().min((dims[ax] - 1) as f64);
        if i1 < i0 {
            return SampleSet::default();
        }
        // thinned voxels sit on a global lattice so neighbouring fits see the same grid
        lo[ax] = (i0 as usize).div_ceil(stride) * stride;
        hi[ax] = i1 as usize;
    }

    let mut set = SampleSet::default();
    for k in (lo[2]..=hi[2]).step_by(stride) {
        for j in (lo[1]..=hi[1]).step_by(stride) {
            for i in (lo[0]..=hi[0]).step_by(stride) {
                let p = volume.voxel_center(i, j, k);
                let d = p - params.center;
                let t = d.dot(&v);
                let d2 = (d.norm_squared() - t * t).max(0.0);
                if win.weight_at(d2, t, r) > SUPPORT_CUTOFF {
                    set.points.push(p);
                    set.values.push(volume.get(i, j, k));
                }
            }
        }
    }
    set
}

/// Closed-form `(k, m)` solution for fixed geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub k: f64,
    pub m: f64,
    pub std_k: f64,
    /// Window-weighted RMS residual.
    pub residual_norm: f64,
    pub degenerate: bool,
    pub n_samples: usize,
}

/// Relative floor on the noise estimate so exact (noise-free) data still
/// gives a finite, positive `std_k`.
const NOISE_FLOOR: f64 = 1e-9;

/// Solves the weighted linear problem given template values and window weights.
///
/// Rows are weighted by the window `W`, so the least-squares weights are `W^2`.
/// The window localizes the fit rather than encoding per-sample precision, so
/// `std_k` is the exact standard error of the weighted estimator under
/// homoscedastic noise. The noise variance is estimated with the matching
/// degrees-of-freedom correction, which reduces to `n - 2` for uniform
/// weights.
pub fn solve_weighted(template: &[f64], weights: &[f64], values: &[f64]) -> LinearFit {
    let n = values.len();
    let mut sw = 0.0;
    let mut swt = 0.0;
    let mut swi = 0.0;
    for i in 0..n {
        let w = weights[i] * weights[i];
        sw += w;
        swt += w * template[i];
        swi += w * values[i];
    }
    let degenerate_fit = |m: f64| LinearFit {
        k: 0.0,
        m,
        std_k: f64::INFINITY,
        residual_norm: 0.0,
        degenerate: true,
        n_samples: n,
    };
    if n < 3 || !(sw > 0.0) {
        return degenerate_fit(if sw > 0.0 { swi / sw } else { 0.0 });
    }
    let t_bar = swt / sw;
    let i_bar = swi / sw;
    let mut stt = 0.0;
    let mut sti = 0.0;
    let mut sii = 0.0;
    let mut s2tt = 0.0;
    let mut sw2 = 0.0;
    for i in 0..n {
        let w = weights[i] * weights[i];
        let dt = template[i] - t_bar;
        let di = values[i] - i_bar;
        stt += w * dt * dt;
        sti += w * dt * di;
        sii += w * di * di;
        s2tt += w * w * dt * dt;
        sw2 += w * w;
    }
    // no template variation inside the window, or a flat image: no contrast to estimate
    let flat = sii <= sw * (1e-12 * i_bar.abs().max(f64::MIN_POSITIVE)).powi(2);
    if !(stt > 1e-12 * sw) || flat {
        return degenerate_fit(i_bar);
    }
    let k = sti / stt;
    let m = i_bar - k * t_bar;

    let mut ssr = 0.0;
    for i in 0..n {
        let w = weights[i] * weights[i];
        let e = k * template[i] + m - values[i];
        ssr += w * e * e;
    }
    // E[ssr] = sigma^2 (sum w - tr((A'WA)^-1 A'W^2A)); in the centered basis
    // (A'WA) is diagonal so the trace is sum(w^2)/sum(w) + s2tt/stt
    let trace = sw2 / sw + s2tt / stt;
    let dof = (sw - trace).max(f64::EPSILON * sw);
    let data_var = sii / sw;
    let sigma2 = (ssr / dof).max(NOISE_FLOOR * NOISE_FLOOR * data_var);
    let var_k = sigma2 * s2tt / (stt * stt);
    LinearFit {
        k,
        m,
        std_k: var_k.sqrt(),
        residual_norm: (ssr / sw).sqrt(),
        degenerate: false,
        n_samples: n,
    }
}

/// Template values and window weights of `params` at the sample points.
pub fn template_and_weights(samples: &SampleSet, params: &TemplateParams, win: &WeightWindow) -> (Vec<f64>, Vec<f64>) {
    framed_template_and_weights(samples, params, params, win)
}

/// Template values of `params` with the window placed at `frame`.
pub fn framed_template_and_weights(
    samples: &SampleSet,
    params: &TemplateParams,
    frame: &TemplateParams,
    win: &WeightWindow,
) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(samples.len());
    let mut w = Vec::with_capacity(samples.len());
    for p in &samples.points {
        let d = p - params.center;
        let axial = d.dot(&params.direction);
        let d2 = (d.norm_squared() - axial * axial).max(0.0);
        t.push(profile_from_dist_sq(d2, params.radius, params.gamma));
        let d = p - frame.center;
        let axial = d.dot(&frame.direction);
        let d2 = (d.norm_squared() - axial * axial).max(0.0);
        w.push(win.weight_at(d2, axial, frame.radius));
    }
    (t, w)
}

fn template_values(samples: &SampleSet, params: &TemplateParams) -> Vec<f64> {
    samples
        .points
        .iter()
        .map(|p| {
            let d = p - params.center;
            let axial = d.dot(&params.direction);
            profile_from_dist_sq((d.norm_squared() - axial * axial).max(0.0), params.radius, params.gamma)
        })
        .collect()
}

fn window_weights(samples: &SampleSet, frame: &TemplateParams, win: &WeightWindow) -> Vec<f64> {
    samples
        .points
        .iter()
        .map(|p| {
            let d = p - frame.center;
            let axial = d.dot(&frame.direction);
            win.weight_at((d.norm_squared() - axial * axial).max(0.0), axial, frame.radius)
        })
        .collect()
}

/// Linear `(k, m)` solve at fixed geometry on image samples around `params`.
pub fn solve_linear(volume: &Volume, params: &TemplateParams, win: &WeightWindow, opts: &FitOptions) -> Result<LinearFit> {
    let samples = SampleSet::gather(volume, params, win, opts.sampling)?;
    Ok(solve_on(&samples, params, win))
}

pub fn solve_on(samples: &SampleSet, params: &TemplateParams, win: &WeightWindow) -> LinearFit {
    let (t, w) = template_and_weights(samples, params, win);
    solve_weighted(&t, &w, &samples.values)
}

/// Outcome of a template fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TemplateParams,
    pub k: f64,
    pub m: f64,
    pub std_k: f64,
    pub residual_norm: f64,
    pub raw_score: f64,
    pub converged: bool,
    pub iterations: usize,
    pub degenerate: bool,
    pub n_samples: usize,
    pub formula: ScoreFormula,
}

impl FitResult {
    pub fn from_linear(params: TemplateParams, lin: LinearFit, formula: ScoreFormula) -> Self {
        let mut fit = FitResult {
            params,
            k: lin.k,
            m: lin.m,
            std_k: lin.std_k,
            residual_norm: lin.residual_norm,
            raw_score: 0.0,
            converged: true,
            iterations: 0,
            degenerate: lin.degenerate,
            n_samples: lin.n_samples,
            formula,
        };
        fit.raw_score = raw_score(&fit);
        fit
    }

    /// A fit carrying only a score and a position; used to drive the
    /// hypothesis tree without an image.
    pub fn synthetic(center: Point3, raw_score: f64) -> Self {
        let params = TemplateParams::new(center, Point3::z(), 1.0).expect("unit template is valid");
        FitResult {
            params,
            k: raw_score,
            m: 0.0,
            std_k: 1.0,
            residual_norm: 0.0,
            raw_score,
            converged: true,
            iterations: 0,
            degenerate: false,
            n_samples: 0,
            formula: ScoreFormula::ContrastSnr,
        }
    }
}

/// Local hypothesis score of a fit; 0 for degenerate fits.
pub fn raw_score(fit: &FitResult) -> f64 {
    if fit.degenerate || !(fit.std_k > 0.0) || !fit.std_k.is_finite() {
        return 0.0;
    }
    match fit.formula {
        ScoreFormula::ContrastSnr => fit.k / fit.std_k,
        ScoreFormula::ContrastMinusMean => (fit.k - fit.m) / fit.std_k,
    }
}

/// Number of geometry unknowns: two perpendicular center offsets, two
/// tangent-plane direction coordinates and the log radius.
pub const GEOMETRY_DOF: usize = 5;

pub type Theta = SVector<f64, GEOMETRY_DOF>;
pub type Jacobian = nalgebra::DMatrix<f64>;

/// The geometry sub-problem around a reference template with `(k, m)` held fixed.
#[derive(Debug, Clone)]
pub struct GeometryProblem<'a> {
    pub samples: &'a SampleSet,
    pub window: WeightWindow,
    pub reference: TemplateParams,
    /// Where the window sits; `None` moves it with the template.
    pub frame: Option<TemplateParams>,
    frame_weights: Option<Vec<f64>>,
    pub k: f64,
    pub m: f64,
    pub r_min: f64,
    pub r_max: f64,
    e1: Point3,
    e2: Point3,
}

impl<'a> GeometryProblem<'a> {
    pub fn new(
        samples: &'a SampleSet,
        window: WeightWindow,
        reference: TemplateParams,
        k: f64,
        m: f64,
        r_min: f64,
        r_max: f64,
    ) -> Self {
        let (e1, e2) = orthonormal_basis(&reference.direction);
        Self { samples, window, reference, frame: None, frame_weights: None, k, m, r_min, r_max, e1, e2 }
    }

    pub fn with_frame(mut self, frame: TemplateParams) -> Self {
        self.frame_weights = Some(window_weights(self.samples, &frame, &self.window));
        self.frame = Some(frame);
        self
    }

    pub fn basis(&self) -> (Point3, Point3) {
        (self.e1, self.e2)
    }

    fn with_frame_weights(mut self, frame: TemplateParams, weights: Vec<f64>) -> Self {
        self.frame = Some(frame);
        self.frame_weights = Some(weights);
        self
    }

    /// Template for the local coordinates `theta`.
    pub fn params_at(&self, theta: &Theta) -> TemplateParams {
        let ref_ = &self.reference;
        let center = ref_.center + self.e1 * theta[0] + self.e2 * theta[1];
        let dir = (ref_.direction + self.e1 * theta[2] + self.e2 * theta[3]).normalize();
        let radius = (ref_.radius * theta[4].exp()).clamp(self.r_min, self.r_max);
        TemplateParams { center, direction: dir, radius, gamma: ref_.gamma }
    }

    /// Window-weighted residuals normalized by the total window mass.
    pub fn residuals(&self, theta: &Theta) -> Vec<f64> {
        let params = self.params_at(theta);
        let (t, w) = match &self.frame_weights {
            Some(w) => (template_values(self.samples, &params), std::borrow::Cow::Borrowed(w)),
            None => {
                let (t, w) = template_and_weights(self.samples, &params, &self.window);
                (t, std::borrow::Cow::Owned(w))
            }
        };
        let mass: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if mass > 0.0 { 1.0 / mass } else { 0.0 };
        t.iter()
            .zip(w.iter())
            .zip(&self.samples.values)
            .map(|((t, w), i)| w * (self.k * t + self.m - i) * scale)
            .collect()
    }

    /// Central-difference Jacobian of [`GeometryProblem::residuals`] at `theta`.
    pub fn jacobian_at(&self, theta: &Theta) -> Jacobian {
        let n = self.samples.len();
        let mut jac = Jacobian::zeros(n, GEOMETRY_DOF);
        for c in 0..GEOMETRY_DOF {
            let h = if c < 2 { 1e-6 * self.reference.radius } else { 1e-6 };
            let mut plus = *theta;
            let mut minus = *theta;
            plus[c] += h;
            minus[c] -= h;
            let rp = self.residuals(&plus);
            let rm = self.residuals(&minus);
            for i in 0..n {
                jac[(i, c)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        jac
    }

    pub fn jacobian(&self) -> Jacobian {
        self.jacobian_at(&Theta::zeros())
    }
}

fn objective(samples: &SampleSet, params: &TemplateParams, weights: &[f64]) -> (f64, LinearFit) {
    let t = template_values(samples, params);
    let lin = solve_weighted(&t, weights, &samples.values);
    if lin.degenerate {
        return (f64::INFINITY, lin);
    }
    (lin.residual_norm * lin.residual_norm, lin)
}

fn geometry_change(a: &TemplateParams, b: &TemplateParams) -> f64 {
    (a.center - b.center).norm() + a.radius * (a.direction - b.direction).norm() + (a.radius - b.radius).abs()
}

/// Rounds of window re-centering per fit.
const MAX_ROUNDS: usize = 4;
/// A round whose window moved less than this fraction of the radius ends the fit.
const FRAME_TOL: f64 = 0.02;

/// Fits the template to the image starting from `init`.
///
/// Each round reads the image around the current template and refines the
/// geometry with the window held in place, then re-centers the window on the
/// result. The center only moves perpendicular to the current direction, the
/// direction moves in its tangent plane and the radius is log-parameterized
/// and clamped to the option bounds. `(k, m)` and the score are solved at the
/// final geometry with the window on it.
pub fn fit_template(volume: &Volume, init: &TemplateParams, win: &WeightWindow, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    init.check_radius_bounds(opts.r_min, opts.r_max)?;
    let mut current = *init;
    let mut iterations = 0;
    let mut converged = false;
    let mut samples = SampleSet::gather(volume, &current, win, opts.sampling)?;
    for _ in 0..MAX_ROUNDS {
        let budget = opts.max_outer_iters.saturating_sub(iterations);
        if budget == 0 {
            break;
        }
        let round = refine(&samples, &current, win, opts, budget);
        iterations += round.iterations;
        if round.degenerate {
            return Ok(FitResult::from_linear(current, solve_on(&samples, &current, win), opts.score));
        }
        let moved = geometry_change(&current, &round.params);
        current = round.params;
        samples = SampleSet::gather(volume, &current, win, opts.sampling)?;
        if moved < (FRAME_TOL * current.radius).max(opts.step_tol_mm) {
            converged = round.converged;
            break;
        }
    }
    let mut fit = FitResult::from_linear(current, solve_on(&samples, &current, win), opts.score);
    fit.converged = converged;
    fit.iterations = iterations;
    Ok(fit)
}

/// One refinement round of [`fit_template`] on an already gathered sample
/// set, with the window fixed at `init`.
pub fn fit_on_samples(samples: &SampleSet, init: &TemplateParams, win: &WeightWindow, opts: &FitOptions) -> FitResult {
    let round = refine(samples, init, win, opts, opts.max_outer_iters);
    if round.degenerate {
        return FitResult::from_linear(*init, round.lin, opts.score);
    }
    let mut fit = FitResult::from_linear(round.params, solve_on(samples, &round.params, win), opts.score);
    fit.converged = round.converged;
    fit.iterations = round.iterations;
    fit
}

struct Round {
    params: TemplateParams,
    lin: LinearFit,
    converged: bool,
    degenerate: bool,
    iterations: usize,
}

/// Damped Gauss-Newton on the geometry with the window fixed at `frame`.
fn refine(samples: &SampleSet, frame: &TemplateParams, win: &WeightWindow, opts: &FitOptions, budget: usize) -> Round {
    let mut current = *frame;
    let weights = window_weights(samples, frame, win);
    let (mut cost, mut lin) = objective(samples, &current, &weights);
    if lin.degenerate {
        return Round { params: current, lin, converged: false, degenerate: true, iterations: 0 };
    }

    let max_shift = 0.5;
    let max_tilt = 20f64.to_radians().tan();
    let mut lambda = 1e-3;
    let mut rejected = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < budget {
        iterations += 1;
        let problem =
            GeometryProblem::new(samples, *win, current, lin.k, lin.m, opts.r_min, opts.r_max).with_frame_weights(*frame, weights.clone());
        let r0 = problem.residuals(&Theta::zeros());
        let jac = problem.jacobian();
        let jtj: SMatrix<f64, GEOMETRY_DOF, GEOMETRY_DOF> = {
            let m = jac.transpose() * &jac;
            SMatrix::from_fn(|i, j| m[(i, j)])
        };
        let grad: Theta = {
            let g = jac.transpose() * nalgebra::DVector::from_vec(r0);
            Theta::from_fn(|i, _| g[i])
        };

        let mut damped = jtj;
        for d in 0..GEOMETRY_DOF {
            damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
        }
        let Some(mut step) = damped.cholesky().map(|c| c.solve(&-grad)) else {
            lambda *= 10.0;
            rejected += 1;
            if rejected >= 3 {
                break;
            }
            continue;
        };

        let r = current.radius;
        let shift = (step[0] * step[0] + step[1] * step[1]).sqrt();
        if shift > max_shift * r {
            let s = max_shift * r / shift;
            step[0] *= s;
            step[1] *= s;
        }
        let tilt = (step[2] * step[2] + step[3] * step[3]).sqrt();
        if tilt > max_tilt {
            let s = max_tilt / tilt;
            step[2] *= s;
            step[3] *= s;
        }
        step[4] = step[4].clamp(-0.3, 0.3);

        let candidate = problem.params_at(&step);
        let change = geometry_change(&current, &candidate);
        let (new_cost, new_lin) = objective(samples, &candidate, &weights);
        if new_cost < cost {
            current = candidate;
            cost = new_cost;
            lin = new_lin;
            lambda = (lambda / 3.0).max(1e-9);
            rejected = 0;
            if change < opts.step_tol_mm {
                converged = true;
                break;
            }
        } else {
            if change < opts.step_tol_mm {
                converged = true;
                break;
            }
            lambda *= 4.0;
            rejected += 1;
            if rejected >= 3 {
                break;
            }
        }
    }
    Round { params: current, lin, converged, degenerate: false, iterations }
}
