//! Dormand–Prince 5(4) embedded Runge–Kutta integrator.
//!
//! The integrator works on flat slices of any [`OdeScalar`] (real or complex),
//! uses a max-norm mixed error estimate and reports the state at every
//! requested sample time exactly (steps are clipped to land on samples).

use std::ops::{Add, Mul};

use num_complex::Complex64;

pub trait OdeScalar: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl OdeScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl OdeScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rel: 1e-8,
            abs: 1e-10,
            h_min: 1e-14,
            max_steps: 5_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerances {
            rel,
            abs,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub t: f64,
    pub reason: String,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension of order 4
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Work buffers for one system size.
pub struct Dopri5<T: OdeScalar> {
    pub tol: Tolerances,
    k: [Vec<T>; 7],
    tmp: Vec<T>,
    y_new: Vec<T>,
    fsal_valid: bool,
    pub stats: Stats,
}

fn combine<T: OdeScalar>(out: &mut [T], y: &[T], h: f64, terms: &[(f64, &[T])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for &(c, k) in terms {
            acc = acc + k[i] * c;
        }
        *o = y[i] + acc * h;
    }
}

impl<T: OdeScalar> Dopri5<T> {
    pub fn new(dim: usize, tol: Tolerances) -> Self {
        let z = || vec![T::zero(); dim];
        Dopri5 {
            tol,
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            y_new: z(),
            fsal_valid: false,
            stats: Stats::default(),
        }
    }

    /// Forget the cached first stage (call after modifying `y` externally).
    pub fn reset(&mut self) {
        self.fsal_valid = false;
    }

    /// Single trial step of size `h` from `(t, y)`. On return the candidate
    /// state is available via [`Dopri5::candidate`] and the scaled error norm
    /// is returned (≤ 1 means acceptable).
    pub fn trial<F>(&mut self, f: &mut F, t: f64, y: &[T], h: f64) -> f64
    where
        F: FnMut(f64, &[T], &mut [T]),
    {
        if !self.fsal_valid {
            f(t, y, &mut self.k[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        combine(tmp, y, h, &[(A21, k1)]);
        f(t + C2 * h, tmp, k2);
        combine(tmp, y, h, &[(A31, k1), (A32, k2)]);
        f(t + C3 * h, tmp, k3);
        combine(tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
        f(t + C4 * h, tmp, k4);
        combine(tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
        f(t + C5 * h, tmp, k5);
        combine(tmp, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
        f(t + h, tmp, k6);
        combine(
            &mut self.y_new,
            y,
            h,
            &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)],
        );
        f(t + h, &self.y_new, k7);
        self.stats.rhs_evals += 6;

        let mut err = 0.0f64;
        for i in 0..y.len() {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                * h;
            let scale =
                self.tol.abs + self.tol.rel * y[i].magnitude().max(self.y_new[i].magnitude());
            err = err.max(e.magnitude() / scale);
        }
        err
    }

    pub fn candidate(&self) -> &[T] {
        &self.y_new
    }

    /// State at `t + theta * h` inside the last trial step from `(t, y)`,
    /// by the fourth-order continuous extension. Call before `accept`.
    pub fn dense_output(&self, y: &[T], h: f64, theta: f64, out: &mut [T]) {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let s = 1.0 - theta;
        for i in 0..y.len() {
            let r2 = self.y_new[i] + y[i] * -1.0;
            let r3 = k1[i] * h + r2 * -1.0;
            let r4 = r2 + k7[i] * -h + r3 * -1.0;
            let r5 = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
            out[i] = y[i] + (r2 + (r3 + (r4 + r5 * s) * theta) * s) * theta;
        }
    }

    /// Accept the last trial: copy the candidate into `y` and reuse the last
    /// stage as the next first stage.
    pub fn accept(&mut self, y: &mut [T]) {
        y.copy_from_slice(&self.y_new);
        self.k.swap(0, 6);
        self.stats.accepted += 1;
    }

    /// Discard the last trial. The cached first stage stays valid.
    pub fn reject(&mut self) {
        self.stats.rejected += 1;
    }

    /// One adaptive step limited to `h_max`. Returns the step actually taken
    /// and the suggested next step.
    pub fn adaptive_step<F>(
        &mut self,
        f: &mut F,
        t: f64,
        y: &mut [T],
        h: f64,
        h_max: f64,
    ) -> Result<(f64, f64), StepFailure>
    where
        F: FnMut(f64, &[T], &mut [T]),
    {
        let mut h = h.min(h_max);
        loop {
            if h < self.tol.h_min {
                return Err(StepFailure {
                    t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let err = self.trial(f, t, y, h);
            if err.is_finite() && err <= 1.0 {
                self.accept(y);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                return Ok((h, h * factor));
            }
            self.reject();
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= factor;
        }
    }

    /// Integrate from `t0` through every time in `samples` (non-decreasing,
    /// all ≥ `t0`), calling `observe(t, y)` at each sample.
    pub fn integrate<F, O>(
        &mut self,
        mut f: F,
        t0: f64,
        y: &mut [T],
        samples: &[f64],
        mut observe: O,
    ) -> Result<Stats, StepFailure>
    where
        F: FnMut(f64, &[T], &mut [T]),
        O: FnMut(f64, &[T]),
    {
        self.reset();
        let mut t = t0;
        let span = samples.last().map(|&s| s - t0).unwrap_or(0.0);
        let mut h = initial_step(&mut f, t0, y, span, &self.tol);
        for &ts in samples {
            while ts - t > 1e-12 * ts.abs().max(1.0) {
                if self.stats.accepted + self.stats.rejected > self.tol.max_steps {
                    return Err(StepFailure {
                        t,
                        reason: "maximum number of steps exceeded".into(),
                    });
                }
                let remaining = ts - t;
                let clipped = h >= remaining;
                let (taken, next) = self.adaptive_step(&mut f, t, y, h, remaining)?;
                t = if clipped && taken == remaining { ts } else { t + taken };
                // a clipped step says nothing about the natural step size
                h = if clipped { next.max(h) } else { next };
            }
            t = ts;
            observe(t, y);
        }
        Ok(self.stats)
    }
}

pub(crate) fn initial_step<T, F>(f: &mut F, t0: f64, y: &[T], span: f64, tol: &Tolerances) -> f64
where
    T: OdeScalar,
    F: FnMut(f64, &[T], &mut [T]),
{
    let mut dy = vec![T::zero(); y.len()];
    f(t0, y, &mut dy);
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for (yi, di) in y.iter().zip(&dy) {
        let sc = tol.abs + tol.rel * yi.magnitude();
        d0 = d0.max(yi.magnitude() / sc);
        d1 = d1.max(di.magnitude() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h = h.min(0.1 * span.max(1e-12));
    h.max(tol.h_min * 10.0)
}
