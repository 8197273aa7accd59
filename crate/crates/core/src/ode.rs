//! Dormand–Prince 5(4) explicit Runge–Kutta integrator with embedded error
//! control and the standard fourth-order continuous extension.
//!
//! Integration may run in either direction; the step sign follows
//! `x_end - x0`. Every accepted step keeps its dense-output coefficients, so
//! the returned [`Trajectory`] can be evaluated (value and slope) anywhere in
//! the covered interval.

use serde::{Deserialize, Serialize};

use crate::error::OdeError;

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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Largest step magnitude; unbounded when `None`.
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-10,
            atol: 1e-9,
            h_init: None,
            h_max: None,
            max_steps: 200_000,
        }
    }
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSegment<const N: usize> {
    pub x0: f64,
    pub h: f64,
    #[serde(with = "array_rows")]
    r: [[f64; N]; 5],
}

impl<const N: usize> DenseSegment<N> {
    fn contains(&self, x: f64) -> bool {
        let (lo, hi) = if self.h > 0.0 {
            (self.x0, self.x0 + self.h)
        } else {
            (self.x0 + self.h, self.x0)
        };
        x >= lo && x <= hi
    }

    /// Interpolated state and its derivative with respect to x.
    pub fn eval(&self, x: f64) -> ([f64; N], [f64; N]) {
        let th = (x - self.x0) / self.h;
        let th1 = 1.0 - th;
        let mut y = [0.0; N];
        let mut dy = [0.0; N];
        for i in 0..N {
            let [r1, r2, r3, r4, r5] = [
                self.r[0][i],
                self.r[1][i],
                self.r[2][i],
                self.r[3][i],
                self.r[4][i],
            ];
            let q = r4 + th1 * r5;
            let dq = -r5;
            let s = r3 + th * q;
            let ds = q + th * dq;
            let t = r2 + th1 * s;
            let dt = -s + th1 * ds;
            y[i] = r1 + th * t;
            dy[i] = (t + th * dt) / self.h;
        }
        (y, dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<const N: usize> {
    /// Step nodes in integration order (starting point first).
    pub xs: Vec<f64>,
    #[serde(with = "array_rows_vec")]
    pub ys: Vec<[f64; N]>,
    pub segments: Vec<DenseSegment<N>>,
    /// Sum over accepted steps of the magnitude of the embedded local error
    /// estimate, per component.
    #[serde(with = "array_row")]
    pub local_error_sum: [f64; N],
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
}

impl<const N: usize> Trajectory<N> {
    pub fn bounds(&self) -> (f64, f64) {
        let a = self.xs[0];
        let b = *self.xs.last().expect("trajectory has nodes");
        (a.min(b), a.max(b))
    }

    /// Dense-output state and derivative at `x`.
    pub fn eval(&self, x: f64) -> Result<([f64; N], [f64; N]), OdeError> {
        let (lo, hi) = self.bounds();
        if !(x >= lo && x <= hi) {
            return Err(OdeError::OutOfRange { x, lo, hi });
        }
        // Segments are ordered along the direction of integration.
        let forward = self.xs.len() < 2 || self.xs[1] > self.xs[0];
        let idx = self.segments.partition_point(|s| {
            let end = s.x0 + s.h;
            if forward {
                end < x
            } else {
                end > x
            }
        });
        let idx = idx.min(self.segments.len().saturating_sub(1));
        match self.segments.get(idx) {
            Some(seg) if seg.contains(x) => Ok(seg.eval(x)),
            Some(seg) => Ok(seg.eval(x)), // x at a node within rounding
            None => Ok((self.ys[0], [f64::NAN; N])),
        }
    }
}

fn add_scaled<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// Integrate `dy/dx = f(x, y)` from `x0` to `x_end`.
pub fn integrate<const N: usize, F>(
    mut f: F,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &Dopri5Options,
) -> Result<Trajectory<N>, OdeError>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], String>,
{
    if !(x0.is_finite() && x_end.is_finite()) || x0 == x_end {
        return Err(OdeError::Interval(format!("[{x0}, {x_end}]")));
    }
    let dir = (x_end - x0).signum();
    let span = (x_end - x0).abs();
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let mut evals = 0usize;
    let mut rhs = |x: f64, y: &[f64; N]| -> Result<[f64; N], OdeError> {
        evals += 1;
        let d = f(x, y).map_err(OdeError::Rhs)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::Rhs(format!("non-finite derivative at x = {x}")));
        }
        Ok(d)
    };

    let mut x = x0;
    let mut y = y0;
    let mut k1 = rhs(x, &y)?;

    let scale =
        |a: &[f64; N], b: &[f64; N], i: usize| opts.atol + opts.rtol * a[i].abs().max(b[i].abs());

    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max),
        None => {
            // Hairer's starting-step heuristic.
            let d0 = (0..N)
                .map(|i| (y[i] / scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                .sqrt();
            let d1 = (0..N)
                .map(|i| (k1[i] / scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                .sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 {
                1e-6 * span
            } else {
                0.01 * d0 / d1
            };
            // Floor well above the underflow test, so sub-ulp-scale spans finish in one step.
            h0.min(h_max)
                .max(1e-12 * span)
                .max((1e-13 * x0.abs()).min(span))
        }
    };

    let mut traj = Trajectory {
        xs: vec![x0],
        ys: vec![y0],
        segments: Vec::new(),
        local_error_sum: [0.0; N],
        rejected_steps: 0,
        rhs_evaluations: 0,
    };

    let mut steps = 0usize;
    let mut last_err = 1e-4f64;
    loop {
        let remaining = (x_end - x).abs();
        if remaining <= 1e-14 * span.max(x_end.abs()) {
            break;
        }
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps, x));
        }
        steps += 1;
        let last_step = h >= remaining || remaining - h < 1e-3 * h;
        let hs = if last_step { x_end - x } else { dir * h };
        if hs.abs() < 1e-15 * x.abs().max(span) {
            return Err(OdeError::StepUnderflow { x, h: hs });
        }

        let k2 = rhs(x + C2 * hs, &add_scaled(&y, &[(A21, &k1)], hs))?;
        let k3 = rhs(x + C3 * hs, &add_scaled(&y, &[(A31, &k1), (A32, &k2)], hs))?;
        let k4 = rhs(
            x + C4 * hs,
            &add_scaled(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], hs),
        )?;
        let k5 = rhs(
            x + C5 * hs,
            &add_scaled(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], hs),
        )?;
        let k6 = rhs(
            x + hs,
            &add_scaled(
                &y,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                hs,
            ),
        )?;
        let y_new = add_scaled(
            &y,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            hs,
        );
        let x_new = if last_step { x_end } else { x + hs };
        let k7 = rhs(x_new, &y_new)?;

        let mut err_vec = [0.0; N];
        let mut err = 0.0;
        for i in 0..N {
            err_vec[i] =
                hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (err_vec[i] / scale(&y, &y_new, i)).powi(2);
        }
        let err = (err / N as f64).sqrt();

        if err <= 1.0 {
            // Lund-stabilised step growth (β = 0.04).
            let fac = 0.9 * err.max(1e-10).powf(-0.2 + 0.08) * last_err.powf(0.04);
            let fac = fac.clamp(0.2, 10.0);
            last_err = err.max(1e-4);

            let mut r = [[0.0; N]; 5];
            for i in 0..N {
                let ydiff = y_new[i] - y[i];
                let bspl = hs * k1[i] - ydiff;
                r[0][i] = y[i];
                r[1][i] = ydiff;
                r[2][i] = bspl;
                r[3][i] = ydiff - hs * k7[i] - bspl;
                r[4][i] = hs
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                traj.local_error_sum[i] += err_vec[i].abs();
            }
            traj.segments.push(DenseSegment { x0: x, h: hs, r });
            x = x_new;
            y = y_new;
            k1 = k7;
            traj.xs.push(x);
            traj.ys.push(y);
            h = (hs.abs() * fac).min(h_max);
        } else {
            traj.rejected_steps += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = hs.abs() * fac;
        }
    }
    drop(rhs);
    traj.rhs_evaluations = evals;
    Ok(traj)
}

mod array_row {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(a: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        a.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<[f64; N], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("wrong array length"))
    }
}

mod array_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        a: &[[f64; N]; 5],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<[[f64; N]; 5], D::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        let rows: Vec<[f64; N]> = v
            .into_iter()
            .map(|r| r.try_into())
            .collect::<Result<_, _>>()
            .map_err(|_| serde::de::Error::custom("wrong row length"))?;
        rows.try_into()
            .map_err(|_| serde::de::Error::custom("expected 5 rows"))
    }
}

mod array_rows_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        a: &[[f64; N]],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<Vec<[f64; N]>, D::Error> {
        let v = Vec::<Vec<f64>>::deserialize(d)?;
        v.into_iter()
            .map(|r| r.try_into())
            .collect::<Result<_, _>>()
            .map_err(|_| serde::de::Error::custom("wrong row length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let t = integrate(
            |_, y: &[f64; 1]| Ok([-y[0]]),
            0.0,
            [1.0],
            5.0,
            &Dopri5Options::default(),
        )
        .unwrap();
        let last = t.ys.last().unwrap()[0];
        assert!((last - (-5f64).exp()).abs() < 1e-9);
        let (y, dy) = t.eval(2.345).unwrap();
        assert!((y[0] - (-2.345f64).exp()).abs() < 1e-9);
        assert!((dy[0] + (-2.345f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rounding_sized_interval() {
        // Endpoints a few ulps apart, as when a node sits on a rounded distance.
        let x0 = 1e-6;
        let x1 = 1.000000000000036e-6;
        let t = integrate(
            |_, y: &[f64; 1]| Ok([1e6 * y[0]]),
            x0,
            [2.0],
            x1,
            &Dopri5Options::default(),
        )
        .unwrap();
        assert_eq!(*t.xs.last().unwrap(), x1);
        assert!((t.ys.last().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn backward_harmonic_oscillator() {
        // y'' = −y integrated from π back to 0 with y(π) = 0, y'(π) = −1: y = sin x.
        let pi = std::f64::consts::PI;
        let t = integrate(
            |_, y: &[f64; 2]| Ok([y[1], -y[0]]),
            pi,
            [0.0, -1.0],
            0.0,
            &Dopri5Options::default(),
        )
        .unwrap();
        assert_eq!(*t.xs.last().unwrap(), 0.0);
        for k in 0..=20 {
            let x = pi * k as f64 / 20.0;
            let (y, _) = t.eval(x).unwrap();
            assert!((y[0] - x.sin()).abs() < 1e-8, "x={x} {}", y[0]);
        }
        assert!(t.eval(-0.1).is_err());
    }

    #[test]
    fn dense_output_is_continuous_at_nodes() {
        let t = integrate(
            |x, y: &[f64; 1]| Ok([x.cos() * y[0]]),
            0.0,
            [1.0],
            10.0,
            &Dopri5Options::default(),
        )
        .unwrap();
        for (seg, y_end) in t.segments.iter().zip(&t.ys[1..]) {
            let (y, _) = seg.eval(seg.x0 + seg.h);
            assert!((y[0] - y_end[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_failure_is_reported() {
        let r = integrate(
            |x, _: &[f64; 1]| {
                if x > 0.5 {
                    Err("boom".into())
                } else {
                    Ok([1.0])
                }
            },
            0.0,
            [0.0],
            1.0,
            &Dopri5Options::default(),
        );
        assert!(matches!(r, Err(OdeError::Rhs(_))));
    }
}
