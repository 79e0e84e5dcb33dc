//! Piecewise cubic Hermite splines with shape-preserving slopes.
//!
//! Each interval `[t0, t1]` carries a cubic in the local coordinate
//! `x = t - t0`:
//!
//! ```text
//! f(x) = a + b·x + c·x² + d·x³
//! ```
//!
//! built from the knot values and first derivatives at both ends, so
//! neighbouring pieces share value and slope at every join (C¹).
//! Slopes follow the monotone harmonic-mean rule: an interior slope is
//! zero at local extrema and a weighted harmonic mean of the adjacent
//! secants otherwise; end slopes use a one-sided three-point estimate
//! clipped to keep the first and last pieces monotone.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("non-finite knot, value or slope at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {knots} knots, {values} values")]
    LengthMismatch { knots: usize, values: usize },
    #[error("t = {t} outside spline domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
}

/// Which trajectory quantity a spline interpolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Channel {
    Lat,
    Lon,
    Speed,
    #[default]
    Scalar,
}

/// One cubic piece in power form over `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSegment {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t0: f64,
    pub t1: f64,
    pub channel: Channel,
}

impl SplineSegment {
    fn from_hermite(t0: f64, t1: f64, p0: f64, p1: f64, m0: f64, m1: f64, channel: Channel) -> Self {
        let h = t1 - t0;
        let secant = (p1 - p0) / h;
        Self {
            a: p0,
            b: m0,
            c: (3.0 * secant - 2.0 * m0 - m1) / h,
            d: (m0 + m1 - 2.0 * secant) / (h * h),
            t0,
            t1,
            channel,
        }
    }

    /// Horner evaluation; `t` is not range-checked.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        let x = t - self.t0;
        self.a + x * (self.b + x * (self.c + x * self.d))
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        let x = t - self.t0;
        self.b + x * (2.0 * self.c + x * 3.0 * self.d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    segments: Vec<SplineSegment>,
}

/// Fits a shape-preserving cubic Hermite spline through `(knots[i], values[i])`.
pub fn fit_hermite(knots: &[f64], values: &[f64]) -> Result<HermiteSpline, SplineError> {
    HermiteSpline::fit(knots, values)
}

fn validate(knots: &[f64], values: &[f64]) -> Result<(), SplineError> {
    if knots.len() != values.len() {
        return Err(SplineError::LengthMismatch {
            knots: knots.len(),
            values: values.len(),
        });
    }
    if knots.len() < 2 {
        return Err(SplineError::TooFewKnots(knots.len()));
    }
    if let Some(i) = (0..knots.len()).find(|&i| !knots[i].is_finite() || !values[i].is_finite()) {
        return Err(SplineError::NonFinite(i));
    }
    if let Some(i) = (1..knots.len()).find(|&i| knots[i] <= knots[i - 1]) {
        return Err(SplineError::NotIncreasing(i));
    }
    Ok(())
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

/// End slope from the three-point one-sided formula, limited so the end piece stays monotone.
fn edge_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if !same_sign(m, s0) {
        0.0
    } else if !same_sign(s0, s1) && m.abs() > (3.0 * s0).abs() {
        3.0 * s0
    } else {
        m
    }
}

fn monotone_slopes(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let n = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let secants: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / h[i]).collect();

    if n == 2 {
        return vec![secants[0]; 2];
    }

    let mut slopes = vec![0.0; n];
    for k in 1..n - 1 {
        let (s_prev, s_next) = (secants[k - 1], secants[k]);
        if same_sign(s_prev, s_next) {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            slopes[k] = (w1 + w2) / (w1 / s_prev + w2 / s_next);
        }
    }
    slopes[0] = edge_slope(h[0], h[1], secants[0], secants[1]);
    slopes[n - 1] = edge_slope(h[n - 2], h[n - 3], secants[n - 2], secants[n - 3]);
    slopes
}

impl HermiteSpline {
    pub fn fit(knots: &[f64], values: &[f64]) -> Result<Self, SplineError> {
        validate(knots, values)?;
        let slopes = monotone_slopes(knots, values);
        Ok(Self::assemble(knots, values, slopes, Channel::Scalar))
    }

    /// Builds the spline from caller-chosen slopes instead of the monotone rule.
    pub fn with_slopes(knots: &[f64], values: &[f64], slopes: &[f64]) -> Result<Self, SplineError> {
        validate(knots, values)?;
        if slopes.len() != knots.len() {
            return Err(SplineError::LengthMismatch {
                knots: knots.len(),
                values: slopes.len(),
            });
        }
        if let Some(i) = slopes.iter().position(|m| !m.is_finite()) {
            return Err(SplineError::NonFinite(i));
        }
        Ok(Self::assemble(knots, values, slopes.to_vec(), Channel::Scalar))
    }

    pub fn with_channel(mut self, channel: Channel) -> Self {
        for seg in &mut self.segments {
            seg.channel = channel;
        }
        self
    }

    fn assemble(knots: &[f64], values: &[f64], slopes: Vec<f64>, channel: Channel) -> Self {
        let segments = (0..knots.len() - 1)
            .map(|i| {
                SplineSegment::from_hermite(
                    knots[i],
                    knots[i + 1],
                    values[i],
                    values[i + 1],
                    slopes[i],
                    slopes[i + 1],
                    channel,
                )
            })
            .collect();
        Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            slopes,
            segments,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn segments(&self) -> &[SplineSegment] {
        &self.segments
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Index of the segment covering `t`; the last segment owns the right end.
    fn locate(&self, t: f64) -> Result<usize, SplineError> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&t) {
            return Err(SplineError::OutOfDomain { t, lo, hi });
        }
        let idx = self.knots.partition_point(|&k| k <= t);
        Ok(idx.saturating_sub(1).min(self.segments.len() - 1))
    }

    pub fn eval(&self, t: f64) -> Result<f64, SplineError> {
        let i = self.locate(t)?;
        let seg = &self.segments[i];
        if t == seg.t0 {
            return Ok(self.values[i]);
        }
        if t == seg.t1 {
            return Ok(self.values[i + 1]);
        }
        Ok(seg.value(t))
    }

    pub fn derivative(&self, t: f64) -> Result<f64, SplineError> {
        let i = self.locate(t)?;
        Ok(self.segments[i].derivative(t))
    }
}
