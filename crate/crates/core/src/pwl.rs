//! Continuous, monotonically increasing piecewise-linear functions on
//! `[0, ∞)`, plus the tangent-band construction that fits them to
//! polynomial (BPR-style) travel-time curves.
//!
//! Every cost curve in this crate is a [`PwlFunction`]: an ordered list of
//! `(x_start, slope, intercept)` segments with strictly positive slopes.
//! The representation stores coefficients rather than endpoint pairs so
//! that downstream code can read slopes and intercepts off directly;
//! continuity is validated at construction, not implied.

use std::fmt;

/// Relative tolerance for continuity validation and breakpoint merging.
const CONTINUITY_REL_TOL: f64 = 1e-12;

/// Residual tolerance for the tangency search in [`approximate_bpr`].
const TANGENCY_TOL: f64 = 1e-10;

/// Bracket-expansion cap for the tangency/intersection searches. A band
/// segment whose endpoint would land beyond this flow is reported as a
/// failure instead of being constructed.
const SEARCH_DOMAIN_CAP: f64 = 1e12;

/// One linear piece: on `[x_start, next.x_start)` the value is
/// `slope * x + intercept`. The last piece extends to `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub x_start: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Segment {
    fn value(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Polynomial travel-time curve `c * x^a + b`.
#[derive(Clone, Copy, Debug)]
pub struct BprFunction {
    coefficient: f64,
    exponent: f64,
    free_flow: f64,
}

impl BprFunction {
    /// Requires `c > 0`, `a >= 1`, `b >= 0`, all finite.
    pub fn new(coefficient: f64, exponent: f64, free_flow: f64) -> Result<Self, PwlError> {
        if !(coefficient.is_finite() && coefficient > 0.0) {
            return Err(PwlError::InvalidBpr {
                what: "coefficient must be positive and finite",
                value: coefficient,
            });
        }
        if !(exponent.is_finite() && exponent >= 1.0) {
            return Err(PwlError::InvalidBpr {
                what: "exponent must be >= 1 and finite",
                value: exponent,
            });
        }
        if !(free_flow.is_finite() && free_flow >= 0.0) {
            return Err(PwlError::InvalidBpr {
                what: "free-flow time must be non-negative and finite",
                value: free_flow,
            });
        }
        Ok(Self {
            coefficient,
            exponent,
            free_flow,
        })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn free_flow(&self) -> f64 {
        self.free_flow
    }

    /// Curve value `c * x^a + b`.
    pub fn value(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent) + self.free_flow
    }

    fn derivative(&self, x: f64) -> f64 {
        self.coefficient * self.exponent * x.powf(self.exponent - 1.0)
    }
}

/// Parameters of the tangent-band approximation: half-band width and the
/// number of output segments.
#[derive(Clone, Copy, Debug)]
pub struct ApproxConfig {
    pub epsilon: f64,
    pub eta: usize,
}

impl ApproxConfig {
    pub fn new(epsilon: f64, eta: usize) -> Result<Self, PwlError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(PwlError::InvalidApproxConfig {
                what: "epsilon must be positive and finite",
                value: epsilon,
            });
        }
        if eta < 1 {
            return Err(PwlError::InvalidApproxConfig {
                what: "eta must be at least 1",
                value: eta as f64,
            });
        }
        Ok(Self { epsilon, eta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PwlError {
    Empty,
    FirstSegmentNotAtZero { x_start: f64 },
    BreakpointsNotIncreasing { index: usize },
    NonPositiveSlope { index: usize, slope: f64 },
    Discontinuous { index: usize, left: f64, right: f64 },
    InvalidArgument { what: &'static str, value: f64 },
    BelowRange { y: f64, min: f64 },
    InvalidBpr { what: &'static str, value: f64 },
    InvalidApproxConfig { what: &'static str, value: f64 },
    SearchNotConverged { stage: &'static str, residual: f64 },
}

impl fmt::Display for PwlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PwlError::Empty => write!(f, "piecewise-linear function needs at least one segment"),
            PwlError::FirstSegmentNotAtZero { x_start } => {
                write!(f, "first segment must start at 0, got {x_start}")
            }
            PwlError::BreakpointsNotIncreasing { index } => {
                write!(f, "segment {index} does not start after its predecessor")
            }
            PwlError::NonPositiveSlope { index, slope } => {
                write!(f, "segment {index} has non-positive slope {slope}")
            }
            PwlError::Discontinuous { index, left, right } => write!(
                f,
                "discontinuity at start of segment {index}: {left} vs {right}"
            ),
            PwlError::InvalidArgument { what, value } => write!(f, "{what}: {value}"),
            PwlError::BelowRange { y, min } => {
                write!(f, "value {y} is below the function range (minimum {min})")
            }
            PwlError::InvalidBpr { what, value } => write!(f, "invalid BPR curve: {what} ({value})"),
            PwlError::InvalidApproxConfig { what, value } => {
                write!(f, "invalid approximation config: {what} ({value})")
            }
            PwlError::SearchNotConverged { stage, residual } => {
                write!(f, "{stage} search did not converge (residual {residual})")
            }
        }
    }
}

impl std::error::Error for PwlError {}

/// Continuous, strictly increasing piecewise-linear function on `[0, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlFunction {
    segments: Vec<Segment>,
}

fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

impl PwlFunction {
    /// Validates the type invariants: first breakpoint at 0, strictly
    /// increasing breakpoints, strictly positive slopes, continuity at
    /// every interior breakpoint within `1e-12` relative.
    pub fn new(segments: Vec<Segment>) -> Result<Self, PwlError> {
        if segments.is_empty() {
            return Err(PwlError::Empty);
        }
        if segments[0].x_start != 0.0 {
            return Err(PwlError::FirstSegmentNotAtZero {
                x_start: segments[0].x_start,
            });
        }
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.slope.is_finite() && seg.intercept.is_finite() && seg.x_start.is_finite()) {
                return Err(PwlError::InvalidArgument {
                    what: "segment fields must be finite",
                    value: f64::NAN,
                });
            }
            if seg.slope <= 0.0 {
                return Err(PwlError::NonPositiveSlope {
                    index: k,
                    slope: seg.slope,
                });
            }
            if k > 0 {
                let prev = &segments[k - 1];
                if seg.x_start <= prev.x_start {
                    return Err(PwlError::BreakpointsNotIncreasing { index: k });
                }
                let left = prev.value(seg.x_start);
                let right = seg.value(seg.x_start);
                if !close_rel(left, right, CONTINUITY_REL_TOL) {
                    return Err(PwlError::Discontinuous {
                        index: k,
                        left,
                        right,
                    });
                }
            }
        }
        Ok(Self { segments })
    }

    /// Single-segment line `slope * x + intercept`.
    pub fn line(slope: f64, intercept: f64) -> Result<Self, PwlError> {
        Self::new(vec![Segment {
            x_start: 0.0,
            slope,
            intercept,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Value at flow 0 (the intercept of the first segment).
    pub fn value_at_zero(&self) -> f64 {
        self.segments[0].intercept
    }

    /// x-coordinate of the last breakpoint. Queries beyond it land on the
    /// final segment, which for tangent-band approximations carries no
    /// error guarantee.
    pub fn last_breakpoint(&self) -> f64 {
        self.segments[self.segments.len() - 1].x_start
    }

    pub(crate) fn segment_index_at(&self, x: f64) -> usize {
        // partition_point: first segment with x_start > x, minus one
        let idx = self.segments.partition_point(|s| s.x_start <= x);
        idx.saturating_sub(1)
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        self.segments[self.segment_index_at(x)].value(x)
    }

    /// Evaluates the function; rejects negative or non-finite inputs.
    pub fn eval(&self, x: f64) -> Result<f64, PwlError> {
        if !x.is_finite() || x < 0.0 {
            return Err(PwlError::InvalidArgument {
                what: "flow must be finite and non-negative",
                value: x,
            });
        }
        Ok(self.value_unchecked(x))
    }

    /// Unique `x` with `eval(x) = y`. Requires `y >= eval(0)`; callers
    /// that want the clamp convention use [`PwlFunction::invert_clamped`].
    pub fn invert_monotone(&self, y: f64) -> Result<f64, PwlError> {
        if !y.is_finite() {
            return Err(PwlError::InvalidArgument {
                what: "target value must be finite",
                value: y,
            });
        }
        let min = self.value_at_zero();
        if y < min {
            return Err(PwlError::BelowRange { y, min });
        }
        Ok(self.invert_in_range(y))
    }

    /// Clamp convention: 0 for any `y` at or below the value at zero flow.
    pub(crate) fn invert_clamped(&self, y: f64) -> f64 {
        if y <= self.value_at_zero() {
            0.0
        } else {
            self.invert_in_range(y)
        }
    }

    fn invert_in_range(&self, y: f64) -> f64 {
        // Locate the segment whose value range contains y; value ranges are
        // contiguous because the function is continuous and increasing.
        let mut k = self.segments.len() - 1;
        for i in 1..self.segments.len() {
            let start_value = self.segments[i].value(self.segments[i].x_start);
            if y < start_value {
                k = i - 1;
                break;
            }
        }
        ((y - self.segments[k].intercept) / self.segments[k].slope).max(0.0)
    }

    /// Pointwise sum. Breakpoints of the result are the merged breakpoints
    /// of both operands with near-duplicates (1e-12 relative) collapsed.
    pub fn add(&self, other: &Self) -> Self {
        let mut xs: Vec<f64> = self
            .segments
            .iter()
            .chain(other.segments.iter())
            .map(|s| s.x_start)
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("breakpoints are finite"));
        xs.dedup_by(|a, b| close_rel(*a, *b, CONTINUITY_REL_TOL));
        let segments = xs
            .into_iter()
            .map(|x| {
                let a = &self.segments[self.segment_index_at(x)];
                let b = &other.segments[other.segment_index_at(x)];
                Segment {
                    x_start: x,
                    slope: a.slope + b.slope,
                    intercept: a.intercept + b.intercept,
                }
            })
            .collect();
        Self::new(segments).expect("sum of valid piecewise-linear functions is valid")
    }

    /// Shifts the whole function up by a constant (e.g. a fixed toll).
    pub fn add_constant(&self, delta: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                x_start: s.x_start,
                slope: s.slope,
                intercept: s.intercept + delta,
            })
            .collect();
        Self::new(segments).expect("constant shift preserves validity")
    }

    /// Reparameterizes the argument: returns `h` with `h(x) = f(factor * x)`.
    /// Requires `factor > 0`.
    pub fn scale_argument(&self, factor: f64) -> Result<Self, PwlError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(PwlError::InvalidArgument {
                what: "argument scale must be positive and finite",
                value: factor,
            });
        }
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                x_start: s.x_start / factor,
                slope: s.slope * factor,
                intercept: s.intercept,
            })
            .collect();
        Self::new(segments)
    }

    /// Plain-text table `x_start,slope,intercept`, one segment per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_start,slope,intercept\n");
        for s in &self.segments {
            out.push_str(&format!("{},{},{}\n", s.x_start, s.slope, s.intercept));
        }
        out
    }
}

/// Increasing scalar root search: `f` must be negative at `lo` and
/// eventually positive; brackets by doubling `hi`, then bisects with a
/// Newton accelerator when a derivative is available.
fn find_root<F, D>(f: F, fp: Option<D>, lo0: f64, stage: &'static str) -> Result<f64, PwlError>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut lo = lo0;
    let mut hi = (2.0 * lo0.abs()).max(1.0);
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > SEARCH_DOMAIN_CAP {
            return Err(PwlError::SearchNotConverged {
                stage,
                residual: f(hi),
            });
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = f64::NAN;
        if let Some(fp) = &fp {
            let d = fp(x);
            if d.is_finite() && d > 0.0 {
                next = x - fx / d;
            }
        }
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo) <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        x = next;
    }
    let residual = f(x);
    let scale = x.abs().max(1.0);
    if residual.abs() > TANGENCY_TOL * scale.max(f(hi).abs()) {
        return Err(PwlError::SearchNotConverged { stage, residual });
    }
    Ok(x)
}

/// Tangent point of the curve as seen from `(x0, y0)` strictly below it:
/// solves `T(x) - y0 = T'(x) (x - x0)` for `x > x0`. Returns `(slope, x)`.
fn tangent_from(bpr: &BprFunction, x0: f64, y0: f64) -> Result<(f64, f64), PwlError> {
    let (c, a, b) = (bpr.coefficient, bpr.exponent, bpr.free_flow);
    // (a-1) c x^a - a c x0 x^(a-1) - (b - y0) = 0; increasing for x >= x0.
    let g = |x: f64| (a - 1.0) * c * x.powf(a) - a * c * x0 * x.powf(a - 1.0) - (b - y0);
    let gp = |x: f64| a * (a - 1.0) * c * x.powf(a - 2.0) * (x - x0);
    let x_t = find_root(g, Some(gp), x0, "tangency")?;
    Ok((bpr.derivative(x_t), x_t))
}

/// Tangent-band approximation of a BPR curve.
///
/// The first `eta - 1` segments keep the curve inside a vertical band of
/// total height `2 * epsilon`; the final segment is the ray from the last
/// band point, parallel to the tangent drawn from `2 * epsilon` below it,
/// and carries no error guarantee.
pub fn approximate_bpr(bpr: &BprFunction, cfg: &ApproxConfig) -> Result<PwlFunction, PwlError> {
    if bpr.exponent == 1.0 {
        // Already a line; the band construction has no tangent point.
        return PwlFunction::line(bpr.coefficient, bpr.free_flow);
    }
    let eps = cfg.epsilon;
    let mut segments = Vec::with_capacity(cfg.eta);
    let mut x_j = 0.0;
    let mut y_j = bpr.free_flow;
    for j in 1..=cfg.eta {
        let (slope, x_touch) = tangent_from(bpr, x_j, y_j - eps)?;
        segments.push(Segment {
            x_start: x_j,
            slope,
            intercept: y_j - slope * x_j,
        });
        if j == cfg.eta {
            break;
        }
        // Extend the parallel from (x_j, y_j + eps) to its next crossing of
        // the curve; the crossing is the start of the next band segment.
        let (c, a, b) = (bpr.coefficient, bpr.exponent, bpr.free_flow);
        let y_up = y_j + eps;
        let h = |x: f64| c * x.powf(a) + b - y_up - slope * (x - x_j);
        let hp = |x: f64| a * c * x.powf(a - 1.0) - slope;
        let x_next = find_root(h, Some(hp), x_touch, "band intersection")?;
        y_j = bpr.value(x_next) - eps;
        x_j = x_next;
    }
    PwlFunction::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_piece() -> PwlFunction {
        PwlFunction::new(vec![
            Segment {
                x_start: 0.0,
                slope: 1.0,
                intercept: 0.5,
            },
            Segment {
                x_start: 2.0,
                slope: 3.0,
                intercept: -3.5,
            },
        ])
        .unwrap()
    }

    #[test]
    fn eval_single_segment_line() {
        let f = PwlFunction::line(1.0, 0.5).unwrap();
        assert_eq!(f.eval(3.0).unwrap(), 3.5);
    }

    #[test]
    fn eval_is_continuous_at_breakpoint() {
        let f = two_piece();
        assert!((f.eval(2.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((f.eval(2.0 - 1e-9).unwrap() - 2.5).abs() < 1e-8);
    }

    #[test]
    fn eval_rejects_bad_input() {
        let f = two_piece();
        assert!(f.eval(-1.0).is_err());
        assert!(f.eval(f64::NAN).is_err());
        assert!(f.eval(f64::INFINITY).is_err());
    }

    #[test]
    fn invert_line() {
        let f = PwlFunction::line(1.0, 0.5).unwrap();
        assert_eq!(f.invert_monotone(3.5).unwrap(), 3.0);
    }

    #[test]
    fn invert_second_segment_hand_solved() {
        // 3x - 3.5 = 5.5  =>  x = 3
        let f = two_piece();
        assert!((f.invert_monotone(5.5).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invert_rejects_below_range_and_nonfinite() {
        let f = two_piece();
        assert!(matches!(
            f.invert_monotone(0.4),
            Err(PwlError::BelowRange { .. })
        ));
        assert!(f.invert_monotone(f64::NAN).is_err());
        assert_eq!(f.invert_clamped(0.4), 0.0);
    }

    #[test]
    fn add_lines() {
        let f = PwlFunction::line(1.0, 0.5).unwrap();
        let g = PwlFunction::line(2.0, 1.0).unwrap();
        let h = f.add(&g);
        assert_eq!(h.segments().len(), 1);
        assert_eq!(h.segments()[0].slope, 3.0);
        assert_eq!(h.segments()[0].intercept, 1.5);
    }

    #[test]
    fn zero_slope_rejected_at_construction() {
        assert!(matches!(
            PwlFunction::line(0.0, 1.0),
            Err(PwlError::NonPositiveSlope { .. })
        ));
    }

    #[test]
    fn add_merges_breakpoints_and_matches_grid_oracle() {
        let f = two_piece();
        let g = PwlFunction::new(vec![
            Segment {
                x_start: 0.0,
                slope: 2.0,
                intercept: 1.0,
            },
            Segment {
                x_start: 3.0,
                slope: 5.0,
                intercept: -8.0,
            },
        ])
        .unwrap();
        let h = f.add(&g);
        let starts: Vec<f64> = h.segments().iter().map(|s| s.x_start).collect();
        assert_eq!(starts, vec![0.0, 2.0, 3.0]);
        for k in 0..=100 {
            let x = 0.05 * k as f64;
            let expect = f.eval(x).unwrap() + g.eval(x).unwrap();
            assert!((h.eval(x).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bpr_approximation_original_route_one() {
        // c=1, a=4, b=0.5, eps=1, eta=4: four segments starting at (0, 0.5).
        let bpr = BprFunction::new(1.0, 4.0, 0.5).unwrap();
        let cfg = ApproxConfig::new(1.0, 4).unwrap();
        let f = approximate_bpr(&bpr, &cfg).unwrap();
        assert_eq!(f.segments().len(), 4);
        assert_eq!(f.segments()[0].x_start, 0.0);
        assert!((f.value_at_zero() - 0.5).abs() < 1e-12);
        // First tangent touches x^4 + 0.5 at (1/3)^(1/4); slope 4 * 3^(-3/4).
        let expected_slope = 4.0 * (1.0f64 / 3.0).powf(0.75);
        assert!((f.segments()[0].slope - expected_slope).abs() < 1e-9);
        // Band bound |approx - true| <= 2 eps up to the last breakpoint.
        let last = f.last_breakpoint();
        for k in 0..1000 {
            let x = last * k as f64 / 1000.0;
            let err = (f.eval(x).unwrap() - bpr.value(x)).abs();
            assert!(err <= 2.0 + 1e-9, "error {err} at {x}");
        }
    }

    #[test]
    fn bpr_approximation_eta_one_is_single_ray() {
        let bpr = BprFunction::new(1.0, 4.0, 0.5).unwrap();
        let f = approximate_bpr(&bpr, &ApproxConfig::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(f.segments().len(), 1);
        assert_eq!(f.value_at_zero(), 0.5);
        let expected_slope = 4.0 * (1.0f64 / 3.0).powf(0.75);
        assert!((f.segments()[0].slope - expected_slope).abs() < 1e-9);
    }

    #[test]
    fn bpr_tangency_beyond_search_cap_is_reported() {
        // Nearly linear and nearly flat: the first tangent point sits far
        // beyond the search cap, so the construction must fail cleanly.
        let bpr = BprFunction::new(1e-15, 1.0001, 0.5).unwrap();
        let result = approximate_bpr(&bpr, &ApproxConfig::new(1.0, 3).unwrap());
        assert!(matches!(result, Err(PwlError::SearchNotConverged { .. })));
    }

    #[test]
    fn bpr_linear_exponent_is_exact() {
        let bpr = BprFunction::new(2.5, 1.0, 0.75).unwrap();
        let f = approximate_bpr(&bpr, &ApproxConfig::new(0.5, 3).unwrap()).unwrap();
        assert_eq!(f.segments().len(), 1);
        assert_eq!(f.segments()[0].slope, 2.5);
        assert_eq!(f.segments()[0].intercept, 0.75);
    }

    #[test]
    fn scale_argument_reparameterizes() {
        let f = two_piece();
        let g = f.scale_argument(0.5).unwrap();
        for k in 0..50 {
            let x = 0.2 * k as f64;
            assert!((g.eval(x).unwrap() - f.eval(0.5 * x).unwrap()).abs() < 1e-12);
        }
        assert!(f.scale_argument(0.0).is_err());
    }

    #[test]
    fn csv_rows_one_per_segment() {
        let f = two_piece();
        let csv = f.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x_start,slope,intercept");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "0,1,0.5");
    }
}
