//! Wardrop user-equilibrium assignment for parallel piecewise-linear routes
//! with tolls.
//!
//! For a fixed toll vector the equilibrium is solved exactly: the aggregate
//! inverse supply `S(w) = Σ_r max(0, invert_r(w - u_r))` is piecewise linear
//! in the common travel time `w`, so `S(w) = x` is a linear solve on the
//! bracketing interval — no iterative tolerance is involved.
//!
//! Total system travel time is the sum of path travel times: used routes
//! contribute the equilibrium time `w`, unused routes their free-flow time
//! plus toll. As a function of demand (tolls fixed) it is itself piecewise
//! linear; [`extract_tstt_pwl`] recovers that form with per-piece demand and
//! toll coefficients, whose extrema feed the stability diagnostics.

use std::fmt;

use crate::pwl::PwlFunction;

/// Continuity requirement between adjacent pieces of an extracted TSTT.
const PIECE_CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumError {
    NoRoutes,
    TollCountMismatch { routes: usize, tolls: usize },
    InvalidToll { index: usize, value: f64 },
    InvalidDemand { value: f64 },
    NoActions,
    RouteCountMismatch { expected: usize, got: usize },
    NonPositiveCoefficient { piece: usize, what: &'static str, value: f64 },
    PieceDiscontinuity { piece: usize, left: f64, right: f64 },
}

impl fmt::Display for EquilibriumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquilibriumError::NoRoutes => write!(f, "at least one route is required"),
            EquilibriumError::TollCountMismatch { routes, tolls } => {
                write!(f, "{routes} routes but {tolls} tolls")
            }
            EquilibriumError::InvalidToll { index, value } => {
                write!(f, "toll {index} must be finite and non-negative, got {value}")
            }
            EquilibriumError::InvalidDemand { value } => {
                write!(f, "demand must be finite and non-negative, got {value}")
            }
            EquilibriumError::NoActions => write!(f, "at least one extracted TSTT is required"),
            EquilibriumError::RouteCountMismatch { expected, got } => {
                write!(f, "expected {expected} toll coefficients, got {got}")
            }
            EquilibriumError::NonPositiveCoefficient { piece, what, value } => {
                write!(f, "piece {piece}: non-positive {what} coefficient {value}")
            }
            EquilibriumError::PieceDiscontinuity { piece, left, right } => {
                write!(f, "TSTT pieces {piece}/{} disagree: {left} vs {right}", piece + 1)
            }
        }
    }
}

impl std::error::Error for EquilibriumError {}

/// One toll per route. Entries must be finite and non-negative; the strict
/// lower bound of the tolling box is enforced where the control model is
/// assembled, not here, so that reductions can pass through already-absorbed
/// (zero) toll contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct TollVector(Vec<f64>);

impl TollVector {
    pub fn new(tolls: Vec<f64>) -> Result<Self, EquilibriumError> {
        for (index, &value) in tolls.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(EquilibriumError::InvalidToll { index, value });
            }
        }
        Ok(Self(tolls))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Equilibrium assignment for one `(demand, toll-vector)` query.
#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    /// Flow per route; non-negative, sums to the demand.
    pub flows: Vec<f64>,
    /// Routes carrying positive flow.
    pub used: Vec<usize>,
    /// Routes carrying zero flow (cost at least `w`).
    pub unused: Vec<usize>,
    /// Common generalized cost of the used routes.
    pub equilibrium_time: f64,
    /// Total system travel time.
    pub tstt: f64,
    /// Active cost segment per route (`None` for unused routes).
    pub active_segments: Vec<Option<usize>>,
}

impl EquilibriumSolution {
    pub fn unused_count(&self) -> usize {
        self.unused.len()
    }
}

fn check_inputs(
    routes: &[PwlFunction],
    demand: f64,
    tolls: &TollVector,
) -> Result<(), EquilibriumError> {
    if routes.is_empty() {
        return Err(EquilibriumError::NoRoutes);
    }
    if tolls.len() != routes.len() {
        return Err(EquilibriumError::TollCountMismatch {
            routes: routes.len(),
            tolls: tolls.len(),
        });
    }
    if !demand.is_finite() || demand < 0.0 {
        return Err(EquilibriumError::InvalidDemand { value: demand });
    }
    Ok(())
}

/// Sorted, deduplicated generalized-cost levels at which a route activates
/// or crosses into its next segment.
fn cost_events(routes: &[PwlFunction], tolls: &[f64]) -> Vec<f64> {
    let mut events: Vec<f64> = routes
        .iter()
        .zip(tolls)
        .flat_map(|(route, &u)| {
            route
                .segments()
                .iter()
                .map(move |s| s.slope * s.x_start + s.intercept + u)
        })
        .collect();
    events.sort_by(|a, b| a.partial_cmp(b).expect("costs are finite"));
    events.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
    events
}

fn aggregate_supply(routes: &[PwlFunction], tolls: &[f64], w: f64) -> f64 {
    routes
        .iter()
        .zip(tolls)
        .map(|(route, &u)| route.invert_clamped(w - u))
        .sum()
}

/// Exact Wardrop assignment of `demand` over parallel routes.
pub fn solve_equilibrium(
    routes: &[PwlFunction],
    demand: f64,
    tolls: &TollVector,
) -> Result<EquilibriumSolution, EquilibriumError> {
    check_inputs(routes, demand, tolls)?;
    let u = tolls.as_slice();
    let entry_costs: Vec<f64> = routes
        .iter()
        .zip(u)
        .map(|(route, &toll)| route.value_at_zero() + toll)
        .collect();

    if demand == 0.0 {
        let w = entry_costs.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(EquilibriumSolution {
            flows: vec![0.0; routes.len()],
            used: Vec::new(),
            unused: (0..routes.len()).collect(),
            equilibrium_time: w,
            tstt: entry_costs.iter().sum(),
            active_segments: vec![None; routes.len()],
        });
    }

    let events = cost_events(routes, u);
    // Find the last event with supply still below the demand; w lies in the
    // interval that starts there (or beyond the final event).
    let mut w_lo = events[0];
    let mut w_hi = None;
    for &event in &events {
        if aggregate_supply(routes, u, event) < demand {
            w_lo = event;
        } else if event > w_lo {
            w_hi = Some(event);
            break;
        }
    }
    let supply_lo = aggregate_supply(routes, u, w_lo);
    // The interval interior pins the active configuration; probing at the
    // midpoint cannot skip over a nearby event the way a fixed nudge can.
    let probe = match w_hi {
        Some(hi) => 0.5 * (w_lo + hi),
        None => w_lo + 1.0,
    };
    let inverse_slope: f64 = routes
        .iter()
        .zip(u)
        .filter_map(|(route, &toll)| {
            let flow = route.invert_clamped(probe - toll);
            (flow > 0.0).then(|| 1.0 / route.segments()[route.segment_index_at(flow)].slope)
        })
        .sum();
    let w = w_lo + (demand - supply_lo) / inverse_slope;

    let flows: Vec<f64> = routes
        .iter()
        .zip(u)
        .map(|(route, &toll)| route.invert_clamped(w - toll))
        .collect();
    let mut used = Vec::new();
    let mut unused = Vec::new();
    let mut active_segments = Vec::with_capacity(routes.len());
    for (r, &flow) in flows.iter().enumerate() {
        if flow > 0.0 {
            used.push(r);
            active_segments.push(Some(routes[r].segment_index_at(flow)));
        } else {
            unused.push(r);
            active_segments.push(None);
        }
    }
    let tstt = unused.iter().map(|&r| entry_costs[r]).sum::<f64>() + used.len() as f64 * w;
    Ok(EquilibriumSolution {
        flows,
        used,
        unused,
        equilibrium_time: w,
        tstt,
        active_segments,
    })
}

/// Total system travel time for one `(demand, toll-vector)` query.
pub fn tstt(routes: &[PwlFunction], demand: f64, tolls: &TollVector) -> Result<f64, EquilibriumError> {
    Ok(solve_equilibrium(routes, demand, tolls)?.tstt)
}

/// One piece of the TSTT as a function of demand: on `[x_start, next)`,
/// `TSTT(x) = demand_coeff * x + Σ_r toll_coeffs[r] * u_r + constant`.
#[derive(Clone, Debug)]
pub struct TsttPiece {
    pub x_start: f64,
    pub demand_coeff: f64,
    pub toll_coeffs: Vec<f64>,
    pub constant: f64,
}

impl TsttPiece {
    fn value(&self, x: f64, tolls: &[f64]) -> f64 {
        self.demand_coeff * x
            + self
                .toll_coeffs
                .iter()
                .zip(tolls)
                .map(|(k, u)| k * u)
                .sum::<f64>()
            + self.constant
    }
}

/// TSTT in piecewise form for one fixed toll vector.
#[derive(Clone, Debug)]
pub struct TsttPwl {
    pieces: Vec<TsttPiece>,
    tolls: Vec<f64>,
}

impl TsttPwl {
    pub fn pieces(&self) -> &[TsttPiece] {
        &self.pieces
    }

    /// Toll vector the pieces were extracted for.
    pub fn tolls(&self) -> &[f64] {
        &self.tolls
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.x_start <= x);
        self.pieces[idx.saturating_sub(1)].value(x, &self.tolls)
    }

    /// One piece per row: `x_start,demand_coeff,toll_coeff_1..R,constant`.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("x_start,demand_coeff");
        for r in 0..self.tolls.len() {
            header.push_str(&format!(",toll_coeff_{}", r + 1));
        }
        header.push_str(",constant\n");
        let mut out = header;
        for p in &self.pieces {
            out.push_str(&format!("{},{}", p.x_start, p.demand_coeff));
            for k in &p.toll_coeffs {
                out.push_str(&format!(",{k}"));
            }
            out.push_str(&format!(",{}\n", p.constant));
        }
        out
    }
}

/// Enumerates the demand breakpoints (route activations and segment
/// crossings) and computes the piece coefficients in closed form from each
/// active configuration.
pub fn extract_tstt_pwl(
    routes: &[PwlFunction],
    tolls: &TollVector,
) -> Result<TsttPwl, EquilibriumError> {
    check_inputs(routes, 0.0, tolls)?;
    let u = tolls.as_slice();
    let route_count = routes.len();
    let entry_costs: Vec<f64> = routes
        .iter()
        .zip(u)
        .map(|(route, &toll)| route.value_at_zero() + toll)
        .collect();
    let events = cost_events(routes, u);

    let mut pieces: Vec<TsttPiece> = Vec::new();
    for (k, &w) in events.iter().enumerate() {
        // Configuration on the open interval above w: which routes carry
        // flow, and on which of their segments. Probing at the interval
        // midpoint keeps near-coincident events from bleeding into each
        // other's configuration.
        let probe = match events.get(k + 1) {
            Some(&next) => 0.5 * (w + next),
            None => w + 1.0,
        };
        let mut used: Vec<(usize, usize)> = Vec::new();
        for (r, route) in routes.iter().enumerate() {
            if entry_costs[r] < probe {
                let flow = route.invert_clamped(probe - u[r]);
                used.push((r, route.segment_index_at(flow)));
            }
        }
        if used.is_empty() {
            continue;
        }
        let active = used.len() as f64;
        let inv_sum: f64 = used
            .iter()
            .map(|&(r, seg)| 1.0 / routes[r].segments()[seg].slope)
            .sum();
        let x_start: f64 = used
            .iter()
            .map(|&(r, seg)| {
                let s = &routes[r].segments()[seg];
                ((w - u[r] - s.intercept) / s.slope).max(0.0)
            })
            .sum();
        let demand_coeff = active / inv_sum;
        let mut toll_coeffs = vec![1.0; route_count];
        for &(r, seg) in &used {
            toll_coeffs[r] = active * (1.0 / routes[r].segments()[seg].slope) / inv_sum;
        }
        let constant_used: f64 = used
            .iter()
            .map(|&(r, seg)| {
                let s = &routes[r].segments()[seg];
                s.intercept / s.slope
            })
            .sum();
        let used_set: Vec<usize> = used.iter().map(|&(r, _)| r).collect();
        let constant_unused: f64 = (0..route_count)
            .filter(|r| !used_set.contains(r))
            .map(|r| routes[r].value_at_zero())
            .sum();
        let constant = constant_unused + active * constant_used / inv_sum;

        let piece = TsttPiece {
            x_start,
            demand_coeff,
            toll_coeffs,
            constant,
        };
        match pieces.last() {
            Some(last) if (piece.x_start - last.x_start).abs() <= 1e-12 * piece.x_start.max(1.0) => {
                // Simultaneous events collapse to a single configuration.
                *pieces.last_mut().expect("non-empty") = piece;
            }
            _ => pieces.push(piece),
        }
    }
    if let Some(first) = pieces.first_mut() {
        // The cheapest route activates at zero demand; cancellation in
        // (alpha + u) - u - alpha can leave a stray ulp here.
        first.x_start = 0.0;
    }

    for (index, piece) in pieces.iter().enumerate() {
        if piece.demand_coeff <= 0.0 {
            return Err(EquilibriumError::NonPositiveCoefficient {
                piece: index,
                what: "demand",
                value: piece.demand_coeff,
            });
        }
        for &k in &piece.toll_coeffs {
            if k <= 0.0 {
                return Err(EquilibriumError::NonPositiveCoefficient {
                    piece: index,
                    what: "toll",
                    value: k,
                });
            }
        }
    }
    for index in 0..pieces.len().saturating_sub(1) {
        let boundary = pieces[index + 1].x_start;
        let left = pieces[index].value(boundary, u);
        let right = pieces[index + 1].value(boundary, u);
        if (left - right).abs() > PIECE_CONTINUITY_TOL * left.abs().max(1.0) {
            return Err(EquilibriumError::PieceDiscontinuity {
                piece: index,
                left,
                right,
            });
        }
    }
    Ok(TsttPwl {
        pieces,
        tolls: u.to_vec(),
    })
}

/// Element-wise extrema of the demand and toll coefficients across all
/// pieces of all provided actions.
#[derive(Clone, Debug)]
pub struct CoefficientExtrema {
    pub k0_max: f64,
    pub k0_min: f64,
    pub kr_max: Vec<f64>,
    pub kr_min: Vec<f64>,
}

impl CoefficientExtrema {
    pub fn route_count(&self) -> usize {
        self.kr_max.len()
    }

    /// `Σ_r kr_max[r] * factor`, the toll part of the weight sequence.
    pub fn weighted_toll_sum_max(&self, factor: f64) -> f64 {
        self.kr_max.iter().map(|k| k * factor).sum()
    }

    pub fn weighted_toll_sum_min(&self, factor: f64) -> f64 {
        self.kr_min.iter().map(|k| k * factor).sum()
    }
}

pub fn coefficient_extrema(
    per_action: &[TsttPwl],
) -> Result<CoefficientExtrema, EquilibriumError> {
    let first = per_action.first().ok_or(EquilibriumError::NoActions)?;
    let route_count = first.tolls.len();
    let mut k0_max = f64::NEG_INFINITY;
    let mut k0_min = f64::INFINITY;
    let mut kr_max = vec![f64::NEG_INFINITY; route_count];
    let mut kr_min = vec![f64::INFINITY; route_count];
    for pwl in per_action {
        if pwl.tolls.len() != route_count {
            return Err(EquilibriumError::RouteCountMismatch {
                expected: route_count,
                got: pwl.tolls.len(),
            });
        }
        for piece in &pwl.pieces {
            k0_max = k0_max.max(piece.demand_coeff);
            k0_min = k0_min.min(piece.demand_coeff);
            for (r, &k) in piece.toll_coeffs.iter().enumerate() {
                kr_max[r] = kr_max[r].max(k);
                kr_min[r] = kr_min[r].min(k);
            }
        }
    }
    Ok(CoefficientExtrema {
        k0_max,
        k0_min,
        kr_max,
        kr_min,
    })
}
