//! Convex replacements for the two nonconvex pieces of the restoration
//! model: the quadratic current equation and storage complementarity.

use thiserror::Error;

use crate::lp::{Relation, Row, VarId};

/// Under-approximation of `y = x^2` by tangent lines `y >= gamma x + psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonApprox {
    pub sides: Vec<(f64, f64)>,
    pub range_bound: f64,
}

impl PolygonApprox {
    /// Largest tangent value at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sides
            .iter()
            .map(|&(g, p)| g * x + p)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Worst-case gap `x^2 - eval(x)` over the covered range.
    pub fn error_bound(&self) -> f64 {
        match self.sides.len() {
            1 => self.range_bound * self.range_bound,
            n => (self.range_bound / (n - 1) as f64).powi(2),
        }
    }
}

/// Tangents to `x^2` at `num_sides` equally spaced points of
/// `[-range_bound, range_bound]` (a single side is the tangent at zero).
///
/// # Panics
/// If `num_sides == 0` or `range_bound` is not positive.
pub fn build_polygon(num_sides: usize, range_bound: f64) -> PolygonApprox {
    assert!(num_sides >= 1, "polygon needs at least one side");
    assert!(range_bound > 0.0, "polygon range must be positive");
    let sides = (0..num_sides)
        .map(|c| {
            let xc = if num_sides == 1 {
                0.0
            } else {
                -range_bound + 2.0 * range_bound * c as f64 / (num_sides - 1) as f64
            };
            (2.0 * xc, -xc * xc)
        })
        .collect();
    PolygonApprox { sides, range_bound }
}

/// Cartesian form: `l >= h_c(P) + h_c'(Q)` for every side pair.
pub fn polygon_constraints(approx: &PolygonApprox, label: &str, l: VarId, p: VarId, q: VarId) -> Vec<Row> {
    let mut rows = Vec::with_capacity(approx.sides.len().pow(2));
    for (c, &(gp, sp)) in approx.sides.iter().enumerate() {
        for (c2, &(gq, sq)) in approx.sides.iter().enumerate() {
            rows.push(Row::new(
                format!("{label}_poly{c}_{c2}"),
                vec![(l, 1.0), (p, -gp), (q, -gq)],
                Relation::Ge,
                sp + sq,
            ));
        }
    }
    rows
}

/// Shared-index form: `l >= h_c(P) + h_c(Q)` for every side.
pub fn polygon_constraints_shared(
    approx: &PolygonApprox,
    label: &str,
    l: VarId,
    p: VarId,
    q: VarId,
) -> Vec<Row> {
    approx
        .sides
        .iter()
        .enumerate()
        .map(|(c, &(g, s))| {
            Row::new(
                format!("{label}_poly{c}"),
                vec![(l, 1.0), (p, -g), (q, -g)],
                Relation::Ge,
                2.0 * s,
            )
        })
        .collect()
}

/// Lifted form of the cartesian constraints through epigraph variables
/// `zp >= h_c(P)`, `zq >= h_c(Q)`, `l >= zp + zq`: `2|C| + 1` rows whose
/// projection onto `(l, P, Q)` equals the `|C|^2` cartesian rows.
pub fn polygon_constraints_lifted(
    approx: &PolygonApprox,
    label: &str,
    l: VarId,
    p: VarId,
    q: VarId,
    zp: VarId,
    zq: VarId,
) -> Vec<Row> {
    let mut rows = Vec::with_capacity(2 * approx.sides.len() + 1);
    for (c, &(g, s)) in approx.sides.iter().enumerate() {
        rows.push(Row::new(format!("{label}_zp{c}"), vec![(zp, 1.0), (p, -g)], Relation::Ge, s));
        rows.push(Row::new(format!("{label}_zq{c}"), vec![(zq, 1.0), (q, -g)], Relation::Ge, s));
    }
    rows.push(Row::new(
        format!("{label}_poly"),
        vec![(l, 1.0), (zp, -1.0), (zq, -1.0)],
        Relation::Ge,
        0.0,
    ));
    rows
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("storage power limits must be strictly positive (got charge {p_ch_max}, discharge {p_dis_max})")]
pub struct HullError {
    pub p_ch_max: f64,
    pub p_dis_max: f64,
}

/// Convex hull of the storage operating set `{ch in [0, ch_max], dis in
/// [0, dis_max], ch * dis = 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssHull {
    p_ch_max: f64,
    p_dis_max: f64,
}

impl EssHull {
    pub fn new(p_ch_max: f64, p_dis_max: f64) -> Result<Self, HullError> {
        if p_ch_max > 0.0 && p_dis_max > 0.0 {
            Ok(EssHull { p_ch_max, p_dis_max })
        } else {
            Err(HullError { p_ch_max, p_dis_max })
        }
    }

    pub fn p_ch_max(&self) -> f64 {
        self.p_ch_max
    }

    pub fn p_dis_max(&self) -> f64 {
        self.p_dis_max
    }

    /// The facet `ch / ch_max + dis / dis_max <= 1`.
    pub fn row(&self, label: &str, ch: VarId, dis: VarId) -> Row {
        Row::new(
            format!("{label}_hull"),
            vec![(ch, 1.0 / self.p_ch_max), (dis, 1.0 / self.p_dis_max)],
            Relation::Le,
            1.0,
        )
    }
}

pub fn hull_contains(hull: &EssHull, p_ch: f64, p_dis: f64) -> bool {
    p_ch >= 0.0 && p_dis >= 0.0 && p_ch / hull.p_ch_max + p_dis / hull.p_dis_max <= 1.0 + 1e-12
}

/// Complementarity residual `ch * dis`.
pub fn cc_violation(p_ch: f64, p_dis: f64) -> f64 {
    p_ch * p_dis
}
