//! Problem instances: breakpoints, 0/1 support array, Mallows rate, and the
//! structural checks (convexity, simplicity, non-degeneracy) that decide
//! which solver applies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowNetwork;
use crate::ipf;

/// Strictness threshold for positivity witnesses, relative to the smallest
/// row sum.
const WITNESS_POSITIVITY_REL: f64 = 1e-12;

/// A `k x ell` array of 0/1 cells indexed `[u][v]` with `u` along x and `v`
/// along y, origin at the lower-left corner (Cartesian, not matrix, layout).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportGrid {
    k: usize,
    ell: usize,
    cells: Vec<bool>,
}

impl SupportGrid {
    /// Build from Cartesian rows: `columns[u][v]`, i.e. one inner vec per
    /// vertical strip, listed bottom to top.
    pub fn from_cells(columns: Vec<Vec<bool>>) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidSpec("support array has no columns".into()));
        }
        let ell = columns[0].len();
        if ell == 0 || columns.iter().any(|c| c.len() != ell) {
            return Err(Error::InvalidSpec(
                "support array columns have unequal heights".into(),
            ));
        }
        let mut cells = Vec::with_capacity(k * ell);
        for col in &columns {
            cells.extend(col.iter().copied());
        }
        Ok(Self { k, ell, cells })
    }

    /// Build from 0/1 ints in Cartesian `[u][v]` layout.
    pub fn from_ints(columns: &[Vec<u8>]) -> Result<Self> {
        Self::from_cells(
            columns
                .iter()
                .map(|c| c.iter().map(|&b| b != 0).collect())
                .collect(),
        )
    }

    /// Build from rows listed top to bottom, as printed in configuration
    /// files and figures; flips into the Cartesian layout.
    pub fn from_visual_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let ell = rows.len();
        if ell == 0 {
            return Err(Error::InvalidSpec("support array has no rows".into()));
        }
        let k = rows[0].len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidSpec(
                "support array rows have unequal lengths".into(),
            ));
        }
        let mut columns = vec![vec![false; ell]; k];
        for (i, row) in rows.iter().enumerate() {
            let v = ell - 1 - i;
            for (u, &bit) in row.iter().enumerate() {
                columns[u][v] = bit != 0;
            }
        }
        Self::from_cells(columns)
    }

    /// Rows listed top to bottom (inverse of [`Self::from_visual_rows`]).
    pub fn to_visual_rows(&self) -> Vec<Vec<u8>> {
        (0..self.ell)
            .rev()
            .map(|v| (0..self.k).map(|u| u8::from(self.get(u, v))).collect())
            .collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.cells[u * self.ell + v]
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Indices of support cells in column `u`, bottom to top.
    pub fn column_support(&self, u: usize) -> Vec<usize> {
        (0..self.ell).filter(|&v| self.get(u, v)).collect()
    }

    /// Indices of support cells in row `v`, left to right.
    pub fn row_support(&self, v: usize) -> Vec<usize> {
        (0..self.k).filter(|&u| self.get(u, v)).collect()
    }

    fn has_empty_line(&self) -> bool {
        (0..self.k).any(|u| self.column_support(u).is_empty())
            || (0..self.ell).any(|v| self.row_support(v).is_empty())
    }
}

/// One problem instance: breakpoints `x_0..x_k`, `y_0..y_ell` as fractions of
/// the square side, the support array, and the asymptotic rate `r` (the
/// Mallows parameter enters finite systems as `q = exp(-r/N)`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub support: SupportGrid,
    pub r: f64,
}

impl RegionSpec {
    pub fn new(x: Vec<f64>, y: Vec<f64>, support: SupportGrid, r: f64) -> Result<Self> {
        let spec = Self { x, y, support, r };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.support.k()
    }

    pub fn ell(&self) -> usize {
        self.support.ell()
    }

    pub fn row_width(&self, u: usize) -> f64 {
        self.x[u + 1] - self.x[u]
    }

    pub fn col_height(&self, v: usize) -> f64 {
        self.y[v + 1] - self.y[v]
    }

    /// Ordering, endpoint, and shape checks. Non-degeneracy is a separate,
    /// more expensive call ([`check_nondegenerate`]).
    pub fn validate(&self) -> Result<()> {
        let k = self.support.k();
        let ell = self.support.ell();
        if self.x.len() != k + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} x-breakpoints, got {}",
                k + 1,
                self.x.len()
            )));
        }
        if self.y.len() != ell + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} y-breakpoints, got {}",
                ell + 1,
                self.y.len()
            )));
        }
        for (name, pts) in [("x", &self.x), ("y", &self.y)] {
            if pts[0] != 0.0 || *pts.last().unwrap() != 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "{name}-breakpoints must start at 0 and end at 1"
                )));
            }
            if pts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidSpec(format!(
                    "{name}-breakpoints must be strictly increasing"
                )));
            }
            if pts.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{name}-breakpoints must be finite"
                )));
            }
        }
        if self.support.has_empty_line() {
            return Err(Error::InvalidSpec(
                "support array has an all-zero row or column".into(),
            ));
        }
        if !self.r.is_finite() {
            return Err(Error::InvalidSpec("r must be finite".into()));
        }
        Ok(())
    }

    /// Same instance with a different rate.
    pub fn with_r(&self, r: f64) -> Self {
        Self {
            r,
            ..self.clone()
        }
    }
}

/// JSON document for a region spec. `I` rows are listed top to bottom for
/// visual fidelity with printed figures and are flipped on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(rename = "I")]
    pub i_rows: Vec<Vec<u8>>,
    pub r: f64,
}

impl RegionConfig {
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn into_spec(self) -> Result<RegionSpec> {
        let support = SupportGrid::from_visual_rows(&self.i_rows)?;
        RegionSpec::new(self.x, self.y, support, self.r)
    }
}

impl From<&RegionSpec> for RegionConfig {
    fn from(spec: &RegionSpec) -> Self {
        Self {
            x: spec.x.clone(),
            y: spec.y.clone(),
            i_rows: spec.support.to_visual_rows(),
            r: spec.r,
        }
    }
}

/// A strict-positivity witness for non-degeneracy: per-cell masses, positive
/// exactly on the support, with row sums `x_u - x_{u-1}` and column sums
/// `y_v - y_{v-1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleMasses {
    pub k: usize,
    pub ell: usize,
    /// Indexed `u * ell + v`.
    pub masses: Vec<f64>,
}

impl FeasibleMasses {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.masses[u * self.ell + v]
    }
}

/// True iff every row and column of the support is one contiguous nonempty
/// run of 1s. Rejects arrays with an all-zero row or column.
pub fn is_convex(support: &SupportGrid) -> Result<bool> {
    if support.has_empty_line() {
        return Err(Error::InvalidSpec(
            "support array has an all-zero row or column".into(),
        ));
    }
    let contiguous = |idx: &[usize]| idx.last().unwrap() - idx[0] + 1 == idx.len();
    for u in 0..support.k() {
        if !contiguous(&support.column_support(u)) {
            return Ok(false);
        }
    }
    for v in 0..support.ell() {
        if !contiguous(&support.row_support(v)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The two reduction moves that define simple arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionRule {
    /// An extreme row holding a single 1 is removed; its height is charged
    /// to the pivot column.
    UniqueExtremeRow,
    /// An extreme column holding a single 1 is removed; its width is charged
    /// to the pivot row.
    UniqueExtremeColumn,
    /// Two adjacent fully-filled rows merge into one; the shared breakpoint
    /// disappears.
    DuplicateFullRows,
    /// Two adjacent fully-filled columns merge into one.
    DuplicateFullColumns,
}

/// One reduction move, in the coordinates of the array as it was when the
/// move applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionStep {
    pub rule: ReductionRule,
    /// Removed row/column for the unique-1 rules; lower index of the merged
    /// pair for the duplicate rules.
    pub index: usize,
    /// Column (resp. row) of the unique 1 for the unique-1 rules; unused (0)
    /// for the duplicate rules.
    pub pivot: usize,
}

pub type ReductionSequence = Vec<ReductionStep>;

fn find_reduction(grid: &SupportGrid) -> Option<ReductionStep> {
    let k = grid.k();
    let ell = grid.ell();
    // Rule 1 before rule 2, lowest index first, rows before columns.
    if ell > 1 {
        for v in [0, ell - 1] {
            let row = grid.row_support(v);
            if row.len() == 1 {
                return Some(ReductionStep {
                    rule: ReductionRule::UniqueExtremeRow,
                    index: v,
                    pivot: row[0],
                });
            }
        }
    }
    if k > 1 {
        for u in [0, k - 1] {
            let col = grid.column_support(u);
            if col.len() == 1 {
                return Some(ReductionStep {
                    rule: ReductionRule::UniqueExtremeColumn,
                    index: u,
                    pivot: col[0],
                });
            }
        }
    }
    for v in 0..ell.saturating_sub(1) {
        if (0..k).all(|u| grid.get(u, v) && grid.get(u, v + 1)) {
            return Some(ReductionStep {
                rule: ReductionRule::DuplicateFullRows,
                index: v,
                pivot: 0,
            });
        }
    }
    for u in 0..k.saturating_sub(1) {
        if (0..ell).all(|v| grid.get(u, v) && grid.get(u + 1, v)) {
            return Some(ReductionStep {
                rule: ReductionRule::DuplicateFullColumns,
                index: u,
                pivot: 0,
            });
        }
    }
    None
}

fn apply_reduction(grid: &SupportGrid, step: ReductionStep) -> SupportGrid {
    let k = grid.k();
    let ell = grid.ell();
    let mut cols: Vec<Vec<bool>> = (0..k)
        .map(|u| (0..ell).map(|v| grid.get(u, v)).collect())
        .collect();
    match step.rule {
        ReductionRule::UniqueExtremeRow => {
            for col in &mut cols {
                col.remove(step.index);
            }
        }
        ReductionRule::UniqueExtremeColumn => {
            cols.remove(step.index);
        }
        ReductionRule::DuplicateFullRows => {
            for col in &mut cols {
                col.remove(step.index + 1);
            }
        }
        ReductionRule::DuplicateFullColumns => {
            cols.remove(step.index + 1);
        }
    }
    SupportGrid::from_cells(cols).expect("reduction keeps the array nonempty")
}

/// If the (convex) array reduces to 1x1, the ordered list of moves that got
/// there; `None` otherwise. The scan order is fixed, so the result is
/// deterministic; reducibility itself is order-independent.
pub fn is_simple(support: &SupportGrid) -> Option<ReductionSequence> {
    let mut grid = support.clone();
    let mut steps = Vec::new();
    loop {
        if grid.k() == 1 && grid.ell() == 1 {
            return Some(steps);
        }
        match find_reduction(&grid) {
            Some(step) => {
                grid = apply_reduction(&grid, step);
                steps.push(step);
            }
            None => return None,
        }
    }
}

/// Decide non-degeneracy and return a strict-positivity witness.
///
/// The scaling iteration supplies the interior witness; when it stalls
/// within its budget, an exact max-flow argument on the bipartite support
/// graph decides feasibility and per-cell positivity independently.
pub fn check_nondegenerate(spec: &RegionSpec) -> Result<FeasibleMasses> {
    spec.validate()?;
    let k = spec.k();
    let ell = spec.ell();
    let min_row = (0..k)
        .map(|u| spec.row_width(u))
        .fold(f64::INFINITY, f64::min);
    let strict = WITNESS_POSITIVITY_REL * min_row;

    if let Ok(sol) = ipf::solve_r0(spec, 1e-9, ipf::DEFAULT_MAX_ITER) {
        let mut ok = true;
        for u in 0..k {
            for v in 0..ell {
                if spec.support.get(u, v) && sol.mass(u, v) <= strict {
                    ok = false;
                }
            }
        }
        if ok {
            return Ok(FeasibleMasses {
                k,
                ell,
                masses: sol.masses.clone(),
            });
        }
        return Err(Error::Degenerate(
            "scaling witness has a vanishing mass on a support cell".into(),
        ));
    }

    // Exact confirmation: source -> rows -> cols -> sink.
    let source = 0;
    let sink = 1 + k + ell;
    let row_node = |u: usize| 1 + u;
    let col_node = |v: usize| 1 + k + v;
    let mut net = FlowNetwork::new(k + ell + 2);
    for u in 0..k {
        net.add_edge(source, row_node(u), spec.row_width(u));
    }
    let mut cell_edges = Vec::new();
    for u in 0..k {
        for v in 0..ell {
            if spec.support.get(u, v) {
                let e = net.add_edge(row_node(u), col_node(v), f64::INFINITY);
                cell_edges.push((u, v, e));
            }
        }
    }
    for v in 0..ell {
        net.add_edge(col_node(v), sink, spec.col_height(v));
    }
    let total = net.max_flow(source, sink, 1e-15);
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Degenerate(format!(
            "marginals are infeasible on the support (transportable mass {total:.12})"
        )));
    }
    for &(u, v, e) in &cell_edges {
        if net.flow_on(e) > strict {
            continue;
        }
        // Zero-flow cell: positive mass is possible iff a rerouting cycle
        // exists in the residual graph.
        if !net.residual_reachable(col_node(v), row_node(u), e, 1e-14) {
            return Err(Error::Degenerate(format!(
                "cell ({u},{v}) is forced to zero mass by the marginals"
            )));
        }
    }
    // Repair the witness: push a small amount through every zero cell.
    // Later pushes can shave earlier ones, so iterate to a fixed point with
    // a shrinking push size.
    let mut bump = min_row.min((0..ell).map(|v| spec.col_height(v)).fold(f64::INFINITY, f64::min))
        / (4.0 * (cell_edges.len() as f64 + 1.0));
    for _round in 0..64 {
        let mut dirty = false;
        for &(u, v, e) in &cell_edges {
            if net.flow_on(e) > strict {
                continue;
            }
            dirty = true;
            if net.residual_reachable(col_node(v), row_node(u), e, bump) {
                net.reroute_through(e, col_node(v), row_node(u), bump * 0.5);
            }
        }
        if !dirty {
            break;
        }
        bump *= 0.5;
        if bump * 0.5 <= strict {
            return Err(Error::Degenerate(
                "witness repair did not stabilize above the positivity threshold".into(),
            ));
        }
    }
    let mut masses = vec![0.0; k * ell];
    for &(u, v, e) in &cell_edges {
        masses[u * ell + v] = net.flow_on(e);
    }
    Ok(FeasibleMasses { k, ell, masses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cols: &[&[u8]]) -> SupportGrid {
        SupportGrid::from_ints(&cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn convexity_matches_printed_examples() {
        // Cartesian layout [u][v].
        assert!(is_convex(&grid(&[&[1, 1, 0], &[1, 1, 1], &[0, 1, 0]])).unwrap());
        assert!(!is_convex(&grid(&[&[1, 1, 1], &[1, 1, 0], &[0, 1, 1]])).unwrap());
        assert!(is_convex(&grid(&[&[1]])).unwrap());
    }

    #[test]
    fn convexity_rejects_empty_lines() {
        assert!(is_convex(&grid(&[&[1, 0], &[1, 0]])).is_err());
        assert!(is_convex(&grid(&[&[0, 0], &[1, 1]])).is_err());
    }

    #[test]
    fn visual_rows_round_trip_and_flip() {
        // Top row (1,1,0) must land at v = 2.
        let g = SupportGrid::from_visual_rows(&[
            vec![1, 1, 0],
            vec![1, 1, 1],
            vec![0, 1, 1],
        ])
        .unwrap();
        assert!(!g.get(2, 2));
        assert!(!g.get(0, 0));
        assert!(g.get(0, 2));
        assert_eq!(
            g.to_visual_rows(),
            vec![vec![1, 1, 0], vec![1, 1, 1], vec![0, 1, 1]]
        );
    }

    #[test]
    fn simple_examples_from_reduction_rules() {
        // Reducible array (visual rows 001/111/110 in some orientation).
        let simple = grid(&[&[0, 0, 1], &[1, 1, 1], &[1, 1, 0]]);
        assert!(is_convex(&simple).unwrap());
        let seq = is_simple(&simple).expect("reducible");
        assert!(!seq.is_empty());
        // The two non-simple convex 3x3 arrays.
        let frame = grid(&[&[1, 1, 0], &[1, 1, 1], &[0, 1, 1]]);
        assert!(is_convex(&frame).unwrap());
        assert!(is_simple(&frame).is_none());
    }

    #[test]
    fn every_2x2_convex_array_is_simple() {
        for bits in 0..16u32 {
            let cols = vec![
                vec![bits & 1 != 0, bits & 2 != 0],
                vec![bits & 4 != 0, bits & 8 != 0],
            ];
            let Ok(g) = SupportGrid::from_cells(cols) else {
                continue;
            };
            match is_convex(&g) {
                Ok(true) => assert!(is_simple(&g).is_some(), "bits {bits:04b}"),
                _ => {}
            }
        }
    }

    #[test]
    fn nondegenerate_staircase_witness() {
        // Hole in the top-right cell; x=(0,1/2,1), y=(0,3/4,1).
        let spec = RegionSpec::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.75, 1.0],
            grid(&[&[1, 1], &[1, 0]]),
            0.0,
        )
        .unwrap();
        let b = check_nondegenerate(&spec).unwrap();
        assert!((b.get(0, 0) - 0.25).abs() < 1e-9);
        assert!((b.get(0, 1) - 0.25).abs() < 1e-9);
        assert!((b.get(1, 0) - 0.5).abs() < 1e-9);
        assert_eq!(b.get(1, 1), 0.0);
    }

    #[test]
    fn degenerate_footnote_example() {
        // x = y = (0, 1/2, 1) with the same staircase support: the bottom-left
        // cell is forced to zero mass although it belongs to the support.
        let spec = RegionSpec::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 0.5, 1.0],
            grid(&[&[1, 1], &[1, 0]]),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            check_nondegenerate(&spec),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn all_ones_witness_is_product_measure() {
        let spec = RegionSpec::new(
            vec![0.0, 0.3, 1.0],
            vec![0.0, 0.6, 1.0],
            grid(&[&[1, 1], &[1, 1]]),
            0.0,
        )
        .unwrap();
        let b = check_nondegenerate(&spec).unwrap();
        for (u, w) in [(0usize, 0.3), (1, 0.7)] {
            for (v, h) in [(0usize, 0.6), (1, 0.4)] {
                assert!((b.get(u, v) - w * h).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_parses_and_flips() {
        let cfg = RegionConfig::parse(
            r#"{"x":[0.0,0.5,1.0],"y":[0.0,0.75,1.0],"I":[[1,0],[1,1]],"r":1.0}"#,
        )
        .unwrap();
        let spec = cfg.into_spec().unwrap();
        assert!(spec.support.get(0, 0));
        assert!(spec.support.get(0, 1));
        assert!(spec.support.get(1, 0));
        assert!(!spec.support.get(1, 1));
    }
}
