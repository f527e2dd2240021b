//! Uniform cell-centered spatial discretization, grid functions, ball index
//! sets and windowed norms.
//!
//! Cells have centers `x_i = a + (i + 1/2) h` with `h = (b - a) / M`. Ball
//! membership is decided by the cell-center test; the induced `O(h)` window
//! error is reported by the estimate harness alongside each result, not
//! modeled here. All types are immutable after construction.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum admissible cell count for a computational domain.
pub const MIN_CELLS: usize = 8;

/// A bounded 1D computational domain `(a, b)` split into `cells` equal cells.
///
/// `dim` is carried symbolically through exponent formulas; the mesh itself
/// is one-dimensional and construction rejects `dim != 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_dim")]
    pub dim: u32,
    pub cells: usize,
}

fn default_dim() -> u32 {
    1
}

impl Domain {
    /// Builds a domain, validating `a < b`, `cells >= 8` and `dim == 1`.
    pub fn build(a: f64, b: f64, dim: u32, cells: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "endpoints must be finite, got ({a}, {b})"
            )));
        }
        if a >= b {
            return Err(Error::InvalidDomain(format!(
                "left endpoint must satisfy a < b, got ({a}, {b})"
            )));
        }
        if cells < MIN_CELLS {
            return Err(Error::InvalidDomain(format!(
                "cell count too small: {cells} < {MIN_CELLS}"
            )));
        }
        if dim != 1 {
            return Err(Error::InvalidDomain(format!(
                "the mesh is 1D; exponent formulas take N as a parameter, got dim = {dim}"
            )));
        }
        Ok(Domain { a, b, dim, cells })
    }

    pub fn validate(&self) -> Result<()> {
        Self::build(self.a, self.b, self.dim, self.cells).map(|_| ())
    }

    /// Cell width `h = (b - a) / M`.
    pub fn cell_width(&self) -> f64 {
        (self.b - self.a) / self.cells as f64
    }

    /// Cell measure `h^N` (equals `cell_width` for the 1D mesh).
    pub fn cell_measure(&self) -> f64 {
        self.cell_width().powi(self.dim as i32)
    }

    /// Center of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.cell_width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        self.b - self.a
    }

    /// Indices of cells whose centers lie in the open ball `B_rho(x0)`.
    pub fn ball_indices(&self, x0: f64, rho: f64) -> Result<Vec<usize>> {
        if !(rho > 0.0) || !rho.is_finite() || !x0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ball requires finite x0 and rho > 0, got x0 = {x0}, rho = {rho}"
            )));
        }
        Ok((0..self.cells)
            .filter(|&i| (self.center(i) - x0).abs() < rho)
            .collect())
    }

    /// Complement of the ball within the grid.
    pub fn ball_complement_indices(&self, x0: f64, rho: f64) -> Result<Vec<usize>> {
        if !(rho > 0.0) || !rho.is_finite() || !x0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ball requires finite x0 and rho > 0, got x0 = {x0}, rho = {rho}"
            )));
        }
        Ok((0..self.cells)
            .filter(|&i| (self.center(i) - x0).abs() >= rho)
            .collect())
    }

    /// True when the closed ball `|x - x0| <= rho` is contained in `(a, b)`.
    pub fn contains_ball(&self, x0: f64, rho: f64) -> bool {
        x0 - rho >= self.a && x0 + rho <= self.b
    }
}

/// One time slice of the solution, sampled at cell centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "grid function entries must be finite".into(),
            ));
        }
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "snapshot time must be finite and nonnegative, got {time}"
            )));
        }
        Ok(GridFunction { values, time })
    }

    pub fn zeros(len: usize, time: f64) -> Self {
        GridFunction {
            values: vec![0.0; len],
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Pointwise positive part, negative part or absolute value.
    ///
    /// The identity `u = part(+) - part(-)` holds exactly.
    pub fn pointwise_part(&self, sign: SignPart) -> GridFunction {
        let values = self
            .values
            .iter()
            .map(|&v| match sign {
                SignPart::Positive => v.max(0.0),
                SignPart::Negative => (-v).max(0.0),
                SignPart::Absolute => v.abs(),
            })
            .collect();
        GridFunction {
            values,
            time: self.time,
        }
    }

    /// Writes `x,value` rows; floats use the shortest representation that
    /// round-trips bit-exactly.
    pub fn write_csv<W: Write>(&self, domain: &Domain, mut out: W) -> Result<()> {
        if self.values.len() != domain.cells {
            return Err(Error::DimensionMismatch {
                expected: domain.cells,
                got: self.values.len(),
            });
        }
        let mut buf = String::with_capacity(self.values.len() * 24);
        buf.push_str("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(buf, "{},{}", domain.center(i), v)
                .map_err(|e| Error::Serialization(e.to_string()))?;
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, time: f64) -> Result<Self> {
        let mut values = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "x,value" {
                    return Err(Error::Serialization(format!(
                        "expected header 'x,value', got '{line}'"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (_, v) = line.split_once(',').ok_or_else(|| {
                Error::Serialization(format!("malformed csv row {lineno}: '{line}'"))
            })?;
            values.push(v.trim().parse::<f64>().map_err(|e| {
                Error::Serialization(format!("row {lineno}: bad float '{v}': {e}"))
            })?);
        }
        GridFunction::new(values, time)
    }

    /// JSON snapshot `{"time": .., "values": [..]}` with round-trip floats.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let gf: GridFunction = serde_json::from_str(json)?;
        GridFunction::new(gf.values, gf.time)
    }

    pub fn save_csv(&self, domain: &Domain, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(domain, std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: &Path, time: f64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, time)
    }
}

/// Selector for [`GridFunction::pointwise_part`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPart {
    Positive,
    Negative,
    Absolute,
}

/// Space-time window `(x0, rho, t1, t2)` parameterizing every windowed
/// functional and estimate evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallWindow {
    pub x0: f64,
    pub rho: f64,
    pub t1: f64,
    pub t2: f64,
}

impl BallWindow {
    pub fn new(x0: f64, rho: f64, t1: f64, t2: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Window(format!("radius must be positive, got {rho}")));
        }
        if !(t1 >= 0.0) || t2 < t1 {
            return Err(Error::Window(format!(
                "times must satisfy 0 <= t1 <= t2, got ({t1}, {t2})"
            )));
        }
        Ok(BallWindow { x0, rho, t1, t2 })
    }
}

/// Windowed `L^r` norm `(sum_{i in idx} h^N |u_i|^r)^{1/r}`; 0 on an empty set.
pub fn windowed_lr_norm(
    domain: &Domain,
    gf: &GridFunction,
    indices: &[usize],
    r: f64,
) -> Result<f64> {
    Ok(windowed_lr_integral(domain, gf, indices, r)?.powf(1.0 / r))
}

/// Raw integral `sum_{i in idx} h^N |u_i|^r` (no root), used by the estimate
/// evaluators.
pub fn windowed_lr_integral(
    domain: &Domain,
    gf: &GridFunction,
    indices: &[usize],
    r: f64,
) -> Result<f64> {
    if r < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "integrability exponent must satisfy r >= 1, got {r}"
        )));
    }
    let h = domain.cell_measure();
    Ok(indices
        .iter()
        .map(|&i| h * gf.values[i].abs().powf(r))
        .sum())
}

/// Signed integral `sum_{i in idx} h^N u_i` (the windowed mass).
pub fn windowed_mass(domain: &Domain, gf: &GridFunction, indices: &[usize]) -> f64 {
    let h = domain.cell_measure();
    indices.iter().map(|&i| h * gf.values[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_rejects_small_and_inverted() {
        assert!(Domain::build(-1.0, 1.0, 1, 4).is_err());
        assert!(Domain::build(1.0, -1.0, 1, 16).is_err());
        assert!(Domain::build(f64::NAN, 1.0, 1, 16).is_err());
        assert!(Domain::build(-1.0, 1.0, 2, 16).is_err());
    }

    #[test]
    fn cell_centers_match_formula() {
        let d = Domain::build(-1.0, 1.0, 1, 8).unwrap();
        assert_eq!(d.cell_width(), 0.25);
        assert_eq!(d.center(0), -0.875);
        let d = Domain::build(0.0, 2.0, 1, 100).unwrap();
        assert!((d.center(99) - 1.99).abs() < 1e-14);
    }

    #[test]
    fn ball_indices_examples() {
        let d = Domain::build(-1.0, 1.0, 1, 8).unwrap();
        assert_eq!(d.ball_indices(0.0, 0.3).unwrap(), vec![3, 4]);
        assert_eq!(
            d.ball_indices(0.0, 10.0).unwrap(),
            (0..8).collect::<Vec<_>>()
        );
        // window smaller than a cell, centered off the grid: empty is legal
        let idx = d.ball_indices(0.0, 0.01).unwrap();
        assert!(idx.is_empty());
        let gf = GridFunction::new(vec![1.0; 8], 0.0).unwrap();
        assert_eq!(windowed_lr_norm(&d, &gf, &idx, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn lr_norm_examples() {
        let d = Domain::build(-1.0, 1.0, 1, 8).unwrap();
        let zero = GridFunction::zeros(8, 0.0);
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(windowed_lr_norm(&d, &zero, &all, 1.0).unwrap(), 0.0);
        let one = GridFunction::new(vec![1.0; 8], 0.0).unwrap();
        assert!((windowed_lr_norm(&d, &one, &all, 1.0).unwrap() - 2.0).abs() < 1e-14);
        // u = 2 with r = 2 over a window of measure 1: (int 4 dx)^(1/2) = 2
        let two = GridFunction::new(vec![2.0; 8], 0.0).unwrap();
        let win: Vec<usize> = (0..4).collect(); // 4 cells * 0.25 = measure 1
        assert!((windowed_lr_norm(&d, &two, &win, 2.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(windowed_lr_norm(&d, &two, &win, 0.5).is_err());
    }

    #[test]
    fn pointwise_parts() {
        let gf = GridFunction::new(vec![-1.0, 2.0], 0.0).unwrap();
        assert_eq!(gf.pointwise_part(SignPart::Positive).values, vec![0.0, 2.0]);
        assert_eq!(gf.pointwise_part(SignPart::Negative).values, vec![1.0, 0.0]);
        assert_eq!(gf.pointwise_part(SignPart::Absolute).values, vec![1.0, 2.0]);
        let nonneg = GridFunction::new(vec![0.5, 0.0, 3.0], 0.0).unwrap();
        assert!(nonneg
            .pointwise_part(SignPart::Negative)
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn csv_json_round_trip_bit_exact() {
        let d = Domain::build(-1.0, 1.0, 1, 8).unwrap();
        let vals: Vec<f64> = (0..8)
            .map(|i| (i as f64 * 0.3712).sin() * 1.0e-7 + 1.0 / 3.0)
            .collect();
        let gf = GridFunction::new(vals, 0.125).unwrap();
        let mut buf = Vec::new();
        gf.write_csv(&d, &mut buf).unwrap();
        let back = GridFunction::read_csv(buf.as_slice(), 0.125).unwrap();
        assert_eq!(back.values, gf.values);
        let json = gf.to_json().unwrap();
        let back = GridFunction::from_json(&json).unwrap();
        assert_eq!(back, gf);
    }

    fn arb_grid_fn() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 16..32)
    }

    proptest! {
        // nested index sets give monotone norms
        #[test]
        fn norm_monotone_in_window(vals in arb_grid_fn(), r in 1.0f64..4.0) {
            let m = vals.len();
            let d = Domain::build(0.0, 1.0, 1, m).unwrap();
            let gf = GridFunction::new(vals, 0.0).unwrap();
            let small: Vec<usize> = (0..m / 2).collect();
            let big: Vec<usize> = (0..m).collect();
            let ns = windowed_lr_norm(&d, &gf, &small, r).unwrap();
            let nb = windowed_lr_norm(&d, &gf, &big, r).unwrap();
            prop_assert!(ns <= nb + 1e-12);
        }

        // Hoelder: int |u|^r1 <= (int |u|^r2)^(r1/r2) |W|^(1 - r1/r2) for r1 <= r2
        #[test]
        fn hoelder_consistency(vals in arb_grid_fn(), r1 in 1.0f64..3.0, bump in 0.0f64..2.0) {
            let r2 = r1 + bump;
            let m = vals.len();
            let d = Domain::build(0.0, 1.0, 1, m).unwrap();
            let gf = GridFunction::new(vals, 0.0).unwrap();
            let win: Vec<usize> = (0..m).collect();
            let meas = d.cell_measure() * win.len() as f64;
            let i1 = windowed_lr_integral(&d, &gf, &win, r1).unwrap();
            let i2 = windowed_lr_integral(&d, &gf, &win, r2).unwrap();
            let bound = i2.powf(r1 / r2) * meas.powf(1.0 - r1 / r2);
            prop_assert!(i1 <= bound * (1.0 + 1e-10) + 1e-12);
        }

        // ball index sets are monotone in the radius
        #[test]
        fn ball_monotone_in_radius(x0 in -1.0f64..1.0, r1 in 0.01f64..1.0, grow in 0.0f64..1.0) {
            let d = Domain::build(-1.0, 1.0, 1, 64).unwrap();
            let small = d.ball_indices(x0, r1).unwrap();
            let big = d.ball_indices(x0, r1 + grow).unwrap();
            for i in &small {
                prop_assert!(big.contains(i));
            }
        }

        // parts reconstruct the function
        #[test]
        fn parts_reconstruct(vals in arb_grid_fn()) {
            let gf = GridFunction::new(vals, 0.0).unwrap();
            let pos = gf.pointwise_part(SignPart::Positive);
            let neg = gf.pointwise_part(SignPart::Negative);
            for i in 0..gf.len() {
                prop_assert!((pos.values[i] - neg.values[i] - gf.values[i]).abs() < 1e-15);
            }
        }
    }
}
