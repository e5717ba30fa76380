//! Grids of complex amplitudes and phases, the shift operator, and the SRWF
//! binary format.
//!
//! Storage is row-major and 0-based. The centered index view used by the
//! shift-graph theory (`-⌊N/2⌋ ..= ⌊N/2⌋-1`) maps onto storage with an offset
//! of `⌊N/2⌋`, so the default reference pixel is `(H/2, W/2)`.

pub mod srwf;

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major 2D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Complex amplitudes `|x| e^{jφ}`.
pub type ComplexField = Grid<Complex64>;

/// Boolean pixel mask.
pub type Mask = Grid<bool>;

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape {
                height,
                width,
                reason: "dimensions must be at least 1",
            });
        }
        match height.checked_mul(width) {
            Some(n) if n == data.len() => Ok(Self {
                height,
                width,
                data,
            }),
            _ => Err(Error::InvalidShape {
                height,
                width,
                reason: "data length does not match height x width",
            }),
        }
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be nonzero");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&T> {
        if row < self.height && col < self.width {
            Some(&self.data[row * self.width + col])
        } else {
            None
        }
    }

    /// Signed lookup; `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, row: i64, col: i64) -> Option<&T> {
        if row < 0 || col < 0 {
            return None;
        }
        self.get(row as usize, col as usize)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Result<Grid<V>> {
        self.ensure_same_shape(other)?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::from_fn(height, width, |_, _| value.clone())
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (row, col): (usize, usize)) -> &T {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        &self.data[row * self.width + col]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut T {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        &mut self.data[row * self.width + col]
    }
}

impl Grid<Complex64> {
    /// Complex field constructor that also rejects NaN/Inf samples.
    pub fn from_complex(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        let grid = Self::new(height, width, data)?;
        grid.ensure_finite()?;
        Ok(grid)
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|z| !z.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn amplitude(&self) -> Grid<f64> {
        self.map(|z| z.norm())
    }

    pub fn angle(&self) -> Grid<f64> {
        self.map(|z| z.arg())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `amplitude ⊙ e^{j phase}`.
    pub fn from_polar(amplitude: &Grid<f64>, phase: &Grid<f64>) -> Result<Self> {
        let field = amplitude.zip_map(phase, |&a, &p| Complex64::from_polar(a, p))?;
        field.ensure_finite()?;
        Ok(field)
    }
}

impl Grid<f64> {
    pub fn from_real(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let grid = Self::new(height, width, data)?;
        grid.ensure_finite()?;
        Ok(grid)
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Wraps a phase into `[-π, π)`.
#[inline]
pub fn wrap_phase(x: f64) -> f64 {
    let w = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    // floor can leave w == π after rounding for x just below an odd multiple of π
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Per-pixel phase in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap {
    grid: Grid<f64>,
    wrapped: bool,
}

impl PhaseMap {
    /// Wraps every value into `[-π, π)`.
    pub fn wrapped(grid: Grid<f64>) -> Result<Self> {
        grid.ensure_finite()?;
        Ok(Self {
            grid: grid.map(|&v| wrap_phase(v)),
            wrapped: true,
        })
    }

    pub fn unwrapped(grid: Grid<f64>) -> Result<Self> {
        grid.ensure_finite()?;
        Ok(Self {
            grid,
            wrapped: false,
        })
    }

    pub fn is_wrapped(&self) -> bool {
        self.wrapped
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn to_wrapped(&self) -> PhaseMap {
        PhaseMap {
            grid: self.grid.map(|&v| wrap_phase(v)),
            wrapped: true,
        }
    }

    pub fn phasors(&self) -> Grid<Complex64> {
        self.grid.map(|&p| Complex64::from_polar(1.0, p))
    }
}

/// Integer pixel displacement `(dy, dx)`; never `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i32; 2]", into = "[i32; 2]")]
pub struct ShiftVector {
    dy: i32,
    dx: i32,
}

impl ShiftVector {
    pub fn new(dy: i32, dx: i32) -> Result<Self> {
        if dy == 0 && dx == 0 {
            return Err(Error::InvalidShift {
                dy: 0,
                dx: 0,
                reason: "zero shift; use the field itself for the identity".into(),
            });
        }
        Ok(Self { dy, dx })
    }

    pub fn horizontal(magnitude: i32) -> Result<Self> {
        Self::new(0, magnitude)
    }

    pub fn vertical(magnitude: i32) -> Result<Self> {
        Self::new(magnitude, 0)
    }

    pub fn dy(&self) -> i32 {
        self.dy
    }

    pub fn dx(&self) -> i32 {
        self.dx
    }

    pub fn reversed(&self) -> Self {
        Self {
            dy: -self.dy,
            dx: -self.dx,
        }
    }

    pub fn is_axis_aligned(&self) -> bool {
        (self.dy == 0) != (self.dx == 0)
    }

    /// Errors unless `|dy| < height` and `|dx| < width`.
    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.dy.unsigned_abs() as usize >= height || self.dx.unsigned_abs() as usize >= width {
            return Err(Error::InvalidShift {
                dy: self.dy as i64,
                dx: self.dx as i64,
                reason: format!("magnitude does not fit a {height}x{width} grid"),
            });
        }
        Ok(())
    }
}

impl TryFrom<[i32; 2]> for ShiftVector {
    type Error = Error;

    fn try_from([dy, dx]: [i32; 2]) -> Result<Self> {
        Self::new(dy, dx)
    }
}

impl From<ShiftVector> for [i32; 2] {
    fn from(v: ShiftVector) -> Self {
        [v.dy, v.dx]
    }
}

impl fmt::Display for ShiftVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dy, self.dx)
    }
}

/// Ordered, duplicate-free list of measurement shifts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ShiftVector>", into = "Vec<ShiftVector>")]
pub struct ShiftSet {
    shifts: Vec<ShiftVector>,
}

impl ShiftSet {
    pub fn new(shifts: Vec<ShiftVector>) -> Result<Self> {
        for (i, s) in shifts.iter().enumerate() {
            if shifts[..i].contains(s) {
                return Err(Error::DuplicateShift {
                    dy: s.dy as i64,
                    dx: s.dx as i64,
                });
            }
        }
        Ok(Self { shifts })
    }

    /// One horizontal and one vertical vector per magnitude, in that order.
    pub fn axis_pairs(magnitudes: &[u32]) -> Result<Self> {
        let mut shifts = Vec::with_capacity(2 * magnitudes.len());
        for &m in magnitudes {
            shifts.push(ShiftVector::horizontal(m as i32)?);
            shifts.push(ShiftVector::vertical(m as i32)?);
        }
        Self::new(shifts)
    }

    pub fn shifts(&self) -> &[ShiftVector] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ShiftVector> {
        self.shifts.iter()
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.shifts.iter().all(ShiftVector::is_axis_aligned)
    }

    /// Distinct absolute magnitudes of the vertical and horizontal shifts,
    /// in first-appearance order.
    pub fn axis_magnitudes(&self) -> AxisMagnitudes {
        let mut out = AxisMagnitudes::default();
        for s in &self.shifts {
            let (list, m) = match (s.dy, s.dx) {
                (0, dx) => (&mut out.horizontal, dx.unsigned_abs()),
                (dy, 0) => (&mut out.vertical, dy.unsigned_abs()),
                _ => continue,
            };
            if !list.contains(&m) {
                list.push(m);
            }
        }
        out
    }

    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        self.shifts.iter().try_for_each(|s| s.check_fits(height, width))
    }

    /// Compact CSV-safe label: `16;17` when both axes carry the same
    /// magnitudes, otherwise the explicit `dy:dx` list.
    pub fn label(&self) -> String {
        let mags = self.axis_magnitudes();
        if self.is_axis_aligned() && mags.horizontal == mags.vertical {
            return join(&mags.horizontal);
        }
        self.shifts
            .iter()
            .map(|s| format!("{}:{}", s.dy, s.dx))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn join(values: &[u32]) -> String {
    values
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

impl TryFrom<Vec<ShiftVector>> for ShiftSet {
    type Error = Error;

    fn try_from(v: Vec<ShiftVector>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ShiftSet> for Vec<ShiftVector> {
    fn from(s: ShiftSet) -> Self {
        s.shifts
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AxisMagnitudes {
    pub vertical: Vec<u32>,
    pub horizontal: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    Circular,
    ZeroFill,
}

/// `output(i, j) = input(i - dy, j - dx)`; circular wraps indices, zero-fill
/// writes the default value outside.
pub fn shift<T: Copy + Default>(field: &Grid<T>, delta: ShiftVector, mode: BoundaryMode) -> Result<Grid<T>> {
    translate(field, -(delta.dy as i64), -(delta.dx as i64), mode, delta)
}

/// The interferometer's shift operator: `output(i, j) = input(i + dy, j + dx)`,
/// i.e. `shift(field, -delta)`. Pixel `i` is then paired with `i + Δ`, which
/// is the pairing [`validity_mask`] describes.
pub fn sample_shift<T: Copy + Default>(
    field: &Grid<T>,
    delta: ShiftVector,
    mode: BoundaryMode,
) -> Result<Grid<T>> {
    translate(field, delta.dy as i64, delta.dx as i64, mode, delta)
}

fn translate<T: Copy + Default>(
    field: &Grid<T>,
    oy: i64,
    ox: i64,
    mode: BoundaryMode,
    delta: ShiftVector,
) -> Result<Grid<T>> {
    let (h, w) = field.shape();
    delta.check_fits(h, w)?;
    let (hi, wi) = (h as i64, w as i64);
    Ok(Grid::from_fn(h, w, |r, c| {
        let sr = r as i64 + oy;
        let sc = c as i64 + ox;
        match mode {
            BoundaryMode::Circular => field[(sr.rem_euclid(hi) as usize, sc.rem_euclid(wi) as usize)],
            BoundaryMode::ZeroFill => field.get_signed(sr, sc).copied().unwrap_or_default(),
        }
    }))
}

/// True exactly where both `(i, j)` and `(i + dy, j + dx)` lie inside the grid.
pub fn validity_mask(height: usize, width: usize, delta: ShiftVector) -> Mask {
    let (h, w) = (height as i64, width as i64);
    let (dy, dx) = (delta.dy as i64, delta.dx as i64);
    Grid::from_fn(height, width, |r, c| {
        let (r2, c2) = (r as i64 + dy, c as i64 + dx);
        (0..h).contains(&r2) && (0..w).contains(&c2)
    })
}

/// Stored index of the centered origin.
pub fn centered_origin(height: usize, width: usize) -> (usize, usize) {
    (height / 2, width / 2)
}
