//! Two-dimensional DFT on grids, rows then columns.
//!
//! Forward is unnormalized, `X(f) = Σ x(n) e^{-j2π f·n/N}`; the inverse
//! divides by `H·W`.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::field::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn transform_rows(data: &mut [Complex64], width: usize, direction: Direction) {
    let mut planner = FftPlanner::new();
    let fft = match direction {
        Direction::Forward => planner.plan_fft_forward(width),
        Direction::Inverse => planner.plan_fft_inverse(width),
    };
    data.par_chunks_mut(width).for_each(|row| fft.process(row));
}

fn transpose(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for r in 0..height {
        for c in 0..width {
            out[c * height + r] = data[r * width + c];
        }
    }
    out
}

pub fn fft2(grid: &Grid<Complex64>, direction: Direction) -> Grid<Complex64> {
    let (h, w) = grid.shape();
    let mut data = grid.data().to_vec();
    transform_rows(&mut data, w, direction);
    let mut t = transpose(&data, h, w);
    transform_rows(&mut t, h, direction);
    let mut data = transpose(&t, w, h);
    if direction == Direction::Inverse {
        let scale = 1.0 / (h * w) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }
    Grid::new(h, w, data).expect("shape preserved")
}

/// Signed frequency index of bin `k` out of `n`: `0, 1, …, -1`.
pub fn frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
