use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sampling::GridSpec;

/// Samples on the grid `(2 r_s / N) · I_N³`, stored with `j1` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: GridSpec,
    data: Vec<T>,
}

impl<T: Clone + Default> Volume<T> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { data: vec![T::default(); grid.len()], grid }
    }
}

impl<T> Volume<T> {
    pub fn from_vec(grid: GridSpec, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "volume of N = {} needs {} values, got {}",
                grid.n,
                grid.len(),
                data.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n
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

    pub fn get(&self, j: [i64; 3]) -> Option<&T> {
        self.grid.flat_index(j).map(|i| &self.data[i])
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Volume<U> {
        Volume { grid: self.grid, data: self.data.iter().map(f).collect() }
    }
}

impl<T: Copy> Volume<T> {
    /// The plane at `j1 = index - N/2`, as `N × N` values with `j2` slowest.
    pub fn slice(&self, index: usize) -> Result<Vec<T>> {
        let n = self.grid.n;
        if index >= n {
            return Err(Error::invalid(format!("slice index {index} outside 0..{n}")));
        }
        Ok(self.data[index * n * n..(index + 1) * n * n].to_vec())
    }
}

impl Volume<f64> {
    pub fn to_complex(&self) -> Volume<Complex64> {
        self.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("volume value at flat index {i}"))),
            None => Ok(()),
        }
    }
}

impl Volume<Complex64> {
    pub fn real_part(&self) -> Volume<f64> {
        self.map(|v| v.re)
    }
}
