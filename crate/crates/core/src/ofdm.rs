//! OFDM numerology and the frequency-domain resource grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{CMatrix, ZERO};
use crate::units::SPEED_OF_LIGHT;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub subcarriers: usize,
    pub symbols: usize,
    /// Hz
    pub subcarrier_spacing: f64,
    /// Total symbol duration including cyclic prefix, seconds.
    pub symbol_duration: f64,
    /// Cyclic prefix, seconds.
    pub cp_duration: f64,
}

impl OfdmParams {
    pub fn new(subcarriers: usize, symbols: usize, subcarrier_spacing: f64, cp_duration: f64) -> Result<Self> {
        let p = Self {
            subcarriers,
            symbols,
            subcarrier_spacing,
            symbol_duration: 1.0 / subcarrier_spacing + cp_duration,
            cp_duration,
        };
        p.validate()?;
        Ok(p)
    }

    /// 100 MHz NR carrier at 120 kHz spacing: 66 PRBs (792 subcarriers),
    /// 8.92 us symbols, one 14-symbol slot.
    pub fn nr_fr2() -> Self {
        let df = 120e3;
        Self::new(792, 14, df, 8.92e-6 - 1.0 / df).expect("valid numerology")
    }

    pub fn with_symbols(mut self, symbols: usize) -> Self {
        self.symbols = symbols;
        self
    }

    pub fn with_subcarriers(mut self, subcarriers: usize) -> Self {
        self.subcarriers = subcarriers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols == 0 {
            return Err(invalid("OFDM grid needs at least one subcarrier and one symbol"));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.cp_duration >= 0.0) {
            return Err(invalid("subcarrier spacing must be positive and cyclic prefix non-negative"));
        }
        let expect = 1.0 / self.subcarrier_spacing + self.cp_duration;
        if (self.symbol_duration - expect).abs() > 1e-12 * expect {
            return Err(invalid(format!(
                "symbol duration {} s differs from 1/df + T_cp = {} s",
                self.symbol_duration, expect
            )));
        }
        Ok(())
    }

    /// Delay resolution of the likelihood search, seconds.
    pub fn delay_bin(&self) -> f64 {
        1.0 / (self.subcarriers as f64 * self.subcarrier_spacing)
    }

    /// Doppler resolution, Hz.
    pub fn doppler_bin(&self) -> f64 {
        1.0 / (self.symbols as f64 * self.symbol_duration)
    }

    /// Monostatic range resolution `c / (2 P df)`, metres.
    pub fn range_bin(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay_bin() / 2.0
    }

    pub fn velocity_bin(&self, wavelength: f64) -> f64 {
        self.doppler_bin() * wavelength / 2.0
    }

    pub fn cells(&self) -> usize {
        self.subcarriers * self.symbols
    }
}

/// Complex grid indexed by (subcarrier, symbol, space index).
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmGrid {
    subcarriers: usize,
    symbols: usize,
    space_dim: usize,
    data: Vec<Complex64>,
}

impl OfdmGrid {
    pub fn zeros(subcarriers: usize, symbols: usize, space_dim: usize) -> Self {
        Self {
            subcarriers,
            symbols,
            space_dim,
            data: vec![ZERO; subcarriers * symbols * space_dim],
        }
    }

    /// Build from a cell-major buffer: cell `(p, q)` occupies
    /// `data[(q * P + p) * dim ..][..dim]`.
    pub fn from_vec(subcarriers: usize, symbols: usize, space_dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != subcarriers * symbols * space_dim {
            return Err(invalid(format!(
                "buffer of {} entries does not fit a {subcarriers}x{symbols}x{space_dim} grid",
                data.len()
            )));
        }
        Ok(Self { subcarriers, symbols, space_dim, data })
    }

    pub fn from_fn(
        subcarriers: usize,
        symbols: usize,
        space_dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut g = Self::zeros(subcarriers, symbols, space_dim);
        for q in 0..symbols {
            for p in 0..subcarriers {
                let cell = g.cell_mut(p, q);
                for (s, z) in cell.iter_mut().enumerate() {
                    *z = f(p, q, s);
                }
            }
        }
        g
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn cells(&self) -> usize {
        self.subcarriers * self.symbols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < self.subcarriers && q < self.symbols);
        (q * self.subcarriers + p) * self.space_dim
    }

    #[inline]
    pub fn cell(&self, p: usize, q: usize) -> &[Complex64] {
        let o = self.offset(p, q);
        &self.data[o..o + self.space_dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, p: usize, q: usize) -> &mut [Complex64] {
        let o = self.offset(p, q);
        let d = self.space_dim;
        &mut self.data[o..o + d]
    }

    /// Cells in storage order (symbol-major, subcarrier-minor).
    pub fn iter_cells(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.space_dim.max(1))
    }

    pub fn same_shape(&self, other: &OfdmGrid) -> bool {
        self.subcarriers == other.subcarriers && self.symbols == other.symbols && self.space_dim == other.space_dim
    }

    pub fn matches(&self, ofdm: &OfdmParams) -> bool {
        self.subcarriers == ofdm.subcarriers && self.symbols == ofdm.symbols
    }

    /// Average `|entry|^2` over cells, summed over the space index.
    pub fn mean_cell_power(&self) -> f64 {
        if self.cells() == 0 {
            return 0.0;
        }
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.cells() as f64
    }

    /// Apply `m` (rows x space_dim) to every cell.
    pub fn map_matrix(&self, m: &CMatrix) -> Result<OfdmGrid> {
        if m.ncols() != self.space_dim {
            return Err(invalid(format!(
                "matrix with {} columns applied to {}-dimensional grid",
                m.ncols(),
                self.space_dim
            )));
        }
        let rows = m.nrows();
        let mut out = OfdmGrid::zeros(self.subcarriers, self.symbols, rows);
        for (src, dst) in self.iter_cells().zip(out.data.chunks_exact_mut(rows.max(1))) {
            for (r, d) in dst.iter_mut().enumerate() {
                let mut acc = ZERO;
                for (c, &x) in src.iter().enumerate() {
                    acc += m[(r, c)] * x;
                }
                *d = acc;
            }
        }
        Ok(out)
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &OfdmGrid) -> Result<OfdmGrid> {
        if !self.same_shape(other) {
            return Err(invalid("grid shapes differ"));
        }
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        Ok(OfdmGrid { data, ..*self })
    }

    pub fn scale(&self, k: Complex64) -> OfdmGrid {
        OfdmGrid {
            data: self.data.iter().map(|z| z * k).collect(),
            ..*self
        }
    }

    /// Largest absolute difference to `other` (infinite on shape mismatch).
    pub fn max_abs_diff(&self, other: &OfdmGrid) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}
