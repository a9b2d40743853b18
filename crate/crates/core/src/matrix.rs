//! Dense row-major matrices and the handful of products and divergences the
//! solvers are built from.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floor applied to every divisor and every log argument.
pub const EPS: f64 = 1e-12;

/// Default initialisation range for factor matrices.
pub const INIT_LOW: f64 = 0.01;
pub const INIT_HIGH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// General constructor; entries may be signed.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} with {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn new_nonneg(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new(rows, cols, data)?;
        m.check_nonneg()?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Uniform `[low, high)` entries from a ChaCha8 stream seeded with `seed`.
    pub fn random_init(rows: usize, cols: usize, seed: u64, low: f64, high: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(rows, cols, &mut rng, low, high)
    }

    pub fn random_with<R: rand::Rng + ?Sized>(
        rows: usize,
        cols: usize,
        rng: &mut R,
        low: f64,
        high: f64,
    ) -> Result<Self> {
        if !(low > 0.0 && low < high && high.is_finite()) {
            return Err(Error::InvalidRange { low, high });
        }
        let dist = Uniform::new(low, high);
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Self::new(rows, cols, data)
    }

    pub fn check_nonneg(&self) -> Result<()> {
        match self.data.iter().position(|&x| x < 0.0 || !x.is_finite()) {
            Some(index) => Err(Error::NegativeEntry { index }),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                format!("{} rows on the right operand", self.cols),
                format!("{}", other.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(
                format!("{} columns on the right operand", self.cols),
                format!("{}", other.cols),
            ));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            dot(self.row(i), other.row(j))
        }))
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(
                format!("{} rows on the right operand", self.rows),
                format!("{}", other.rows),
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let right = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(right) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Binary observed-entry indicator, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || bits.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} with {} entries", rows * cols),
                format!("{} entries", bits.len()),
            ));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.bits[i * self.cols + j] = observed;
    }

    #[inline]
    pub(crate) fn weight(&self, i: usize, j: usize) -> f64 {
        if self.get(i, j) {
            1.0
        } else {
            0.0
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Observed `(row, col)` positions in row-major order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(idx, _)| (idx / self.cols, idx % self.cols))
    }

    pub fn matches(&self, m: &DenseMatrix) -> Result<()> {
        if self.shape() != m.shape() {
            return Err(Error::shape(
                format!("mask {}x{}", self.rows, self.cols),
                format!("matrix {}x{}", m.rows(), m.cols()),
            ));
        }
        Ok(())
    }

    /// Rejects masks with an all-unobserved row or column.
    pub fn check_coverage(&self) -> Result<()> {
        for i in 0..self.rows {
            if !(0..self.cols).any(|j| self.get(i, j)) {
                return Err(Error::InvalidConfig(format!(
                    "mask row {} has no observed entries",
                    i + 1
                )));
            }
        }
        for j in 0..self.cols {
            if !(0..self.rows).any(|i| self.get(i, j)) {
                return Err(Error::InvalidConfig(format!(
                    "mask column {} has no observed entries",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Entries observed here and not in `other`.
    pub fn minus(&self, other: &MaskMatrix) -> MaskMatrix {
        MaskMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) && !other.get(i, j))
    }

    /// `M ∘ m`: unobserved entries zeroed.
    pub fn apply(&self, m: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
            if self.get(i, j) {
                m.get(i, j)
            } else {
                0.0
            }
        })
    }
}

fn check_pair(v: &DenseMatrix, wh: &DenseMatrix, mask: Option<&MaskMatrix>) -> Result<()> {
    v.same_shape(wh)?;
    if let Some(mask) = mask {
        mask.matches(v)?;
    }
    Ok(())
}

/// Σ m_ij (v_ij − wh_ij)², with m ≡ 1 when no mask is given.
pub fn frobenius_sq_diff(v: &DenseMatrix, wh: &DenseMatrix, mask: Option<&MaskMatrix>) -> Result<f64> {
    check_pair(v, wh, mask)?;
    let mut total = 0.0;
    for i in 0..v.rows() {
        for j in 0..v.cols() {
            if mask.is_none_or(|m| m.get(i, j)) {
                let d = v.get(i, j) - wh.get(i, j);
                total += d * d;
            }
        }
    }
    Ok(total)
}

/// Generalised KL divergence `D(V ‖ WH)` over observed entries, with
/// `0 · log(0 / y) = 0` and model entries floored at [`EPS`].
pub fn matrix_divergence(v: &DenseMatrix, wh: &DenseMatrix, mask: Option<&MaskMatrix>) -> Result<f64> {
    check_pair(v, wh, mask)?;
    let mut total = 0.0;
    for i in 0..v.rows() {
        for j in 0..v.cols() {
            if !mask.is_none_or(|m| m.get(i, j)) {
                continue;
            }
            let y = wh.get(i, j);
            if y < 0.0 || !y.is_finite() {
                return Err(Error::NonPositiveModelEntry { row: i, col: j });
            }
            total += divergence_term(v.get(i, j), y);
        }
    }
    Ok(total)
}

#[inline]
pub(crate) fn divergence_term(x: f64, y: f64) -> f64 {
    let y = y.max(EPS);
    if x > 0.0 {
        x * (x / y).ln() - x + y
    } else {
        y
    }
}
