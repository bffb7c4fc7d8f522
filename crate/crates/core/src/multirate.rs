//! Linear multirate building blocks: polyphase decomposition of
//! interpolation filters, DC values, the zero-order-hold kernel and the
//! checkerboard-avoidance condition.
//!
//! Filters are polynomials in `z^-1`: `taps[k]` multiplies `z^-k`. Applying a
//! filter is therefore a true convolution. The tensor layers use
//! cross-correlation; correlating with a reversed tap sequence is the same
//! operation.
//!
//! For an upsampler by `U`, component `R_i` (`i = 1..=U`) collects the taps at
//! lags `k ≡ U - i (mod U)`, so that `H(z) = Σ_i R_i(z^U) z^-(U-i)`. With
//! `h = [1, 2, 3, 4]` and `U = 2`: `R_1 = [2, 4]` (odd lags) and
//! `R_2 = [1, 3]` (even lags). The 2D theory is the tensor product of the 1D
//! one: `U x U` components indexed `(row_phase, col_phase)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dims {
    One,
    Two,
}

/// FIR filter taps, 1D or 2D (row-major), indexed from lag 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    dims: Dims,
    rows: usize,
    cols: usize,
    taps: Vec<f64>,
}

impl Filter {
    pub fn new_1d(taps: Vec<f64>) -> Result<Self> {
        Self::checked(Dims::One, 1, taps.len(), taps)
    }

    pub fn new_2d(rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        Self::checked(Dims::Two, rows, cols, taps)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("taps", "ragged 2D filter rows"));
        }
        Self::new_2d(rows.len(), cols, rows.concat())
    }

    fn checked(dims: Dims, rows: usize, cols: usize, taps: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || taps.len() != rows * cols {
            return Err(Error::param("taps", "filter must be non-empty and rectangular"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("filter taps"));
        }
        Ok(Filter {
            dims,
            rows,
            cols,
            taps,
        })
    }

    fn zeros(dims: Dims, rows: usize, cols: usize) -> Self {
        Filter {
            dims,
            rows,
            cols,
            taps: vec![0.0; rows * cols],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.cols + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.taps[r * self.cols + c]
    }

    /// Full linear convolution (polynomial product).
    pub fn convolve(&self, other: &Filter) -> Result<Filter> {
        if self.dims != other.dims {
            return Err(Error::param("dims", "cannot convolve 1D with 2D filters"));
        }
        let mut out = Filter::zeros(
            self.dims,
            self.rows + other.rows - 1,
            self.cols + other.cols - 1,
        );
        for r in 0..self.rows {
            for c in 0..self.cols {
                let a = self.at(r, c);
                for s in 0..other.rows {
                    for d in 0..other.cols {
                        *out.at_mut(r + s, c + d) += a * other.at(s, d);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Drops trailing all-zero rows and columns, keeping at least one tap.
    pub fn trimmed(&self) -> Filter {
        let mut rows = self.rows;
        while rows > 1 && (0..self.cols).all(|c| self.at(rows - 1, c) == 0.0) {
            rows -= 1;
        }
        let mut cols = self.cols;
        while cols > 1 && (0..rows).all(|r| self.at(r, cols - 1) == 0.0) {
            cols -= 1;
        }
        let mut out = Filter::zeros(self.dims, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                *out.at_mut(r, c) = self.at(r, c);
            }
        }
        out
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.taps[r * self.cols..(r + 1) * self.cols]
    }
}

/// `R(1)`: the sum of all taps.
pub fn dc_value(h: &Filter) -> f64 {
    h.taps.iter().sum()
}

/// The zero-order-hold interpolation kernel `H0`: `U` ones, or `U x U` ones in 2D.
pub fn zero_order_hold_kernel(u: usize, dims: Dims) -> Result<Filter> {
    if u < 1 {
        return Err(Error::param("U", "upscaling factor must be at least 1"));
    }
    match dims {
        Dims::One => Filter::new_1d(vec![1.0; u]),
        Dims::Two => Filter::new_2d(u, u, vec![1.0; u * u]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyphaseSet {
    factor: usize,
    dims: Dims,
    components: Vec<Filter>,
    dc: Vec<f64>,
}

impl PolyphaseSet {
    /// Builds a set from explicit components, `R_1..R_U` in 1D or the
    /// row-major `U x U` grid in 2D.
    pub fn from_components(factor: usize, dims: Dims, components: Vec<Filter>) -> Result<Self> {
        if factor < 2 {
            return Err(Error::param("U", "polyphase factor must be at least 2"));
        }
        let expected = match dims {
            Dims::One => factor,
            Dims::Two => factor * factor,
        };
        if components.len() != expected {
            return Err(Error::InconsistentComponents(format!(
                "expected {expected} components, got {}",
                components.len()
            )));
        }
        if components.iter().any(|c| c.dims != dims) {
            return Err(Error::InconsistentComponents(
                "component dimensionality differs from the set".into(),
            ));
        }
        let spread = |f: fn(&Filter) -> usize| {
            let lens = components.iter().map(f);
            lens.clone().max().unwrap() - lens.min().unwrap()
        };
        if spread(|c| c.rows) > 1 || spread(|c| c.cols) > 1 {
            return Err(Error::InconsistentComponents(
                "component lengths differ by more than one sample".into(),
            ));
        }
        let dc = components.iter().map(dc_value).collect();
        Ok(PolyphaseSet {
            factor,
            dims,
            components,
            dc,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn components(&self) -> &[Filter] {
        &self.components
    }

    /// `R_i(1)` for every component, in component order.
    pub fn dc(&self) -> &[f64] {
        &self.dc
    }

    /// 1D component `R_i`, `i` in `1..=U`.
    pub fn component(&self, i: usize) -> &Filter {
        &self.components[i - 1]
    }

    /// Index into [`components`](Self::components) of the component that
    /// drives output samples `n ≡ residue (mod U)`.
    pub fn index_for_residue(&self, residue: usize) -> usize {
        let u = self.factor;
        (u - 1 + u - residue % u) % u
    }
}

/// Splits `h` into its `U` (1D) or `U x U` (2D) polyphase components.
pub fn polyphase_decompose(h: &Filter, u: usize) -> Result<PolyphaseSet> {
    if u < 2 {
        return Err(Error::param("U", "polyphase factor must be at least 2"));
    }
    // component i (1-based) takes lags ≡ u - i; 0-based index p takes lags ≡ u - 1 - p
    let split = |len: usize| -> Vec<(usize, usize)> {
        (0..u)
            .map(|p| {
                let offset = u - 1 - p;
                let n = if len > offset { (len - offset).div_ceil(u) } else { 0 };
                (offset, n.max(1))
            })
            .collect()
    };
    let components = match h.dims {
        Dims::One => split(h.cols)
            .into_iter()
            .map(|(off, n)| {
                let taps = (0..n)
                    .map(|m| h.taps.get(m * u + off).copied().unwrap_or(0.0))
                    .collect();
                Filter::new_1d(taps)
            })
            .collect::<Result<Vec<_>>>()?,
        Dims::Two => {
            let row_parts = split(h.rows);
            let col_parts = split(h.cols);
            let mut comps = Vec::with_capacity(u * u);
            for &(roff, nr) in &row_parts {
                for &(coff, nc) in &col_parts {
                    let mut f = Filter::zeros(Dims::Two, nr, nc);
                    for a in 0..nr {
                        for b in 0..nc {
                            let (r, c) = (a * u + roff, b * u + coff);
                            if r < h.rows && c < h.cols {
                                *f.at_mut(a, b) = h.at(r, c);
                            }
                        }
                    }
                    comps.push(f);
                }
            }
            comps
        }
    };
    PolyphaseSet::from_components(u, h.dims, components)
}

/// Inverse of [`polyphase_decompose`], with trailing zeros trimmed.
pub fn polyphase_recompose(set: &PolyphaseSet) -> Result<Filter> {
    let u = set.factor;
    let extent = |len: usize, p: usize| (len - 1) * u + (u - 1 - p) + 1;
    let filter = match set.dims {
        Dims::One => {
            let len = (0..u).map(|p| extent(set.components[p].cols, p)).max().unwrap();
            let mut taps = vec![0.0; len];
            for (p, comp) in set.components.iter().enumerate() {
                for (m, &v) in comp.taps.iter().enumerate() {
                    taps[m * u + (u - 1 - p)] = v;
                }
            }
            Filter::new_1d(taps)?
        }
        Dims::Two => {
            let mut rows = 0;
            let mut cols = 0;
            for (idx, comp) in set.components.iter().enumerate() {
                rows = rows.max(extent(comp.rows, idx / u));
                cols = cols.max(extent(comp.cols, idx % u));
            }
            let mut out = Filter::zeros(Dims::Two, rows, cols);
            for (idx, comp) in set.components.iter().enumerate() {
                let (roff, coff) = (u - 1 - idx / u, u - 1 - idx % u);
                for a in 0..comp.rows {
                    for b in 0..comp.cols {
                        *out.at_mut(a * u + roff, b * u + coff) = comp.at(a, b);
                    }
                }
            }
            out
        }
    };
    Ok(filter.trimmed())
}

/// Sum of the taps that reach output samples `n ≡ r (mod U)` of an
/// upsampler; 2D entries are ordered `row_residue * U + col_residue`.
pub fn residue_sums(h: &Filter, u: usize) -> Vec<f64> {
    let u = u.max(1);
    match h.dims {
        Dims::One => {
            let mut sums = vec![0.0; u];
            for (k, &v) in h.taps.iter().enumerate() {
                sums[k % u] += v;
            }
            sums
        }
        Dims::Two => {
            let mut sums = vec![0.0; u * u];
            for r in 0..h.rows {
                for c in 0..h.cols {
                    sums[(r % u) * u + c % u] += h.at(r, c);
                }
            }
            sums
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AvoidanceReport {
    pub factor: usize,
    /// `R_i(1)` in component order.
    pub dc: Vec<f64>,
    pub mean_dc: f64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub satisfied: bool,
}

/// Checks that every polyphase component has the same DC value.
pub fn satisfies_avoidance_condition(h: &Filter, u: usize, tol: f64) -> Result<AvoidanceReport> {
    if !(tol >= 0.0) {
        return Err(Error::param("tol", "tolerance must be non-negative"));
    }
    let set = polyphase_decompose(h, u)?;
    let dc = set.dc.clone();
    let mean_dc = dc.iter().sum::<f64>() / dc.len() as f64;
    let max_deviation = dc.iter().fold(0.0f64, |m, v| m.max((v - mean_dc).abs()));
    Ok(AvoidanceReport {
        factor: u,
        dc,
        mean_dc,
        max_deviation,
        tolerance: tol,
        satisfied: max_deviation <= tol,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factorization {
    /// `h = P * H0` within tolerance.
    Exact(Filter),
    NoExactFactor { max_remainder: f64 },
}

impl Factorization {
    pub fn quotient(&self) -> Option<&Filter> {
        match self {
            Factorization::Exact(p) => Some(p),
            Factorization::NoExactFactor { .. } => None,
        }
    }
}

/// Long division of `seq` by `1 + z^-1 + ... + z^-(U-1)`.
/// Returns the quotient and the largest remainder magnitude.
fn divide_by_hold(seq: &[f64], u: usize) -> (Vec<f64>, f64) {
    if seq.len() < u {
        return (vec![0.0], seq.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let mut rem = seq.to_vec();
    let mut q = vec![0.0; seq.len() - u + 1];
    for k in (u - 1..seq.len()).rev() {
        let lead = rem[k];
        q[k + 1 - u] = lead;
        for t in 0..u {
            rem[k - t] -= lead;
        }
    }
    let max_rem = rem[..u - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (q, max_rem)
}

/// Finds `P` with `h = P * H0`, or reports that `h` has no `H0` factor.
pub fn factor_out_h0(h: &Filter, u: usize, tol: f64) -> Result<Factorization> {
    if u < 2 {
        return Err(Error::param("U", "factor must be at least 2"));
    }
    let (quotient, max_remainder) = match h.dims {
        Dims::One => {
            let (q, rem) = divide_by_hold(&h.taps, u);
            (Filter::new_1d(q)?, rem)
        }
        Dims::Two => {
            let mut worst = 0.0f64;
            let mut rows_q = Vec::with_capacity(h.rows);
            for r in 0..h.rows {
                let (q, rem) = divide_by_hold(h.row(r), u);
                worst = worst.max(rem);
                rows_q.push(q);
            }
            let qcols = rows_q[0].len();
            let mut cols_q = Vec::with_capacity(qcols);
            for c in 0..qcols {
                let column: Vec<f64> = rows_q.iter().map(|row| row[c]).collect();
                let (q, rem) = divide_by_hold(&column, u);
                worst = worst.max(rem);
                cols_q.push(q);
            }
            let qrows = cols_q[0].len();
            let mut taps = vec![0.0; qrows * qcols];
            for (c, col) in cols_q.iter().enumerate() {
                for (r, &v) in col.iter().enumerate() {
                    taps[r * qcols + c] = v;
                }
            }
            (Filter::new_2d(qrows, qcols, taps)?, worst)
        }
    };
    if max_remainder > tol {
        return Ok(Factorization::NoExactFactor { max_remainder });
    }
    let rebuilt = quotient.convolve(&zero_order_hold_kernel(u, h.dims)?)?;
    let mut worst = 0.0f64;
    for r in 0..h.rows.max(rebuilt.rows) {
        for c in 0..h.cols.max(rebuilt.cols) {
            let a = if r < h.rows && c < h.cols { h.at(r, c) } else { 0.0 };
            let b = if r < rebuilt.rows && c < rebuilt.cols {
                rebuilt.at(r, c)
            } else {
                0.0
            };
            worst = worst.max((a - b).abs());
        }
    }
    if worst > tol {
        return Ok(Factorization::NoExactFactor {
            max_remainder: max_remainder.max(worst),
        });
    }
    Ok(Factorization::Exact(quotient))
}

/// Direct-form interpolator: insert `U - 1` zeros after every sample, then
/// filter with `h`. Returns the first `U * x.len()` output samples.
pub fn interpolate(x: &[f64], h: &Filter, u: usize) -> Result<Vec<f64>> {
    if h.dims != Dims::One {
        return Err(Error::param("h", "interpolate expects a 1D filter"));
    }
    if u < 1 {
        return Err(Error::param("U", "factor must be at least 1"));
    }
    let n_out = x.len() * u;
    let mut up = vec![0.0; n_out];
    for (i, &v) in x.iter().enumerate() {
        up[i * u] = v;
    }
    Ok((0..n_out)
        .map(|n| {
            let mut acc = 0.0;
            for (k, &t) in h.taps.iter().enumerate().take(n + 1) {
                acc += t * up[n - k];
            }
            acc
        })
        .collect())
}

/// Polyphase form of [`interpolate`]: each component filters the
/// low-rate input and the `U` branches are interleaved.
pub fn interpolate_polyphase(x: &[f64], set: &PolyphaseSet) -> Result<Vec<f64>> {
    if set.dims != Dims::One {
        return Err(Error::param("set", "interpolate_polyphase expects 1D components"));
    }
    let u = set.factor;
    let mut out = vec![0.0; x.len() * u];
    for (n, y) in out.iter_mut().enumerate() {
        let (m, r) = (n / u, n % u);
        let comp = &set.components[set.index_for_residue(r)];
        let mut acc = 0.0;
        for (j, &t) in comp.taps.iter().enumerate().take(m + 1) {
            acc += t * x[m - j];
        }
        *y = acc;
    }
    Ok(out)
}
