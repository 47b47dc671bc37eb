//! Dense row-major `f64` tensors and the kernels the model is built from.
//!
//! Every differentiable kernel comes with a matching vector-Jacobian
//! product (`*_vjp`). The [`crate::tape`] module records calls to these
//! kernels and replays the VJPs in reverse order.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor of shape {:?} at flat index {}",
                shape, pos
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without the finiteness scan. Length must still match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    /// A single-row matrix `1 x n`.
    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![1, values.len()], values.to_vec())
    }

    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count when viewed as a matrix (all leading dims folded).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn as_matrix(&self, name: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{} must be a matrix, got shape {:?}",
                name, self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.as_matrix("matmul lhs")?;
    let (k2, n) = b.as_matrix("matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul {:?} x {:?}: inner dimensions differ",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Returns `(g * b^T, a^T * g)`.
pub fn matmul_vjp(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(g, &transpose(b)?)?;
    let gb = matmul(&transpose(a)?, g)?;
    Ok((ga, gb))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.as_matrix("transpose input")?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.as_matrix("softmax input")?;
    if n == 0 {
        return Err(Error::Dimension("softmax over zero columns".into()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * n..(i + 1) * n];
        let mut total = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// VJP of softmax given its output `y`: `y * (g - <g, y>)` per row.
pub fn softmax_rows_vjp(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.cols();
    let mut out = vec![0.0; y.len()];
    for i in 0..y.rows() {
        let yr = &y.data[i * n..(i + 1) * n];
        let gr = &g.data[i * n..(i + 1) * n];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = yr[j] * (gr[j] - dot);
        }
    }
    Tensor::from_parts(y.shape.clone(), out)
}

/// Per-row statistics shared by the layer-norm forward and backward passes.
/// The mean is accumulated as offsets from the first entry so that constant
/// rows give an exactly zero centered value.
fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let anchor = row[0];
    let mean = anchor + row.iter().map(|v| v - anchor).sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, n) = x.as_matrix("layer_norm input")?;
    if gamma.len() != n || beta.len() != n {
        return Err(Error::Dimension(format!(
            "layer_norm over {} features with gamma {:?} and beta {:?}",
            n, gamma.shape, beta.shape
        )));
    }
    if eps <= 0.0 || n == 0 {
        return Err(Error::Parameter(format!(
            "layer_norm needs eps > 0 and at least one feature (eps={eps}, n={n})"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let (mean, rstd) = row_stats(row, eps);
        for j in 0..n {
            out[i * n + j] = (row[j] - mean) * rstd * gamma.data[j] + beta.data[j];
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_vjp(x: &Tensor, gamma: &Tensor, eps: f64, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = x.cols();
    let m = x.rows();
    let nf = n as f64;
    let mut dx = vec![0.0; m * n];
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    let mut xhat = vec![0.0; n];
    let mut dxhat = vec![0.0; n];
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let gr = &g.data[i * n..(i + 1) * n];
        let (mean, rstd) = row_stats(row, eps);
        for j in 0..n {
            xhat[j] = (row[j] - mean) * rstd;
            dxhat[j] = gr[j] * gamma.data[j];
            dgamma[j] += gr[j] * xhat[j];
            dbeta[j] += gr[j];
        }
        let mean_d: f64 = dxhat.iter().sum::<f64>() / nf;
        let mean_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
        for j in 0..n {
            dx[i * n + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (
        Tensor::from_parts(x.shape.clone(), dx),
        Tensor::from_parts(gamma.shape.clone(), dgamma),
        Tensor::from_parts(gamma.shape.clone(), dbeta),
    )
}

/// Source coordinate and blend weight for output index `i` under the
/// half-pixel (align-corners = false) convention, clamped to the border.
fn sample_coord(i: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear upsampling of an `h x w x d` map by an integer factor.
pub fn bilinear_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    if x.shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "bilinear_upsample expects h x w x d, got {:?}",
            x.shape
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w, d) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h * factor, w * factor);
    if h == 0 || w == 0 {
        return Ok(Tensor::from_parts(vec![oh, ow, d], Vec::new()));
    }
    let xs: Vec<_> = (0..ow).map(|j| sample_coord(j, factor, w)).collect();
    let mut out = vec![0.0; oh * ow * d];
    for i in 0..oh {
        let (y0, y1, wy) = sample_coord(i, factor, h);
        for (j, &(x0, x1, wx)) in xs.iter().enumerate() {
            let p00 = &x.data[(y0 * w + x0) * d..][..d];
            let p01 = &x.data[(y0 * w + x1) * d..][..d];
            let p10 = &x.data[(y1 * w + x0) * d..][..d];
            let p11 = &x.data[(y1 * w + x1) * d..][..d];
            let o = &mut out[(i * ow + j) * d..][..d];
            for c in 0..d {
                let top = p00[c] + wx * (p01[c] - p00[c]);
                let bottom = p10[c] + wx * (p11[c] - p10[c]);
                o[c] = top + wy * (bottom - top);
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, d], out))
}
