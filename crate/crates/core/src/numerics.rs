//! Dense 64-bit tensors with hand-written backward rules for the handful of
//! layers the captioner needs, plus a central-difference gradient checker.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded ChaCha8 stream. The same seed yields the same stream on every
/// platform.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` under `seed`, e.g. one per training epoch.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            data: vec![value; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(
            vec![rows.len(), cols],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Writes `name`, rank, dims (u32 LE) and data (f64 LE, row-major).
    pub fn write_named<W: Write>(&self, name: &str, out: &mut W) -> std::io::Result<()> {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_named<R: Read>(input: &mut R) -> Result<(String, Tensor)> {
        let name_len = read_u32(input)? as usize;
        if name_len > 1 << 16 {
            return Err(Error::Format(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        read_exact(input, &mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(input)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name}: rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        read_exact(input, &mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor { shape, data }))
    }
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file".into())
        } else {
            Error::Format(e.to_string())
        }
    })
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av != 0.0 {
                axpy(av, &b.data[p * n..(p + 1) * n], row);
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gradients of `matmul(a, b)` with respect to `a` and `b` given the
/// upstream gradient `grad_out[m×n]`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = matmul_dims(a, b)?;
    if grad_out.shape != [m, n] {
        return Err(Error::Shape(format!(
            "matmul grad {:?}, expected [{m}, {n}]",
            grad_out.shape
        )));
    }
    let mut ga = Tensor::zeros(&[m, k]);
    let mut gb = Tensor::zeros(&[k, n]);
    for i in 0..m {
        let g = &grad_out.data[i * n..(i + 1) * n];
        for p in 0..k {
            ga.data[i * k + p] = dot(g, &b.data[p * n..(p + 1) * n]);
            axpy(a.data[i * k + p], g, &mut gb.data[p * n..(p + 1) * n]);
        }
    }
    Ok((ga, gb))
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    match (a.shape.as_slice(), b.shape.as_slice()) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(Error::Shape(format!(
            "matmul of {:?} and {:?}",
            a.shape, b.shape
        ))),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out += x · w` for a row vector `x` and `w[len(x)×len(out)]`.
pub(crate) fn vecmat_acc(x: &[f64], w: &Tensor, out: &mut [f64]) {
    let n = w.shape[1];
    for (p, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(xv, &w.data[p * n..(p + 1) * n], out);
        }
    }
}

/// `grad_w += xᵀ · dy`
pub(crate) fn outer_acc(x: &[f64], dy: &[f64], grad_w: &mut Tensor) {
    let n = grad_w.shape[1];
    for (p, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(xv, dy, &mut grad_w.data[p * n..(p + 1) * n]);
        }
    }
}

/// `dx += w · dy`, the input gradient of [`vecmat_acc`].
pub(crate) fn matvec_acc(w: &Tensor, dy: &[f64], dx: &mut [f64]) {
    let n = w.shape[1];
    for (p, d) in dx.iter_mut().enumerate() {
        *d += dot(&w.data[p * n..(p + 1) * n], dy);
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    y.zip_map(grad_out, |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Gradient through tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    y.zip_map(grad_out, |y, g| g * (1.0 - y * y))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through relu given its input `x`.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - log_total).collect()
}

/// `-log softmax(logits)[target]` and its gradient
/// `softmax(logits) - onehot(target)`.
pub fn cross_entropy_from_logits(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let log_probs = log_softmax(logits);
    let loss = -log_probs[target];
    let mut grad: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Inverted dropout mask: 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    let mut mask = Tensor::filled(shape, 1.0);
    if rate > 0.0 {
        let keep = 1.0 / (1.0 - rate);
        for v in &mut mask.data {
            *v = if rng.next_f64() < rate { 0.0 } else { keep };
        }
    }
    Ok(mask)
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub fn zero_grads<'a>(params: impl IntoIterator<Item = &'a mut Parameter>) {
    params.into_iter().for_each(Parameter::zero_grad);
}

/// `value -= lr * grad`
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, learning_rate: f64) {
    for p in params {
        for (v, g) in p.value.data.iter_mut().zip(&p.grad.data) {
            *v -= learning_rate * g;
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of a gradient check, with the worst coordinate for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// `(analytic, numeric)` for every checked coordinate.
    pub coordinates: Vec<(f64, f64)>,
    /// Largest `|analytic - numeric|` over all checked coordinates.
    pub max_absolute_error: f64,
}

impl GradCheck {
    /// Whether every coordinate satisfies
    /// `|analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_tol`.
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.worst_mixed_excess(rel_tol, abs_tol) <= 0.0
    }

    fn worst_mixed_excess(&self, rel_tol: f64, abs_tol: f64) -> f64 {
        self.coordinates
            .iter()
            .map(|&(a, n)| (a - n).abs() - rel_tol * a.abs().max(n.abs()) - abs_tol)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Compares the gradients already stored in `params` against central
/// differences of `loss_fn`.
///
/// For every parameter, `samples` coordinates are drawn (all coordinates when
/// the parameter is that small). `loss_fn` must be deterministic.
pub fn gradcheck<F>(
    mut loss_fn: F,
    params: &mut [Parameter],
    epsilon: f64,
    samples: usize,
    rng: &mut Rng,
) -> GradCheck
where
    F: FnMut(&[Parameter]) -> f64,
{
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        coordinates: Vec::new(),
        max_absolute_error: 0.0,
    };
    for p in 0..params.len() {
        let len = params[p].value.len();
        let coords: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            (0..samples).map(|_| rng.below(len)).collect()
        };
        for idx in coords {
            let original = params[p].value.data[idx];
            params[p].value.data[idx] = original + epsilon;
            let plus = loss_fn(params);
            params[p].value.data[idx] = original - epsilon;
            let minus = loss_fn(params);
            params[p].value.data[idx] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = params[p].grad.data[idx];
            let err = relative_error(analytic, numeric);
            result.checked += 1;
            result.coordinates.push((analytic, numeric));
            result.max_absolute_error = result.max_absolute_error.max((analytic - numeric).abs());
            if err > result.max_relative_error || err.is_nan() {
                result.max_relative_error = err;
                result.worst_parameter = params[p].name.clone();
                result.worst_index = idx;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let id = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[&[2.0, -1.0, 0.5], &[3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(matmul(&id, &b).unwrap(), b);

        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let ones = Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let out = matmul(&a, &ones).unwrap();
        assert_eq!(out.shape(), [2, 1]);
        assert_eq!(out.data(), [3.0, 7.0]);

        assert!(matmul(&a, &b).is_ok());
        assert!(matches!(matmul(&b, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_gradient_matches_central_differences() {
        let mut rng = Rng::new(3);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        // Loss = sum(w ⊙ (a·b)) for a fixed random weighting w.
        let w = random_tensor(&[3, 2], &mut rng);
        let loss = |a: &Tensor, b: &Tensor| dot(matmul(a, b).unwrap().data(), w.data());
        let (ga, gb) = matmul_backward(&a, &b, &w).unwrap();

        let eps = 1e-6;
        for (target, grad) in [(0, &ga), (1, &gb)] {
            for idx in 0..grad.len() {
                let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
                if target == 0 {
                    ap.data_mut()[idx] += eps;
                    am.data_mut()[idx] -= eps;
                } else {
                    bp.data_mut()[idx] += eps;
                    bm.data_mut()[idx] -= eps;
                }
                let numeric = (loss(&ap, &bp) - loss(&am, &bm)) / (2.0 * eps);
                assert!(relative_error(grad.data()[idx], numeric) <= 1e-6);
            }
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let r = relu(&Tensor::vector(vec![-3.0, 3.0]));
        assert_eq!(r.data(), [0.0, 3.0]);
        let y = tanh(&Tensor::vector(vec![0.0]));
        let g = tanh_backward(&y, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.data(), [1.0]);
        let y = sigmoid(&Tensor::vector(vec![0.0]));
        let g = sigmoid_backward(&y, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.data(), [0.25]);
        let g = relu_backward(&Tensor::vector(vec![-1.0, 2.0]), &Tensor::vector(vec![5.0, 5.0]))
            .unwrap();
        assert_eq!(g.data(), [0.0, 5.0]);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn activation_gradients_match_central_differences() {
        let xs = [-2.3, -0.7, 0.1, 0.9, 1.7];
        let eps = 1e-5;
        let one = Tensor::vector(vec![1.0]);
        for &x in &xs {
            let xt = Tensor::vector(vec![x]);
            let n_sig = (sigmoid_scalar(x + eps) - sigmoid_scalar(x - eps)) / (2.0 * eps);
            let a_sig = sigmoid_backward(&sigmoid(&xt), &one).unwrap().data()[0];
            assert!(relative_error(a_sig, n_sig) <= 1e-8);
            let n_tanh = ((x + eps).tanh() - (x - eps).tanh()) / (2.0 * eps);
            let a_tanh = tanh_backward(&tanh(&xt), &one).unwrap().data()[0];
            assert!(relative_error(a_tanh, n_tanh) <= 1e-8);
            let n_relu = ((x + eps).max(0.0) - (x - eps).max(0.0)) / (2.0 * eps);
            let a_relu = relu_backward(&xt, &one).unwrap().data()[0];
            assert!(relative_error(a_relu, n_relu) <= 1e-8);
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300 + 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 11;
        let (loss, _) = cross_entropy_from_logits(&vec![0.0; v], 4).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-14);

        let mut logits = vec![0.0; 5];
        logits[2] = 50.0;
        let (loss, _) = cross_entropy_from_logits(&logits, 2).unwrap();
        assert!(loss < 1e-20);

        assert!(cross_entropy_from_logits(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        let mut rng = Rng::new(11);
        let logits: Vec<f64> = (0..7).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let (_, grad) = cross_entropy_from_logits(&logits, 3).unwrap();
        let eps = 1e-6;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let numeric = (cross_entropy_from_logits(&plus, 3).unwrap().0
                - cross_entropy_from_logits(&minus, 3).unwrap().0)
                / (2.0 * eps);
            assert!(relative_error(grad[i], numeric) <= 1e-6, "coordinate {i}");
        }
    }

    #[test]
    fn dropout_examples() {
        let mut rng = Rng::new(0);
        let m = dropout_mask(&[4, 5], 0.0, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));

        let mut rng = Rng::new(1234);
        let n = 100_000;
        let m = dropout_mask(&[n], 0.5, &mut rng).unwrap();
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.5).abs() <= 0.01, "zero fraction {zeros}");
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = m.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02);

        assert!(dropout_mask(&[3], 1.0, &mut rng).is_err());
        assert!(dropout_mask(&[3], -0.1, &mut rng).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0]));
        p.grad = Tensor::vector(vec![2.0]);
        sgd_step([&mut p], 0.1);
        assert!((p.value.data()[0] - 0.8).abs() < 1e-15);

        let mut q = Parameter::new("q", Tensor::vector(vec![0.3, -0.2]));
        let before = q.value.clone();
        sgd_step([&mut q], 0.5);
        assert_eq!(q.value, before);

        let mut once = Parameter::new("a", Tensor::vector(vec![0.75]));
        once.grad = Tensor::vector(vec![0.5]);
        let mut twice = once.clone();
        sgd_step([&mut once], 0.5);
        sgd_step([&mut twice], 0.25);
        sgd_step([&mut twice], 0.25);
        assert_eq!(once.value, twice.value);
    }

    #[test]
    fn zero_grads_resets_to_zero() {
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0, 2.0]));
        p.grad = Tensor::vector(vec![3.0, 4.0]);
        zero_grads([&mut p]);
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(p.grad.shape(), p.value.shape());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut p = Parameter::new("w", Tensor::vector(vec![0.0, 0.0]));
        p.grad = Tensor::vector(vec![3.0, 4.0]);
        let norm = clip_grad_norm(&mut [&mut p], 1.0);
        assert_eq!(norm, 5.0);
        assert!((p.grad.data()[0] - 0.6).abs() < 1e-15);
        assert!((p.grad.data()[1] - 0.8).abs() < 1e-15);
        let norm = clip_grad_norm(&mut [&mut p], 10.0);
        assert!((norm - 1.0).abs() < 1e-15);
    }

    fn quadratic_params(rng: &mut Rng) -> Vec<Parameter> {
        let value = Tensor::vector((0..20).map(|_| rng.uniform(-3.0, 3.0)).collect());
        let mut p = Parameter::new("theta", value);
        p.grad = p.value.clone();
        vec![p]
    }

    fn half_square(params: &[Parameter]) -> f64 {
        params[0].value.data().iter().map(|v| 0.5 * v * v).sum()
    }

    #[test]
    fn gradcheck_quadratic_is_exact() {
        let mut rng = Rng::new(5);
        let mut params = quadratic_params(&mut rng);
        let check = gradcheck(half_square, &mut params, 1e-5, 50, &mut rng);
        assert!(check.max_relative_error <= 1e-9, "{check:?}");
        assert_eq!(check.checked, 20);
    }

    #[test]
    fn gradcheck_detects_doubled_gradient() {
        let mut rng = Rng::new(6);
        let mut params = quadratic_params(&mut rng);
        params[0].grad = params[0].value.map(|v| 2.0 * v);
        let check = gradcheck(half_square, &mut params, 1e-5, 50, &mut rng);
        // (2n - n) / 2n
        assert!((check.max_relative_error - 0.5).abs() < 1e-6, "{check:?}");
    }

    #[test]
    fn tensor_serialization_round_trip() {
        let mut rng = Rng::new(9);
        let mut t = random_tensor(&[3, 2], &mut rng);
        t.data_mut()[0] = -0.0;
        let mut buf = Vec::new();
        t.write_named("lstm.w_i", &mut buf).unwrap();
        assert_eq!(&buf[..4], &8u32.to_le_bytes());
        let (name, back) = Tensor::read_named(&mut buf.as_slice()).unwrap();
        assert_eq!(name, "lstm.w_i");
        assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        assert!(Tensor::read_named(&mut &buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let a: Vec<f64> = {
            let mut r = Rng::new(42);
            (0..5).map(|_| r.next_f64()).collect()
        };
        let b: Vec<f64> = {
            let mut r = Rng::new(42);
            (0..5).map(|_| r.next_f64()).collect()
        };
        assert_eq!(a, b);
        let mut s0 = Rng::with_stream(42, 0);
        let mut s1 = Rng::with_stream(42, 1);
        assert_ne!(s0.next_f64(), s1.next_f64());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -100.0f64..100.0) {
            let p = softmax(&logits);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn cross_entropy_gradient_sums_to_zero(logits in prop::collection::vec(-20.0f64..20.0, 2..30), t in 0usize..30) {
            let target = t % logits.len();
            let (loss, grad) = cross_entropy_from_logits(&logits, target).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
        }
    }
}
