//! Row-wise building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::weights::{LayerNormParams, Linear};
use super::Real;

pub fn linear<F: Real>(x: &ArrayView2<F>, l: &Linear<F>) -> Array2<F> {
    let mut y = x.dot(&l.weight.t());
    y += &l.bias;
    y
}

/// Returns `dL/dx`; accumulates parameter gradients into `grad` when given.
pub fn linear_backward<F: Real>(
    x: &ArrayView2<F>,
    l: &Linear<F>,
    dy: &Array2<F>,
    grad: Option<&mut Linear<F>>,
) -> Array2<F> {
    if let Some(g) = grad {
        g.weight += &dy.t().dot(x);
        g.bias += &dy.sum_axis(Axis(0));
    }
    dy.dot(&l.weight)
}

#[derive(Debug, Clone)]
pub struct NormCache<F> {
    pub xhat: Array2<F>,
    pub rstd: Array1<F>,
}

pub fn layer_norm<F: Real>(x: &Array2<F>, p: &LayerNormParams<F>, eps: F) -> (Array2<F>, NormCache<F>) {
    let d = F::from_usize(x.ncols()).unwrap();
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.iter().copied().sum::<F>() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &p.gamma;
    y += &p.beta;
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    p: &LayerNormParams<F>,
    grad: Option<&mut LayerNormParams<F>>,
) -> Array2<F> {
    if let Some(g) = grad {
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
    }
    let d = F::from_usize(dy.ncols()).unwrap();
    let mut dx = dy * &p.gamma;
    for ((mut row, xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let m1 = row.iter().copied().sum::<F>() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
        Zip::from(&mut row).and(&xh).for_each(|v, &h| *v = r * (*v - m1 - h * m2));
    }
    dx
}

pub fn gelu<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5).unwrap();
    half * x * (F::one() + (x * F::from_f64(std::f64::consts::FRAC_1_SQRT_2).unwrap()).erf())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5).unwrap();
    let cdf = half * (F::one() + (x * F::from_f64(std::f64::consts::FRAC_1_SQRT_2).unwrap()).erf());
    let pdf = (-half * x * x).exp() * F::from_f64(0.398_942_280_401_432_7).unwrap();
    cdf + x * pdf
}

/// Numerically stable softmax over each row, in place.
pub fn softmax_rows<F: Real>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().copied().sum::<F>();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Softmax of one logits vector with 64-bit accumulation.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.to_f64().unwrap() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn gelu_matches_reference_values() {
        // 0.5 x (1 + erf(x / sqrt 2)) at a few points
        assert_abs_diff_eq!(gelu(0.0f64), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gelu(1.0f64), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert_abs_diff_eq!(gelu(-1.0f64), -0.158_655_253_931_457_05, epsilon = 1e-12);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let p = LayerNormParams {
            gamma: Array1::ones(4),
            beta: Array1::zeros(4),
        };
        let (y, _) = layer_norm(&x, &p, 1e-12);
        for row in y.rows() {
            assert_abs_diff_eq!(row.mean().unwrap(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.mapv(|v| v * v).mean().unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0f32, 999.0, -50.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let mut m = array![[3.0f64, 1.0, 0.0]];
        softmax_rows(&mut m);
        assert_abs_diff_eq!(m.sum(), 1.0, epsilon = 1e-12);
    }
}
