//! Input-space navigation: sphere sampling, ε-perturbation at an exact cosine
//! distance, and linear interpolation. Arithmetic is done in `f64` whatever
//! the element type of the inputs.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Real;
use crate::rng;

/// A unit vector drawn uniformly from the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub vector: Vec<f64>,
    pub seed: u64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MagnitudePolicy {
    /// Scale the perturbed unit vector back to the source norm.
    #[default]
    Rescale,
    /// Return the unit vector.
    Unit,
}

impl std::str::FromStr for MagnitudePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(Self::Rescale),
            "unit" => Ok(Self::Unit),
            other => Err(Error::Config(format!("unknown magnitude policy `{other}` (rescale | unit)"))),
        }
    }
}

/// The default ε grid: 0, 0.2, …, 1.8.
pub fn default_epsilons() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 5.0).collect()
}

/// The default α grid: 0, 0.1, then steps of 0.05 up to 1.
pub fn default_alphas() -> Vec<f64> {
    let mut a = vec![0.0];
    a.extend((2..=20).map(|i| i as f64 / 20.0));
    a
}

fn f64s<F: Real>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `n` i.i.d. uniform directions in `d` dimensions (normalized Gaussian draws).
pub fn sample_directions(n: usize, d: usize, seed: u64) -> Result<Vec<Direction>> {
    if d < 2 {
        return Err(Error::Geometry(format!("directions need d >= 2, got {d}")));
    }
    Ok((0..n)
        .map(|index| {
            let mut r = rng::stream(seed, "direction", "", index as u64);
            loop {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
                let len = norm(&g);
                if len > 1e-300 {
                    return Direction {
                        vector: g.into_iter().map(|x| x / len).collect(),
                        seed,
                        index,
                    };
                }
            }
        })
        .collect())
}

/// Moves `z` to cosine distance `epsilon` along the great circle through `z`
/// and `w`: with `ẑ = z/‖z‖`, `u` the unit component of `w` orthogonal to `ẑ`
/// and `cos θ = 1 − ε`, the unit result is `cos θ·ẑ + sin θ·u`.
pub fn perturb<F: Real>(z: &[F], w: &[f64], epsilon: f64, policy: MagnitudePolicy) -> Result<Vec<F>> {
    if !(0.0..2.0).contains(&epsilon) {
        return Err(Error::Geometry(format!("epsilon {epsilon} outside [0, 2)")));
    }
    if z.len() != w.len() {
        return Err(Error::Geometry(format!("dimension mismatch: {} vs {}", z.len(), w.len())));
    }
    let z = f64s(z);
    let zn = norm(&z);
    if zn == 0.0 || !zn.is_finite() {
        return Err(Error::Geometry("cannot perturb a zero or non-finite vector".into()));
    }
    let zh: Vec<f64> = z.iter().map(|x| x / zn).collect();
    let cos = 1.0 - epsilon;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let unit: Vec<f64> = if epsilon == 0.0 {
        zh
    } else {
        let proj = dot(w, &zh);
        let mut u: Vec<f64> = w.iter().zip(&zh).map(|(a, b)| a - proj * b).collect();
        let un = norm(&u);
        if un <= 1e-12 * norm(w).max(1.0) {
            return Err(Error::Geometry("direction is parallel to the source vector".into()));
        }
        u.iter_mut().for_each(|x| *x /= un);
        zh.iter().zip(&u).map(|(a, b)| cos * a + sin * b).collect()
    };
    let scale = match policy {
        MagnitudePolicy::Rescale => zn,
        MagnitudePolicy::Unit => 1.0,
    };
    if epsilon == 0.0 && policy == MagnitudePolicy::Rescale {
        return Ok(z.iter().map(|&x| F::from_f64(x).unwrap()).collect());
    }
    Ok(unit.into_iter().map(|x| F::from_f64(x * scale).unwrap()).collect())
}

/// `(1 − α)·z1 + α·z2` for `α ∈ [0, 1]`; the endpoints are returned exactly.
pub fn interpolate<F: Real>(z1: &[F], z2: &[F], alpha: f64) -> Result<Vec<F>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Geometry(format!("alpha {alpha} outside [0, 1]")));
    }
    if z1.len() != z2.len() {
        return Err(Error::Geometry(format!("dimension mismatch: {} vs {}", z1.len(), z2.len())));
    }
    if alpha == 0.0 {
        return Ok(z1.to_vec());
    }
    if alpha == 1.0 {
        return Ok(z2.to_vec());
    }
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(a, b)| {
            let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
            F::from_f64((1.0 - alpha) * a + alpha * b).unwrap()
        })
        .collect())
}

/// `1 − cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance<F: Real>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Geometry(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (a, b) = (f64s(a), f64s(b));
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Geometry("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - dot(&a, &b) / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean_distance<F: Real>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Geometry(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Distance from `v` to the plane spanned by `a` and `b`.
pub fn plane_residual(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let an = norm(a);
    let e1: Vec<f64> = a.iter().map(|x| x / an).collect();
    let p = dot(b, &e1);
    let mut e2: Vec<f64> = b.iter().zip(&e1).map(|(x, y)| x - p * y).collect();
    let n2 = norm(&e2);
    e2.iter_mut().for_each(|x| *x /= n2);
    let (c1, c2) = (dot(v, &e1), dot(v, &e2));
    let r: Vec<f64> = v.iter().zip(e1.iter().zip(&e2)).map(|(x, (a, b))| x - c1 * a - c2 * b).collect();
    norm(&r)
}
