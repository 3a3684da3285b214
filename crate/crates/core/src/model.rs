//! Linear model `X·theta + bias`, its losses, and the normal-equations oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{gram, matvec, solve_spd, transpose_matvec, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub theta: Vector,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(theta: Vector, bias: f64) -> Self {
        LinearModel { theta, bias }
    }

    pub fn zeros(p: usize) -> Self {
        LinearModel {
            theta: Vector::zeros(p),
            bias: 0.0,
        }
    }

    pub fn features(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.bias.is_finite()
    }

    /// Largest absolute parameter, bias included.
    pub fn max_abs(&self) -> f64 {
        self.theta
            .iter()
            .chain(std::iter::once(&self.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Parameter `k`, where `k == features()` addresses the bias.
    pub(crate) fn coord_mut(&mut self, k: usize) -> &mut f64 {
        let p = self.theta.len();
        if k == p {
            &mut self.bias
        } else {
            &mut self.theta.as_mut_slice()[k]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_theta: Vector,
    pub d_bias: f64,
}

impl Gradient {
    pub fn zeros(p: usize) -> Self {
        Gradient {
            d_theta: Vector::zeros(p),
            d_bias: 0.0,
        }
    }

    pub fn new(d_theta: Vector, d_bias: f64) -> Self {
        Gradient { d_theta, d_bias }
    }

    pub fn is_finite(&self) -> bool {
        self.d_theta.is_finite() && self.d_bias.is_finite()
    }

    /// All coordinates, theta first and bias last.
    pub fn coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_theta
            .iter()
            .copied()
            .chain(std::iter::once(self.d_bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

pub fn predict(m: &LinearModel, x: &Matrix) -> Result<Vector> {
    check_dim("predict", m.features(), x.cols())?;
    let mut out = matvec(x, &m.theta)?;
    for v in out.as_mut_slice() {
        *v += m.bias;
    }
    Ok(out)
}

pub fn loss(kind: LossKind, pred: &Vector, target: &Vector) -> Result<f64> {
    check_dim("loss", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let n = pred.len() as f64;
    let residuals = pred.iter().zip(target.iter()).map(|(p, t)| p - t);
    Ok(match kind {
        LossKind::Mse => residuals.map(|r| r * r).sum::<f64>() / n,
        LossKind::Mae => residuals.map(f64::abs).sum::<f64>() / n,
    })
}

/// Loss of `m` on `(x, target)`.
pub fn model_loss(kind: LossKind, m: &LinearModel, x: &Matrix, target: &Vector) -> Result<f64> {
    loss(kind, &predict(m, x)?, target)
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic gradient of the batch loss.
///
/// MSE: `(2/B) xᵀ r`, `(2/B) Σ r` with `r = pred - target`.
/// MAE: `(1/B) xᵀ sign(r)`, `(1/B) Σ sign(r)`, taking `sign(0) = 0`.
pub fn loss_gradient(
    kind: LossKind,
    m: &LinearModel,
    x: &Matrix,
    target: &Vector,
) -> Result<Gradient> {
    check_dim("loss_gradient", x.rows(), target.len())?;
    if x.rows() == 0 {
        return Err(Error::invalid("gradient of an empty batch"));
    }
    let pred = predict(m, x)?;
    let b = x.rows() as f64;
    let (weights, scale): (Vector, f64) = match kind {
        LossKind::Mse => (pred.sub(target)?, 2.0 / b),
        LossKind::Mae => (
            pred.iter()
                .zip(target.iter())
                .map(|(p, t)| sign(p - t))
                .collect::<Vec<_>>()
                .into(),
            1.0 / b,
        ),
    };
    let d_theta = transpose_matvec(x, &weights)?.scale(scale);
    let d_bias = weights.iter().sum::<f64>() * scale;
    Ok(Gradient { d_theta, d_bias })
}

/// Largest per-coordinate disagreement between the analytic gradient and a
/// central difference `(J(θ + h e_k) − J(θ − h e_k)) / 2h`.
///
/// The error for each coordinate is `|a − n| / max(|a|, |n|, 1)`, i.e. relative
/// for gradients of magnitude above one and absolute below it, so that
/// stationary points do not blow the ratio up.
pub fn gradient_check(
    kind: LossKind,
    m: &LinearModel,
    x: &Matrix,
    target: &Vector,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be > 0, got {h}")));
    }
    let analytic = loss_gradient(kind, m, x, target)?;
    let mut worst = 0.0f64;
    for (k, a) in analytic.coords().enumerate() {
        let mut plus = m.clone();
        *plus.coord_mut(k) += h;
        let mut minus = m.clone();
        *minus.coord_mut(k) -= h;
        let numeric = (model_loss(kind, &plus, x, target)? - model_loss(kind, &minus, x, target)?)
            / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Least-squares fit through the normal equations on `[x | 1]`.
pub fn closed_form(x: &Matrix, y: &Vector) -> Result<LinearModel> {
    check_dim("closed_form", x.rows(), y.len())?;
    let augmented = x.with_ones_column();
    let g = gram(&augmented);
    let rhs = transpose_matvec(&augmented, y)?;
    let mut solution = solve_spd(&g, &rhs)?.into_vec();
    let bias = solution
        .pop()
        .expect("augmented system has at least one unknown");
    Ok(LinearModel::new(solution.into(), bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_problem(rng: &mut Rng, b: usize, p: usize) -> (LinearModel, Matrix, Vector) {
        let x: Vec<f64> = (0..b * p).map(|_| rng.unit()).collect();
        let x = Matrix::from_row_major(b, p, x).unwrap();
        let y: Vector = (0..b).map(|_| rng.normal()).collect::<Vec<_>>().into();
        let theta: Vector = (0..p).map(|_| rng.normal()).collect::<Vec<_>>().into();
        (LinearModel::new(theta, rng.normal()), x, y)
    }

    #[test]
    fn predict_examples() {
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let m = LinearModel::new(Vector::zeros(2), 2.5);
        assert_eq!(predict(&m, &x).unwrap().as_slice(), &[2.5, 2.5]);

        let m = LinearModel::new(vec![1.0].into(), 0.0);
        assert_eq!(
            predict(&m, &mat(&[&[2.0], &[3.0]])).unwrap().as_slice(),
            &[2.0, 3.0]
        );

        let m = LinearModel::new(vec![1.0, 1.0].into(), 1.0);
        assert_eq!(
            predict(&m, &mat(&[&[1.0, 2.0]])).unwrap().as_slice(),
            &[4.0]
        );

        assert!(predict(&m, &mat(&[&[1.0]])).is_err());
    }

    #[test]
    fn loss_examples() {
        let t: Vector = vec![0.3, -1.2].into();
        assert_eq!(loss(LossKind::Mse, &t, &t).unwrap(), 0.0);
        assert_eq!(loss(LossKind::Mae, &t, &t).unwrap(), 0.0);
        let zeros = Vector::zeros(2);
        assert_eq!(
            loss(LossKind::Mse, &vec![1.0, 1.0].into(), &zeros).unwrap(),
            1.0
        );
        assert_eq!(
            loss(LossKind::Mae, &vec![2.0, -2.0].into(), &zeros).unwrap(),
            2.0
        );
        assert!(loss(LossKind::Mse, &Vector::zeros(0), &Vector::zeros(0)).is_err());
        assert!(loss(LossKind::Mse, &Vector::zeros(1), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn gradient_examples() {
        let x = mat(&[&[1.0]]);
        let m = LinearModel::new(vec![1.0].into(), 0.0);
        let g = loss_gradient(LossKind::Mse, &m, &x, &vec![0.0].into()).unwrap();
        assert_eq!(g.d_theta.as_slice(), &[2.0]);
        assert_eq!(g.d_bias, 2.0);

        // Exact fit: zero gradient for both losses.
        let x = mat(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0]]);
        let m = LinearModel::new(vec![0.7, -0.2].into(), 0.1);
        let target = predict(&m, &x).unwrap();
        for kind in [LossKind::Mse, LossKind::Mae] {
            let g = loss_gradient(kind, &m, &x, &target).unwrap();
            assert!(g.coords().all(|c| c == 0.0), "{kind}: {g:?}");
        }
    }

    #[test]
    fn mae_gradient_is_mean_of_signs() {
        let x = mat(&[&[1.0], &[2.0], &[3.0]]);
        let m = LinearModel::new(vec![1.0].into(), 0.0);
        // residuals: 1, 0, -1
        let g = loss_gradient(LossKind::Mae, &m, &x, &vec![0.0, 2.0, 4.0].into()).unwrap();
        assert_eq!(g.d_bias, 0.0);
        assert!((g.d_theta[0] - (1.0 - 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let (m, x, y) = random_problem(&mut rng, 16, 5);
            let err = gradient_check(LossKind::Mse, &m, &x, &y, 1e-6).unwrap();
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn gradient_check_small_at_optimum() {
        let d = dataset::generate(4, 40, 3, 0.1).unwrap();
        let m = closed_form(&d.x_norm, &d.y).unwrap();
        let err = gradient_check(LossKind::Mse, &m, &d.x_norm, &d.y, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
        let g = loss_gradient(LossKind::Mse, &m, &d.x_norm, &d.y).unwrap();
        assert!(g.coords().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn gradient_check_flags_mae_kinks() {
        // A residual of 5e-7 sits inside the ±h stencil: the analytic slope of
        // that row is 1, the central difference sees (1.5e-6 - 5e-7) / 2h = 0.5.
        let x = mat(&[&[1.0], &[1.0]]);
        let m = LinearModel::new(vec![1.0].into(), 0.0);
        let target: Vector = vec![1.0 - 5e-7, 5.0].into();
        let err = gradient_check(LossKind::Mae, &m, &x, &target, 1e-6).unwrap();
        assert!(err > 0.1, "{err}");

        // Exactly at the kink, sign(0) = 0 equals the mean of the one-sided
        // slopes, so the check happens to agree.
        let at_kink = gradient_check(LossKind::Mae, &m, &x, &vec![1.0, 5.0].into(), 1e-6).unwrap();
        assert!(at_kink < 1e-6, "{at_kink}");
    }

    #[test]
    fn gradient_check_rejects_nonpositive_step() {
        let m = LinearModel::zeros(1);
        let x = mat(&[&[1.0]]);
        assert!(gradient_check(LossKind::Mse, &m, &x, &vec![1.0].into(), 0.0).is_err());
    }

    #[test]
    fn closed_form_exact_line() {
        let x = mat(&[&[0.0], &[1.0], &[2.0], &[5.0]]);
        let y: Vector = x
            .as_slice()
            .iter()
            .map(|v| 3.0 * v - 2.0)
            .collect::<Vec<_>>()
            .into();
        let m = closed_form(&x, &y).unwrap();
        assert!((m.theta[0] - 3.0).abs() < 1e-10);
        assert!((m.bias + 2.0).abs() < 1e-10);
    }

    #[test]
    fn closed_form_recovers_noise_free_parameters() {
        let d = dataset::generate(100, 1000, 5, 0.0).unwrap();
        let m = closed_form(&d.x_norm, &d.y).unwrap();
        for (a, b) in m.theta.iter().zip(d.true_theta.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((m.bias - d.true_bias).abs() < 1e-8);
    }

    #[test]
    fn closed_form_duplicate_column_is_singular() {
        let x = mat(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[5.0, 5.0]]);
        let y: Vector = vec![1.0, 2.0, 2.5, 4.0].into();
        assert!(matches!(closed_form(&x, &y), Err(Error::Singular { .. })));
    }

    #[test]
    fn closed_form_beats_random_models() {
        let d = dataset::generate(9, 60, 3, 0.3).unwrap();
        let best = model_loss(
            LossKind::Mse,
            &closed_form(&d.x_norm, &d.y).unwrap(),
            &d.x_norm,
            &d.y,
        )
        .unwrap();
        let mut rng = Rng::new(10);
        for _ in 0..1000 {
            let theta: Vector = (0..3).map(|_| rng.normal()).collect::<Vec<_>>().into();
            let m = LinearModel::new(theta, rng.normal());
            assert!(best <= model_loss(LossKind::Mse, &m, &d.x_norm, &d.y).unwrap());
        }
    }

    proptest! {
        #[test]
        fn mse_nonnegative_and_zero_only_at_match(
            pred in prop::collection::vec(-1e3f64..1e3, 1..20),
            shift in -1.0f64..1.0,
        ) {
            let p: Vector = pred.clone().into();
            prop_assert_eq!(loss(LossKind::Mse, &p, &p).unwrap(), 0.0);
            let t: Vector = pred.iter().map(|v| v + shift).collect::<Vec<_>>().into();
            let l = loss(LossKind::Mse, &p, &t).unwrap();
            prop_assert!(l >= 0.0);
            if p != t {
                prop_assert!(l > 0.0);
            }
        }

        #[test]
        fn mae_bias_gradient_in_unit_interval(seed in any::<u64>(), b in 1usize..30) {
            let mut rng = Rng::new(seed);
            let (m, x, y) = random_problem(&mut rng, b, 3);
            let g = loss_gradient(LossKind::Mae, &m, &x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&g.d_bias));
        }
    }
}
