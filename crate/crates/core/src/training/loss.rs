use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Weighted squared/absolute error per joint:
/// `(1/N)[(1-α)·Σ‖y-ŷ‖² + α·Σ‖y-ŷ‖₁]`.
pub fn loss(y: &Matrix, y_hat: &Matrix, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if y.shape() != y_hat.shape() {
        return Err(Error::shape("loss", y.shape(), y_hat.shape()));
    }
    if y.rows() == 0 {
        return Err(Error::Domain("loss of an empty pose".into()));
    }
    let d = y_hat.sub(y)?;
    let sq: f64 = d.data().iter().map(|v| v * v).sum();
    let abs: f64 = d.data().iter().map(|v| v.abs()).sum();
    Ok(((1.0 - alpha) * sq + alpha * abs) / y.rows() as f64)
}

/// Mean of [`loss`] over paired samples.
pub fn batch_loss(pairs: &[(&Matrix, &Matrix)], alpha: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for (y, y_hat) in pairs {
        total += loss(y, y_hat, alpha)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Records [`loss`] on the tape. The absolute-value subgradient at zero is 0.
pub fn loss_on(tape: &mut Tape, y_hat: Var, y: &Matrix, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    if tape.shape(y_hat) != y.shape() {
        return Err(Error::shape("loss", y.shape(), tape.shape(y_hat)));
    }
    let n = y.rows() as f64;
    let target = tape.constant(y.clone());
    let d = tape.sub(y_hat, target)?;
    let sq = tape.square(d);
    let sq = tape.sum(sq);
    let abs = tape.abs(d);
    let abs = tape.sum(abs);
    tape.axpby(sq, (1.0 - alpha) / n, abs, alpha / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_pose() -> (Matrix, Matrix) {
        let y = Matrix::zeros(1, 3);
        let y_hat = Matrix::from_rows(&[[3.0, 4.0, 0.0]]).unwrap();
        (y, y_hat)
    }

    #[test]
    fn endpoints_by_hand() {
        let (y, y_hat) = offset_pose();
        assert_eq!(loss(&y, &y_hat, 0.0).unwrap(), 25.0);
        assert_eq!(loss(&y, &y_hat, 1.0).unwrap(), 7.0);
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let y = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 9.0]]).unwrap();
        for alpha in [0.0, 0.03, 0.5, 1.0] {
            assert_eq!(loss(&y, &y, alpha).unwrap(), 0.0);
        }
    }

    #[test]
    fn shape_and_alpha_checked() {
        let (y, _) = offset_pose();
        assert!(matches!(
            loss(&y, &Matrix::zeros(2, 3), 0.1),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(loss(&y, &y, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn tape_value_and_gradient() {
        let (y, y_hat) = offset_pose();
        let mut tape = Tape::new();
        let p = tape.param(y_hat);
        let l = loss_on(&mut tape, p, &y, 0.25).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 0.75 * 25.0 + 0.25 * 7.0);
        let g = tape.backward(l).unwrap();
        // d/dx [0.75·x² + 0.25·|x|] = 1.5x + 0.25·sign(x); zero entry gets 0
        assert_eq!(
            g.get(p).unwrap().data(),
            &[1.5 * 3.0 + 0.25, 1.5 * 4.0 + 0.25, 0.0]
        );
    }
}
