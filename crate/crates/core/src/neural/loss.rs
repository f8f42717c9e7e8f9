use crate::scalar::Scalar;

/// Smooth L1 on one residual: `(loss, dloss/dd)`.
pub fn huber<T: Scalar>(d: T) -> (T, T) {
    let half = T::lit(0.5);
    if d.abs() < T::one() {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

/// Mean Smooth L1 over paired elements and its gradient w.r.t. `pred`.
pub fn huber_loss<T: Scalar>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "pred/target length");
    if pred.is_empty() {
        return (T::zero(), Vec::new());
    }
    let n = T::from_usize(pred.len()).unwrap();
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (l, g) = huber(*p - *t);
        total += l;
        grad.push(g / n);
    }
    (total / n, grad)
}
