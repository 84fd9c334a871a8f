use super::Image;
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Image<T>,
}

/// Mean absolute error and its gradient `sign(image - gt) / count`.
///
/// `count` defaults to the number of elements in `image`. Sub-images of a
/// split view pass the element count of the full image so that their losses
/// and gradients sum to the full-image ones.
pub fn l1_loss<T: Real>(image: &Image<T>, gt: &Image<T>, count: Option<usize>) -> Loss<T> {
    assert_eq!((image.width, image.height), (gt.width, gt.height), "loss shape mismatch");
    let n = T::of_usize(count.unwrap_or(image.data.len()));
    let inv = T::one() / n;
    let mut sum = T::zero();
    let mut grad = Image::new(image.width, image.height);
    for ((g, &a), &b) in grad.data.iter_mut().zip(&image.data).zip(&gt.data) {
        let d = a - b;
        sum += d.abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Loss { value: sum / n, grad }
}
