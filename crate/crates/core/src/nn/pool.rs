use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel spatial mean: `C×H×W → C`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let n = T::of((h * w) as f64);
    Tensor::vector(x.data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() / n).take(c).collect())
}

pub fn global_avg_pool_backward<T: Real>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let c = dy.len();
    let n = T::of((h * w) as f64);
    Tensor::from_fn(&[c, h, w], |i| dy.data()[i / (h * w)] / n)
}

/// Non-overlapping 2×2 mean pooling. Extents must be even.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "pool expects C×H×W, got {:?}", x.shape());
    let (c, h, w) = x.chw();
    ensure!(h % 2 == 0 && w % 2 == 0, Shape, "2×2 pooling needs even extents, got {}×{}", h, w);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let src = x.data();
    Tensor::new(
        &[c, oh, ow],
        (0..c * oh * ow)
            .map(|i| {
                let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
                let base = (ch * h + 2 * y) * w + 2 * xx;
                (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter
            })
            .collect(),
    )
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (c, oh, ow) = dy.chw();
    let (h, w) = (2 * oh, 2 * ow);
    let quarter = T::of(0.25);
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
        dy.data()[(ch * oh + y / 2) * ow + xx / 2] * quarter
    })
}
