//! Single-channel float images and the separable filters shared by the
//! metric, matching and flow modules.
//!
//! All filters replicate edge pixels at the border.

/// A row-major single-channel `f32` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "plane data length");
        Plane {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Plane::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Plane::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, x: f32) {
        self.data[v * self.width + u] = x;
    }

    /// Sample with edge replication.
    #[inline]
    pub fn get_clamped(&self, u: isize, v: isize) -> f32 {
        let u = u.clamp(0, self.width as isize - 1) as usize;
        let v = v.clamp(0, self.height as isize - 1) as usize;
        self.data[v * self.width + u]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(
            self.height,
            self.width,
            self.data.iter().map(|x| f(*x)).collect(),
        )
    }

    /// Separable convolution with a symmetric odd-length kernel.
    pub fn convolve_separable(&self, kernel: &[f32]) -> Plane {
        assert!(kernel.len() % 2 == 1, "kernel length must be odd");
        let r = kernel.len() / 2;
        let (h, w) = (self.height, self.width);
        let mut tmp = vec![0.0f32; h * w];
        let mut padded = vec![0.0f32; w + 2 * r];
        for v in 0..h {
            let row = &self.data[v * w..(v + 1) * w];
            for (i, p) in padded.iter_mut().enumerate() {
                *p = row[i.saturating_sub(r).min(w - 1)];
            }
            for (u, t) in tmp[v * w..(v + 1) * w].iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (wk, x) in kernel.iter().zip(&padded[u..u + kernel.len()]) {
                    acc += wk * x;
                }
                *t = acc;
            }
        }
        let mut out = vec![0.0f32; h * w];
        for (v, dst) in out.chunks_exact_mut(w).enumerate() {
            for (k, wk) in kernel.iter().enumerate() {
                let src = (v + k).saturating_sub(r).min(h - 1);
                for (o, t) in dst.iter_mut().zip(&tmp[src * w..(src + 1) * w]) {
                    *o += wk * t;
                }
            }
        }
        Plane::new(h, w, out)
    }

    pub fn gaussian_blur(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        self.convolve_separable(&gaussian_kernel(sigma))
    }

    /// 5-tap binomial smoothing followed by 2x decimation.
    pub fn pyr_down(&self) -> Plane {
        let smooth = self.convolve_separable(&BINOMIAL5);
        let (h, w) = ((self.height / 2).max(1), (self.width / 2).max(1));
        Plane::from_fn(h, w, |u, v| smooth.get(2 * u, 2 * v))
    }

    /// 3x3 Sobel derivatives, normalized by 1/8 so a unit ramp has gradient 1.
    pub fn sobel(&self) -> (Plane, Plane) {
        let (h, w) = self.dims();
        let mut gx = vec![0.0f32; h * w];
        let mut gy = vec![0.0f32; h * w];
        for v in 0..h as isize {
            for u in 0..w as isize {
                let p = |du: isize, dv: isize| self.get_clamped(u + du, v + dv);
                let dx =
                    (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let dy =
                    (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let i = v as usize * w + u as usize;
                gx[i] = dx / 8.0;
                gy[i] = dy / 8.0;
            }
        }
        (Plane::new(h, w, gx), Plane::new(h, w, gy))
    }
}

pub const BINOMIAL5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Sampled Gaussian truncated at `ceil(3 sigma)` and renormalized to unit sum.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    assert!(sigma > 0.0);
    let r = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= sum);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(k[5] > k[4] && k[4] == k[6]);
    }

    #[test]
    fn blur_preserves_constants() {
        let p = Plane::filled(9, 13, 0.25);
        let b = p.gaussian_blur(2.0);
        assert!(b.data().iter().all(|x| (x - 0.25).abs() < 1e-6));
    }

    #[test]
    fn sobel_of_ramp_is_unit() {
        let p = Plane::from_fn(8, 8, |u, _| u as f32);
        let (gx, gy) = p.sobel();
        assert!((gx.get(4, 4) - 1.0).abs() < 1e-6);
        assert_eq!(gy.get(4, 4), 0.0);
    }

    #[test]
    fn pyr_down_halves() {
        let p = Plane::filled(17, 32, 1.0);
        assert_eq!(p.pyr_down().dims(), (8, 16));
    }
}
