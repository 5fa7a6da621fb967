use crate::error::{Error, Result};

/// Dense `f32` activations laid out as `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped samples along the batch axis.
    pub fn stack(samples: &[&Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        let mut batch = 0;
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    s.shape, first.shape
                )));
            }
            batch += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        Self::from_vec([batch, c, h, w], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Channel `c` of sample `i` as a `height*width` plane.
    pub fn plane(&self, i: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (i * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extends the bottom and right edges by mirror reflection up to the next multiple of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (ph, pw) == (h, w) {
            return self.clone();
        }
        let mirror = |i: usize, len: usize| -> usize {
            if len == 1 {
                return 0;
            }
            let period = 2 * (len - 1);
            let r = i % period;
            if r < len {
                r
            } else {
                period - r
            }
        };
        let mut out = Tensor::zeros([n, c, ph, pw]);
        for b in 0..n {
            for ch in 0..c {
                let src = self.plane(b, ch);
                let dst_start = (b * c + ch) * ph * pw;
                for y in 0..ph {
                    let sy = mirror(y, h);
                    for x in 0..pw {
                        out.data[dst_start + y * pw + x] = src[sy * w + mirror(x, w)];
                    }
                }
            }
        }
        out
    }

    /// Keeps the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if height > h || width > w {
            return Err(Error::shape(format!(
                "cannot crop {h}x{w} to {height}x{width}"
            )));
        }
        if (height, width) == (h, w) {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(n * c * height * width);
        for b in 0..n {
            for ch in 0..c {
                let p = self.plane(b, ch);
                for y in 0..height {
                    data.extend_from_slice(&p[y * w..y * w + width]);
                }
            }
        }
        Tensor::from_vec([n, c, height, width], data)
    }

    /// Adjoint of [`Tensor::crop`]: embeds into a zero tensor of the larger size.
    pub fn uncrop(&self, height: usize, width: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, height, width]);
        for b in 0..n {
            for ch in 0..c {
                let src = self.plane(b, ch);
                let start = (b * c + ch) * height * width;
                for y in 0..h {
                    out.data[start + y * width..start + y * width + w]
                        .copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_reflects_and_crop_inverts() {
        let t = Tensor::from_vec([1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = t.pad_to_multiple(4);
        assert_eq!(p.shape(), [1, 1, 4, 4]);
        assert_eq!(&p.data()[..4], &[1., 2., 3., 2.]);
        assert_eq!(&p.data()[8..12], &[1., 2., 3., 2.]);
        assert_eq!(p.crop(2, 3).unwrap(), t);
    }

    #[test]
    fn three_hundred_pads_to_three_hundred_four() {
        let t = Tensor::zeros([1, 1, 300, 300]);
        assert_eq!(t.pad_to_multiple(8).shape(), [1, 1, 304, 304]);
    }

    #[test]
    fn uncrop_is_crop_adjoint() {
        let t = Tensor::from_vec([1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let u = t.uncrop(3, 4);
        assert_eq!(u.shape(), [1, 2, 3, 4]);
        assert_eq!(u.crop(2, 2).unwrap(), t);
        assert_eq!(u.data().iter().sum::<f32>(), t.data().iter().sum::<f32>());
    }

    #[test]
    fn stack_checks_shapes() {
        let a = Tensor::zeros([1, 2, 3, 3]);
        let b = Tensor::zeros([2, 2, 3, 3]);
        assert_eq!(Tensor::stack(&[&a, &b]).unwrap().batch(), 3);
        assert!(Tensor::stack(&[&a, &Tensor::zeros([1, 1, 3, 3])]).is_err());
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
