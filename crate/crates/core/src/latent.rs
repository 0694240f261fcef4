//! Dense `C×H×W` latent arrays and single-channel spatial maps.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A real-valued `channels × height × width` array stored row-major per channel.
///
/// Values are always finite. The shape is fixed at construction; element-wise
/// operations between latents require identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "latent dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::input("latent size overflows"))?;
        if data.len() != expected {
            return Err(Error::input(format!(
                "latent data has {} values, shape needs {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite latent value at index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "latent dims must be positive");
        assert!(value.is_finite());
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds a latent by evaluating `f(c, y, x)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Standard-normal latent drawn from `rng` in storage order.
    pub fn randn<R: Rng + ?Sized>(channels: usize, height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn ensure_same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Element-wise combination of two equally shaped latents.
    pub fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Result<Latent> {
        self.ensure_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Latent::new(self.channels, self.height, self.width, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Latent> {
        Latent::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Result<Latent> {
        self.map(|v| a * v)
    }

    /// `a·self + b·other`
    pub fn lincomb(&self, a: f64, other: &Latent, b: f64) -> Result<Latent> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn add(&self, other: &Latent) -> Result<Latent> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Latent) -> Result<Latent> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn dot(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Cosine similarity of the flattened arrays; `None` when either norm is zero.
    pub fn cosine(&self, other: &Latent) -> Result<Option<f64>> {
        let dot = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(None);
        }
        Ok(Some((dot / denom).clamp(-1.0, 1.0)))
    }

    /// Per-channel standardization to zero mean and unit variance.
    ///
    /// Constant channels become all-zero.
    pub fn standardize_channels(&self) -> Latent {
        let n = self.plane_len() as f64;
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let plane = self.channel(c);
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            data.extend(plane.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }));
        }
        Latent {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// A single-channel `H×W` map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SoftMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("soft map dims must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::input(format!(
                "soft map has {} values, shape needs {}",
                values.len(),
                height * width
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("soft map value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Clamps each value into `[0, 1]`; non-finite values map to 0.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Divides by the maximum when it is positive.
    pub fn max_normalized(&self) -> SoftMap {
        let m = self.max();
        if m <= 0.0 {
            return self.clone();
        }
        SoftMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| (v / m).min(1.0)).collect(),
        }
    }

    pub fn to_latent(&self) -> Latent {
        Latent {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.values.clone(),
        }
    }

    pub fn from_latent(latent: &Latent) -> Result<Self> {
        if latent.channels() != 1 {
            return Err(Error::input(format!(
                "soft map needs a single-channel latent, got {} channels",
                latent.channels()
            )));
        }
        Self::new(latent.height(), latent.width(), latent.as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_finite() {
        assert!(Latent::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Latent::new(1, 1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(Latent::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Latent::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Latent::zeros(1, 2, 2);
        let b = Latent::zeros(2, 2, 2);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Latent::randn(3, 8, 8, &mut rng).scale(4.0).unwrap().map(|v| v + 2.0).unwrap();
        let s = x.standardize_channels();
        for c in 0..3 {
            let p = s.channel(c);
            let mean = p.iter().sum::<f64>() / 64.0;
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_of_zero_is_none() {
        let a = Latent::zeros(1, 2, 2);
        let b = Latent::filled(1, 2, 2, 1.0);
        assert_eq!(a.cosine(&b).unwrap(), None);
        assert_eq!(b.cosine(&b).unwrap(), Some(1.0));
    }

    #[test]
    fn soft_map_range_is_enforced() {
        assert!(SoftMap::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(SoftMap::new(1, 2, vec![0.5, -0.1]).is_err());
        let m = SoftMap::from_clamped(1, 3, vec![2.0, -1.0, f64::NAN]).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0]);
    }
}
