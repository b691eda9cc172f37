//! Network-free segmentation arithmetic: flow-based mask prediction,
//! flow-attention feature fusion, dice metric and mask moments.

mod io;

pub use io::{read_flow_csv, read_mask_csv, read_mask_pgm, write_flow_csv, write_mask_csv, write_mask_pgm};

use crate::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// Strictly binary H×W mask; `(x, y)` is `(column, row)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Builds a mask from raw values, rejecting anything other than 0/1.
    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self, FlowError> {
        if values.len() != width * height {
            return Err(FlowError::DimensionMismatch(format!(
                "{} values for a {width}x{height} mask",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(FlowError::Malformed(format!("non-binary value at {i}")));
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.values[y * self.width + x] = on as u8;
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    fn same_dims(&self, w: usize, h: usize, what: &str) -> Result<(), FlowError> {
        if self.width != w || self.height != h {
            return Err(FlowError::DimensionMismatch(format!(
                "{what}: {w}x{h} vs mask {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement `(u, v)` in pixels along `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct FlowField<T: Real> {
    pub width: usize,
    pub height: usize,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(width: usize, height: usize, u: Vec<T>, v: Vec<T>) -> Result<Self, FlowError> {
        if u.len() != width * height || v.len() != width * height {
            return Err(FlowError::DimensionMismatch("flow planes".into()));
        }
        if let Some(i) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite(i));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn constant(width: usize, height: usize, du: T, dv: T) -> Self {
        Self {
            width,
            height,
            u: vec![du; width * height],
            v: vec![dv; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self { width, height, u, v }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|&a| -a).collect(),
            v: self.v.iter().map(|&a| -a).collect(),
        }
    }
}

/// C×H×W feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct FeatureMap<T: Real> {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, width: usize, height: usize, values: Vec<T>) -> Result<Self, FlowError> {
        if values.len() != channels * width * height {
            return Err(FlowError::DimensionMismatch("feature map size".into()));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite(i));
        }
        Ok(Self {
            channels,
            width,
            height,
            values,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            values: vec![T::zero(); channels * width * height],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> T {
        self.values[(c * self.height + y) * self.width + x]
    }
}

/// Warps the foreground of `prev` by `flow` (displacements rounded to the
/// nearest pixel). Targets outside the image are dropped; colliding targets
/// are set once.
pub fn predict_mask<T: Real>(prev: &BinaryMask, flow: &FlowField<T>) -> Result<BinaryMask, FlowError> {
    prev.same_dims(flow.width, flow.height, "flow")?;
    let mut out = BinaryMask::new(prev.width, prev.height);
    for (x, y) in prev.ones() {
        let (u, v) = flow.at(x, y);
        let tx = x as i64 + u.round().as_f64() as i64;
        let ty = y as i64 + v.round().as_f64() as i64;
        if tx >= 0 && ty >= 0 && (tx as usize) < prev.width && (ty as usize) < prev.height {
            out.set(tx as usize, ty as usize, true);
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `F_o = F_c + F_c ⊙ σ(F_a)` with the one-channel attention broadcast
/// over the channels of `features`.
pub fn attention_fuse<T: Real>(features: &FeatureMap<T>, attention: &FeatureMap<T>) -> Result<FeatureMap<T>, FlowError> {
    if attention.channels != 1 {
        return Err(FlowError::DimensionMismatch(format!(
            "attention must have one channel, has {}",
            attention.channels
        )));
    }
    if features.width != attention.width || features.height != attention.height {
        return Err(FlowError::DimensionMismatch(format!(
            "features {}x{} vs attention {}x{}",
            features.width, features.height, attention.width, attention.height
        )));
    }
    let plane = features.width * features.height;
    let gate: Vec<T> = attention.values.iter().map(|&a| sigmoid(a)).collect();
    let values = features
        .values
        .iter()
        .enumerate()
        .map(|(i, &f)| f + f * gate[i % plane])
        .collect();
    Ok(FeatureMap {
        channels: features.channels,
        width: features.width,
        height: features.height,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct DiceScore<T: Real> {
    pub coefficient: T,
    pub loss: T,
}

/// Dice overlap `2|G∩S| / (|G|+|S|)`; two empty masks score 1.
pub fn dice<T: Real>(ground: &BinaryMask, pred: &BinaryMask) -> Result<DiceScore<T>, FlowError> {
    ground.same_dims(pred.width, pred.height, "prediction")?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&g, &s) in ground.values.iter().zip(&pred.values) {
        inter += (g & s) as usize;
        total += (g + s) as usize;
    }
    let coefficient = if total == 0 {
        T::one()
    } else {
        T::from_usize(2 * inter).unwrap() / T::from_usize(total).unwrap()
    };
    Ok(DiceScore {
        coefficient,
        loss: T::one() - coefficient,
    })
}

/// Horizontal centroid `M10 / M00` in column units.
pub fn mask_centroid<T: Real>(mask: &BinaryMask) -> Result<T, FlowError> {
    let (m00, m10) = mask.ones().fold((0usize, 0usize), |(a, b), (x, _)| (a + 1, b + x));
    if m00 == 0 {
        return Err(FlowError::EmptyMask);
    }
    Ok(T::from_usize(m10).unwrap() / T::from_usize(m00).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p))
    }

    #[test]
    fn zero_flow_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_mask(&mut rng, 16, 12, 0.3);
        let out = predict_mask(&m, &FlowField::<f64>::constant(16, 12, 0.0, 0.0)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn single_pixel_moves_with_constant_flow() {
        let mut m = BinaryMask::new(8, 6);
        m.set(3, 2, true);
        let out = predict_mask(&m, &FlowField::<f64>::constant(8, 6, 1.0, 0.0)).unwrap();
        assert_eq!(out.ones().collect::<Vec<_>>(), vec![(4, 2)]);
    }

    #[test]
    fn subpixel_flow_rounds_and_out_of_bounds_drops() {
        let mut m = BinaryMask::new(4, 4);
        m.set(0, 0, true);
        m.set(3, 3, true);
        let out = predict_mask(&m, &FlowField::<f64>::constant(4, 4, 0.6, -0.4)).unwrap();
        assert_eq!(out.ones().collect::<Vec<_>>(), vec![(1, 0)]);
    }

    #[test]
    fn mismatched_dimensions() {
        let m = BinaryMask::new(4, 4);
        assert!(matches!(
            predict_mask(&m, &FlowField::<f64>::constant(5, 4, 0.0, 0.0)),
            Err(FlowError::DimensionMismatch(_))
        ));
        assert!(dice::<f64>(&m, &BinaryMask::new(4, 5)).is_err());
        let fc = FeatureMap::<f64>::zeros(2, 4, 4);
        assert!(attention_fuse(&fc, &FeatureMap::zeros(1, 3, 4)).is_err());
        assert!(attention_fuse(&fc, &FeatureMap::zeros(2, 4, 4)).is_err());
    }

    #[test]
    fn attention_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..3 * 5 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fc = FeatureMap::new(3, 5, 4, vals).unwrap();
        let zero = attention_fuse(&FeatureMap::<f64>::zeros(3, 5, 4), &FeatureMap::zeros(1, 5, 4)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let half = attention_fuse(&fc, &FeatureMap::zeros(1, 5, 4)).unwrap();
        for (&o, &f) in half.values.iter().zip(&fc.values) {
            assert!((o - 1.5 * f).abs() < 1e-15);
        }
        let sat = attention_fuse(&fc, &FeatureMap::new(1, 5, 4, vec![1e3; 20]).unwrap()).unwrap();
        for (&o, &f) in sat.values.iter().zip(&fc.values) {
            assert!((o - 2.0 * f).abs() < 1e-6);
        }
    }

    #[test]
    fn dice_examples() {
        let g = BinaryMask::from_fn(6, 6, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
        let s = BinaryMask::from_fn(6, 6, |x, y| (2..4).contains(&x) && (1..3).contains(&y));
        assert_eq!(dice::<f64>(&g, &g).unwrap().coefficient, 1.0);
        let d = dice::<f64>(&g, &s).unwrap();
        assert_eq!(d.coefficient, 0.5);
        assert_eq!(d.loss, 0.5);
        let far = BinaryMask::from_fn(6, 6, |x, y| x == 5 && y == 5);
        assert_eq!(dice::<f64>(&g, &far).unwrap().coefficient, 0.0);
        let e = BinaryMask::new(6, 6);
        assert_eq!(dice::<f32>(&e, &e).unwrap().coefficient, 1.0);
    }

    #[test]
    fn centroid_examples() {
        let mut m = BinaryMask::new(10, 3);
        m.set(5, 1, true);
        assert_eq!(mask_centroid::<f64>(&m).unwrap(), 5.0);
        let mut m = BinaryMask::new(10, 3);
        m.set(2, 0, true);
        m.set(8, 2, true);
        assert_eq!(mask_centroid::<f64>(&m).unwrap(), 5.0);
        assert_eq!(mask_centroid::<f64>(&BinaryMask::new(3, 3)), Err(FlowError::EmptyMask));
    }

    #[test]
    fn warp_matches_exhaustive_set_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 32, 32, 0.3);
            let flow = FlowField::<f64>::from_fn(32, 32, |_, _| (0.0, 0.0));
            let flow = FlowField::new(
                32,
                32,
                flow.u.iter().map(|_| rng.random_range(-4i32..=4) as f64).collect(),
                flow.v.iter().map(|_| rng.random_range(-4i32..=4) as f64).collect(),
            )
            .unwrap();
            let mut targets = std::collections::HashSet::new();
            for y in 0..32 {
                for x in 0..32 {
                    if m.get(x, y) {
                        let (u, v) = flow.at(x, y);
                        targets.insert((x as i64 + u as i64, y as i64 + v as i64));
                    }
                }
            }
            let expect = BinaryMask::from_fn(32, 32, |x, y| targets.contains(&(x as i64, y as i64)));
            assert_eq!(predict_mask(&m, &flow).unwrap(), expect);
        }
    }

    #[test]
    fn centroid_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_mask(&mut rng, 40, 30, 0.1);
        let (mut sx, mut n) = (0.0, 0.0);
        for y in 0..30 {
            for x in 0..40 {
                if m.get(x, y) {
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        assert!((mask_centroid::<f64>(&m).unwrap() - sx / n).abs() < 1e-12);
    }

    #[test]
    fn masks_reject_non_binary_values() {
        assert!(BinaryMask::from_values(2, 1, vec![0, 2]).is_err());
        assert!(BinaryMask::from_values(2, 1, vec![0, 1]).is_ok());
    }

    proptest! {
        #[test]
        fn dice_is_symmetric_and_one_only_on_equality(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 9, 7, 0.4);
            let b = if rng.random_bool(0.3) { a.clone() } else { random_mask(&mut rng, 9, 7, 0.4) };
            let ab = dice::<f64>(&a, &b).unwrap().coefficient;
            let ba = dice::<f64>(&b, &a).unwrap().coefficient;
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 1.0, a == b);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn centroid_within_column_range(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng, 13, 5, 0.2);
            prop_assume!(!m.is_empty());
            let c: f64 = mask_centroid(&m).unwrap();
            let lo = m.ones().map(|p| p.0).min().unwrap() as f64;
            let hi = m.ones().map(|p| p.0).max().unwrap() as f64;
            prop_assert!(c >= lo && c <= hi);
        }

        #[test]
        fn fused_output_is_bounded(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fc = FeatureMap::new(2, 4, 3, (0..24).map(|_| rng.random_range(-5.0f64..5.0)).collect()).unwrap();
            let fa = FeatureMap::new(1, 4, 3, (0..12).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap();
            let out = attention_fuse(&fc, &fa).unwrap();
            for (&o, &f) in out.values.iter().zip(&fc.values) {
                prop_assert!(o.abs() <= 2.0 * f.abs() + 1e-12);
            }
        }

        #[test]
        fn injective_integer_flow_round_trips(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (du, dv) = (rng.random_range(-3i32..=3), rng.random_range(-3i32..=3));
            // Keep the mask away from the border so nothing leaves the image.
            let m = BinaryMask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..12).contains(&y) && rng_bit(seed, x, y));
            let fwd = FlowField::<f64>::constant(16, 16, du as f64, dv as f64);
            let moved = predict_mask(&m, &fwd).unwrap();
            let back = predict_mask(&moved, &fwd.negated()).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    fn rng_bit(seed: u64, x: usize, y: usize) -> bool {
        (seed.wrapping_mul(6364136223846793005).wrapping_add((x * 31 + y * 17) as u64) >> 7) & 1 == 1
    }
}
