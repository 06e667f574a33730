//! Central finite differences for checking reverse-mode gradients.
//!
//! Kept in its own crate so test suites can compare autodiff output against
//! a route that never touches the tape.

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn central_difference<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Directional central difference of `f` along `direction`.
pub fn directional_difference<F>(mut f: F, point: &[f64], direction: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let shifted = |sign: f64| -> Vec<f64> { point.iter().zip(direction).map(|(p, d)| p + sign * h * d).collect() };
    (f(&shifted(1.0)) - f(&shifted(-1.0))) / (2.0 * h)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = l2(a).max(l2(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Small deterministic generator for test inputs (SplitMix64).
#[derive(Debug, Clone)]
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}
