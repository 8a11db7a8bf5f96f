//! Linear codec over a seeded orthogonal basis. With `n = 3·side²` working
//! pixels, the basis `B` is an `n×n` matrix with orthonormal rows; embed is
//! `z = B·x_norm` written into the first `n` latent slots (the rest stay
//! zero) and generate is `x = Bᵀ·z[..n]`, ignoring the padding.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::{Codec, Latent, LATENT_LEN};
use crate::error::{Error, Result};
use crate::imaging::{resize, ImagePlane, ResizeMode};
use crate::numerics::linalg::{gemm, MatRef};
use crate::numerics::tensor::all_finite;
use crate::numerics::SeededRng;

const BLOCK: usize = 64;
const MAX_DRAWS: u64 = 8;
/// A row whose norm drops below this fraction of its drawn norm during
/// projection is treated as linearly dependent.
const DEPENDENCE_RATIO: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ToyLinearCodec {
    seed: u64,
    side: usize,
    out_side: usize,
    draws: u64,
    basis: Arc<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormalize the rows of a row-major `rows×cols` matrix in place
/// using block classical Gram–Schmidt with one full reorthogonalization
/// pass. Returns `None` if the rows are (numerically) dependent.
pub fn orthonormalize_rows(mut a: Vec<f64>, rows: usize, cols: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), rows * cols, "matrix buffer does not match shape");
    if rows > cols {
        return None;
    }
    let mut start = 0;
    while start < rows {
        let end = (start + BLOCK).min(rows);
        let b = end - start;
        let (done, rest) = a.split_at_mut(start * cols);
        let block = &mut rest[..b * cols];
        let drawn: Vec<f64> = block.chunks(cols).map(|r| dot(r, r).sqrt()).collect();
        if start > 0 {
            let mut coef = vec![0.0; b * start];
            for _ in 0..2 {
                gemm(
                    1.0,
                    MatRef::new(block, b, cols),
                    MatRef::new(done, start, cols).t(),
                    0.0,
                    &mut coef,
                    start,
                );
                gemm(-1.0, MatRef::new(&coef, b, start), MatRef::new(done, start, cols), 1.0, block, cols);
            }
        }
        for i in 0..b {
            let (prev, cur) = block.split_at_mut(i * cols);
            let row = &mut cur[..cols];
            for _ in 0..2 {
                for k in 0..i {
                    let q = &prev[k * cols..(k + 1) * cols];
                    let d = dot(row, q);
                    row.iter_mut().zip(q).for_each(|(r, q)| *r -= d * q);
                }
            }
            let norm = dot(row, row).sqrt();
            if !(norm > DEPENDENCE_RATIO * drawn[i]) {
                return None;
            }
            row.iter_mut().for_each(|r| *r /= norm);
        }
        start = end;
    }
    Some(a)
}

impl ToyLinearCodec {
    pub(crate) fn check_resolution(side: usize) -> Result<()> {
        if side == 0 || 3 * side * side > LATENT_LEN {
            return Err(Error::Config(format!(
                "toy codec working_resolution {side} needs 0 < 3·side² ≤ {LATENT_LEN}"
            )));
        }
        Ok(())
    }

    /// Draw a Gaussian `n×n` matrix from `seed` and orthonormalize its rows.
    /// A dependent draw is retried with the next sub-seed and logged.
    pub fn new(seed: u64, side: usize) -> Result<Self> {
        Self::check_resolution(side)?;
        let n = 3 * side * side;
        let root = SeededRng::new(seed);
        for draw in 0..MAX_DRAWS {
            let mut rng = root.derive("toy-codec", draw);
            let raw = (0..n * n).map(|_| rng.normal()).collect();
            if let Some(basis) = orthonormalize_rows(raw, n, n) {
                return Ok(Self {
                    seed,
                    side,
                    out_side: side,
                    draws: draw + 1,
                    basis: Arc::new(basis),
                });
            }
            log::warn!("toy codec seed {seed}: draw {draw} was rank-deficient, redrawing with sub-seed {}", draw + 1);
        }
        Err(Error::NonFinite(format!(
            "toy codec seed {seed}: {MAX_DRAWS} consecutive rank-deficient draws"
        )))
    }

    /// Process-wide cache keyed by `(seed, side)`. Construction of the
    /// 32×32 codec takes seconds, so repeated builds share one basis.
    pub fn cached(seed: u64, side: usize) -> Result<Arc<ToyLinearCodec>> {
        static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<ToyLinearCodec>>>> = OnceLock::new();
        let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = cache.get(&(seed, side)) {
            return Ok(Arc::clone(c));
        }
        let codec = Arc::new(Self::new(seed, side)?);
        cache.insert((seed, side), Arc::clone(&codec));
        Ok(codec)
    }

    /// Same basis, different size for [`Codec::generate`] output.
    pub fn with_output_resolution(&self, out_side: usize) -> Self {
        Self {
            out_side,
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of Gaussian draws needed (1 unless a draw was dependent).
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Active latent dimension `n = 3·side²`.
    pub fn active_len(&self) -> usize {
        3 * self.side * self.side
    }

    /// Row-major `n×n` basis; row `k` is the `k`-th basis vector.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    fn check_pixels(&self, what: &'static str, pixels: &[f64]) -> Result<()> {
        if pixels.len() != self.active_len() {
            return Err(Error::dim(what, self.active_len(), pixels.len()));
        }
        if !all_finite(pixels) {
            return Err(Error::NonFinite(format!("{what}: non-finite pixel values")));
        }
        Ok(())
    }
}

impl Codec for ToyLinearCodec {
    fn working_resolution(&self) -> (usize, usize) {
        (self.side, self.side)
    }

    fn output_resolution(&self) -> (usize, usize) {
        (self.out_side, self.out_side)
    }

    fn embed(&self, img: &ImagePlane) -> Result<Latent> {
        if img.dims() == self.working_resolution() {
            self.embed_float(img.data())
        } else {
            self.embed_float(resize(img, self.side, self.side, ResizeMode::Bilinear)?.data())
        }
    }

    fn generate(&self, z: &Latent) -> Result<ImagePlane> {
        let img = ImagePlane::new_clamped(self.side, self.side, self.generate_float(z)?)?;
        resize(&img, self.out_side, self.out_side, ResizeMode::Bilinear)
    }

    fn embed_float(&self, pixels: &[f64]) -> Result<Latent> {
        self.check_pixels("ToyLinearCodec::embed_float", pixels)?;
        let n = self.active_len();
        let x: Vec<f64> = pixels.iter().map(|&p| p / 127.5 - 1.0).collect();
        let mut z = vec![0.0; LATENT_LEN];
        for (zk, row) in z[..n].iter_mut().zip(self.basis.chunks_exact(n)) {
            *zk = dot(row, &x);
        }
        Latent::from_vec(z)
    }

    fn generate_float(&self, z: &Latent) -> Result<Vec<f64>> {
        let n = self.active_len();
        let mut x = vec![0.0; n];
        for (&zk, row) in z.data()[..n].iter().zip(self.basis.chunks_exact(n)) {
            x.iter_mut().zip(row).for_each(|(xi, r)| *xi += zk * r);
        }
        Ok(x.into_iter().map(|v| 127.5 * (v + 1.0)).collect())
    }

    fn pullback(&self, _z: &Latent, d_pixels: &[f64]) -> Result<Latent> {
        self.check_pixels("ToyLinearCodec::pullback", d_pixels)?;
        let n = self.active_len();
        let mut dz = vec![0.0; LATENT_LEN];
        for (dk, row) in dz[..n].iter_mut().zip(self.basis.chunks_exact(n)) {
            *dk = 127.5 * dot(row, d_pixels);
        }
        Latent::from_vec(dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Arc<ToyLinearCodec> {
        ToyLinearCodec::cached(11, 8).unwrap()
    }

    fn active_latent(codec: &ToyLinearCodec, seed: u64) -> Latent {
        let mut rng = SeededRng::new(seed);
        let mut z = vec![0.0; LATENT_LEN];
        z[..codec.active_len()].iter_mut().for_each(|v| *v = rng.normal());
        Latent::from_vec(z).unwrap()
    }

    #[test]
    fn row_gram_is_identity() {
        let c = small();
        let n = c.active_len();
        // Oracle: direct triple loop, independent of the gemm path.
        let b = c.basis();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let g: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        assert_eq!(c.draws(), 1);
    }

    #[test]
    fn seeds_distinguish_codecs() {
        let a = ToyLinearCodec::new(1, 4).unwrap();
        let b = ToyLinearCodec::new(1, 4).unwrap();
        let c = ToyLinearCodec::new(2, 4).unwrap();
        assert_eq!(a.basis(), b.basis());
        let dist: f64 = a.basis().iter().zip(c.basis()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 0.0);
    }

    #[test]
    fn dependent_rows_detected() {
        let mut m = vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 0.0];
        assert!(orthonormalize_rows(m.clone(), 3, 3).is_none());
        m[3] = 2.5;
        assert!(orthonormalize_rows(m, 3, 3).is_some());
        assert!(orthonormalize_rows(vec![1.0; 6], 3, 2).is_none());
    }

    #[test]
    fn blocked_path_matches_gram_identity() {
        // 150 rows crosses two block boundaries.
        let mut rng = SeededRng::new(4);
        let (r, c) = (150, 160);
        let q = orthonormalize_rows((0..r * c).map(|_| rng.normal()).collect(), r, c).unwrap();
        for i in 0..r {
            for j in 0..r {
                let g = dot(&q[i * c..(i + 1) * c], &q[j * c..(j + 1) * c]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_normalized_image_gives_zero_latent() {
        let c = small();
        let gray = ImagePlane::filled(8, 8, [127.5; 3]).unwrap();
        assert!(c.embed(&gray).unwrap().data().iter().all(|&v| v.abs() < 1e-12));
        let mid = c.generate(&Latent::zeros()).unwrap();
        assert!(mid.data().iter().all(|&v| v == 127.5));
    }

    #[test]
    fn embed_is_affine() {
        // x ↦ B(x/127.5 − 1) gives embed(a+b) = embed(a) + embed(b) + B·1.
        let c = small();
        let n = c.active_len();
        let ones_term = c.embed_float(&vec![255.0; n]).unwrap();
        for seed in 0..3 {
            let mut rng = SeededRng::new(seed);
            let a: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 120.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 120.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = c.embed_float(&sum).unwrap();
            let (ea, eb) = (c.embed_float(&a).unwrap(), c.embed_float(&b).unwrap());
            for k in 0..LATENT_LEN {
                let rhs = ea.data()[k] + eb.data()[k] + ones_term.data()[k];
                assert!((lhs.data()[k] - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn latent_round_trip_and_padding() {
        let c = small();
        for seed in 0..20 {
            let z = active_latent(&c, seed);
            let back = c.embed_float(&c.generate_float(&z).unwrap()).unwrap();
            let err = z.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
        let img = ImagePlane::from_fn(20, 20, |y, x| [y as f64 * 12.0, x as f64 * 12.0, 50.0]).unwrap();
        let z = c.embed(&img).unwrap();
        assert!(z.data()[c.active_len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_idempotent_and_non_expanding() {
        let c = small();
        let n = c.active_len();
        let mut rng = SeededRng::new(9);
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 255.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 255.0)).collect();
        let once = c.generate_float(&c.embed_float(&x).unwrap()).unwrap();
        let twice = c.generate_float(&c.embed_float(&once).unwrap()).unwrap();
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-9));
        let (ex, ey) = (c.embed_float(&x).unwrap(), c.embed_float(&y).unwrap());
        let dz: f64 = ex.data().iter().zip(ey.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dx: f64 = x.iter().zip(&y).map(|(a, b)| ((a - b) / 127.5).powi(2)).sum::<f64>().sqrt();
        assert!(dz <= dx * (1.0 + 1e-12));
    }

    #[test]
    fn pullback_matches_finite_difference() {
        let c = small();
        let n = c.active_len();
        let z = active_latent(&c, 2);
        let mut rng = SeededRng::new(3);
        let target: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 255.0)).collect();
        let loss = |z: &Latent| -> f64 {
            let x = c.generate_float(z).unwrap();
            x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
        };
        let x = c.generate_float(&z).unwrap();
        let d: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        let g = c.pullback(&z, &d).unwrap();
        for k in [0, 7, n - 1] {
            let h = 1e-4;
            let mut zp = z.clone().into_data();
            zp[k] += h;
            let mut zm = z.clone().into_data();
            zm[k] -= h;
            let num = (loss(&Latent::from_vec(zp).unwrap()) - loss(&Latent::from_vec(zm).unwrap())) / (2.0 * h);
            assert!((num - g.data()[k]).abs() < 1e-6 * num.abs().max(1.0), "{num} vs {}", g.data()[k]);
        }
    }

    #[test]
    fn generate_resizes_and_is_deterministic() {
        let c = small().with_output_resolution(16);
        let z = active_latent(&c, 5);
        let a = c.generate(&z).unwrap();
        assert_eq!(a.dims(), (16, 16));
        assert_eq!(a, c.generate(&z).unwrap());
        assert!(c.embed_float(&[0.0; 3]).is_err());
    }
}
