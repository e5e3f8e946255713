//! Multipath mmWave channel synthesis.
//!
//! Each user sees `L` paths; path `l` contributes a complex gain times the
//! planar-array steering vector at its departure angles, and the sum is
//! scaled by `sqrt(N / L)`.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::{Complex, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Serialize;

use crate::config::SystemConfig;

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathParams {
    pub gain: (f64, f64),
    pub azimuth: f64,
    pub elevation: f64,
}

impl PathParams {
    pub fn complex_gain(&self) -> C64 {
        C64::new(self.gain.0, self.gain.1)
    }
}

/// Channel vectors of all `K` users plus the path draws behind them.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub channels: Vec<CVector>,
    pub paths: Vec<Vec<PathParams>>,
    pub rng_seed: u64,
}

impl ChannelSet {
    /// Wraps hand-built channel vectors (no path metadata).
    pub fn from_vectors(channels: Vec<CVector>) -> Self {
        let paths = vec![Vec::new(); channels.len()];
        ChannelSet {
            channels,
            paths,
            rng_seed: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.channels.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.channels.first().map_or(0, |h| h.len())
    }

    /// Hash of the exact bit patterns of every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for h in &self.channels {
            for v in h.iter() {
                v.re.to_bits().hash(&mut hasher);
                v.im.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    /// CSV dump with columns `user,antenna,re,im`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "antenna", "re", "im"])?;
        for (k, h) in self.channels.iter().enumerate() {
            for (i, v) in h.iter().enumerate() {
                w.write_record(&[
                    k.to_string(),
                    i.to_string(),
                    format!("{:e}", v.re),
                    format!("{:e}", v.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Unit-norm steering vector `a_az(azimuth) ⊗ a_el(elevation)`.
///
/// Entry `i * n2 + j` is `exp(j2π(i·d1·sinφ + j·d2·sinθ)) / sqrt(n1·n2)`.
pub fn steering_vector(
    azimuth: f64,
    elevation: f64,
    n1: usize,
    n2: usize,
    spacing_h: f64,
    spacing_v: f64,
) -> CVector {
    assert!(n1 >= 1 && n2 >= 1, "array dimensions must be positive");
    let scale = 1.0 / ((n1 * n2) as f64).sqrt();
    let kh = 2.0 * PI * spacing_h * azimuth.sin();
    let kv = 2.0 * PI * spacing_v * elevation.sin();
    DVector::from_fn(n1 * n2, |idx, _| {
        let (i, j) = (idx / n2, idx % n2);
        C64::from_polar(scale, kh * i as f64 + kv * j as f64)
    })
}

/// Channel vector for given paths: `sqrt(N/L) Σ_l α_l a(φ_l, θ_l)`.
pub fn channel_from_paths(paths: &[PathParams], cfg: &SystemConfig) -> CVector {
    let n = cfg.n_horizontal * cfg.n_vertical;
    let mut h = CVector::zeros(n);
    for path in paths {
        let a = steering_vector(
            path.azimuth,
            path.elevation,
            cfg.n_horizontal,
            cfg.n_vertical,
            cfg.antenna_spacing_h,
            cfg.antenna_spacing_v,
        );
        h.axpy(path.complex_gain(), &a, C64::new(1.0, 0.0));
    }
    h * C64::new((n as f64 / paths.len().max(1) as f64).sqrt(), 0.0)
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("variance is positive");
    C64::new(normal.sample(rng), normal.sample(rng))
}

fn open_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let dist = Uniform::new(-PI, PI).expect("valid range");
    loop {
        let x = dist.sample(rng);
        if x > -PI {
            return x;
        }
    }
}

/// Draws one user's paths (first path LoS) and the resulting channel.
pub fn generate_user_channel<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SystemConfig,
) -> (CVector, Vec<PathParams>) {
    let paths: Vec<PathParams> = (0..cfg.n_paths)
        .map(|l| {
            let var = if l == 0 {
                cfg.los_gain_var
            } else {
                cfg.nlos_gain_var
            };
            let gain = complex_gaussian(rng, var);
            PathParams {
                gain: (gain.re, gain.im),
                azimuth: open_angle(rng),
                elevation: open_angle(rng),
            }
        })
        .collect();
    (channel_from_paths(&paths, cfg), paths)
}

/// Per-user generator: stream `user` of the ChaCha20 keystream keyed by `seed`.
pub fn user_rng(seed: u64, user: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Draws all `K` users from independent sub-streams of `seed`.
pub fn generate_scenario(seed: u64, cfg: &SystemConfig) -> ChannelSet {
    let (channels, paths) = (0..cfg.n_users)
        .map(|k| generate_user_channel(&mut user_rng(seed, k), cfg))
        .unzip();
    ChannelSet {
        channels,
        paths,
        rng_seed: seed,
    }
}
