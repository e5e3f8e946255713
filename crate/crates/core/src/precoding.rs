//! Quantized analog precoding, equivalent channels, and the normalized ZF
//! digital stage.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::{CVector, ChannelSet, C64};
use crate::clustering::GroupingPlan;
use crate::config::{Architecture, SystemConfig};

pub type CMatrix = DMatrix<C64>;

/// Condition number of `H̄ᴴH̄` above which ZF is refused.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrecodingError {
    #[error("equivalent channel matrix is singular (Gram condition number {condition:e})")]
    SingularEquivalentChannel { condition: f64 },
    #[error("analog precoding needs a hybrid architecture, got {0}")]
    NotHybrid(Architecture),
    #[error("expected {expected} head channels, got {got}")]
    HeadCount { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct HybridPrecoder {
    /// `N × N_RF` analog matrix (identity for fully digital).
    pub analog: CMatrix,
    /// One digital vector per beam, each with `‖A d_g‖ = 1`.
    pub digital: Vec<CVector>,
    /// `h̄_k = Aᴴ h_k` for every user.
    pub equiv_channels: Vec<CVector>,
    pub architecture: Architecture,
}

impl HybridPrecoder {
    /// `h̄_kᴴ d_g`.
    pub fn coupling(&self, user: usize, beam: usize) -> C64 {
        self.equiv_channels[user].dotc(&self.digital[beam])
    }

    /// `h̄_kᴴ d_i` for every user `k` (rows) and beam `i` (columns).
    pub fn coupling_matrix(&self) -> Vec<Vec<C64>> {
        (0..self.equiv_channels.len())
            .map(|k| (0..self.digital.len()).map(|g| self.coupling(k, g)).collect())
            .collect()
    }

    /// CSV dump with columns `matrix,row,col,re,im`; the digital vectors are
    /// written as the columns of `D`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["matrix", "row", "col", "re", "im"])?;
        let mut put = |name: &str, r: usize, c: usize, v: C64| {
            w.write_record(&[
                name.to_string(),
                r.to_string(),
                c.to_string(),
                format!("{:e}", v.re),
                format!("{:e}", v.im),
            ])
        };
        for c in 0..self.analog.ncols() {
            for r in 0..self.analog.nrows() {
                put("analog", r, c, self.analog[(r, c)])?;
            }
        }
        for (c, d) in self.digital.iter().enumerate() {
            for (r, v) in d.iter().enumerate() {
                put("digital", r, c, *v)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Phase of `v`, with the zero value mapped to 0.
pub fn phase(v: C64) -> f64 {
    if v.norm_sqr() == 0.0 {
        0.0
    } else {
        v.arg()
    }
}

/// Distance between two angles on the circle, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Index `n` of the grid point `2πn / 2^bits` nearest to `angle` on the circle.
pub fn quantize_phase(angle: f64, bits: u32) -> usize {
    let levels = 1usize << bits;
    let step = 2.0 * PI / levels as f64;
    let x = angle.rem_euclid(2.0 * PI) / step;
    let lo = x.floor();
    let n = if x - lo <= 0.5 { lo } else { lo + 1.0 };
    (n as usize) % levels
}

fn grid_point(angle: f64, bits: u32, amplitude: f64) -> C64 {
    let n = quantize_phase(angle, bits);
    C64::from_polar(amplitude, 2.0 * PI * n as f64 / (1usize << bits) as f64)
}

/// Analog matrix whose column `g` phase-matches head `g`'s channel on the
/// quantized grid (all antennas, or the `g`-th block of `M` antennas).
pub fn analog_precoder(head_channels: &[CVector], cfg: &SystemConfig) -> Result<CMatrix, PrecodingError> {
    let n = cfg.n_antennas;
    let n_rf = cfg.n_rf;
    if head_channels.len() != n_rf {
        return Err(PrecodingError::HeadCount {
            expected: n_rf,
            got: head_channels.len(),
        });
    }
    let mut a = CMatrix::zeros(n, n_rf);
    match cfg.architecture {
        Architecture::FullyConnected => {
            let amp = 1.0 / (n as f64).sqrt();
            for (g, h) in head_channels.iter().enumerate() {
                for i in 0..n {
                    a[(i, g)] = grid_point(phase(h[i]), cfg.quant_bits, amp);
                }
            }
        }
        Architecture::SubConnected => {
            let m = cfg.antennas_per_rf();
            let amp = 1.0 / (m as f64).sqrt();
            for (g, h) in head_channels.iter().enumerate() {
                for i in g * m..(g + 1) * m {
                    a[(i, g)] = grid_point(phase(h[i]), cfg.quant_bits, amp);
                }
            }
        }
        other => return Err(PrecodingError::NotHybrid(other)),
    }
    Ok(a)
}

/// `h̄_k = Aᴴ h_k`, i.e. `h̄_kᴴ = h_kᴴ A`.
pub fn equivalent_channels(channels: &ChannelSet, analog: &CMatrix) -> Vec<CVector> {
    channels.channels.iter().map(|h| analog.ad_mul(h)).collect()
}

/// User with the largest `‖h̄_k‖` in each beam, lowest index on ties.
pub fn strongest_per_beam(plan: &GroupingPlan, equiv: &[CVector]) -> Vec<usize> {
    plan.beams
        .iter()
        .map(|beam| {
            let mut best = beam[0];
            for &k in beam {
                let (nk, nb) = (equiv[k].norm(), equiv[best].norm());
                if nk > nb || (nk == nb && k < best) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// ZF on the given equivalent channels: `D̄ = H̄(H̄ᴴH̄)⁻¹`, each column then
/// scaled so that `‖A d_g‖ = 1`.
pub fn digital_zf(strongest_equiv: &[CVector], analog: &CMatrix) -> Result<Vec<CVector>, PrecodingError> {
    let h_bar = CMatrix::from_columns(strongest_equiv);
    let gram = h_bar.ad_mul(&h_bar);
    let sv = gram.clone().singular_values();
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(PrecodingError::SingularEquivalentChannel { condition });
    }
    let inv = gram
        .try_inverse()
        .ok_or(PrecodingError::SingularEquivalentChannel { condition })?;
    let d_bar = &h_bar * inv;
    Ok(d_bar
        .column_iter()
        .map(|col| {
            let col: CVector = col.into_owned();
            let scale = (analog * &col).norm();
            col.unscale(scale)
        })
        .collect())
}

/// Reorders each beam so that `|h̄ᴴ d_g|` is non-increasing (stable).
pub fn sic_order(plan: &GroupingPlan, equiv: &[CVector], digital: &[CVector]) -> GroupingPlan {
    let beams = plan
        .beams
        .iter()
        .zip(digital)
        .map(|(beam, d)| {
            let mut beam = beam.clone();
            beam.sort_by(|&a, &b| {
                let ga = equiv[a].dotc(d).norm();
                let gb = equiv[b].dotc(d).norm();
                gb.total_cmp(&ga)
            });
            beam
        })
        .collect();
    GroupingPlan {
        beams,
        sic_order_applied: true,
        ..plan.clone()
    }
}

/// Fully-digital ZF: `A = I_N`, one beam per user.
pub fn fully_digital(channels: &ChannelSet) -> Result<(HybridPrecoder, GroupingPlan), PrecodingError> {
    let n = channels.n_antennas();
    let analog = CMatrix::identity(n, n);
    let equiv = channels.channels.clone();
    let digital = digital_zf(&equiv, &analog)?;
    let plan = GroupingPlan::one_user_per_beam(channels.n_users());
    let plan = sic_order(&plan, &equiv, &digital);
    Ok((
        HybridPrecoder {
            analog,
            digital,
            equiv_channels: equiv,
            architecture: Architecture::FullyDigital,
        },
        plan,
    ))
}

/// Identity-like helper for tests and dumps: column `g` of `A` as a vector.
pub fn analog_column(a: &CMatrix, g: usize) -> CVector {
    DVector::from_iterator(a.nrows(), a.column(g).iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_from_paths, PathParams};

    fn real(v: &[f64]) -> CVector {
        DVector::from_iterator(v.len(), v.iter().map(|&x| C64::new(x, 0.0)))
    }

    /// Brute-force argmin over the grid with wrap-around.
    fn quantize_by_enumeration(angle: f64, bits: u32) -> usize {
        let levels = 1usize << bits;
        (0..levels)
            .min_by(|&a, &b| {
                let ga = 2.0 * PI * a as f64 / levels as f64;
                let gb = 2.0 * PI * b as f64 / levels as f64;
                circular_distance(angle, ga).total_cmp(&circular_distance(angle, gb))
            })
            .unwrap()
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_phase(0.0, 1), 0);
        assert_eq!(quantize_phase(0.0, 4), 0);
        assert_eq!(quantize_phase(0.8, 2), 1);
        assert_eq!(quantize_phase(-3.1, 2), 2);
        assert_eq!(quantize_by_enumeration(0.8, 2), 1);
        assert_eq!(quantize_by_enumeration(-3.1, 2), 2);
        // just below 2π wraps to index 0
        assert_eq!(quantize_phase(2.0 * PI - 0.01, 3), 0);
    }

    #[test]
    fn quantizer_matches_enumeration_and_bound() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let angle = rng.random_range(-3.0 * PI..3.0 * PI);
            let bits = rng.random_range(1..7);
            let n = quantize_phase(angle, bits);
            let step = 2.0 * PI / (1u32 << bits) as f64;
            let err = circular_distance(angle, step * n as f64);
            assert!(err <= step / 2.0 + 1e-12);
            let m = quantize_by_enumeration(angle, bits);
            let err_m = circular_distance(angle, step * m as f64);
            assert!((err - err_m).abs() < 1e-12);
        }
    }

    fn small_cfg(arch: Architecture, n: usize, n_rf: usize) -> SystemConfig {
        SystemConfig {
            n_antennas: n,
            n_horizontal: n,
            n_vertical: 1,
            n_rf,
            n_beams: n_rf,
            n_users: n_rf,
            architecture: arch,
            ..SystemConfig::baseline()
        }
    }

    #[test]
    fn all_ones_head_gives_zero_phase_column() {
        let cfg = small_cfg(Architecture::FullyConnected, 8, 2);
        let heads = vec![real(&[1.0; 8]), real(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0])];
        let a = analog_precoder(&heads, &cfg).unwrap();
        let amp = 1.0 / 8f64.sqrt();
        for i in 0..8 {
            assert!((a[(i, 0)] - C64::new(amp, 0.0)).norm() < 1e-15);
        }
        // π lands on grid index 8 of 16
        assert!((a[(1, 1)] - C64::new(-amp, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sub_connected_blocks() {
        let cfg = small_cfg(Architecture::SubConnected, 8, 2);
        let heads = vec![real(&[1.0; 8]), real(&[2.0; 8])];
        let a = analog_precoder(&heads, &cfg).unwrap();
        for i in 4..8 {
            assert_eq!(a[(i, 0)], C64::new(0.0, 0.0));
        }
        for i in 0..4 {
            assert_eq!(a[(i, 1)], C64::new(0.0, 0.0));
            assert!((a[(i, 0)].norm() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn fine_quantization_aligns_with_single_path() {
        let cfg = SystemConfig {
            quant_bits: 16,
            n_paths: 1,
            n_rf: 1,
            n_beams: 1,
            n_users: 1,
            ..SystemConfig::baseline()
        };
        let path = PathParams {
            gain: (0.3, -1.1),
            azimuth: 0.7,
            elevation: 0.0,
        };
        let h = channel_from_paths(&[path], &cfg);
        let a = analog_precoder(std::slice::from_ref(&h), &cfg).unwrap();
        let col = analog_column(&a, 0);
        let gain = h.dotc(&col).norm();
        let l1: f64 = h.iter().map(|v| v.norm()).sum();
        assert!(gain >= 0.999 * l1 / 64f64.sqrt());
    }

    #[test]
    fn equivalent_channel_is_h_hermitian_a() {
        let mut a = CMatrix::zeros(4, 2);
        a[(0, 0)] = C64::new(1.0, 0.0);
        a[(1, 1)] = C64::new(1.0, 0.0);
        let h = DVector::from_vec(vec![
            C64::new(1.0, 2.0),
            C64::new(-3.0, 0.5),
            C64::new(7.0, 7.0),
            C64::new(0.0, 1.0),
        ]);
        let set = ChannelSet::from_vectors(vec![h.clone()]);
        let eq = equivalent_channels(&set, &a);
        assert_eq!(eq[0].as_slice(), &h.as_slice()[..2]);

        // brute-force product against a dense random A
        let a = CMatrix::from_fn(4, 2, |r, c| C64::new(r as f64 - c as f64, 0.5 * (r * c) as f64));
        let eq = equivalent_channels(&set, &a);
        for c in 0..2 {
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..4 {
                acc += h[r].conj() * a[(r, c)];
            }
            // h̄_c = conj(hᴴ A)_c
            assert!((eq[0][c] - acc.conj()).norm() < 1e-12);
        }

        // orthogonal to every column
        let h_orth = real(&[0.0, 0.0, 1.0, 0.0]);
        let mut a2 = CMatrix::zeros(4, 2);
        a2[(0, 0)] = C64::new(1.0, 0.0);
        a2[(1, 1)] = C64::new(1.0, 0.0);
        let eq = equivalent_channels(&ChannelSet::from_vectors(vec![h_orth]), &a2);
        assert_eq!(eq[0].norm(), 0.0);
    }

    #[test]
    fn zf_on_identity_scales_by_column_norm() {
        let mut a = CMatrix::zeros(6, 3);
        let scales = [2.0, 0.5, 3.0];
        for (g, s) in scales.iter().enumerate() {
            a[(2 * g, g)] = C64::new(*s, 0.0);
        }
        let eq = vec![real(&[1.0, 0.0, 0.0]), real(&[0.0, 1.0, 0.0]), real(&[0.0, 0.0, 1.0])];
        let d = digital_zf(&eq, &a).unwrap();
        for (g, s) in scales.iter().enumerate() {
            for i in 0..3 {
                let expected = if i == g { 1.0 / s } else { 0.0 };
                assert!((d[g][i] - C64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_column_is_singular() {
        let a = CMatrix::identity(3, 3);
        let eq = vec![real(&[1.0, 2.0, 0.0]), real(&[1.0, 2.0, 0.0])];
        assert!(matches!(
            digital_zf(&eq, &a),
            Err(PrecodingError::SingularEquivalentChannel { .. })
        ));
    }

    #[test]
    fn sic_order_sorts_stably() {
        let d = vec![real(&[1.0, 0.0])];
        let eq = vec![real(&[0.2, 0.0]), real(&[0.9, 0.0]), real(&[0.5, 0.0]), real(&[0.9, 0.0])];
        let plan = GroupingPlan {
            cluster_heads: vec![0],
            beams: vec![vec![0, 1, 2, 3]],
            final_threshold: 0.5,
            sic_order_applied: false,
        };
        let sorted = sic_order(&plan, &eq, &d);
        assert_eq!(sorted.beams, vec![vec![1, 3, 2, 0]]);
        assert!(sorted.sic_order_applied);

        let single = GroupingPlan {
            beams: vec![vec![2]],
            ..plan
        };
        assert_eq!(sic_order(&single, &eq, &d).beams, vec![vec![2]]);
    }

    #[test]
    fn strongest_user_by_equivalent_norm() {
        let eq = vec![real(&[1.0]), real(&[3.0]), real(&[3.0]), real(&[2.0])];
        let plan = GroupingPlan {
            cluster_heads: vec![0, 3],
            beams: vec![vec![0, 2, 1], vec![3]],
            final_threshold: 0.5,
            sic_order_applied: false,
        };
        assert_eq!(strongest_per_beam(&plan, &eq), vec![1, 3]);
    }

    #[test]
    fn precoder_dump_lists_every_entry() {
        let set = crate::channel::generate_scenario(2, &SystemConfig::baseline());
        let (pre, _) = fully_digital(&set).unwrap();
        let mut buf = Vec::new();
        pre.write_csv(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines, 1 + 64 * 64 + 6 * 64);
    }

    proptest::proptest! {
        #[test]
        fn quantizer_picks_nearest_grid_point(angle in -10.0f64..10.0, bits in 1u32..8) {
            let n = quantize_phase(angle, bits);
            let levels = 1usize << bits;
            proptest::prop_assert!(n < levels);
            let step = 2.0 * PI / levels as f64;
            let mine = circular_distance(angle, step * n as f64);
            let best = circular_distance(angle, step * quantize_by_enumeration(angle, bits) as f64);
            proptest::prop_assert!(mine <= best + 1e-12);
        }

        #[test]
        fn hybrid_columns_have_unit_radiated_norm(seed in 0u64..10_000, sub in proptest::bool::ANY) {
            let cfg = SystemConfig {
                architecture: if sub { Architecture::SubConnected } else { Architecture::FullyConnected },
                ..SystemConfig::baseline()
            };
            let set = crate::channel::generate_scenario(seed, &cfg);
            let heads: Vec<CVector> = set.channels[..cfg.n_rf].to_vec();
            let a = analog_precoder(&heads, &cfg).unwrap();
            let equiv = equivalent_channels(&set, &a);
            if let Ok(d) = digital_zf(&equiv[..cfg.n_rf], &a) {
                for col in &d {
                    proptest::prop_assert!(((&a * col).norm() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
