//! Seeded phantom, coil-profile, and acquisition simulation. Everything
//! here is a pure function of its seed and shape arguments.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mri::{fft2c, AcquisitionMeta, CoilStack, ComplexImage};
use crate::nn::FeatureMap;
use crate::rng::Rng;

/// Piecewise-constant magnitude from overlapping ellipses with a smooth
/// low-order polynomial phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ComplexImage,
    pub seed: u64,
}

impl Phantom {
    pub fn magnitude_map(&self) -> FeatureMap {
        FeatureMap::new(1, self.image.height, self.image.width, self.image.magnitude()).unwrap()
    }
}

/// K smooth sensitivity maps whose magnitudes are RSS-normalized to 1 at
/// every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilProfile {
    pub maps: CoilStack,
}

pub fn make_phantom(size: usize, seed: u64) -> Result<Phantom> {
    if size < 16 {
        return Err(Error::Config(format!(
            "phantom size must be at least 16, got {size}"
        )));
    }
    let mut rng = Rng::new(seed).derive("phantom", &[size as u64]);
    let count = 5 + rng.below(8) as usize;
    let s = size as f64;

    struct Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        cos_t: f64,
        sin_t: f64,
        intensity: f64,
    }
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let theta = rng.uniform(0.0, std::f64::consts::PI);
            Ellipse {
                cx: rng.uniform(0.2, 0.8) * s,
                cy: rng.uniform(0.2, 0.8) * s,
                a: rng.uniform(0.06, 0.35) * s,
                b: rng.uniform(0.06, 0.35) * s,
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                intensity: rng.uniform(-0.4, 0.9),
            }
        })
        .collect();

    let poly: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut magnitude = vec![0.0f64; size * size];
    let mut phase = vec![0.0f64; size * size];
    let mut phase_peak = 0.0f64;
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let (xf, yf) = (x as f64, y as f64);
            let mut m = 0.0;
            for e in &ellipses {
                let (dx, dy) = (xf - e.cx, yf - e.cy);
                let xr = dx * e.cos_t + dy * e.sin_t;
                let yr = -dx * e.sin_t + dy * e.cos_t;
                if (xr / e.a).powi(2) + (yr / e.b).powi(2) <= 1.0 {
                    m += e.intensity;
                }
            }
            magnitude[i] = m.clamp(0.0, 1.0);

            let (u, v) = (xf / s - 0.5, yf / s - 0.5);
            let p = poly[0] + poly[1] * u + poly[2] * v + poly[3] * u * u + poly[4] * u * v
                + poly[5] * v * v;
            phase[i] = p;
            phase_peak = phase_peak.max(p.abs());
        }
    }
    let phase_scale = if phase_peak > 0.0 {
        std::f64::consts::PI / phase_peak
    } else {
        0.0
    };

    let data = magnitude
        .iter()
        .zip(&phase)
        .map(|(&m, &p)| Complex64::from_polar(m, p * phase_scale))
        .collect();
    Ok(Phantom {
        image: ComplexImage::new(size, size, data)?,
        seed,
    })
}

pub fn make_coils(size: usize, coil_count: usize, seed: u64) -> Result<CoilProfile> {
    if coil_count == 0 {
        return Err(Error::Config("coil count must be at least 1".into()));
    }
    let mut rng = Rng::new(seed).derive("coils", &[size as u64, coil_count as u64]);
    let s = size as f64;
    let center = (s - 1.0) / 2.0;
    let ring_radius = 0.38 * s;
    let sigma = 0.45 * s;
    let angle0 = rng.uniform(0.0, std::f64::consts::TAU);

    let mut bumps = vec![vec![0.0f64; size * size]; coil_count];
    let mut ramps = Vec::with_capacity(coil_count);
    for (k, bump) in bumps.iter_mut().enumerate() {
        let angle = angle0 + std::f64::consts::TAU * k as f64 / coil_count as f64;
        let (bx, by) = (
            center + ring_radius * angle.cos(),
            center + ring_radius * angle.sin(),
        );
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                bump[y * size + x] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        ramps.push((
            rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
            rng.uniform(-std::f64::consts::PI, std::f64::consts::PI),
        ));
    }

    let maps = (0..coil_count)
        .map(|k| {
            let data = (0..size * size)
                .map(|i| {
                    let norm: f64 = bumps.iter().map(|b| b[i] * b[i]).sum::<f64>().sqrt();
                    let mag = bumps[k][i] / norm;
                    let (y, x) = (i / size, i % size);
                    let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
                    Complex64::from_polar(mag, ramps[k].0 * u + ramps[k].1 * v)
                })
                .collect();
            ComplexImage::new(size, size, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoilProfile {
        maps: CoilStack::new(maps)?,
    })
}

/// Pixelwise root-sum-of-squares of the coil moduli.
pub fn rss(coils: &CoilStack) -> FeatureMap {
    let (h, w) = (coils.height(), coils.width());
    let mut out = FeatureMap::zeros(1, h, w);
    for coil in coils.coils() {
        for (o, z) in out.data.iter_mut().zip(&coil.data) {
            *o += z.norm_sqr();
        }
    }
    for o in &mut out.data {
        *o = o.sqrt();
    }
    out
}

use super::dataset::DatasetRecord;

/// kdata = fft2c(sensitivity ∘ phantom) + σ·(complex Gaussian); targets
/// come from the noiseless coil images. The ESC target is the phantom
/// magnitude itself, a stand-in for an emulated-single-coil fit.
pub fn simulate_record(
    phantom: &Phantom,
    coils: &CoilProfile,
    noise_sigma: f64,
    meta: &AcquisitionMeta,
    seed: u64,
) -> Result<DatasetRecord> {
    let (h, w) = (phantom.image.height, phantom.image.width);
    if coils.maps.height() != h || coils.maps.width() != w {
        return Err(Error::ShapeMismatch {
            context: "simulate_record",
            expected: format!("{h}×{w} coils"),
            got: format!("{}×{}", coils.maps.height(), coils.maps.width()),
        });
    }
    if meta.coil_count != coils.maps.coil_count() {
        return Err(Error::ShapeMismatch {
            context: "simulate_record",
            expected: format!("{} coils per meta", meta.coil_count),
            got: format!("{}", coils.maps.coil_count()),
        });
    }

    let coil_images: Vec<ComplexImage> = coils
        .maps
        .coils()
        .iter()
        .map(|sens| {
            let data = sens
                .data
                .iter()
                .zip(&phantom.image.data)
                .map(|(s, p)| s * p)
                .collect();
            ComplexImage::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let clean = CoilStack::new(coil_images)?;
    let target_rss = rss(&clean);

    let kdata = CoilStack::new(
        clean
            .coils()
            .iter()
            .enumerate()
            .map(|(k, img)| {
                let mut kspace = fft2c(img);
                let mut noise = Rng::new(seed).derive("noise", &[k as u64]);
                for z in &mut kspace.data {
                    *z += Complex64::new(
                        noise_sigma * noise.normal(),
                        noise_sigma * noise.normal(),
                    );
                }
                kspace
            })
            .collect(),
    )?;

    Ok(DatasetRecord {
        kdata,
        target_esc: phantom.magnitude_map(),
        target_rss,
        meta: *meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{ifft2c, FieldStrength};

    fn meta(k: usize) -> AcquisitionMeta {
        AcquisitionMeta {
            field_strength: FieldStrength::T1_5,
            fat_suppression: false,
            coil_count: k,
        }
    }

    #[test]
    fn phantom_is_deterministic_and_clipped() {
        let a = make_phantom(32, 7).unwrap();
        let b = make_phantom(32, 7).unwrap();
        assert_eq!(a, b);
        for z in &a.image.data {
            let m = z.norm();
            assert!((0.0..=1.0 + 1e-12).contains(&m), "magnitude {m}");
        }
        assert!(a.image.data.iter().any(|z| z.norm() > 0.05), "empty phantom");
    }

    #[test]
    fn distinct_seeds_differ_broadly() {
        let a = make_phantom(32, 1).unwrap();
        let b = make_phantom(32, 2).unwrap();
        let differing = a
            .image
            .data
            .iter()
            .zip(&b.image.data)
            .filter(|(x, y)| (*x - *y).norm() > 1e-9)
            .count();
        assert!(
            differing * 100 >= 32 * 32,
            "only {differing} of {} pixels differ",
            32 * 32
        );
    }

    #[test]
    fn phantom_phase_spans_at_most_pi() {
        let p = make_phantom(24, 3).unwrap();
        for z in &p.image.data {
            if z.norm() > 1e-12 {
                assert!(z.arg().abs() <= std::f64::consts::PI + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_tiny_sizes() {
        assert!(make_phantom(15, 0).is_err());
        assert!(make_coils(16, 0, 0).is_err());
    }

    #[test]
    fn single_coil_profile_is_unit_magnitude() {
        let profile = make_coils(24, 1, 5).unwrap();
        for z in &profile.maps.coil(0).data {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coil_magnitudes_are_rss_normalized() {
        for k in [2usize, 4, 15] {
            let profile = make_coils(24, k, 9).unwrap();
            let sums = rss(&profile.maps);
            for &v in &sums.data {
                assert!((v - 1.0).abs() < 1e-12, "K={k}: rss {v}");
            }
        }
    }

    #[test]
    fn fifteen_coil_ring_covers_the_field() {
        let profile = make_coils(32, 15, 11).unwrap();
        for i in 0..32 * 32 {
            let best = profile
                .maps
                .coils()
                .iter()
                .map(|c| c.data[i].norm())
                .fold(0.0f64, f64::max);
            assert!(best > 0.1, "pixel {i}: best coil magnitude {best}");
        }
    }

    #[test]
    fn rss_handles_pythagorean_pixel() {
        let a = ComplexImage::new(1, 1, vec![Complex64::new(3.0, 0.0)]).unwrap();
        let b = ComplexImage::new(1, 1, vec![Complex64::new(0.0, 4.0)]).unwrap();
        let stack = CoilStack::new(vec![a, b]).unwrap();
        assert_eq!(rss(&stack).data, vec![5.0]);
    }

    #[test]
    fn rss_dominates_each_coil() {
        let profile = make_coils(16, 3, 13).unwrap();
        let phantom = make_phantom(16, 14).unwrap();
        let record = simulate_record(&phantom, &profile, 0.0, &meta(3), 15).unwrap();
        let images = CoilStack::new(
            record
                .kdata
                .coils()
                .iter()
                .map(|k| ifft2c(k))
                .collect(),
        )
        .unwrap();
        let total = rss(&images);
        for coil in images.coils() {
            for (i, z) in coil.data.iter().enumerate() {
                assert!(total.data[i] >= z.norm() - 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_single_coil_round_trips_to_the_phantom() {
        let phantom = make_phantom(24, 21).unwrap();
        let profile = CoilProfile {
            maps: CoilStack::new(vec![ComplexImage::new(
                24,
                24,
                vec![Complex64::new(1.0, 0.0); 24 * 24],
            )
            .unwrap()])
            .unwrap(),
        };
        let record = simulate_record(&phantom, &profile, 0.0, &meta(1), 22).unwrap();
        let recovered = ifft2c(record.kdata.coil(0));
        let err = recovered
            .data
            .iter()
            .zip(&phantom.image.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12, "round trip err {err}");
    }

    #[test]
    fn normalized_coils_make_rss_target_equal_phantom_magnitude() {
        let phantom = make_phantom(24, 31).unwrap();
        let profile = make_coils(24, 4, 32).unwrap();
        let record = simulate_record(&phantom, &profile, 0.0, &meta(4), 33).unwrap();
        let err = record
            .target_rss
            .data
            .iter()
            .zip(&phantom.image.data)
            .map(|(r, p)| (r - p.norm()).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12, "target_rss deviation {err}");
    }

    #[test]
    fn noise_energy_matches_expectation() {
        let size = 32;
        let k = 2;
        let phantom = make_phantom(size, 41).unwrap();
        let profile = make_coils(size, k, 42).unwrap();
        let sigma = 0.05;
        let clean = simulate_record(&phantom, &profile, 0.0, &meta(k), 0).unwrap();

        let mut total = 0.0;
        let trials = 100;
        for seed in 0..trials {
            let noisy = simulate_record(&phantom, &profile, sigma, &meta(k), seed).unwrap();
            for (nc, cc) in noisy.kdata.coils().iter().zip(clean.kdata.coils()) {
                total += nc
                    .data
                    .iter()
                    .zip(&cc.data)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>();
            }
        }
        let mean = total / trials as f64;
        let expected = 2.0 * sigma * sigma * (k * size * size) as f64;
        let rel = (mean - expected).abs() / expected;
        assert!(rel < 0.05, "noise energy {mean} vs {expected} (rel {rel})");
    }

    #[test]
    fn record_generation_is_deterministic() {
        let phantom = make_phantom(16, 51).unwrap();
        let profile = make_coils(16, 3, 52).unwrap();
        let a = simulate_record(&phantom, &profile, 0.01, &meta(3), 53).unwrap();
        let b = simulate_record(&phantom, &profile, 0.01, &meta(3), 53).unwrap();
        assert_eq!(a, b);
    }
}
