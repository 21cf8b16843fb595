//! Column undersampling mask construction.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::SamplingMask;

/// Center fraction convention: 0.08 at 4x, 0.04 at 8x.
pub fn default_center_fraction(acceleration: u32) -> f64 {
    match acceleration {
        4 => 0.08,
        8 => 0.04,
        // Off-menu accelerations scale the 4x convention inversely.
        a => 0.32 / a as f64,
    }
}

/// Builds a mask that always keeps the ⌊cf·width + 0.5⌋ central columns and
/// keeps each remaining column independently with probability
/// q = (width/accel − c) / (width − c), seeded and deterministic.
pub fn make_mask(width: usize, acceleration: u32, seed: u64) -> Result<SamplingMask> {
    make_mask_with(width, acceleration, default_center_fraction(acceleration), seed)
}

pub fn make_mask_with(
    width: usize,
    acceleration: u32,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if width < 8 {
        return Err(Error::Config(format!("mask width {width} < 8")));
    }
    if acceleration == 0 {
        return Err(Error::Config("acceleration must be positive".into()));
    }
    let center = (center_fraction * width as f64 + 0.5).floor() as usize;
    let q = (width as f64 / acceleration as f64 - center as f64) / (width - center) as f64;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InfeasibleMask {
            width,
            acceleration,
            center_columns: center,
            q,
        });
    }

    let start = (width - center) / 2;
    let mut kept = vec![false; width];
    kept[start..start + center].fill(true);

    let mut rng = Rng::new(seed).derive("mask", &[width as u64, acceleration as u64]);
    for (col, keep) in kept.iter_mut().enumerate() {
        if col >= start && col < start + center {
            continue;
        }
        // Drawn for every off-center column in order, so the pattern for a
        // given seed does not depend on which columns are central.
        if rng.next_f64() < q {
            *keep = true;
        }
    }

    Ok(SamplingMask {
        width,
        kept,
        acceleration,
        center_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center_run(mask: &SamplingMask) -> (usize, usize) {
        let start = (mask.width - center_count(mask)) / 2;
        (start, center_count(mask))
    }

    fn center_count(mask: &SamplingMask) -> usize {
        (mask.center_fraction * mask.width as f64 + 0.5).floor() as usize
    }

    #[test]
    fn width_368_center_columns() {
        let m4 = make_mask(368, 4, 0).unwrap();
        let (start, count) = center_run(&m4);
        assert_eq!(count, 29);
        assert!(m4.kept[start..start + count].iter().all(|&k| k));

        let m8 = make_mask(368, 8, 0).unwrap();
        let (start, count) = center_run(&m8);
        assert_eq!(count, 15);
        assert!(m8.kept[start..start + count].iter().all(|&k| k));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_mask(368, 4, 42).unwrap();
        let b = make_mask(368, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = make_mask(368, 4, 43).unwrap();
        assert_ne!(a.kept, c.kept);
    }

    #[test]
    fn kept_fraction_tracks_acceleration() {
        for accel in [4u32, 8] {
            let mut total = 0usize;
            let trials = 200;
            for seed in 0..trials {
                total += make_mask(368, accel, seed).unwrap().kept_count();
            }
            let mean = total as f64 / (trials as usize * 368) as f64;
            let target = 1.0 / accel as f64;
            assert!(
                (mean - target).abs() < 0.1 * target,
                "accel {accel}: mean kept {mean} vs {target}"
            );
        }
    }

    #[test]
    fn infeasible_combination_rejected() {
        let err = make_mask_with(100, 8, 0.2, 0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleMask { .. }), "{err}");
        assert!(make_mask_with(9, 1, 0.0, 0).is_ok());
    }

    #[test]
    fn tiny_width_rejected() {
        assert!(make_mask(7, 4, 0).is_err());
    }
}
