//! Space-to-depth and its inverse: the lossless permutations that trade
//! spatial resolution for channels in the invertible multiscale stack.

use crate::error::{Error, Result};

use super::FeatureMap;

/// `out[c·r² + dy·r + dx][y][x] = in[c][y·r + dy][x·r + dx]`
/// (row-major sub-pixel order within each input channel).
pub fn space_to_depth(x: &FeatureMap, r: usize) -> Result<FeatureMap> {
    if r == 0 || x.height % r != 0 || x.width % r != 0 {
        return Err(Error::ShapeMismatch {
            context: "space_to_depth",
            expected: format!("spatial dims divisible by {r}"),
            got: format!("{}x{}", x.height, x.width),
        });
    }
    let (oh, ow) = (x.height / r, x.width / r);
    let mut out = FeatureMap::zeros(x.channels * r * r, oh, ow);
    for c in 0..x.channels {
        for dy in 0..r {
            for dx in 0..r {
                let oc = (c * r + dy) * r + dx;
                for y in 0..oh {
                    for xo in 0..ow {
                        *out.at_mut(oc, y, xo) = x.at(c, y * r + dy, xo * r + dx);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`space_to_depth`].
pub fn depth_to_space(x: &FeatureMap, r: usize) -> Result<FeatureMap> {
    if r == 0 || x.channels % (r * r) != 0 {
        return Err(Error::ShapeMismatch {
            context: "depth_to_space",
            expected: format!("channels divisible by {}", r * r),
            got: format!("{}", x.channels),
        });
    }
    let oc_count = x.channels / (r * r);
    let (oh, ow) = (x.height * r, x.width * r);
    let mut out = FeatureMap::zeros(oc_count, oh, ow);
    for c in 0..oc_count {
        for dy in 0..r {
            for dx in 0..r {
                let ic = (c * r + dy) * r + dx;
                for y in 0..x.height {
                    for xo in 0..x.width {
                        *out.at_mut(c, y * r + dy, xo * r + dx) = x.at(ic, y, xo);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn two_by_two_definition() {
        let x = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = space_to_depth(&x, 2).unwrap();
        assert_eq!((out.channels, out.height, out.width), (4, 1, 1));
        assert_eq!(out.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(21);
        let x = FeatureMap::new(8, 16, 16, (0..8 * 256).map(|_| rng.normal()).collect()).unwrap();
        let back = depth_to_space(&space_to_depth(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(back, x);
        let back3 = space_to_depth(&depth_to_space(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(back3, x);
    }

    #[test]
    fn norm_is_preserved_exactly() {
        let mut rng = Rng::new(22);
        let x = FeatureMap::new(3, 4, 8, (0..96).map(|_| rng.normal()).collect()).unwrap();
        let out = space_to_depth(&x, 2).unwrap();
        let mut a: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = out.data.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "must be a pure permutation of entries");
    }

    #[test]
    fn non_divisible_dims_rejected() {
        let x = FeatureMap::zeros(1, 5, 4);
        assert!(space_to_depth(&x, 2).is_err());
        let y = FeatureMap::zeros(3, 2, 2);
        assert!(depth_to_space(&y, 2).is_err());
    }
}
