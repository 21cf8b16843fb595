//! Binary PGM (P5) export of magnitude images, min-max scaled per image.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::FeatureMap;

pub fn write_pgm(image: &FeatureMap, path: &Path) -> Result<()> {
    if image.channels != 1 {
        return Err(Error::ShapeMismatch {
            context: "write_pgm",
            expected: "single-channel image".into(),
            got: format!("{} channels", image.channels),
        });
    }
    let lo = image.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scale = if span > 0.0 { 255.0 / span } else { 0.0 };

    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let dir = std::env::temp_dir().join("irim-pgm");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ramp.pgm");
        let img = FeatureMap::new(1, 2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 6);
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[5], 255);
        assert!(pixels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_image_is_all_zero_bytes() {
        let dir = std::env::temp_dir().join("irim-pgm");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flat.pgm");
        let img = FeatureMap::new(1, 2, 2, vec![0.7; 4]).unwrap();
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[0, 0, 0, 0]));
    }

    #[test]
    fn multi_channel_rejected() {
        let img = FeatureMap::zeros(2, 4, 4);
        assert!(write_pgm(&img, &std::env::temp_dir().join("bad.pgm")).is_err());
    }
}
