//! Binary netpbm images: `P6` (RGB) and `P5` (grayscale), maxval 255 only.
//! Byte `v` maps to `v / 255`; writing quantizes with round-half-up.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Image;

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        if bytes[pos].is_ascii_whitespace() {
            pos += 1;
        } else if bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            break;
        }
    }
    pos
}

fn read_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Data(format!("ppm: expected {what} at byte offset {start}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("ppm: {what} at byte offset {start} is out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Data("ppm: missing P5/P6 magic at byte offset 0".into())),
    };
    let mut pos = 2;
    let width = read_number(bytes, &mut pos, "width")?;
    let height = read_number(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = read_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Data(format!(
            "ppm: unsupported maxval {maxval} at byte offset {maxval_at} (only 255)"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Data(format!("ppm: expected whitespace after maxval at byte offset {pos}"))),
    }
    if width == 0 || height == 0 {
        return Err(Error::Data(format!("ppm: empty image {width}x{height}")));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos,
    })
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Image<S>> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height * h.channels;
    let end = h.data_start + n;
    if bytes.len() < end {
        return Err(Error::Data(format!(
            "ppm: payload truncated at byte offset {} (expected {n} bytes from offset {})",
            bytes.len(),
            h.data_start
        )));
    }
    let scale = S::one() / S::of(255.0);
    let data = bytes[h.data_start..end].iter().map(|&b| S::of(b as f64) * scale).collect();
    Image::new(h.height, h.width, h.channels, data)
}

/// `floor(v * 255 + 0.5)`.
fn quantize<S: Scalar>(v: S) -> u8 {
    (v.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode<S: Scalar>(image: &Image<S>) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn read_image<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let bytes = super::read_bytes(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image<S: Scalar>(image: &Image<S>, path: &Path) -> Result<()> {
    super::write_bytes(path, &encode(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_p6_example() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 0]);
        let img: Image<f64> = decode(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 2, 3));
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn decodes_p5_with_comments() {
        let bytes = b"P5\n# a comment\n1 2\n255\n\x00\x80".to_vec();
        let img: Image<f64> = decode(&bytes).unwrap();
        assert_eq!(img.shape(), (2, 1, 1));
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let e = decode::<f64>(b"P6 1 1 65535\n\x00\x00").unwrap_err();
        assert!(matches!(e, Error::Data(ref m) if m.contains("maxval")), "{e}");
        let e = decode::<f64>(b"P6 2 2 255\n\x00\x00").unwrap_err();
        assert!(matches!(e, Error::Data(ref m) if m.contains("offset")), "{e}");
        assert!(decode::<f64>(b"P3 1 1 255\n0 0 0").is_err());
        assert!(decode::<f64>(b"P6 x 1 255\n").is_err());
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.0f64), 255);
        assert_eq!(quantize(0.0f64), 0);
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(h in 1usize..6, w in 1usize..6, gray in any::<bool>(), seed in any::<u64>()) {
            let c = if gray { 1 } else { 3 };
            let img: Image<f64> = crate::texture::random_image(seed, h, w, c);
            let back: Image<f64> = decode(&encode(&img)).unwrap();
            prop_assert_eq!(back.shape(), img.shape());
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
            }
            // quantized images survive a second trip exactly
            let again: Image<f64> = decode(&encode(&back)).unwrap();
            prop_assert_eq!(again, back);
        }
    }
}
