//! Binary PPM (P6) images and PGM (P5) label maps, 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    payload: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn header_field(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        let found = bytes.get(start).map_or("end of file".to_string(), |b| format!("byte {b:#04x}"));
        return Err(parse_err(start, format!("expected {what}, found {found}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("expected magic {:?}", std::str::from_utf8(magic).unwrap_or("?")),
        ));
    }
    let mut pos = 2;
    let width = header_field(bytes, &mut pos, "width")?;
    let height = header_field(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = header_field(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let expected = header.width * header.height * channels;
    let actual = bytes.len() - header.payload;
    if actual != expected {
        let kind = if actual < expected { "truncated" } else { "oversized" };
        return Err(parse_err(
            header.payload,
            format!("{kind} payload: expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(&bytes[header.payload..])
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a `3×H×W` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = image.shape() else {
        return Err(Error::Rank {
            op: "encode_ppm",
            expected: 3,
            shape: image.shape().to_vec(),
        });
    };
    if *c != 3 {
        return Err(Error::mismatch("encode_ppm channels", &[*c], &[3]));
    }
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let data = image.data();
    for p in 0..plane {
        for ch in 0..3 {
            out.push(quantize(data[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Decode a P6 image to `3×H×W` floats `v / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = parse_header(bytes, b"P6")?;
    let raw = payload(bytes, &header, 3)?;
    let plane = header.width * header.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + p] = f32::from(px[ch]) / 255.0;
        }
    }
    Tensor::from_vec(&[3, header.height, header.width], data)
}

/// Encode a single-image label map.
pub fn encode_pgm(label: &LabelMap) -> Result<Vec<u8>> {
    let [n, h, w] = label.shape();
    if n != 1 {
        return Err(Error::InvalidShape {
            shape: vec![n, h, w],
            reason: "a PGM file holds one label map".into(),
        });
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in label.data() {
        let b = u8::try_from(v).map_err(|_| Error::Label {
            label: v as usize,
            classes: 256,
        })?;
        out.push(b);
    }
    Ok(out)
}

/// Decode a P5 file to a `1×H×W` label map.
pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_header(bytes, b"P5")?;
    let raw = payload(bytes, &header, 1)?;
    LabelMap::new(1, header.height, header.width, raw.iter().map(|&b| u32::from(b)).collect())
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    with_path(path, decode_ppm(&fs::read(path)?))
}

pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    with_path(path, decode_pgm(&fs::read(path)?))
}

pub fn write_pgm(path: &Path, label: &LabelMap) -> Result<()> {
    fs::write(path, encode_pgm(label)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn tiny_p6() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend(0u8..12);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.shape(), &[3, 2, 2]);
        assert_eq!(img.data()[0], 0.0);
        assert_eq!(img.data()[4], 1.0 / 255.0);
        assert_eq!(img.data()[11], 11.0 / 255.0);
        assert_eq!(encode_ppm(&img).unwrap(), bytes);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5 # made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend([0, 1, 255]);
        assert_eq!(decode_pgm(&bytes).unwrap().data(), &[0, 1, 255]);
    }

    #[test]
    fn random_image_quantization_bound() {
        let img = Tensor::<f32>::create(&[3, 7, 9], Fill::Uniform { seed: 3, lo: 0.0, hi: 1.0 }).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
        let again = encode_ppm(&back).unwrap();
        assert_eq!(again, encode_ppm(&img).unwrap());
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0u8; 10]);
        let err = decode_ppm(&bytes).unwrap_err().to_string();
        assert!(err.contains("byte 11") && err.contains("expected 12 bytes, found 10"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_pgm(b"P5\n1 x\n255\n0"), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n65535\n00"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n255"), Err(Error::Parse { offset: 10, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let lab = LabelMap::new(1, 2, 3, vec![0, 1, 2, 3, 255, 0]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&lab).unwrap()).unwrap(), lab);
        let big = LabelMap::new(1, 1, 1, vec![300]).unwrap();
        assert!(encode_pgm(&big).is_err());
    }
}
