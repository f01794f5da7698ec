//! Binary PPM (P6) images and PGM (P5) masks.
//!
//! P6 layout is exactly `P6\n<w> <h>\n255\n` followed by row-major RGB
//! bytes. Image values in [−1, 1] map to bytes by round-half-up of
//! 255·(v+1)/2, and reading inverts that mapping exactly on representable
//! values. Masks use P5 with 0 = hole, 255 = valid.

use std::fs;
use std::path::Path;

use medfe_core::tensor::{Shape, Tensor};

use crate::error::{CliError, CliResult};

fn to_byte(v: f64) -> u8 {
    let unit = (v + 1.0) * 0.5;
    let scaled = unit * 255.0 + 0.5;
    scaled.floor().clamp(0.0, 255.0) as u8
}

fn from_byte(b: u8) -> f64 {
    (b as f64 / 255.0) * 2.0 - 1.0
}

pub fn encode_ppm(img: &Tensor) -> CliResult<Vec<u8>> {
    let s = img.shape();
    if s.n() != 1 || s.c() != 3 {
        return Err(CliError::Contract(format!(
            "PPM writer expects a (1,3,h,w) image, got {s}"
        )));
    }
    let (h, w) = (s.h(), s.w());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_byte(img.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Tensor) -> CliResult<()> {
    let bytes = encode_ppm(img)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

struct Header {
    w: usize,
    h: usize,
    data_start: usize,
}

/// Parses `P6`/`P5` headers; reports the byte offset of any defect.
fn parse_header(bytes: &[u8], magic: &str) -> CliResult<Header> {
    let fail = |offset: usize, what: &str| {
        Err(CliError::Io(format!(
            "malformed {magic} header at byte {offset}: {what}"
        )))
    };
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return fail(0, "bad magic");
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // one or more whitespace bytes, then digits
        let ws_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == ws_start {
            return fail(pos, "expected whitespace");
        }
        let digit_start = pos;
        let mut value = 0usize;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            value = value * 10 + (bytes[pos] - b'0') as usize;
            pos += 1;
        }
        if pos == digit_start {
            return fail(pos, "expected digits");
        }
        *field = value;
    }
    if fields[2] != 255 {
        return fail(pos, "maxval must be 255");
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return fail(pos, "expected single whitespace before payload");
    }
    pos += 1;
    if fields[0] == 0 || fields[1] == 0 {
        return fail(pos, "zero dimensions");
    }
    Ok(Header {
        w: fields[0],
        h: fields[1],
        data_start: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> CliResult<Tensor> {
    let hd = parse_header(bytes, "P6")?;
    let need = 3 * hd.w * hd.h;
    let payload = &bytes[hd.data_start..];
    if payload.len() < need {
        return Err(CliError::Io(format!(
            "truncated P6 payload at byte {}: need {need} bytes, have {}",
            hd.data_start,
            payload.len()
        )));
    }
    let mut data = vec![0.0f64; 3 * hd.w * hd.h];
    let plane = hd.w * hd.h;
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = from_byte(payload[p * 3 + c]);
        }
    }
    Ok(Tensor::new(Shape::nchw(1, 3, hd.h, hd.w), data).expect("ppm shape"))
}

pub fn read_ppm(path: &Path) -> CliResult<Tensor> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn encode_pgm(mask: &Tensor) -> CliResult<Vec<u8>> {
    let s = mask.shape();
    if s.n() != 1 || s.c() != 1 {
        return Err(CliError::Contract(format!(
            "PGM writer expects a (1,1,h,w) mask, got {s}"
        )));
    }
    let (h, w) = (s.h(), s.w());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w);
    for v in mask.data() {
        out.push(if *v == 0.0 { 0 } else { 255 });
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, mask: &Tensor) -> CliResult<()> {
    let bytes = encode_pgm(mask)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Reads a P5 mask: byte 0 is a hole, anything else is valid.
pub fn decode_pgm(bytes: &[u8]) -> CliResult<Tensor> {
    let hd = parse_header(bytes, "P5")?;
    let need = hd.w * hd.h;
    let payload = &bytes[hd.data_start..];
    if payload.len() < need {
        return Err(CliError::Io(format!(
            "truncated P5 payload at byte {}: need {need} bytes, have {}",
            hd.data_start,
            payload.len()
        )));
    }
    let data = payload[..need]
        .iter()
        .map(|&b| if b == 0 { 0.0 } else { 1.0 })
        .collect();
    Ok(Tensor::new(Shape::nchw(1, 1, hd.h, hd.w), data).expect("pgm shape"))
}

pub fn read_pgm(path: &Path) -> CliResult<Tensor> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_pixel_is_bit_exact() {
        let img = Tensor::new(Shape::nchw(1, 3, 1, 1), vec![1.0, 1.0, 1.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn payload_length_follows_header_arithmetic() {
        let img = Tensor::zeros(Shape::nchw(1, 3, 256, 256));
        let bytes = encode_ppm(&img).unwrap();
        // header "P6\n256 256\n255\n" = 15 bytes, payload 3·256·256
        assert_eq!(bytes.len(), 15 + 196_608);
    }

    #[test]
    fn quantized_roundtrip_is_exact() {
        // image already on the representable grid
        let img = Tensor::from_fn(Shape::nchw(1, 3, 4, 5), |i| {
            from_byte(((i * 37) % 256) as u8)
        });
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn header_errors_carry_byte_offsets() {
        assert!(decode_ppm(b"P5\n1 1\n255\n...").is_err());
        let err = decode_ppm(b"P6\n1 1\n255\n\xff").unwrap_err();
        assert!(format!("{err}").contains("byte"), "{err}");
        let err = decode_ppm(b"P6\nx 1\n255\n").unwrap_err();
        assert!(format!("{err}").contains("byte"), "{err}");
    }
}
