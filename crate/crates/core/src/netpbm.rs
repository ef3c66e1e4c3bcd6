//! Binary PPM (P6) and PGM (P5) images with maxval 255, plus class palettes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |msg: &str| Error::Parse(format!("netpbm header: {msg}"));
    if bytes.len() < 2 {
        return Err(bad("file too short"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a decimal number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace before raster"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    Ok(Header {
        magic,
        width,
        height,
        data_start: pos + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    bytes
        .get(h.data_start..h.data_start + need)
        .ok_or_else(|| Error::Parse(format!("raster truncated: expected {need} bytes")))
}

/// Decodes a P6 image into a `(1, 3, H, W)` tensor with values in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Parse("expected a binary PPM (P6)".into()));
    }
    let px = raster(bytes, &h, 3)?;
    let w = h.width;
    Ok(Tensor::from_fn([1, 3, h.height, w], |_, c, y, x| px[(y * w + x) * 3 + c] as f32 / 255.0))
}

/// Decodes a P5 image into a label map, byte values taken verbatim.
pub fn decode_pgm_labels(bytes: &[u8]) -> Result<LabelMap> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Parse("expected a binary PGM (P5)".into()));
    }
    LabelMap::new([1, h.height, h.width], raster(bytes, &h, 1)?.to_vec())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path)?)
}

pub fn load_pgm_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_pgm_labels(&fs::read(path)?)
}

/// Encodes sample 0 of a `(N, 3, H, W)` tensor, clamping to `[0, 1]` and
/// rounding to the nearest level.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [_, c, h, w] = image.dims();
    if c != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push((image.at(0, ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn encode_pgm_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(&labels.data()[..labels.width() * labels.height()]);
    out
}

pub fn encode_label_ppm(labels: &LabelMap, palette: &Palette) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    for &l in &labels.data()[..labels.width() * labels.height()] {
        out.extend_from_slice(&palette.color(l));
    }
    out
}

pub fn write_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_ppm(image)?)?)
}

pub fn write_pgm_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_pgm_labels(labels))?)
}

pub fn write_label_ppm(labels: &LabelMap, palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_label_ppm(labels, palette))?)
}

const CITYSCAPES: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

/// Class colors; labels without an entry render black.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    /// The 19 Cityscapes training-class colors.
    fn default() -> Self {
        Self {
            colors: CITYSCAPES.to_vec(),
        }
    }
}

impl Palette {
    pub fn color(&self, label: u8) -> [u8; 3] {
        self.colors.get(label as usize).copied().unwrap_or([0, 0, 0])
    }

    /// One `<idx> <r> <g> <b>` line per class; blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("palette line {}: expected integers", lineno + 1)))?;
            let [idx, r, g, b] = nums[..] else {
                return Err(Error::Parse(format!("palette line {}: expected `idx r g b`", lineno + 1)));
            };
            if idx > 254 || r > 255 || g > 255 || b > 255 {
                return Err(Error::Parse(format!("palette line {}: value out of range", lineno + 1)));
            }
            if colors.len() <= idx {
                colors.resize(idx + 1, [0, 0, 0]);
            }
            colors[idx] = [r as u8, g as u8, b as u8];
        }
        Ok(Self { colors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 7, 255]);
        let l = decode_pgm_labels(&bytes).unwrap();
        assert_eq!(l.dims(), [1, 1, 3]);
        assert_eq!(l.data(), &[0, 7, 255]);
    }

    #[test]
    fn ppm_round_trip_within_one_level() {
        let img = Tensor::from_fn([1, 3, 4, 5], |_, c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 16.0);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-7);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
        assert!(decode_pgm_labels(b"P5 x").is_err());
    }

    #[test]
    fn palette_parsing() {
        let p = Palette::parse("0 0 0 0\n# road\n2 10 20 30\n").unwrap();
        assert_eq!(p.colors.len(), 3);
        assert_eq!(p.color(2), [10, 20, 30]);
        assert_eq!(p.color(9), [0, 0, 0]);
        assert!(Palette::parse("1 2 3").is_err());
        assert_eq!(Palette::default().color(0), [128, 64, 128]);
    }
}
