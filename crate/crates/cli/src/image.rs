//! Binary 8-bit PGM (P5) and PPM (P6) rasters.

use std::fs;
use std::path::Path;

use fgmamba_core::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed image: {0}")]
    Format(String),
}

/// Planar raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// (C, H, W) planar order.
    pub data: Vec<f32>,
}

impl Image {
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone()).expect("consistent image")
    }

    /// Accepts (C, H, W) or (1, C, H, W) tensors with C ∈ {1, 3}.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self, ImageError> {
        let s = match t.shape() {
            [1, c, h, w] | [c, h, w] => [*c, *h, *w],
            other => return Err(ImageError::Format(format!("cannot store tensor of shape {other:?}"))),
        };
        if s[0] != 1 && s[0] != 3 {
            return Err(ImageError::Format(format!("{} channels is neither gray nor RGB", s[0])));
        }
        Ok(Self {
            channels: s[0],
            height: s[1],
            width: s[2],
            data: t.data().to_vec(),
        })
    }

    /// Bytes with round-half-up quantization, clamped to [0, 255].
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "{}\n{} {}\n255\n",
            if self.channels == 1 { "P5" } else { "P6" },
            self.width,
            self.height
        );
        let plane = self.height * self.width;
        let mut out = header.into_bytes();
        for px in 0..plane {
            for c in 0..self.channels {
                out.push(quantize(self.data[c * plane + px]));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(ImageError::Format(format!("unsupported magic {other:?}"))),
        };
        let width = number(bytes, &mut pos)?;
        let height = number(bytes, &mut pos)?;
        let maxval = number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(ImageError::Format(format!(
                "only 8-bit rasters (maxval 255) are supported, got {maxval}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::Format("empty raster".into()));
        }
        // exactly one whitespace byte separates the header from the samples
        pos += 1;
        let plane = width * height;
        let body = bytes.get(pos..).unwrap_or_default();
        if body.len() != plane * channels {
            return Err(ImageError::Format(format!(
                "expected {} sample bytes, found {}",
                plane * channels,
                body.len()
            )));
        }
        let mut data = vec![0.0; plane * channels];
        for (i, &b) in body.iter().enumerate() {
            data[(i % channels) * plane + i / channels] = b as f32 / 255.0;
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|e| ImageError::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        fs::write(path, self.to_bytes()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String, ImageError> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Format("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize, ImageError> {
    let t = token(bytes, pos)?;
    t.parse()
        .map_err(|_| ImageError::Format(format!("expected a number in header, found {t:?}")))
}

/// Raster files (`.pgm`, `.ppm`) in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip_is_exact() {
        let data: Vec<f32> = (0..=255u8).map(|b| b as f32 / 255.0).collect();
        let img = Image {
            channels: 1,
            height: 16,
            width: 16,
            data,
        };
        let bytes = img.to_bytes();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(Image::from_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn rgb_is_interleaved_on_disk() {
        // planar: red plane [1 0], green [0 1], blue [0 0]
        let img = Image {
            channels: 3,
            height: 1,
            width: 2,
            data: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        };
        let bytes = img.to_bytes();
        assert_eq!(&bytes[bytes.len() - 6..], [255, 0, 0, 0, 255, 0]);
        assert_eq!(Image::from_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(f32::NAN), 0);
    }

    #[test]
    fn header_comments_and_errors() {
        let ok = b"P5 # gray\n# another\n2 1\n255\n\x00\xff";
        let img = Image::from_bytes(ok).unwrap();
        assert_eq!(img.data, [0.0, 1.0]);
        assert!(Image::from_bytes(b"P5\n2 1\n255\n\x00").is_err());
        assert!(Image::from_bytes(b"P5\n2 1\n255\n\x00\x00\x00").is_err());
        assert!(Image::from_bytes(b"P2\n1 1\n255\n0").is_err());
        assert!(Image::from_bytes(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(Image::from_bytes(b"P5\n1").is_err());
    }
}
