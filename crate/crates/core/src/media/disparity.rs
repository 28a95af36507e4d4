use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Horizontal left-to-right displacement in pixels with a validity mask.
///
/// A positive value `d` at left pixel `(u, v)` means the corresponding right
/// view pixel sits at `(u - d, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// Builds a map; valid entries must be finite, invalid ones are stored as 0.
    pub fn new(
        height: usize,
        width: usize,
        mut values: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "disparity map {width}x{height} with {} values / {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        if values
            .iter()
            .zip(&valid)
            .any(|(d, ok)| *ok && !d.is_finite())
        {
            return Err(Error::InvalidArgument(
                "valid disparity entries must be finite".into(),
            ));
        }
        for (d, ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *d = 0.0;
            }
        }
        Ok(DisparityMap {
            height,
            width,
            values,
            valid,
        })
    }

    /// Marks every non-finite sample invalid.
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let valid = values.iter().map(|d| d.is_finite()).collect();
        DisparityMap::new(height, width, values, valid)
    }

    pub fn constant(height: usize, width: usize, d: f32) -> Self {
        DisparityMap {
            height,
            width,
            values: vec![d; height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Option<f32>,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width);
        let mut valid = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                match f(u, v) {
                    Some(d) if d.is_finite() => {
                        values.push(d);
                        valid.push(true);
                    }
                    _ => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        DisparityMap {
            height,
            width,
            values,
            valid,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f32> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.values[i])
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|x| **x).count()
    }

    /// Valid values in row-major order.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(d, ok)| ok.then_some(*d))
    }

    /// Applies `f` to every valid value, keeping the mask.
    pub fn map_valid(&self, mut f: impl FnMut(f32) -> f32) -> DisparityMap {
        DisparityMap {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&self.valid)
                .map(|(d, ok)| if *ok { f(*d) } else { *d })
                .collect(),
            valid: self.valid.clone(),
        }
    }

    /// Reads a single-channel PFM. Rows are stored bottom-to-top; the sign of
    /// the scale line selects the byte order (negative = little-endian).
    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pfm(&bytes).map_err(|reason| match reason {
            PfmError::Channels(channels) => Error::PfmChannels {
                path: path.to_path_buf(),
                channels,
            },
            PfmError::Header(reason) => Error::PfmHeader {
                path: path.to_path_buf(),
                reason,
            },
        })
    }

    fn parse_pfm(bytes: &[u8]) -> std::result::Result<Self, PfmError> {
        let mut pos = 0usize;
        let magic =
            next_token(bytes, &mut pos).ok_or_else(|| PfmError::Header("empty file".into()))?;
        let channels = match magic.as_str() {
            "Pf" => 1,
            "PF" => 3,
            other => return Err(PfmError::Header(format!("unknown magic {other:?}"))),
        };
        let width: usize = parse_token(bytes, &mut pos, "width")?;
        let height: usize = parse_token(bytes, &mut pos, "height")?;
        let scale: f32 = parse_token(bytes, &mut pos, "scale")?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(PfmError::Header(format!("invalid scale {scale}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PfmError::Header("missing raster separator".into()));
        }
        pos += 1;
        if channels != 1 {
            return Err(PfmError::Channels(channels));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| PfmError::Header("dimensions overflow".into()))?;
        let raster = &bytes[pos..];
        if raster.len() < n * 4 {
            return Err(PfmError::Header(format!(
                "raster has {} bytes, expected {}",
                raster.len(),
                n * 4
            )));
        }
        let little = scale < 0.0;
        let mut values = vec![0.0f32; n];
        for (i, chunk) in raster[..n * 4].chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let x = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            let file_row = i / width;
            let u = i % width;
            let v = height - 1 - file_row;
            values[v * width + u] = x;
        }
        DisparityMap::from_values(height, width, values)
            .map_err(|e| PfmError::Header(e.to_string()))
    }

    /// Writes a little-endian single-channel PFM; invalid pixels are stored as +inf.
    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            write!(out, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
            for v in (0..self.height).rev() {
                for u in 0..self.width {
                    let i = v * self.width + u;
                    let x = if self.valid[i] {
                        self.values[i]
                    } else {
                        f32::INFINITY
                    };
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

enum PfmError {
    Header(String),
    Channels(usize),
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_token<T: std::str::FromStr>(
    bytes: &[u8],
    pos: &mut usize,
    what: &str,
) -> std::result::Result<T, PfmError> {
    let tok = next_token(bytes, pos).ok_or_else(|| PfmError::Header(format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| PfmError::Header(format!("bad {what} {tok:?}")))
}
