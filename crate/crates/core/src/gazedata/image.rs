//! Grayscale images and the PGM (P2/P5) container.

use super::{DataError, GridSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    pub id: String,
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGray {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidImage(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(DataError::InvalidImage(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::InvalidImage(format!("pixel {bad} outside [0, 1]")));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel size of one grid cell, if the image tiles the grid exactly.
    pub fn cell_size(&self, grid: GridSpec) -> Result<(usize, usize), DataError> {
        if !self.width.is_multiple_of(grid.cols) || !self.height.is_multiple_of(grid.rows) {
            return Err(DataError::GridMismatch {
                width: self.width,
                height: self.height,
                rows: grid.rows,
                cols: grid.cols,
            });
        }
        Ok((self.width / grid.cols, self.height / grid.rows))
    }

    /// Flattened pixels of every grid cell, in raster order of the grid.
    pub fn patches(&self, grid: GridSpec) -> Result<Vec<Vec<f64>>, DataError> {
        let (cw, ch) = self.cell_size(grid)?;
        let mut out = Vec::with_capacity(grid.len());
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let mut patch = Vec::with_capacity(cw * ch);
                for y in r * ch..(r + 1) * ch {
                    let row = &self.pixels[y * self.width..(y + 1) * self.width];
                    patch.extend_from_slice(&row[c * cw..(c + 1) * cw]);
                }
                out.push(patch);
            }
        }
        Ok(out)
    }

    /// Mean intensity of every grid cell.
    pub fn patch_means(&self, grid: GridSpec) -> Result<Vec<f64>, DataError> {
        Ok(self
            .patches(grid)?
            .iter()
            .map(|p| p.iter().sum::<f64>() / p.len() as f64)
            .collect())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<Option<u64>, DataError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return Ok(None);
            }
            return Err(DataError::PgmHeader(format!(
                "expected {what}, found byte 0x{:02x}",
                self.bytes[self.pos]
            )));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .map(Some)
            .map_err(|_| DataError::PgmHeader(format!("{what} {text} does not fit")))
    }

    fn header_uint(&mut self, what: &str) -> Result<u64, DataError> {
        self.next_uint(what)?
            .ok_or_else(|| DataError::PgmHeader(format!("missing {what}")))
    }
}

/// Parses a binary (P5) or ASCII (P2) graymap, rescaling to `[0, 1]`.
pub fn parse_pgm(bytes: &[u8], id: impl Into<String>) -> Result<ImageGray, DataError> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(DataError::PgmMagic(found));
    }
    let binary = bytes[1] == b'5';
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.header_uint("width")? as usize;
    let height = cur.header_uint("height")? as usize;
    let maxval = cur.header_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(DataError::PgmHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::PgmHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    let expected = width * height;
    let scale = maxval as f64;
    let mut raw = Vec::with_capacity(expected);

    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(DataError::PgmTruncated { expected, got: 0 });
        }
        let data = &bytes[cur.pos + 1..];
        let bpp = if maxval > 255 { 2 } else { 1 };
        let got = data.len() / bpp;
        if got < expected {
            return Err(DataError::PgmTruncated { expected, got });
        }
        if data.len() > expected * bpp {
            return Err(DataError::PgmPixelCount {
                expected,
                got: data.len() / bpp,
            });
        }
        for i in 0..expected {
            let v = if bpp == 2 {
                u64::from(u16::from_be_bytes([data[2 * i], data[2 * i + 1]]))
            } else {
                u64::from(data[i])
            };
            raw.push(v);
        }
    } else {
        while let Some(v) = cur.next_uint("pixel value")? {
            raw.push(v);
        }
        if raw.len() < expected {
            return Err(DataError::PgmTruncated {
                expected,
                got: raw.len(),
            });
        }
        if raw.len() > expected {
            return Err(DataError::PgmPixelCount {
                expected,
                got: raw.len(),
            });
        }
    }
    if let Some(&bad) = raw.iter().find(|&&v| v > maxval) {
        return Err(DataError::PgmHeader(format!(
            "pixel value {bad} exceeds maxval {maxval}"
        )));
    }
    let pixels = raw.into_iter().map(|v| v as f64 / scale).collect();
    ImageGray::new(id, width, height, pixels)
}

/// Encodes as binary P5 with maxval 255.
pub fn write_pgm(image: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}
