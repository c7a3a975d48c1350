//! 8-bit grayscale and binary rasters, binary PGM (P5) I/O and a few pixel
//! utilities shared by synthesis and segmentation.

use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale image, `0` black ink to `255` white paper, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Binary image with `1` for ink and `0` for background, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![255; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// `pixel < threshold` becomes ink.
    pub fn threshold(&self, threshold: u8) -> BinaryImage {
        BinaryImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| (v < threshold) as u8).collect(),
        }
    }
}

impl BinaryImage {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, ink: bool) {
        self.data[y * self.width + x] = ink as u8;
    }

    /// Number of ink pixels in every column.
    pub fn column_profile(&self) -> Vec<usize> {
        let mut prof = vec![0; self.width];
        for row in self.data.chunks(self.width.max(1)) {
            for (p, &v) in prof.iter_mut().zip(row) {
                *p += (v != 0) as usize;
            }
        }
        prof
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Ink as black on white, for writing out.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v != 0 { 0 } else { 255 }).collect(),
        }
    }
}

/// 4-connected components of the ink in a `height × width` 0/1 bitmap.
pub fn count_components(bitmap: &[u8], height: usize, width: usize) -> usize {
    let mut seen = vec![false; bitmap.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..bitmap.len() {
        if bitmap[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / width, i % width);
            let mut visit = |j: usize| {
                if bitmap[j] != 0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
    }
    count
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Parses a binary PGM with maxval 255 (comments allowed in the header).
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let fail = |offset: usize, m: &str| Error::Format {
        offset,
        message: m.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail(0, "not a binary PGM (expected P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail(pos, "truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fail(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fail(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fail(pos, "only maxval 255 is supported"));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(fail(pos, "missing whitespace after header")),
    }
    let n = width * height;
    if bytes.len() - pos != n {
        return Err(fail(
            pos,
            &format!("expected {n} pixel bytes, found {}", bytes.len() - pos),
        ));
    }
    Ok(GrayImage {
        height,
        width,
        data: bytes[pos..].to_vec(),
    })
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Reads a PGM and treats dark pixels (`< 128`) as ink.
pub fn read_binary_pgm(path: impl AsRef<Path>) -> Result<BinaryImage> {
    Ok(read_pgm(path)?.threshold(128))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage {
            height: 2,
            width: 3,
            data: vec![0, 255, 7, 8, 9, 10],
        };
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
        let mut with_comment = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        with_comment.extend_from_slice(&img.data);
        assert_eq!(decode_pgm(&with_comment).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn components_of_simple_shapes() {
        #[rustfmt::skip]
        let bm = [
            1, 1, 0, 1,
            0, 1, 0, 1,
            0, 0, 0, 0,
            1, 0, 1, 1,
        ];
        assert_eq!(count_components(&bm, 4, 4), 4);
        assert_eq!(count_components(&[0; 6], 2, 3), 0);
    }

    #[test]
    fn profile_counts_ink_per_column() {
        let img = BinaryImage {
            height: 2,
            width: 3,
            data: vec![1, 0, 1, 1, 0, 0],
        };
        assert_eq!(img.column_profile(), vec![2, 0, 1]);
        assert_eq!(img.to_gray().threshold(160), img);
    }
}
