//! Plain file formats: binary PGM images, a Wavefront OBJ subset and CSV
//! loss traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Quantizes an `[H, W]` tensor of values in `[0, 1]` to `0..=255`.
    pub fn from_unit(image: &Tensor) -> Result<Self> {
        if image.rank() != 2 {
            return Err(Error::structural(format!("image must be [H, W], got {:?}", image.shape())));
        }
        let pixels = image
            .value()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(GrayImage {
            height: image.shape()[0],
            width: image.shape()[1],
            pixels,
        })
    }

    /// Pixels scaled back to `[0, 1]`.
    pub fn to_unit(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Tensor::new(&[self.height, self.width], data).expect("pixel count matches shape")
    }

    /// Binary P5 encoding with maxval 255.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic.1 != b"P5" {
            return Err(Error::parse(magic.0 .0, magic.0 .1, "expected magic number P5"));
        }
        let mut field = |what: &str| -> Result<usize> {
            let ((line, col), tok) = header_token(bytes, &mut pos)?;
            std::str::from_utf8(tok)
                .ok()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(line, col, format!("invalid {what}")))
        };
        let width = field("width")?;
        let height = field("height")?;
        let maxval = field("maxval")?;
        if maxval != 255 {
            return Err(Error::parse(1, 1, format!("only maxval 255 is supported, got {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != width * height {
            let (line, col) = line_col(bytes, pos.min(bytes.len()));
            return Err(Error::parse(
                line,
                col,
                format!("expected {} pixel bytes, found {}", width * height, raster.len()),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels: raster.to_vec(),
        })
    }
}

fn line_col(bytes: &[u8], pos: usize) -> (usize, usize) {
    let before = &bytes[..pos];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let col = pos - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<((usize, usize), &'a [u8])> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let at = line_col(bytes, start);
    if start == *pos {
        return Err(Error::parse(at.0, at.1, "unexpected end of header"));
    }
    Ok((at, &bytes[start..*pos]))
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    Ok(std::fs::write(path, GrayImage::from_unit(image)?.encode())?)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    GrayImage::decode(&std::fs::read(path)?)
}

/// Vertices and triangular faces (0-based) of an OBJ file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl ObjMesh {
    pub fn vertex_tensor(&self) -> Tensor {
        let data = self.vertices.iter().flatten().copied().collect();
        Tensor::new(&[self.vertices.len(), 3], data).expect("three coordinates per vertex")
    }
}

/// Parses `v` and `f` records; polygons are fan-triangulated and other
/// record types are ignored. Face indices may be negative (relative) and
/// may carry `/vt/vn` suffixes.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut mesh = ObjMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        // 1-based column of each token, from its offset within the line.
        let mut tokens = content
            .split_whitespace()
            .map(|t| (t.as_ptr() as usize - content.as_ptr() as usize + 1, t));
        let Some((_, kind)) = tokens.next() else { continue };
        let rest: Vec<(usize, &str)> = tokens.collect();
        match kind {
            "v" => {
                if rest.len() < 3 {
                    return Err(Error::parse(line, raw.len() + 1, "vertex needs three coordinates"));
                }
                let mut xyz = [0.0; 3];
                for (k, &(col, tok)) in rest.iter().take(3).enumerate() {
                    xyz[k] = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(line, col, format!("invalid coordinate '{tok}'")))?;
                }
                mesh.vertices.push(xyz);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::parse(line, raw.len() + 1, "face needs at least three vertices"));
                }
                let n = mesh.vertices.len() as i64;
                let idx = rest
                    .iter()
                    .map(|&(col, tok)| {
                        let head = tok.split('/').next().unwrap_or("");
                        let k: i64 = head
                            .parse()
                            .map_err(|_| Error::parse(line, col, format!("invalid vertex index '{tok}'")))?;
                        let resolved = if k < 0 { n + k } else { k - 1 };
                        if k == 0 || resolved < 0 || resolved >= n {
                            return Err(Error::parse(line, col, format!("vertex index {k} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// `iteration,loss` CSV with one row per entry.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}
