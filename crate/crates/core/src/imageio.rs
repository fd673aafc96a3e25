//! Binary PGM/PPM I/O, resampling, and the geometric augmentations used in
//! training. Images are single-sample tensors `(1, h, w, c)` with values in
//! `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_netpbm(magic: &str, image: &Tensor, channels: usize) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != channels {
        return Err(Error::shape(
            "netpbm encode",
            format!("{magic} needs (1, h, w, {channels}), got {s}"),
        ));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Binary 8-bit PGM (P5).
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    encode_netpbm("P5", map, 1)
}

/// Binary 8-bit PPM (P6).
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    encode_netpbm("P6", rgb, 3)
}

pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    write_atomic(path, &encode_pgm(map)?)
}

pub fn write_ppm(path: &Path, rgb: &Tensor) -> Result<()> {
    write_atomic(path, &encode_ppm(rgb)?)
}

/// Decode binary P5 or P6 (8- or 16-bit) into `[0, 1]` values.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("netpbm", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format("netpbm", format!("unsupported magic {other}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format("netpbm", format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("netpbm", format!("maxval {maxval}")));
    }
    let wide = maxval > 255;
    let count = w * h * channels;
    let need = if wide { 2 * count } else { count };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format("netpbm", format!("raster needs {need} bytes")))?;
    let scale = maxval as f64;
    let data = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / scale).collect()
    };
    Tensor::new(Shape::hwc(h, w, channels), data)
}

pub fn read_netpbm(path: &Path) -> Result<Tensor> {
    decode_netpbm(&fs::read(path)?)
}

fn check_single(op: &'static str, t: &Tensor) -> Result<Shape> {
    let s = t.shape();
    if s.n != 1 {
        return Err(Error::shape(op, format!("expected one sample, got {s}")));
    }
    Ok(s)
}

/// Bilinear sample at continuous pixel coordinates, clamping to the edge.
fn bilinear(t: &Tensor, y: f64, x: f64, k: usize) -> f64 {
    let s = t.shape();
    let y = y.clamp(0.0, (s.h - 1) as f64);
    let x = x.clamp(0.0, (s.w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = t.get(0, y0, x0, k) * (1.0 - fx) + t.get(0, y0, x1, k) * fx;
    let bottom = t.get(0, y1, x0, k) * (1.0 - fx) + t.get(0, y1, x1, k) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Align-corners bilinear resize.
pub fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = check_single("resize_bilinear", t)?;
    if (s.h, s.w) == (h, w) {
        return Ok(t.clone());
    }
    let sy = if h > 1 { (s.h - 1) as f64 / (h - 1) as f64 } else { 0.0 };
    let sx = if w > 1 { (s.w - 1) as f64 / (w - 1) as f64 } else { 0.0 };
    Ok(Tensor::from_fn(Shape::hwc(h, w, s.c), |_, i, j, k| {
        bilinear(t, i as f64 * sy, j as f64 * sx, k)
    }))
}

/// Nearest-neighbor resize on pixel centers.
pub fn resize_nearest(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = check_single("resize_nearest", t)?;
    if (s.h, s.w) == (h, w) {
        return Ok(t.clone());
    }
    let pick = |i: usize, out: usize, src: usize| {
        (((i as f64 + 0.5) * src as f64 / out as f64).floor() as usize).min(src - 1)
    };
    Ok(Tensor::from_fn(Shape::hwc(h, w, s.c), |_, i, j, k| {
        t.get(0, pick(i, h, s.h), pick(j, w, s.w), k)
    }))
}

pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |b, i, j, k| t.get(b, i, s.w - 1 - j, k))
}

/// Rotate about the image center by `degrees` (counter-clockwise), bilinear.
/// Pixels that map outside the source take `fill`, or the nearest edge value
/// when `fill` is `None`.
pub fn rotate(t: &Tensor, degrees: f64, fill: Option<f64>) -> Result<Tensor> {
    let s = check_single("rotate", t)?;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((s.h - 1) as f64 / 2.0, (s.w - 1) as f64 / 2.0);
    Ok(Tensor::from_fn(s, |_, i, j, k| {
        let (dy, dx) = (i as f64 - cy, j as f64 - cx);
        // Inverse map from output to source coordinates.
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        let inside = (-0.5..=(s.w as f64 - 0.5)).contains(&sx) && (-0.5..=(s.h as f64 - 0.5)).contains(&sy);
        match fill {
            Some(v) if !inside => v,
            _ => bilinear(t, sy, sx, k),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_exact_on_byte_values() {
        let map = Tensor::from_fn(Shape::hwc(3, 5, 1), |_, i, j, _| ((i * 5 + j) * 17 % 256) as f64 / 255.0);
        let back = decode_netpbm(&encode_pgm(&map).unwrap()).unwrap();
        assert_eq!(back.shape(), map.shape());
        assert!(back.max_abs_diff(&map) < 1e-12);
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img = decode_netpbm(&bytes).unwrap();
        assert_eq!(img.shape(), Shape::hwc(1, 2, 3));
        assert_eq!(img.get(0, 0, 0, 0), 1.0);
        assert_eq!(img.get(0, 0, 1, 2), 1.0);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        assert!(decode_netpbm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(decode_netpbm(b"P3\n1 1\n255\n0").is_err());
    }

    #[test]
    fn zero_rotation_and_double_flip_are_identities() {
        let t = Tensor::from_fn(Shape::hwc(4, 6, 2), |_, i, j, k| (i * 12 + j * 2 + k) as f64);
        assert!(rotate(&t, 0.0, None).unwrap().max_abs_diff(&t) < 1e-12);
        assert_eq!(flip_horizontal(&flip_horizontal(&t)), t);
    }

    #[test]
    fn resizes_preserve_constants() {
        let t = Tensor::full(Shape::hwc(7, 5, 3), 0.25);
        assert!(resize_bilinear(&t, 20, 10).unwrap().max_abs_diff(&Tensor::full(Shape::hwc(20, 10, 3), 0.25)) < 1e-15);
        assert_eq!(resize_nearest(&t, 3, 2).unwrap().shape(), Shape::hwc(3, 2, 3));
    }
}
