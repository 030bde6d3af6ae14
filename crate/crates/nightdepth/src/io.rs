//! On-disk formats: 8-bit PNG frames, PFM depth rasters, binary checkpoints.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

// ---- PNG ----

/// Write a `[3, H, W]` or `[1, H, W]` image in `[0, 1]` as an 8-bit PNG
/// (RGB or grayscale, no alpha).
pub fn write_png<T: Scalar>(path: &Path, image: &Array<T>) -> Result<()> {
    let (c, h, w) = crate::geometry::image_dims(image)?;
    if c != 1 && c != 3 {
        return Err(Error::InvalidInput(format!("png wants 1 or 3 channels, got {c}")));
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let n = h * w;
    let mut buf = vec![0u8; c * n];
    for i in 0..n {
        for ch in 0..c {
            let v = image.data()[ch * n + i].to_f64();
            buf[i * c + ch] = ((v.clamp(0.0, 1.0) * 255.0) + 0.5).floor() as u8;
        }
    }
    writer.write_image_data(&buf)?;
    Ok(())
}

/// Read an 8-bit PNG into `[C, H, W]` with values in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Array<f32>> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let c = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("unsupported png color type {other:?}"),
            })
        }
    };
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            reason: "expected 8-bit png".into(),
        });
    }
    let n = h * w;
    let mut out = Array::zeros(&[c, h, w]);
    for i in 0..n {
        for ch in 0..c {
            out.data_mut()[ch * n + i] = buf[i * c + ch] as f32 / 255.0;
        }
    }
    Ok(out)
}

// ---- PFM ----

/// Write a `[1, H, W]` raster as a grayscale PFM (little-endian, scale -1.0,
/// rows bottom to top per the format convention).
pub fn write_pfm<T: Scalar>(path: &Path, depth: &Array<T>) -> Result<()> {
    let (h, w) = crate::geometry::depth_dims(depth)?;
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "Pf\n{} {}\n-1.0\n", w, h)?;
    for y in (0..h).rev() {
        for x in 0..w {
            let v = depth.data()[y * w + x].to_f64() as f32;
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a grayscale PFM into `[1, H, W]`.
pub fn read_pfm(path: &Path) -> Result<Array<f32>> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let malformed = |reason: &str| Error::MalformedFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut header = String::new();
    f.read_line(&mut header)?;
    if header.trim() != "Pf" {
        return Err(malformed("expected grayscale 'Pf' header"));
    }
    let mut dims = String::new();
    f.read_line(&mut dims)?;
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed("bad width"))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed("bad height"))?;
    let mut scale_line = String::new();
    f.read_line(&mut scale_line)?;
    let scale: f32 = scale_line
        .trim()
        .parse()
        .map_err(|_| malformed("bad scale"))?;
    let mut bytes = vec![0u8; w * h * 4];
    f.read_exact(&mut bytes)
        .map_err(|_| malformed("truncated pixel data"))?;
    let le = scale < 0.0;
    let mut out = Array::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let i = ((h - 1 - y) * w + x) * 4;
            let raw: [u8; 4] = bytes[i..i + 4].try_into().unwrap();
            let v = if le {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            out.data_mut()[y * w + x] = v;
        }
    }
    Ok(out)
}

// ---- checkpoints ----

const CHECKPOINT_MAGIC: &[u8; 4] = b"NDCP";
const CHECKPOINT_VERSION: u32 = 1;

/// Save named parameter arrays with a shape manifest and a versioned header.
/// Parameters are stored as little-endian `f32`.
pub fn save_checkpoint(
    path: &Path,
    resolution: (usize, usize),
    params: &[(String, &Array<f32>)],
) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    f.write_all(&(resolution.0 as u32).to_le_bytes())?;
    f.write_all(&(resolution.1 as u32).to_le_bytes())?;
    f.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, arr) in params {
        let bytes = name.as_bytes();
        f.write_all(&(bytes.len() as u16).to_le_bytes())?;
        f.write_all(bytes)?;
        f.write_all(&(arr.shape().len() as u8).to_le_bytes())?;
        for &d in arr.shape() {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for (_, arr) in params {
        for &v in arr.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load a checkpoint: training resolution plus named parameter arrays in
/// stored order.
#[allow(clippy::type_complexity)]
pub fn load_checkpoint(path: &Path) -> Result<((usize, usize), Vec<(String, Array<f32>)>)> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let malformed = |reason: String| Error::MalformedFile {
        path: path.display().to_string(),
        reason,
    };
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    f.read_exact(&mut u32buf)?;
    let rh = u32::from_le_bytes(u32buf) as usize;
    f.read_exact(&mut u32buf)?;
    let rw = u32::from_le_bytes(u32buf) as usize;
    f.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        f.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| malformed("non-utf8 name".into()))?;
        let mut rank = [0u8; 1];
        f.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            f.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        manifest.push((name, shape));
    }
    let mut params = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            f.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf));
        }
        params.push((name, Array::new(&shape, data)));
    }
    Ok(((rh, rw), params))
}
