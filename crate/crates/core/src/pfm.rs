//! Minimal Portable Float Map (PFM) reader and writer.
//!
//! PFM stores raster data as raw IEEE-754 `f32` samples after a tiny ASCII
//! header. `Pf` headers carry one channel per pixel, `PF` headers three
//! interleaved channels. Following the de-facto standard, scanlines are
//! stored bottom-to-top and a negative scale marks little-endian samples.
//! This module always writes scale `-1.0` and refuses big-endian input,
//! which keeps round trips bit-exact on every platform we target.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded PFM raster: `channels` is 1 (`Pf`) or 3 (`PF`), samples are in
/// top-to-bottom row order, channel-interleaved within a pixel.
#[derive(Debug, Clone)]
pub struct PfmImage {
    /// Pixels per row.
    pub width: usize,
    /// Rows.
    pub height: usize,
    /// Samples per pixel: 1 or 3.
    pub channels: usize,
    /// `width * height * channels` samples, row-major from the top.
    pub data: Vec<f32>,
}

/// Reads one whitespace-delimited ASCII token from the header.
fn read_token(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            if token.is_empty() {
                return Err(Error::malformed(path, 0, "truncated PFM header"));
            }
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue; // skip leading whitespace
            }
            break; // token terminator consumed
        }
        token.push(byte[0]);
        if token.len() > 32 {
            return Err(Error::malformed(path, 0, "oversized PFM header token"));
        }
    }
    String::from_utf8(token).map_err(|_| Error::malformed(path, 0, "non-ASCII PFM header"))
}

/// Decodes a PFM file. Samples are returned top-to-bottom regardless of the
/// bottom-up order used on disk.
pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let magic = read_token(&mut r, path)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::malformed(
                path,
                1,
                format!("not a PFM file (magic {other:?})"),
            ))
        }
    };
    let width: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::malformed(path, 0, "bad PFM width"))?;
    let height: usize = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::malformed(path, 0, "bad PFM height"))?;
    let scale: f32 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::malformed(path, 0, "bad PFM scale"))?;
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, 0, "zero PFM dimension"));
    }
    if scale >= 0.0 {
        return Err(Error::malformed(
            path,
            0,
            "big-endian PFM (non-negative scale) is not supported",
        ));
    }

    let samples = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::malformed(path, 0, "PFM dimensions overflow"))?;
    let mut raw = vec![0u8; samples * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;

    // Flip from the bottom-up disk order to top-down rows.
    let row_samples = width * channels;
    let mut data = vec![0.0f32; samples];
    for disk_row in 0..height {
        let mem_row = height - 1 - disk_row;
        let src = disk_row * row_samples * 4;
        let dst = mem_row * row_samples;
        for i in 0..row_samples {
            let b = &raw[src + i * 4..src + i * 4 + 4];
            data[dst + i] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }

    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

/// Encodes samples (top-to-bottom row order) as a little-endian PFM file.
/// The write is atomic: data goes to a temporary sibling which is renamed
/// into place only after a successful flush, so a failed write leaves no
/// partial file behind.
pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::invalid(format!(
            "PFM supports 1 or 3 channels, got {}",
            img.channels
        )));
    }
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::invalid(format!(
            "PFM sample count {} does not match {}x{}x{}",
            img.data.len(),
            img.width,
            img.height,
            img.channels
        )));
    }

    let tmp = tmp_path(path);
    let result = (|| -> Result<()> {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let magic = if img.channels == 1 { "Pf" } else { "PF" };
        write!(w, "{magic}\n{} {}\n-1.0\n", img.width, img.height)
            .map_err(|e| Error::io(&tmp, e))?;
        let row_samples = img.width * img.channels;
        for mem_row in (0..img.height).rev() {
            let row = &img.data[mem_row * row_samples..(mem_row + 1) * row_samples];
            let mut bytes = Vec::with_capacity(row_samples * 4);
            for &v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        Ok(())
    })();

    commit_tmp(result, &tmp, path)
}

/// Temporary sibling path used for atomic writes.
pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Finishes an atomic write: renames `tmp` over `path` on success, removes
/// `tmp` on failure and propagates the original error.
pub(crate) fn commit_tmp(result: Result<()>, tmp: &Path, path: &Path) -> Result<()> {
    match result {
        Ok(()) => std::fs::rename(tmp, path).map_err(|e| Error::io(path, e)),
        Err(e) => {
            let _ = std::fs::remove_file(tmp);
            Err(e)
        }
    }
}
