//! On-disk formats.
//!
//! Arrays use one self-describing binary layout repo-wide: magic `DSPECT01`,
//! `u32` rank, `u32` dims, then the float64 little-endian payload in
//! row-major order. Every array can also be mirrored to CSV with a header
//! row naming the dimensions. Frame images export as 8-bit binary PGM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::model::{DynamicImage, SinogramFrame, SinogramSet};

pub const MAGIC: &[u8; 8] = b"DSPECT01";

/// Write an array in the `DSPECT01` binary format.
pub fn write_array(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    ensure!(
        data.len() == expected,
        Dim,
        "payload has {} values, dims {:?} require {}",
        data.len(),
        dims,
        expected
    );
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an array in the `DSPECT01` binary format.
pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    ensure!(&magic == MAGIC, Data, "{}: bad magic bytes", path.display());
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    ensure!(rank >= 1 && rank <= 8, Data, "{}: unreasonable rank {rank}", path.display());
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let len: usize = dims.iter().product();
    let mut data = vec![0.0f64; len];
    let mut f64buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    Ok((dims, data))
}

/// Mirror an array to CSV: a header row naming the dimensions, then the
/// payload in row-major order, one line per innermost row.
pub fn write_array_csv(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    ensure!(data.len() == expected, Dim, "payload/dims mismatch in csv export");
    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<String> = dims.iter().enumerate().map(|(i, d)| format!("dim{i}={d}")).collect();
    writeln!(w, "{}", names.join(","))?;
    let row = *dims.last().unwrap_or(&1);
    if row == 0 {
        return Ok(());
    }
    for chunk in data.chunks(row) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write one frame as binary 8-bit PGM, linearly scaled so `max_value`
/// maps to 255. Values are clamped into [0, max_value] first.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64], max_value: f64) -> Result<()> {
    ensure!(pixels.len() == width * height, Dim, "pgm payload/size mismatch");
    let scale = if max_value > 0.0 { 255.0 / max_value } else { 0.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, max_value.max(0.0)) * scale).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Persist a dynamic image as a rank-3 array `[frames, height, width]`.
pub fn write_dynamic_image(path: &Path, image: &DynamicImage) -> Result<()> {
    let (w, h, t) = (image.width, image.height, image.frames());
    let mut data = Vec::with_capacity(w * h * t);
    for frame in 0..t {
        data.extend(image.frame(frame).iter().copied());
    }
    write_array(path, &[t, h, w], &data)
}

pub fn read_dynamic_image(path: &Path) -> Result<DynamicImage> {
    let (dims, data) = read_array(path)?;
    ensure!(dims.len() == 3, Data, "{}: expected rank-3 image stack", path.display());
    let (t, h, w) = (dims[0], dims[1], dims[2]);
    let mut out = DynamicImage::zeros(w, h, t);
    for frame in 0..t {
        let src = &data[frame * w * h..(frame + 1) * w * h];
        out.frame_mut(frame)
            .iter_mut()
            .zip(src)
            .for_each(|(dst, &v)| *dst = v);
    }
    Ok(out)
}

/// Persist a sinogram set: a rank-3 `[frames, views, bins]` binary array at
/// `path`, plus a sidecar text file (`<path>.angles.txt`) listing per-frame
/// view angles in degrees.
pub fn write_sinogram(path: &Path, sino: &SinogramSet) -> Result<()> {
    let t = sino.num_frames();
    let views = sino.frames[0].views();
    let bins = sino.bins();
    ensure!(
        sino.frames.iter().all(|f| f.views() == views),
        Dim,
        "sinogram persistence requires a uniform view count per frame"
    );
    let mut data = Vec::with_capacity(t * views * bins);
    for f in &sino.frames {
        data.extend_from_slice(&f.counts);
    }
    write_array(path, &[t, views, bins], &data)?;

    let sidecar = sidecar_path(path);
    let mut w = BufWriter::new(File::create(sidecar)?);
    for (i, f) in sino.frames.iter().enumerate() {
        let angles: Vec<String> = f.angles_deg.iter().map(|a| format!("{a}")).collect();
        writeln!(w, "{}: {}", i + 1, angles.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<SinogramSet> {
    let (dims, data) = read_array(path)?;
    ensure!(dims.len() == 3, Data, "{}: expected rank-3 sinogram", path.display());
    let (t, views, bins) = (dims[0], dims[1], dims[2]);

    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar)?;
    let mut angles_per_frame = Vec::with_capacity(t);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (_, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::Data(format!("{}: malformed sidecar line", sidecar.display())))?;
        let angles: Vec<f64> = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: bad angle '{tok}'", sidecar.display())))
            })
            .collect::<Result<_>>()?;
        ensure!(angles.len() == views, Data, "sidecar angle count disagrees with sinogram dims");
        angles_per_frame.push(angles);
    }
    ensure!(angles_per_frame.len() == t, Data, "sidecar frame count disagrees with sinogram dims");

    let mut frames = Vec::with_capacity(t);
    for (i, angles) in angles_per_frame.into_iter().enumerate() {
        let counts = data[i * views * bins..(i + 1) * views * bins].to_vec();
        frames.push(SinogramFrame::new(angles, counts, bins)?);
    }
    SinogramSet::new(frames)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".angles.txt");
    std::path::PathBuf::from(os)
}

/// Write a `key=value` manifest, one entry per line, in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}
