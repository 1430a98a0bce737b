use std::io::Write;
use std::path::Path;

use crate::world::Frame;

use super::FrameError;

/// First four bytes of a raw video stream. The 16-byte header continues
/// with frame count, height and width as little-endian `u32`s, followed by
/// the frames' RGB bytes in order.
pub const RAW_MAGIC: [u8; 4] = *b"AGVR";

fn io(path: &Path) -> impl Fn(std::io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `dir/000.ppm`, `dir/001.ppm`, ...
pub fn write_ppm_sequence(frames: &[Frame], dir: &Path) -> Result<(), FrameError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (t, f) in frames.iter().enumerate() {
        let path = dir.join(format!("{t:03}.ppm"));
        std::fs::write(&path, f.to_ppm()).map_err(io(&path))?;
    }
    Ok(())
}

pub fn write_raw_video(frames: &[Frame], path: &Path) -> Result<(), FrameError> {
    let (h, w) = frames.first().map_or((0, 0), |f| (f.height(), f.width()));
    if frames.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(FrameError::Input("frames differ in resolution".into()));
    }
    let mut out = Vec::with_capacity(16 + frames.len() * h * w * 3);
    out.extend_from_slice(&RAW_MAGIC);
    for v in [frames.len(), h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in frames {
        out.extend_from_slice(f.data());
    }
    let mut file = std::fs::File::create(path).map_err(io(path))?;
    file.write_all(&out).map_err(io(path))
}

pub fn read_raw_video(path: &Path) -> Result<Vec<Frame>, FrameError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    let bad = |msg: &str| FrameError::Input(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || bytes[..4] != RAW_MAGIC {
        return Err(bad("not a raw video stream"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (t, h, w) = (field(1), field(2), field(3));
    let size = h * w * 3;
    if bytes.len() != 16 + t * size {
        return Err(bad("length does not match header"));
    }
    Ok(bytes[16..]
        .chunks(size.max(1))
        .take(t)
        .map(|c| Frame::from_raw(w, h, c.to_vec()).expect("sized chunk"))
        .collect())
}
