use std::path::Path;

use super::{FlowError, ImageGray};

/// Reads an 8-bit binary PGM (P5). Intensities are scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<ImageGray, FlowError> {
    let bytes = std::fs::read(path)?;
    let err = |msg: &str| FlowError::Pgm {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM is supported"));
    }
    // single whitespace byte after maxval
    pos += 1;
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| err("truncated pixel data"))?;
    ImageGray::new(
        w,
        h,
        data.iter().map(|&b| b as f64 / maxval as f64).collect(),
    )
}

/// Writes an 8-bit binary PGM, clamping intensities to [0, 1].
pub fn write_pgm(path: &Path, img: &ImageGray) -> Result<(), FlowError> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out)?;
    Ok(())
}
