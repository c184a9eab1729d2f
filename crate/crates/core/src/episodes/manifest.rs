//! Directory-based datasets: `root/{train,val,test}/<label>/<items>` where
//! items are binary PPM (P6, 8-bit) images or SCT1 tensor containers.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

use super::{ClassEntry, Dataset, Split};

/// Decode a P6 PPM into a `3×H×W` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Format("missing P6 magic".into()));
    }
    pos += 2;
    for field in &mut fields {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::Format(format!("bad PPM header field at byte {start}")))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("empty PPM image {w}×{h}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PPM header not terminated by whitespace".into()));
    }
    pos += 1;
    let pixels = &bytes[pos..];
    if pixels.len() < 3 * w * h {
        return Err(Error::Format(format!(
            "PPM pixel data truncated: {} of {} bytes",
            pixels.len(),
            3 * w * h
        )));
    }
    let scale = maxval as f32;
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in pixels[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / scale;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Encode a `3×H×W` tensor as P6, rounding to the nearest 8-bit level.
pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("expected a 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_ppm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

fn read_item(path: &Path) -> Result<Option<Tensor<f32>>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let img = match ext.as_deref() {
        Some("ppm") => read_ppm(path)?,
        Some("sct1") => {
            let mut entries = io::read_file::<f32>(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if entries.len() != 1 {
                return Err(Error::Format(format!(
                    "{}: expected one tensor, found {}",
                    path.display(),
                    entries.len()
                )));
            }
            entries.pop().map(|(_, t)| t).expect("one entry")
        }
        _ => return Ok(None),
    };
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Format(format!("{}: item shape {s:?} is not 3×H×W", path.display())));
    }
    Ok(Some(img))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Load every split present under `root`. Class and item order follow
/// sorted file names, so the result does not depend on the file system.
pub fn load_manifest(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Format(format!("{} is not a directory", root.display())));
    }
    let mut classes = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            continue;
        }
        for class_dir in sorted_entries(&dir)? {
            if !class_dir.is_dir() {
                continue;
            }
            let label = class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Format(format!("{}: non-UTF-8 class name", class_dir.display())))?
                .to_string();
            let mut items = Vec::new();
            for path in sorted_entries(&class_dir)? {
                if let Some(img) = read_item(&path)? {
                    items.push(img);
                }
            }
            if items.is_empty() {
                return Err(Error::Format(format!("{}: class directory has no items", class_dir.display())));
            }
            classes.push(ClassEntry { label, split, items });
        }
    }
    if classes.is_empty() {
        return Err(Error::Format(format!("{}: no classes found", root.display())));
    }
    Dataset::new(classes)
}

/// Write a dataset in manifest layout with PPM items.
pub fn write_manifest(root: &Path, ds: &Dataset) -> Result<()> {
    for class in &ds.classes {
        let dir = root.join(class.split.dir_name()).join(&class.label);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, img) in class.items.iter().enumerate() {
            write_ppm(&dir.join(format!("{i:04}.ppm")), img)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_pixels_scale_by_255() {
        let mut bytes = b"P6\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255, 10, 20, 30]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        let expect = [0, 10, 51, 20, 255, 30].map(|v| v as f32 / 255.0);
        assert_eq!(t.data(), &expect);
    }

    #[test]
    fn ppm_roundtrip_is_exact_on_8bit_levels() {
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let img = Tensor::new(&[3, 4, 5], data).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_errors() {
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
    }
}
