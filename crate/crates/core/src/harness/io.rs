//! Atomic file writes and dataset directories.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::data::Sample;
use super::pgm;
use crate::tensor::Tensor;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn image_bytes(image: &Tensor) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes samples as `images/NNNN.pgm` and `masks/NNNN.pgm` under `dir`.
/// Mask pixels hold class indices.
pub fn save_samples(dir: &Path, samples: &[Sample]) -> io::Result<()> {
    let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}.pgm");
        let (h, w) = (s.height(), s.width());
        pgm::write(&img_dir.join(&name), h, w, &image_bytes(&s.image))?;
        let mask: Vec<u8> = s
            .mask
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "label above 255")))
            .collect::<io::Result<_>>()?;
        pgm::write(&mask_dir.join(&name), h, w, &mask)?;
    }
    Ok(())
}

fn sorted_pgms(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    files.sort();
    Ok(files)
}

/// Reads a directory written by [`save_samples`].
pub fn load_samples(dir: &Path) -> io::Result<Vec<Sample>> {
    let images = sorted_pgms(&dir.join("images"))?;
    let masks = sorted_pgms(&dir.join("masks"))?;
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().map(|n| n.to_owned())).collect::<Vec<_>>();
    if names(&images) != names(&masks) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: image and mask files do not pair up", dir.display()),
        ));
    }
    images
        .iter()
        .zip(&masks)
        .map(|(ip, mp)| {
            let (h, w, px) = pgm::read(ip)?;
            let (mh, mw, mpx) = pgm::read(mp)?;
            if (h, w) != (mh, mw) {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: mask extents differ from image", mp.display()),
                ));
            }
            let data = px.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(Sample {
                image: Tensor::new(&[h, w, 1], data).expect("extents"),
                mask: mpx.iter().map(|&b| b as usize).collect(),
            })
        })
        .collect()
}
