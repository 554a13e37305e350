//! Grayscale export of one probe slice as a binary PGM image.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gocor::{CorrespondenceVolume, VolumeKind};

/// Slice dimensions `(rows, cols)` of one probe slice.
fn slice_dims(vol: &CorrespondenceVolume) -> (usize, usize) {
    match vol.kind() {
        VolumeKind::Global => (vol.height(), vol.width()),
        VolumeKind::Local { radius } => (2 * radius + 1, 2 * radius + 1),
    }
}

/// Min-max normalize a slice to `0..=255`; a constant slice maps to all 0.
pub fn normalize_slice(slice: &[f64]) -> Vec<u8> {
    let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; slice.len()];
    }
    let scale = 255.0 / (max - min);
    slice
        .iter()
        .map(|&v| ((v - min) * scale).round() as u8)
        .collect()
}

/// Write the probe's slice as binary PGM (P5, maxval 255) and optionally the
/// raw values as CSV.
pub fn export_heatmap(
    vol: &CorrespondenceVolume,
    probe: (usize, usize),
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    if probe.0 >= vol.height() || probe.1 >= vol.width() {
        bail!(
            "probe ({}, {}) outside the {}x{} grid",
            probe.0,
            probe.1,
            vol.height(),
            vol.width()
        );
    }
    let (rows, cols) = slice_dims(vol);
    let slice = vol.slice(probe.0, probe.1);
    let pixels = normalize_slice(slice);

    let mut file = std::fs::File::create(out)
        .with_context(|| format!("creating {}", out.display()))?;
    write!(file, "P5\n{cols} {rows}\n255\n")?;
    file.write_all(&pixels)?;
    file.flush()?;

    if let Some(csv_path) = csv {
        let mut text = String::new();
        for r in 0..rows {
            let row: Vec<String> = (0..cols)
                .map(|c| format!("{}", slice[r * cols + c]))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(csv_path, text)
            .with_context(|| format!("writing {}", csv_path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn one_hot_slice_maps_to_single_white_pixel() {
        let mut vol = CorrespondenceVolume::zeros(2, 2, VolumeKind::Global);
        vol.data_mut()[2] = 1.0; // cell (1,0) of the (0,0) slice
        let dir = tempdir().unwrap();
        let path = dir.path().join("hm.pgm");
        export_heatmap(&vol, (0, 0), &path, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pix = &bytes[header.len()..];
        assert_eq!(pix.iter().filter(|&&p| p == 255).count(), 1);
        assert_eq!(pix.iter().filter(|&&p| p == 0).count(), 3);
    }

    #[test]
    fn constant_slice_renders_black() {
        let vol = CorrespondenceVolume::new(2, 2, VolumeKind::Global, vec![0.4; 16]).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("flat.pgm");
        export_heatmap(&vol, (1, 1), &path, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes[b"P5\n2 2\n255\n".len()..].iter().all(|&p| p == 0));
    }

    #[test]
    fn csv_contains_raw_values() {
        let mut vol = CorrespondenceVolume::zeros(1, 2, VolumeKind::Local { radius: 1 });
        for (i, v) in vol.data_mut()[..9].iter_mut().enumerate() {
            *v = i as f64 * 0.5;
        }
        let dir = tempdir().unwrap();
        let pgm = dir.path().join("x.pgm");
        let csv = dir.path().join("x.csv");
        export_heatmap(&vol, (0, 0), &pgm, Some(&csv)).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("0,0.5,1"));
    }

    #[test]
    fn out_of_bounds_probe_is_rejected() {
        let vol = CorrespondenceVolume::zeros(2, 2, VolumeKind::Global);
        let dir = tempdir().unwrap();
        assert!(export_heatmap(&vol, (5, 0), &dir.path().join("x.pgm"), None).is_err());
    }
}
