//! On-disk layout of a work directory.
//!
//! ```text
//! corpus/manifest.csv             id,image_seed,noise_seed,alpha,snr_db
//! corpus/targets/<id>.igrd
//! corpus/measurements/<id>.i2im
//! init/<id>/manifest.csv          q,seed,residual
//! init/<id>/est_<q>.igrd
//! model.i2dn
//! recon/<id>.igrd                 plus .pgm and a per-step .trace.csv
//! aggregate/<id>/mean.igrd        plus sample_<j>.igrd
//! aggregate/summary.csv           id,predicted_variance
//! calibration/                    calibration.csv, coverage_*.csv, calibrated.csv
//! eval.csv                        id,psnr,ssim,ambiguity,shift_search
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phaseret_core::initialization::InitEnsemble;

use crate::error::CliError;
use crate::formats::{encode_image, read_file, read_image, write_atomic};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub image_seed: u64,
    pub noise_seed: u64,
    pub alpha: f64,
    pub snr_db: f64,
}

pub fn record_id(index: usize) -> String {
    format!("img{index:05}")
}

pub fn manifest_path(corpus: &Path) -> PathBuf {
    corpus.join("manifest.csv")
}

pub fn target_path(corpus: &Path, id: &str) -> PathBuf {
    corpus.join("targets").join(format!("{id}.igrd"))
}

pub fn measurement_path(corpus: &Path, id: &str) -> PathBuf {
    corpus.join("measurements").join(format!("{id}.i2im"))
}

pub fn write_manifest(corpus: &Path, records: &[CorpusRecord]) -> Result<(), CliError> {
    let mut s = String::from("id,image_seed,noise_seed,alpha,snr_db\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.id, r.image_seed, r.noise_seed, r.alpha, r.snr_db);
    }
    write_atomic(&manifest_path(corpus), s.as_bytes())
}

/// Splits a CSV file into rows, checking the header.
fn csv_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>, CliError> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::Format(format!("{}: not UTF-8", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(CliError::Format(format!("{}: expected header {header:?}", path.display())));
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let row: Vec<String> = l.split(',').map(str::to_owned).collect();
            if row.len() != width {
                return Err(CliError::Format(format!("{}: bad row {l:?}", path.display())));
            }
            Ok(row)
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T, CliError> {
    s.parse()
        .map_err(|_| CliError::Format(format!("{}: bad field {s:?}", path.display())))
}

pub fn read_manifest(corpus: &Path) -> Result<Vec<CorpusRecord>, CliError> {
    let path = manifest_path(corpus);
    csv_rows(&path, "id,image_seed,noise_seed,alpha,snr_db")?
        .into_iter()
        .map(|r| {
            Ok(CorpusRecord {
                id: r[0].clone(),
                image_seed: field(&path, &r[1])?,
                noise_seed: field(&path, &r[2])?,
                alpha: field(&path, &r[3])?,
                snr_db: field(&path, &r[4])?,
            })
        })
        .collect()
}

pub fn write_ensemble(dir: &Path, ensemble: &InitEnsemble) -> Result<(), CliError> {
    let mut s = String::from("q,seed,residual\n");
    for (q, est) in ensemble.estimates.iter().enumerate() {
        write_atomic(&dir.join(format!("est_{q}.igrd")), &encode_image(est))?;
        let _ = writeln!(s, "{q},{},{}", ensemble.seeds[q], ensemble.residuals[q]);
    }
    write_atomic(&dir.join("manifest.csv"), s.as_bytes())
}

pub fn read_ensemble(dir: &Path) -> Result<InitEnsemble, CliError> {
    let path = dir.join("manifest.csv");
    let rows = csv_rows(&path, "q,seed,residual")?;
    let mut estimates = Vec::with_capacity(rows.len());
    let mut seeds = Vec::with_capacity(rows.len());
    let mut residuals = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if field::<usize>(&path, &r[0])? != i {
            return Err(CliError::Format(format!("{}: rows out of order", path.display())));
        }
        seeds.push(field(&path, &r[1])?);
        residuals.push(field(&path, &r[2])?);
        estimates.push(read_image(&dir.join(format!("est_{i}.igrd")))?);
    }
    Ok(InitEnsemble::from_estimates(estimates, residuals, seeds)?)
}

pub fn write_summary(path: &Path, rows: &[(String, f64)]) -> Result<(), CliError> {
    let mut s = String::from("id,predicted_variance\n");
    for (id, v) in rows {
        let _ = writeln!(s, "{id},{v}");
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    csv_rows(path, "id,predicted_variance")?
        .into_iter()
        .map(|r| Ok((r[0].clone(), field(path, &r[1])?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use phaseret_core::ImageGrid;

    #[test]
    fn manifest_and_ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![CorpusRecord {
            id: record_id(3),
            image_seed: u64::MAX,
            noise_seed: 7,
            alpha: 3.0,
            snr_db: 0.1 + 0.2,
        }];
        write_manifest(dir.path(), &records).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), records);

        let a = ImageGrid::from_inner(2, 4, &[0.1, 0.2, 0.3, 1.0 / 3.0]).unwrap();
        let e = InitEnsemble::from_estimates(vec![a.clone(), a], vec![0.5, 0.25], vec![1, 2]).unwrap();
        let sub = dir.path().join("e");
        write_ensemble(&sub, &e).unwrap();
        let back = read_ensemble(&sub).unwrap();
        assert_eq!(back.estimates, e.estimates);
        assert_eq!(back.residuals, e.residuals);
        assert_eq!(back.seeds, e.seeds);
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(manifest_path(dir.path()), "id,seed\n").unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(CliError::Format(_))));
    }
}
