use std::path::Path;

use nalgebra::DVector;

use super::{BatchData, PairedSample};
use crate::error::{Error, Result};

/// Writes `sample_id, latent_index, x_0.., y_0..`. Unique features are not
/// stored.
pub fn write_samples_csv(path: &Path, batch: &BatchData) -> Result<()> {
    let d1 = batch.samples[0].x.len();
    let d2 = batch.samples[0].y.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "latent_index".to_string()];
    header.extend((0..d1).map(|i| format!("x_{i}")));
    header.extend((0..d2).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (id, s) in batch.samples.iter().enumerate() {
        let mut row = vec![id.to_string(), s.latent_index.to_string()];
        row.extend(s.x.iter().chain(s.y.iter()).map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a dump written by [`write_samples_csv`]. Unique features come back
/// empty.
pub fn read_samples_csv(path: &Path) -> Result<BatchData> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let d1 = header.iter().filter(|h| h.starts_with("x_")).count();
    let d2 = header.iter().filter(|h| h.starts_with("y_")).count();
    if header.len() != 2 + d1 + d2 || header.get(0) != Some("sample_id") {
        return Err(Error::Format {
            path: path.into(),
            reason: "unexpected header".into(),
        });
    }
    let bad = |reason: String| Error::Format { path: path.into(), reason };
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| bad(format!("bad number {:?}", &rec[i])))
        };
        let latent_index = rec[1].parse().map_err(|_| bad(format!("bad index {:?}", &rec[1])))?;
        let x = (0..d1).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let y = (0..d2).map(|i| num(2 + d1 + i)).collect::<Result<Vec<_>>>()?;
        samples.push(PairedSample {
            x: DVector::from_vec(x),
            y: DVector::from_vec(y),
            latent_index,
            xi: DVector::zeros(0),
            zeta: DVector::zeros(0),
        });
    }
    BatchData::new(samples)
}
