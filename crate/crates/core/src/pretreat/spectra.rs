use crate::error::{Error, Result};

/// Contiguous bands `[start, end)` partitioning `n_lines` into `n_bins` as
/// evenly as possible; the first `n_lines % n_bins` bands get one extra line.
pub fn band_edges(n_lines: usize, n_bins: usize) -> Result<Vec<(usize, usize)>> {
    if n_bins == 0 || n_bins > n_lines {
        return Err(Error::Sizing(format!(
            "cannot bin {n_lines} spectral lines into {n_bins} bands"
        )));
    }
    let base = n_lines / n_bins;
    let extra = n_lines % n_bins;
    let mut start = 0;
    Ok((0..n_bins)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let band = (start, start + len);
            start += len;
            band
        })
        .collect())
}

/// Mean intensity of each band of one spectrum sample.
pub fn bin_spectra(raw_lines: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    Ok(band_edges(raw_lines.len(), n_bins)?
        .into_iter()
        .map(|(s, e)| raw_lines[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// Bins a time series of spectra; output is one series per band.
pub fn bin_spectral_series(samples: &[Vec<f64>], n_bins: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(samples.len()); n_bins];
    for s in samples {
        for (ch, v) in out.iter_mut().zip(bin_spectra(s, n_bins)?) {
            ch.push(v);
        }
    }
    Ok(out)
}
