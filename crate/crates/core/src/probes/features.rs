use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::gazedata::ImageGray;
use crate::model::Model;
use crate::numcore::{Bind, Tape};

/// Gaze-free `2d` feature of one image: mean-pooled encoder tokens, then
/// the projected predictor output at a readout token placed after a raster
/// surrogate sequence (every patch, unit dwell).
pub fn extract_probe_features(model: &Model, image: &ImageGray) -> Result<Vec<f64>, ProbeError> {
    let n = model.config.num_patches();
    let mut tape = Tape::new();
    let bind = Bind::Frozen(&model.online);
    let p = tape.constant(model.patch_tensor(image)?);
    let z = model.encoder_forward(&mut tape, bind, p)?;
    let pooled = tape.mean_rows(z);

    let raster: Vec<usize> = (0..n).collect();
    let tokens = model.embed_tokens(&mut tape, bind, z, &raster, &vec![1.0; n])?;
    let readout = bind.var(&mut tape, model.layout.readout.token);
    let seq = tape.concat_rows(&[tokens, readout])?;
    let h = model.predictor_trunk(&mut tape, bind, seq)?;
    let last = tape.gather_rows(h, &[n])?;
    let projected = model.layout.readout.proj.forward(&mut tape, bind, last)?;

    let mut out = tape.value(pooled).data().to_vec();
    out.extend_from_slice(tape.value(projected).data());
    Ok(out)
}

pub fn probe_feature_matrix(model: &Model, images: &[ImageGray]) -> Result<Vec<Vec<f64>>, ProbeError> {
    images.iter().map(|img| extract_probe_features(model, img)).collect()
}

/// Per-dimension standardization with statistics from the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions whose spread falls below this are treated as constant.
const MIN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let first = rows
            .first()
            .ok_or_else(|| ProbeError::InvalidArgument("no training rows to standardize".into()))?;
        let d = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(ProbeError::LengthMismatch {
                what: "feature row",
                expected: d,
                got: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Zero-variance dimensions map to 0.
    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ProbeError> {
        rows.iter()
            .map(|r| {
                if r.len() != self.mean.len() {
                    return Err(ProbeError::LengthMismatch {
                        what: "feature row",
                        expected: self.mean.len(),
                        got: r.len(),
                    });
                }
                Ok(r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| if *s < MIN_STD { 0.0 } else { (v - m) / s })
                    .collect())
            })
            .collect()
    }

    /// Fits on `train` and transforms both sets.
    pub fn fit_transform(
        train: &[Vec<f64>],
        test: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Self), ProbeError> {
        let s = Self::fit(train)?;
        Ok((s.transform(train)?, s.transform(test)?, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_uses_train_statistics() {
        let train = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let test = vec![vec![5.0, 7.0]];
        let (tr, te, s) = Standardizer::fit_transform(&train, &test).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(tr, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        // test row uses train mean/std, constant column stays zero
        assert_eq!(te, vec![vec![3.0, 0.0]]);
    }

    #[test]
    fn standardized_train_columns_are_centred() {
        let train: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.37 + 2.0, (i * i) as f64]).collect();
        let (tr, _, _) = Standardizer::fit_transform(&train, &[]).unwrap();
        for c in 0..2 {
            let m: f64 = tr.iter().map(|r| r[c]).sum::<f64>() / 7.0;
            let v: f64 = tr.iter().map(|r| r[c] * r[c]).sum::<f64>() / 7.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-10);
        }
        assert!(Standardizer::fit(&[]).is_err());
    }
}
