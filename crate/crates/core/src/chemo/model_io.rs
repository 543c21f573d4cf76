//! PLS model file: header line
//! `PLSM1 <raw_bands> <features> <max_components> <n_components> <snv> <sg_window> <sg_poly> <sg_deriv>\n`
//! (`sg_window = 0` means no filter), then little-endian `f64`: `x_mean`
//! (`features`), `y_mean` (1), and the regression vectors for 1..=max
//! components (`max_components * features`).

use std::path::Path;

use super::pls::PlsModel;
use super::preprocess::{Preprocessing, SavgolParams};
use crate::error::{Error, Result};
use crate::hsidata::io::{parse_dim, read_bytes, split_header, write_bytes};

pub const PLS_MAGIC: &str = "PLSM1";

pub fn encode_model(model: &PlsModel) -> Vec<u8> {
    let (w, p, d) = model.preprocessing.savgol.map_or((0, 0, 0), |s| (s.window, s.poly, s.deriv));
    let mut out = format!(
        "{PLS_MAGIC} {} {} {} {} {} {w} {p} {d}\n",
        model.raw_bands,
        model.features(),
        model.max_components(),
        model.n_components,
        u8::from(model.preprocessing.snv),
    )
    .into_bytes();
    let push = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    for &v in &model.x_mean {
        push(&mut out, v);
    }
    push(&mut out, model.y_mean);
    for b in &model.coefficients {
        for &v in b {
            push(&mut out, v);
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<PlsModel> {
    let (fields, payload) = split_header(bytes, PLS_MAGIC)?;
    if fields.len() != 9 {
        return Err(Error::Header(format!("model header has {} fields, expected 9", fields.len())));
    }
    let dim = |i: usize, name: &str| parse_dim(fields.get(i), name);
    let raw_bands = dim(1, "raw_bands")?;
    let features = dim(2, "features")?;
    let max_components = dim(3, "max_components")?;
    let n_components = dim(4, "n_components")?;
    let snv = match dim(5, "snv")? {
        0 => false,
        1 => true,
        _ => return Err(Error::Header("snv flag must be 0 or 1".into())),
    };
    let window = dim(6, "sg_window")?;
    let savgol = (window > 0).then(|| -> Result<SavgolParams> {
        Ok(SavgolParams { window, poly: dim(7, "sg_poly")?, deriv: dim(8, "sg_deriv")? })
    });
    let savgol = savgol.transpose()?;
    let preprocessing = Preprocessing { snv, savgol };
    if preprocessing.output_len(raw_bands) != features {
        return Err(Error::Header("feature count inconsistent with preprocessing".into()));
    }
    if n_components == 0 || n_components > max_components {
        return Err(Error::Header("selected component count out of range".into()));
    }
    let expected = (features + 1 + max_components * features) * 8;
    if payload.len() != expected {
        return Err(Error::SizeMismatch { expected, found: payload.len() });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let x_mean = values[..features].to_vec();
    let y_mean = values[features];
    let coefficients = values[features + 1..].chunks(features).map(<[f64]>::to_vec).collect();
    Ok(PlsModel { raw_bands, preprocessing, x_mean, y_mean, coefficients, n_components })
}

pub fn write_model(model: &PlsModel, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_model(model))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<PlsModel> {
    decode_model(&read_bytes(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let model = PlsModel {
            raw_bands: 9,
            preprocessing: Preprocessing::default(),
            x_mean: vec![0.1, -0.2, 0.3],
            y_mean: 42.5,
            coefficients: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 1e-9]],
            n_components: 2,
        };
        let bytes = encode_model(&model);
        assert_eq!(decode_model(&bytes).unwrap(), model);
        assert!(matches!(decode_model(&bytes[..bytes.len() - 8]), Err(Error::SizeMismatch { .. })));
    }
}
