//! Parameter files: a text header naming the architecture and every tensor,
//! then the tensors' binary64 little-endian values in header order.
//!
//! ```text
//! UNETP1 <levels> <base_width> <stem_depth> <bands> <bin_factor> <out_h> <out_w> <tensors>
//! <name> <weight|bias> <dim> <dim> ...
//! ...
//! <payload>
//! ```

use super::params::{param_specs, Param};
use super::{NetConfig, NetParams, Tensor};
use crate::error::{Error, Result};
use crate::hsidata::io::{read_bytes, write_bytes};
use std::path::Path;

pub const PARAMS_MAGIC: &str = "UNETP1";

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("unterminated header line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Header("header is not UTF-8".into()))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| Error::Header(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Header(format!("bad {what}")))
}

pub fn encode_params(config: &NetConfig, params: &NetParams) -> Result<Vec<u8>> {
    params.validate(config)?;
    let c = config;
    let mut out = format!(
        "{PARAMS_MAGIC} {} {} {} {} {} {} {} {}\n",
        c.levels,
        c.base_width,
        c.stem_depth,
        c.bands,
        c.bin_factor,
        c.out_h,
        c.out_w,
        params.params().len()
    )
    .into_bytes();
    for p in params.params() {
        let kind = if p.is_weight { "weight" } else { "bias" };
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        out.extend_from_slice(format!("{} {kind} {}\n", p.name, dims.join(" ")).as_bytes());
    }
    for p in params.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<(NetConfig, NetParams)> {
    let mut pos = 0;
    let first = next_line(bytes, &mut pos)?;
    let mut tok = first.split_ascii_whitespace();
    match tok.next() {
        Some(PARAMS_MAGIC) => {}
        Some(m) if m.starts_with("UNETP") => return Err(Error::Version(m.to_string())),
        _ => return Err(Error::Header("not a parameter file".into())),
    }
    let mut field = |what| parse_usize(tok.next(), what);
    let config = NetConfig {
        levels: field("levels")?,
        base_width: field("base width")?,
        stem_depth: field("stem depth")?,
        bands: field("bands")?,
        bin_factor: field("bin factor")?,
        out_h: field("output height")?,
        out_w: field("output width")?,
    };
    let count = field("tensor count")?;
    config.validate()?;
    let specs = param_specs(&config);
    if count != specs.len() {
        return Err(Error::Header(format!("{count} tensors listed, architecture has {}", specs.len())));
    }
    let mut declared = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(bytes, &mut pos)?;
        let mut t = line.split_ascii_whitespace();
        let name = t.next().ok_or_else(|| Error::Header("missing tensor name".into()))?.to_string();
        let is_weight = match t.next() {
            Some("weight") => true,
            Some("bias") => false,
            _ => return Err(Error::Header(format!("bad kind for {name}"))),
        };
        let shape = t.map(|d| d.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Header(format!("bad shape for {name}")))?;
        declared.push((name, shape, is_weight));
    }
    if declared != specs {
        return Err(Error::Header("tensor list does not match the architecture".into()));
    }
    let total: usize = declared.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
    let payload = &bytes[pos..];
    if payload.len() != total * 8 {
        return Err(Error::SizeMismatch { expected: total * 8, found: payload.len() });
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = Vec::with_capacity(count);
    for (name, shape, is_weight) in declared {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if let Some(j) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        params.push(Param { name, value: Tensor::new(&shape, data)?, is_weight });
    }
    Ok((config, NetParams::from_params(params)))
}

pub fn write_params(config: &NetConfig, params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_params(config, params)?)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(NetConfig, NetParams)> {
    decode_params(&read_bytes(path.as_ref())?)
}
