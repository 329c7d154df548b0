//! Checkpoint files: a versioned text header, the model configuration, and
//! named parameter tensors stored either as decimal text or as raw
//! little-endian `f64`.
//!
//! ```text
//! catpose-checkpoint 1 text
//! config c=64 c_g=256 ...
//! ngph_shift <6 values>
//! ngph_scale <6 values>
//! tensor prior_enc.0.weight 3 64 relu
//! <values, or 8*rows*cols bytes followed by a newline>
//! ...
//! end
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use super::mlp::{Activation, Mlp};
use super::model::{Discriminator, ModelConfig, SddrModel};
use crate::error::{Error, Result};

const MAGIC: &str = "catpose-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckpointFormat {
    #[default]
    Text,
    Binary,
}

impl CheckpointFormat {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointFormat::Text => "text",
            CheckpointFormat::Binary => "binary",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "text" => Some(CheckpointFormat::Text),
            "binary" => Some(CheckpointFormat::Binary),
            _ => None,
        }
    }
}

fn config_line(c: &ModelConfig) -> String {
    format!(
        "config c={} c_g={} hidden={} n_m={} disc_hidden={} ngph_to_nocs={} no_ngph={} no_decouple={} direct_regression={}\n",
        c.c, c.c_g, c.hidden, c.n_m, c.disc_hidden, c.ngph_to_nocs, c.no_ngph, c.no_decouple, c.direct_regression
    )
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &DMatrix<f64>, act: Activation, fmt: CheckpointFormat) {
    out.extend_from_slice(format!("tensor {name} {} {} {}\n", t.nrows(), t.ncols(), act.name()).as_bytes());
    // Row-major order.
    let values = (0..t.nrows()).flat_map(|i| (0..t.ncols()).map(move |j| t[(i, j)]));
    match fmt {
        CheckpointFormat::Text => {
            let line: Vec<String> = values.map(|v| format!("{v:e}")).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
        }
        CheckpointFormat::Binary => values.for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out.push(b'\n');
}

fn push_mlp(out: &mut Vec<u8>, group: &str, m: &Mlp, fmt: CheckpointFormat) {
    for (k, l) in m.layers.iter().enumerate() {
        push_tensor(out, &format!("{group}.{k}.weight"), &l.weight, l.activation, fmt);
        push_tensor(out, &format!("{group}.{k}.bias"), &l.bias, l.activation, fmt);
    }
}

pub fn encode_checkpoint(model: &SddrModel, disc: &Discriminator, fmt: CheckpointFormat) -> Vec<u8> {
    let mut out = format!("{MAGIC} {VERSION} {}\n", fmt.name()).into_bytes();
    out.extend_from_slice(config_line(&model.config).as_bytes());
    for (key, vals) in [("ngph_shift", &model.ngph_shift), ("ngph_scale", &model.ngph_scale)] {
        let v: Vec<String> = vals.iter().map(|x| format!("{x:e}")).collect();
        out.extend_from_slice(format!("{key} {}\n", v.join(" ")).as_bytes());
    }
    for (name, m) in model.groups() {
        push_mlp(&mut out, name, m, fmt);
    }
    for (name, m) in disc.groups() {
        push_mlp(&mut out, name, m, fmt);
    }
    out.extend_from_slice(b"end\n");
    out
}

pub fn write_checkpoint(path: &Path, model: &SddrModel, disc: &Discriminator, fmt: CheckpointFormat) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, disc, fmt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(SddrModel, Discriminator)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { source_name: self.source.to_string(), line: self.line, message: message.into() }
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += end + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.err("line is not UTF-8"))
    }

    fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n + 1 > self.bytes.len() || self.bytes[self.pos + n] != b'\n' {
            return Err(self.err("truncated binary tensor"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n + 1;
        self.line += 1;
        Ok(out)
    }
}

fn parse_f64s(cur: &Cursor, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| cur.err(format!("bad number {t:?}")))).collect()
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<(SddrModel, Discriminator)> {
    let mut cur = Cursor { bytes, pos: 0, line: 0, source };
    let header: Vec<&str> = cur.line()?.split_whitespace().collect();
    if header.len() != 3 || header[0] != MAGIC {
        return Err(cur.err("not a checkpoint file"));
    }
    if header[1] != VERSION.to_string() {
        return Err(cur.err(format!("unsupported checkpoint version {}", header[1])));
    }
    let fmt = CheckpointFormat::from_name(header[2]).ok_or_else(|| cur.err(format!("unknown format {}", header[2])))?;

    let cfg_line = cur.line()?;
    let mut cfg = ModelConfig::default();
    let mut fields = cfg_line.split_whitespace();
    if fields.next() != Some("config") {
        return Err(cur.err("expected config line"));
    }
    for kv in fields {
        let (k, v) = kv.split_once('=').ok_or_else(|| cur.err(format!("bad config entry {kv:?}")))?;
        let num = || v.parse::<usize>().map_err(|_| cur.err(format!("bad value for {k}")));
        let flag = || v.parse::<bool>().map_err(|_| cur.err(format!("bad value for {k}")));
        match k {
            "c" => cfg.c = num()?,
            "c_g" => cfg.c_g = num()?,
            "hidden" => cfg.hidden = num()?,
            "n_m" => cfg.n_m = num()?,
            "disc_hidden" => cfg.disc_hidden = num()?,
            "ngph_to_nocs" => cfg.ngph_to_nocs = flag()?,
            "no_ngph" => cfg.no_ngph = flag()?,
            "no_decouple" => cfg.no_decouple = flag()?,
            "direct_regression" => cfg.direct_regression = flag()?,
            _ => return Err(cur.err(format!("unknown config key {k}"))),
        }
    }
    let mut model = SddrModel::new(cfg, 0).map_err(|e| cur.err(e.to_string()))?;
    let mut disc = Discriminator::new(model.config.disc_hidden, 0);

    for key in ["ngph_shift", "ngph_scale"] {
        let line = cur.line()?;
        let rest = line.strip_prefix(key).ok_or_else(|| cur.err(format!("expected {key}")))?;
        let vals = parse_f64s(&cur, rest)?;
        let arr: [f64; 6] = vals.try_into().map_err(|_| cur.err(format!("{key} needs 6 values")))?;
        if key == "ngph_shift" {
            model.ngph_shift = arr;
        } else {
            model.ngph_scale = arr;
        }
    }

    let mut seen = 0usize;
    loop {
        let line = cur.line()?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "tensor" {
            return Err(cur.err("expected tensor header"));
        }
        let rows: usize = parts[2].parse().map_err(|_| cur.err("bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| cur.err("bad column count"))?;
        let act = Activation::from_name(parts[4]).ok_or_else(|| cur.err(format!("unknown activation {}", parts[4])))?;
        let values = match fmt {
            CheckpointFormat::Text => {
                let l = cur.line()?;
                parse_f64s(&cur, l)?
            }
            CheckpointFormat::Binary => cur
                .raw(rows * cols * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        };
        if values.len() != rows * cols {
            return Err(cur.err(format!("tensor {} expects {} values, found {}", parts[1], rows * cols, values.len())));
        }
        let (group, rest) = parts[1].split_once('.').ok_or_else(|| cur.err("bad tensor name"))?;
        let (layer, kind) = rest.split_once('.').ok_or_else(|| cur.err("bad tensor name"))?;
        let layer: usize = layer.parse().map_err(|_| cur.err("bad layer index"))?;
        let target = model
            .groups_mut()
            .into_iter()
            .chain(disc.groups_mut())
            .find(|(n, _)| *n == group)
            .map(|(_, m)| m)
            .ok_or_else(|| cur.err(format!("unknown parameter group {group}")))?;
        let l = target.layers.get_mut(layer).ok_or_else(|| cur.err(format!("{group} has no layer {layer}")))?;
        let t = match kind {
            "weight" => &mut l.weight,
            "bias" => &mut l.bias,
            _ => return Err(cur.err(format!("unknown tensor kind {kind}"))),
        };
        if t.nrows() != rows || t.ncols() != cols {
            return Err(cur.err(format!("{} is {}x{}, configuration expects {}x{}", parts[1], rows, cols, t.nrows(), t.ncols())));
        }
        *t = DMatrix::from_row_slice(rows, cols, &values);
        l.activation = act;
        seen += 1;
    }
    let expected: usize = model.groups().iter().chain(disc.groups().iter()).map(|(_, m)| 2 * m.layers.len()).sum();
    if seen != expected {
        return Err(cur.err(format!("checkpoint holds {seen} tensors, configuration needs {expected}")));
    }
    Ok((model, disc))
}
