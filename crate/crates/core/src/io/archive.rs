//! Model archive: a text manifest followed by raw tensor data.
//!
//! ```text
//! STTA-MODEL v1
//! e_layers 2
//! ...
//! eos none
//! tensor enc.conv1.weight 2 1 3 3
//! ...
//! end
//! <f32 little-endian data of every listed tensor, in manifest order>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, NamedTensor};

pub const ARCHIVE_MAGIC: &str = "STTA-MODEL v1";

pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let c = &model.config;
    let mut head = String::new();
    head.push_str(ARCHIVE_MAGIC);
    head.push('\n');
    for (k, v) in [
        ("e_layers", c.e_layers),
        ("d_layers", c.d_layers),
        ("d_model", c.d_model),
        ("d_ff", c.d_ff),
        ("heads", c.heads),
        ("vocab_size", c.vocab_size),
        ("feat_dim", c.feat_dim),
    ] {
        head.push_str(&format!("{k} {v}\n"));
    }
    head.push_str(&format!("cnn_channels {} {}\n", c.cnn_channels.0, c.cnn_channels.1));
    head.push_str(&format!("sos {}\n", c.sos));
    match c.eos {
        Some(e) => head.push_str(&format!("eos {e}\n")),
        None => head.push_str("eos none\n"),
    }
    let tensors = model.tensors();
    for t in &tensors {
        head.push_str("tensor ");
        head.push_str(&t.name);
        for d in &t.dims {
            head.push_str(&format!(" {d}"));
        }
        head.push('\n');
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    for t in &tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut next_line = || -> Result<(usize, &str)> {
        let rest = &bytes[pos..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("manifest ends without 'end'".into()))?;
        let line = std::str::from_utf8(&rest[..len]).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        pos += len + 1;
        line_no += 1;
        Ok((line_no, line))
    };

    let (_, magic) = next_line().map_err(|_| Error::Format("not a model archive (bad magic)".into()))?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::Format("not a model archive (bad magic)".into()));
    }
    let mut fields: Vec<(String, Vec<String>, usize)> = Vec::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let (n, line) = next_line()?;
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().ok_or_else(|| parse_err(n, "empty manifest line"))?;
        let rest: Vec<String> = parts.map(str::to_string).collect();
        if key == "tensor" {
            let (name, dims) = rest.split_first().ok_or_else(|| parse_err(n, "tensor line without a name"))?;
            let dims = dims
                .iter()
                .map(|d| d.parse::<usize>().map_err(|_| parse_err(n, format!("bad dimension '{d}'"))))
                .collect::<Result<Vec<_>>>()?;
            shapes.push((name.clone(), dims));
        } else {
            fields.push((key.to_string(), rest, n));
        }
    }
    let header_end = pos;

    let get = |key: &str| -> Result<(&[String], usize)> {
        fields
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, n)| (v.as_slice(), *n))
            .ok_or_else(|| Error::Format(format!("manifest lacks '{key}'")))
    };
    let num = |key: &str| -> Result<usize> {
        let (v, n) = get(key)?;
        match v {
            [x] => x.parse().map_err(|_| parse_err(n, format!("bad value for {key}"))),
            _ => Err(parse_err(n, format!("{key} takes one value"))),
        }
    };
    let (ch, ch_line) = get("cnn_channels")?;
    let cnn_channels = match ch {
        [a, b] => (
            a.parse().map_err(|_| parse_err(ch_line, "bad cnn_channels"))?,
            b.parse().map_err(|_| parse_err(ch_line, "bad cnn_channels"))?,
        ),
        _ => return Err(parse_err(ch_line, "cnn_channels takes two values")),
    };
    let (eos, eos_line) = get("eos")?;
    let eos = match eos {
        [x] if x == "none" => None,
        [x] => Some(x.parse().map_err(|_| parse_err(eos_line, "bad eos"))?),
        _ => return Err(parse_err(eos_line, "eos takes one value")),
    };
    let config = ModelConfig {
        e_layers: num("e_layers")?,
        d_layers: num("d_layers")?,
        d_model: num("d_model")?,
        d_ff: num("d_ff")?,
        heads: num("heads")?,
        vocab_size: num("vocab_size")?,
        feat_dim: num("feat_dim")?,
        cnn_channels,
        sos: num("sos")? as u32,
        eos,
    };
    config.validate()?;

    let payload: usize = shapes.iter().map(|(_, d)| d.iter().product::<usize>() * 4).sum();
    let actual = bytes.len() - header_end;
    if actual != payload {
        return Err(Error::Truncated {
            expected: payload,
            actual,
        });
    }
    let mut offset = header_end;
    let mut tensors = Vec::with_capacity(shapes.len());
    for (name, dims) in shapes {
        let count: usize = dims.iter().product();
        let data = bytes[offset..offset + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += count * 4;
        tensors.push(NamedTensor { name, dims, data });
    }
    ModelParams::from_tensors(&config, tensors)
}

pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
