//! Named parameter tensors and their on-disk checkpoint format.
//!
//! A checkpoint directory holds `manifest.txt` (one `tensor.<name> =
//! <d0>x<d1>x...` entry per tensor) and one PTYF dump per tensor, flattened
//! to a single row; the manifest shape is authoritative.

use crate::error::{Error, Result};
use crate::field::io::{read_ptyf_raw, write_ptyf_raw};
use crate::kv::KvDoc;
use std::path::Path;

/// A named, shaped parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter `{name}`: shape does not match data length"
        );
        Self { name, shape, data }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![0.0; len])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(text: &str, origin: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(origin, format!("bad shape component `{d}`")))
        })
        .collect()
}

fn tensor_file(index: usize, name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("t{index:03}_{safe}.ptyf")
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes all tensors plus the manifest into `dir`.
pub fn save_parameters(dir: &Path, params: &[Parameter]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut doc = KvDoc::new();
    doc.set("tensor_count", params.len());
    for (i, p) in params.iter().enumerate() {
        doc.set(&format!("tensor.{i}.name"), &p.name);
        doc.set(&format!("tensor.{i}.shape"), shape_string(&p.shape));
        doc.set(&format!("tensor.{i}.file"), tensor_file(i, &p.name));
        write_ptyf_raw(&dir.join(tensor_file(i, &p.name)), 1, p.numel(), &p.data)?;
    }
    doc.save(&dir.join(MANIFEST_NAME))?;
    Ok(())
}

/// Loads tensors in manifest order.
pub fn load_parameters(dir: &Path) -> Result<Vec<Parameter>> {
    let manifest = dir.join(MANIFEST_NAME);
    let origin = manifest.display().to_string();
    let doc = KvDoc::load(&manifest)?;
    let count: usize = doc.require_parsed("tensor_count")?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let name = doc.require(&format!("tensor.{i}.name"))?.to_string();
        let shape = parse_shape(doc.require(&format!("tensor.{i}.shape"))?, &origin)?;
        let file = doc.require(&format!("tensor.{i}.file"))?;
        let (_, _, data) = read_ptyf_raw(&dir.join(file))?;
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::format(
                &origin,
                format!("tensor `{name}`: dump length does not match shape"),
            ));
        }
        out.push(Parameter::new(name, shape, data));
    }
    Ok(out)
}
