//! Binary checkpoint files.
//!
//! ```text
//! HFSEQ1\n
//! <TOML header: architecture, vocab_size, hidden_sizes, factor_size,
//!  output_mode, parameter_count, seed, optional symbols, ...>
//! \n                       (blank line ends the header)
//! <parameter_count little-endian f64 values in layout order>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Architecture, ModelConfig, OutputMode};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

pub const MAGIC: &[u8; 7] = b"HFSEQ1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_size: Option<usize>,
    hidden_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor_size: Option<usize>,
    output_mode: OutputMode,
    extra_biases: bool,
    parameter_count: usize,
    seed: u64,
    /// Known symbols of a character model's vocabulary, in id order, as
    /// code points (a string could span lines and end the header early).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symbols: Option<Vec<u32>>,
}

/// A model with its parameters and, for text models, the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub symbols: Option<String>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParameterSet) -> Self {
        Checkpoint {
            config,
            params,
            symbols: None,
        }
    }

    pub fn with_symbols(mut self, symbols: impl Into<String>) -> Self {
        self.symbols = Some(symbols.into());
        self
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, checkpoint: &Checkpoint) -> Result<()> {
    let (config, params) = (&checkpoint.config, &checkpoint.params);
    let header = Header {
        architecture: config.architecture,
        vocab_size: config.vocab_size,
        output_size: config.output_size,
        hidden_sizes: config.hidden_sizes.clone(),
        factor_size: config.factor_size,
        output_mode: config.output_mode,
        extra_biases: config.extra_biases,
        parameter_count: params.len(),
        seed: config.seed,
        symbols: checkpoint.symbols.as_ref().map(|s| s.chars().map(u32::from).collect()),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(text.trim_end().as_bytes())?;
    out.write_all(b"\n\n")?;
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for x in &params.theta {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut reader = BufReader::new(input);
    let mut magic = [0u8; 7];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut header_text = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("unterminated header".into()));
        }
        if line == "\n" {
            break;
        }
        header_text.push_str(&line);
    }
    let header: Header = toml::from_str(&header_text).map_err(|e| Error::Format(e.to_string()))?;
    let config = ModelConfig {
        architecture: header.architecture,
        vocab_size: header.vocab_size,
        output_size: header.output_size,
        hidden_sizes: header.hidden_sizes,
        factor_size: header.factor_size,
        output_mode: header.output_mode,
        seed: header.seed,
        extra_biases: header.extra_biases,
    };
    let mut params = ParameterSet::zeros(&config)?;
    if params.len() != header.parameter_count {
        return Err(Error::Format(format!(
            "header declares {} parameters, layout has {}",
            header.parameter_count,
            params.len()
        )));
    }
    let mut buf = [0u8; 8];
    for x in params.theta.iter_mut() {
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated parameter data".into()))?;
        *x = f64::from_le_bytes(buf);
    }
    if reader.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let symbols = header
        .symbols
        .map(|codes| {
            codes
                .into_iter()
                .map(|c| char::from_u32(c).ok_or_else(|| Error::Format(format!("invalid symbol code {c}"))))
                .collect::<Result<String>>()
        })
        .transpose()?;
    Ok(Checkpoint {
        config,
        params,
        symbols,
    })
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    // Write-then-rename so an interrupted run never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    write_checkpoint(fs::File::create(&tmp)?, checkpoint)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(fs::File::open(path)?)
}
