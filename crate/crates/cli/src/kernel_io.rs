//! Plain-text kernel files.
//!
//! ```text
//! L d
//! f0
//! re im        <- H^(1), L lines
//! re im        <- H^(2), L^2 lines, column-major
//! ...
//! ```
//!
//! Numbers are written in Rust's shortest round-trip form, so a write/read
//! cycle reproduces every finite value bit for bit.

use std::io::{self, BufRead, Write};

use pwh_core::tensor::Tensor;
use pwh_core::volterra::KernelSet;
use pwh_core::C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_kernels<W: Write>(k: &KernelSet, mut w: W) -> io::Result<()> {
    writeln!(w, "{} {}", k.memory_len(), k.degree())?;
    writeln!(w, "{:?}", k.f0)?;
    for kernel in k.kernels() {
        for z in kernel.data() {
            writeln!(w, "{:?} {:?}", z.re, z.im)?;
        }
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> KernelIoError {
    KernelIoError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, KernelIoError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("`{tok}` is not a number")))
}

pub fn read_kernels<R: BufRead>(r: R) -> Result<KernelSet, KernelIoError> {
    let all: Vec<String> = r.lines().collect::<io::Result<_>>()?;
    let mut cursor = 0;
    let mut next = |what: &str| -> Result<(usize, &str), KernelIoError> {
        cursor += 1;
        all.get(cursor - 1)
            .map(|text| (cursor, text.as_str()))
            .ok_or_else(|| parse_err(cursor, format!("unexpected end of file, expected {what}")))
    };

    let (n, header) = next("header `L d`")?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let [l_tok, d_tok] = toks[..] else {
        return Err(parse_err(n, "header must be `L d`"));
    };
    let memory: usize = l_tok
        .parse()
        .map_err(|_| parse_err(n, format!("bad memory length `{l_tok}`")))?;
    let degree: usize = d_tok
        .parse()
        .map_err(|_| parse_err(n, format!("bad degree `{d_tok}`")))?;
    if memory == 0 || degree == 0 {
        return Err(parse_err(n, "L and d must be at least 1"));
    }
    let header_line = n;

    let (n, f0_line) = next("f0")?;
    let f0 = match f0_line.split_whitespace().collect::<Vec<_>>()[..] {
        [tok] => parse_f64(tok, n)?,
        _ => return Err(parse_err(n, "expected a single real f0")),
    };

    let mut kernels = Vec::with_capacity(degree);
    for s in 1..=degree {
        let len = memory.pow(s as u32);
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let (n, text) = next(&format!("entries of the degree-{s} kernel"))?;
            match text.split_whitespace().collect::<Vec<_>>()[..] {
                [re, im] => data.push(C64::new(parse_f64(re, n)?, parse_f64(im, n)?)),
                _ => return Err(parse_err(n, "expected `re im`")),
            }
        }
        let tensor = Tensor::from_data(&vec![memory; s], data)
            .map_err(|e| parse_err(header_line, e.to_string()))?;
        kernels.push(tensor);
    }
    for (i, rest) in all.iter().enumerate().skip(cursor) {
        if !rest.trim().is_empty() {
            return Err(parse_err(i + 1, "trailing content after the last kernel"));
        }
    }
    KernelSet::new(kernels, f0).map_err(|e| parse_err(header_line, e.to_string()))
}
