//! Text parameter files.
//!
//! ```text
//! wmlab-params 1
//! dims <d_o> <d_h> <d_z>
//! tensor <name> <rows> [<cols>]
//! <one line per row: f64 bit patterns as 16 hex digits, space separated>
//! ...
//! end
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::gru::{Dims, GruParams, TensorRef, GRU_TENSOR_NAMES};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "wmlab-params";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_text(p: &GruParams) -> String {
    let mut out = String::new();
    let Dims { d_o, d_h, d_z } = p.dims;
    writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
    writeln!(out, "dims {d_o} {d_h} {d_z}").unwrap();
    for (name, t) in GRU_TENSOR_NAMES.iter().zip(p.tensors()) {
        let (rows, cols) = match t {
            TensorRef::Matrix(m) => {
                writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
                (m.rows(), m.cols())
            }
            TensorRef::Vector(v) => {
                writeln!(out, "tensor {name} {}", v.len()).unwrap();
                (v.len(), 1)
            }
        };
        let vals = t.values();
        for r in 0..rows {
            let line: Vec<String> =
                vals[r * cols..(r + 1) * cols].iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

fn expected_shape(name: &str, dims: Dims) -> (usize, Option<usize>) {
    match name {
        "w_e" => (dims.d_h, Some(dims.d_o)),
        "readout" => (dims.d_z, Some(dims.d_h)),
        n if n.starts_with('b') => (dims.d_h, None),
        _ => (dims.d_h, Some(dims.d_h)),
    }
}

pub fn from_text(text: &str, origin: &Path) -> Result<GruParams> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| err(0, format!("unexpected end, expected {what}")));

    let (n, header) = next("header")?;
    let mut head = header.split_whitespace();
    if head.next() != Some(FORMAT_TAG) {
        return Err(err(n, "missing format tag".into()));
    }
    let version: u32 = head.next().and_then(|v| v.parse().ok()).ok_or_else(|| err(n, "bad version".into()))?;
    if version != FORMAT_VERSION {
        return Err(err(n, format!("unsupported version {version}")));
    }

    let (n, dims_line) = next("dims")?;
    let nums: Vec<usize> = dims_line
        .strip_prefix("dims ")
        .ok_or_else(|| err(n, "expected dims record".into()))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| err(n, format!("bad dimension {v:?}"))))
        .collect::<Result<_>>()?;
    let [d_o, d_h, d_z] = nums[..] else {
        return Err(err(n, "dims needs three values".into()));
    };
    let dims = Dims { d_o, d_h, d_z };
    dims.validate().map_err(|e| err(n, e.to_string()))?;

    let mut p = GruParams::zeros(dims);
    let slots = p.tensors_mut();
    for (name, slot) in GRU_TENSOR_NAMES.iter().zip(slots) {
        let (n, rec) = next("tensor record")?;
        let parts: Vec<&str> = rec.split_whitespace().collect();
        if parts.first() != Some(&"tensor") || parts.get(1) != Some(name) {
            return Err(err(n, format!("expected tensor {name}")));
        }
        let shape: Vec<usize> = parts[2..]
            .iter()
            .map(|v| v.parse().map_err(|_| err(n, format!("bad extent {v:?}"))))
            .collect::<Result<_>>()?;
        let (rows, cols) = expected_shape(name, dims);
        let want: Vec<usize> = std::iter::once(rows).chain(cols).collect();
        if shape != want {
            return Err(err(n, format!("{name} has shape {shape:?}, expected {want:?}")));
        }
        let cols = cols.unwrap_or(1);
        for r in 0..rows {
            let (n, row) = next("tensor row")?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|h| {
                    u64::from_str_radix(h, 16)
                        .map(f64::from_bits)
                        .map_err(|_| err(n, format!("bad value {h:?}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(err(n, format!("row has {} values, expected {cols}", vals.len())));
            }
            slot[r * cols..(r + 1) * cols].copy_from_slice(&vals);
        }
    }
    let (n, tail) = next("end")?;
    if tail != "end" {
        return Err(err(n, "expected end".into()));
    }
    if !p.is_finite() {
        return Err(err(n, "non-finite parameter values".into()));
    }
    Ok(p)
}

pub fn save_params(p: &GruParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(p)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<GruParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::rng::derive_stream;
    use crate::models::init_models;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), d_o in 1usize..6, d_h in 1usize..6, d_z in 1usize..4) {
            let mut rng = derive_stream(seed, 0);
            let (mut p, ..) = init_models(Dims { d_o, d_h, d_z }, 0.3, &mut rng).unwrap();
            p.b_c[0] = -0.0;
            p.b_u[0] = f64::MIN_POSITIVE / 3.0;
            let back = from_text(&to_text(&p), Path::new("mem")).unwrap();
            let bits = |q: &GruParams| q.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&p), bits(&back));
        }
    }

    #[test]
    fn rejects_wrong_shape() {
        let p = GruParams::zeros(Dims { d_o: 2, d_h: 2, d_z: 1 });
        let text = to_text(&p).replace("tensor w_e 2 2", "tensor w_e 2 3");
        assert!(matches!(from_text(&text, Path::new("x")), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_unknown_version() {
        let p = GruParams::zeros(Dims { d_o: 1, d_h: 1, d_z: 1 });
        let text = to_text(&p).replace("wmlab-params 1", "wmlab-params 9");
        assert!(from_text(&text, Path::new("x")).is_err());
    }
}
