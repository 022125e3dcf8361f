//! Checkpoint format for value nets.
//!
//! A flat JSON record {activation, n, m, w (row-major), b, beta, bias_shift}.
//! Numbers are written with the shortest representation that parses back to
//! the same bits, so save/load round trips are exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::valuenet::{Activation, ValueNet};

#[derive(Debug, Serialize, Deserialize)]
pub struct NetRecord {
    pub activation: String,
    pub n: usize,
    pub m: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub beta: Vec<f64>,
    pub bias_shift: f64,
}

pub fn net_to_record<S: Scalar>(net: &ValueNet<S>) -> NetRecord {
    let (m, n) = net.w.shape();
    let mut w = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            w.push(net.w[(i, j)].to_f64());
        }
    }
    NetRecord {
        activation: net.activation.name().to_string(),
        n,
        m,
        w,
        b: net.b.iter().map(|v| v.to_f64()).collect(),
        beta: net.beta.iter().map(|v| v.to_f64()).collect(),
        bias_shift: net.bias_shift.to_f64(),
    }
}

pub fn net_from_record<S: Scalar>(rec: &NetRecord) -> Result<ValueNet<S>> {
    if rec.w.len() != rec.n * rec.m || rec.b.len() != rec.m || rec.beta.len() != rec.m {
        return Err(Error::Parse("net record: inconsistent shapes".into()));
    }
    let activation = Activation::parse(&rec.activation)?;
    let w = DMatrix::from_fn(rec.m, rec.n, |i, j| S::from_double(rec.w[i * rec.n + j]));
    Ok(ValueNet {
        w,
        b: DVector::from_iterator(rec.m, rec.b.iter().map(|&v| S::from_double(v))),
        beta: DVector::from_iterator(rec.m, rec.beta.iter().map(|&v| S::from_double(v))),
        activation,
        bias_shift: S::from_double(rec.bias_shift),
    })
}

pub fn save_net<S: Scalar>(net: &ValueNet<S>, path: &Path) -> Result<()> {
    let rec = net_to_record(net);
    let text = serde_json::to_string_pretty(&rec)
        .map_err(|e| Error::Parse(format!("net serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_net<S: Scalar>(path: &Path) -> Result<ValueNet<S>> {
    let text = std::fs::read_to_string(path)?;
    let rec: NetRecord =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("net parse: {e}")))?;
    net_from_record(&rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut net = ValueNet::<f64>::init_random(13, 3, 77, Activation::Tanh);
        net.beta = DVector::from_fn(13, |i, _| ((i as f64) * 0.1234567891011).sin() * 1e3);
        net.bias_shift = 0.1 + 0.2; // deliberately non-representable decimal
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_net(&net, &path).unwrap();
        let back: ValueNet<f64> = load_net(&path).unwrap();
        assert_eq!(net.w, back.w);
        assert_eq!(net.b, back.b);
        assert_eq!(net.beta, back.beta);
        assert_eq!(net.bias_shift.to_bits(), back.bias_shift.to_bits());
        assert_eq!(net.activation, back.activation);
        // and the serialized text itself is reproducible
        let t1 = serde_json::to_string(&net_to_record(&net)).unwrap();
        let t2 = serde_json::to_string(&net_to_record(&back)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn rejects_inconsistent_record() {
        let rec = NetRecord {
            activation: "tanh".into(),
            n: 2,
            m: 3,
            w: vec![0.0; 5],
            b: vec![0.0; 3],
            beta: vec![0.0; 3],
            bias_shift: 0.0,
        };
        assert!(net_from_record::<f64>(&rec).is_err());
    }
}
