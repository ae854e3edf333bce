//! Per-epoch evaluation: test accuracy, consensus error, and log export.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{accuracy, ModelSpec, ParamVector};
use crate::{Error, Result};

/// One record per completed epoch. `epoch` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub epoch: usize,
    pub per_server_test_accuracy: Vec<f64>,
    pub avg_test_accuracy: f64,
    pub consensus_error: f64,
    /// Nonzero `(j, w_ij)` entries of each row of the epoch's mixing matrix.
    pub weight_rows: Option<Vec<Vec<(usize, f64)>>>,
    pub lr: f64,
    /// Zero unless timing is enabled, so logs stay byte-reproducible.
    pub wall_ms: u64,
}

/// Mean Euclidean distance of each parameter vector from the across-server mean.
pub fn consensus_error<P: AsRef<[f64]>>(params: &[P]) -> Result<f64> {
    let n = params.len();
    if n == 0 {
        return Err(Error::EmptyDataset("consensus error"));
    }
    let d = params[0].as_ref().len();
    if params.iter().any(|p| p.as_ref().len() != d) {
        return Err(Error::DimensionMismatch(
            "parameter vectors differ in length".into(),
        ));
    }
    // Mean as an offset from the first vector, so identical inputs give an
    // exactly zero error.
    let base = params[0].as_ref();
    let mut offset = vec![0.0; d];
    for p in &params[1..] {
        for ((o, v), b) in offset.iter_mut().zip(p.as_ref()).zip(base) {
            *o += v - b;
        }
    }
    let inv = 1.0 / n as f64;
    let mean: Vec<f64> = base.iter().zip(&offset).map(|(b, o)| b + o * inv).collect();
    let total: f64 = params
        .iter()
        .map(|p| {
            p.as_ref()
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total * inv)
}

/// Test accuracy of every server on a shared held-out set.
pub fn per_server_accuracy<P: AsRef<ParamVector> + Sync>(
    params: &[P],
    spec: &ModelSpec,
    test: &Dataset,
) -> Result<Vec<f64>> {
    params
        .par_iter()
        .map(|p| accuracy(p.as_ref(), spec, test))
        .collect()
}

pub fn avg_test_accuracy<P: AsRef<ParamVector> + Sync>(
    params: &[P],
    spec: &ModelSpec,
    test: &Dataset,
) -> Result<f64> {
    let acc = per_server_accuracy(params, spec, test)?;
    Ok(mean(&acc))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(mut out: W, logs: &[RoundLog]) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<RoundLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// `epoch,avg_acc,consensus_error,lr`.
pub fn write_metrics_csv<W: Write>(out: W, logs: &[RoundLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["epoch", "avg_acc", "consensus_error", "lr"])?;
    for log in logs {
        wtr.serialize((
            log.epoch,
            log.avg_test_accuracy,
            log.consensus_error,
            log.lr,
        ))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation};
    use proptest::prelude::*;

    #[test]
    fn consensus_error_examples() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert_eq!(consensus_error(&same).unwrap(), 0.0);
        assert_eq!(
            consensus_error(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
            1.0
        );
        assert_eq!(
            consensus_error(&[vec![0.0], vec![3.0], vec![6.0]]).unwrap(),
            2.0
        );
        assert!(consensus_error(&[vec![0.0], vec![1.0, 2.0]]).is_err());
        assert!(consensus_error::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn avg_accuracy_of_identical_servers() {
        let spec = ModelSpec::new(vec![2, 3], Activation::Tanh).unwrap();
        let p = init_params(&spec, 3);
        let test = Dataset::new(vec![0.1, 0.9, -0.4, 0.2, 0.7, -0.7], vec![0, 1, 2], 2, 3).unwrap();
        let single = accuracy(&p, &spec, &test).unwrap();
        let avg = avg_test_accuracy(&[p.clone(), p.clone(), p], &spec, &test).unwrap();
        assert_eq!(avg, single);
        assert_eq!(mean(&[0.4, 0.6]), 0.5);
    }

    #[test]
    fn jsonl_and_csv() {
        let log = RoundLog {
            epoch: 1,
            per_server_test_accuracy: vec![0.5, 0.25],
            avg_test_accuracy: 0.375,
            consensus_error: 0.125,
            weight_rows: Some(vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]]),
            lr: 1e-4,
            wall_ms: 0,
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&log)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_jsonl(&text).unwrap(), vec![log.clone()]);

        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[log]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,avg_acc,consensus_error,lr\n1,0.375,0.125,0.0001\n"
        );
    }

    proptest! {
        #[test]
        fn translation_invariant_and_scale_linear(
            raw in proptest::collection::vec(-10.0f64..10.0, 12),
            shift in proptest::collection::vec(-10.0f64..10.0, 3),
            scale in 0.0f64..5.0,
        ) {
            let params: Vec<Vec<f64>> = raw.chunks(3).map(<[f64]>::to_vec).collect();
            let base = consensus_error(&params).unwrap();
            let shifted: Vec<Vec<f64>> = params
                .iter()
                .map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect())
                .collect();
            prop_assert!((consensus_error(&shifted).unwrap() - base).abs() < 1e-9);
            let scaled: Vec<Vec<f64>> = params.iter().map(|p| p.iter().map(|v| v * scale).collect()).collect();
            prop_assert!((consensus_error(&scaled).unwrap() - scale * base).abs() < 1e-9);
        }
    }
}
