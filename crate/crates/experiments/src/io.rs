use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use cldeepc_core::plant::SignalLog;
use cldeepc_core::predictor::{OneStepCoeffs, PredictorMatrices};

use crate::report::fmt_f64;

fn channel_names(base: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![base.to_string()]
    } else {
        (1..=dim).map(|i| format!("{base}{i}")).collect()
    }
}

/// Columns `k,u,y,e,r,x1..xn` (vector channels are numbered `u1,u2,..`).
pub fn write_signal_log(log: &SignalLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let Some(first) = (0..log.len()).next() else {
        w.write_record(["k", "u", "y", "e", "r"])?;
        w.flush()?;
        return Ok(());
    };
    let (r, l, n) = (log.u()[first].len(), log.y()[first].len(), log.x()[first].len());
    let mut header = vec!["k".to_string()];
    header.extend(channel_names("u", r));
    header.extend(channel_names("y", l));
    header.extend(channel_names("e", l));
    header.extend(channel_names("r", l));
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for k in 0..log.len() {
        let mut row = vec![k.to_string()];
        for v in [&log.u()[k], &log.y()[k], &log.e()[k], &log.r()[k], &log.x()[k]] {
            row.extend(v.iter().map(|x| fmt_f64(Some(*x))));
        }
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            bail!("matrix record has {} entries for {}x{}", self.data.len(), self.rows, self.cols);
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRecord {
    pub p: usize,
    pub f: usize,
    pub lu: MatrixRecord,
    pub gu: MatrixRecord,
    pub ly: MatrixRecord,
}

impl From<&PredictorMatrices> for PredictorRecord {
    fn from(m: &PredictorMatrices) -> Self {
        Self {
            p: m.p,
            f: m.f,
            lu: (&m.lu).into(),
            gu: (&m.gu).into(),
            ly: (&m.ly).into(),
        }
    }
}

impl PredictorRecord {
    pub fn to_predictor(&self) -> Result<PredictorMatrices> {
        Ok(PredictorMatrices::new(
            self.lu.to_matrix()?,
            self.gu.to_matrix()?,
            self.ly.to_matrix()?,
            self.p,
            self.f,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffsRecord {
    pub p: usize,
    pub r: usize,
    pub l: usize,
    pub beta: Vec<MatrixRecord>,
    pub theta: Vec<MatrixRecord>,
}

impl From<&OneStepCoeffs> for CoeffsRecord {
    fn from(c: &OneStepCoeffs) -> Self {
        Self {
            p: c.p,
            r: c.r,
            l: c.l,
            beta: c.beta.iter().map(Into::into).collect(),
            theta: c.theta.iter().map(Into::into).collect(),
        }
    }
}

impl CoeffsRecord {
    pub fn to_coeffs(&self) -> Result<OneStepCoeffs> {
        Ok(OneStepCoeffs {
            p: self.p,
            r: self.r,
            l: self.l,
            beta: self.beta.iter().map(|m| m.to_matrix()).collect::<Result<_>>()?,
            theta: self.theta.iter().map(|m| m.to_matrix()).collect::<Result<_>>()?,
        })
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Long-format CSV `block,row,col,value` of the predictor blocks `lu`, `gu`, `ly`.
pub fn write_predictor_csv(m: &PredictorMatrices, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["block", "row", "col", "value"])?;
    for (name, mat) in [("lu", &m.lu), ("gu", &m.gu), ("ly", &m.ly)] {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                w.write_record([name.to_string(), i.to_string(), j.to_string(), fmt_f64(Some(mat[(i, j)]))])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
