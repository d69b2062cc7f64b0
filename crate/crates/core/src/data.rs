//! Trial observations `(W, A, Y)` with a known randomization probability.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `n` subjects with covariates `W` (n×d), binary arm `A`, and `K` outcomes
/// (n×K). Outcomes are oriented so that larger is better.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    covariates: DMatrix<f64>,
    arm: Vec<u8>,
    outcomes: DMatrix<f64>,
    propensity: f64,
}

impl TrialDataset {
    pub fn new(
        covariates: DMatrix<f64>,
        arm: Vec<u8>,
        outcomes: DMatrix<f64>,
        propensity: f64,
    ) -> Result<Self> {
        let n = arm.len();
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariates.nrows(),
            });
        }
        if outcomes.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: outcomes.nrows(),
            });
        }
        if outcomes.ncols() == 0 {
            return Err(Error::InvalidData("at least one endpoint required".into()));
        }
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(Error::Positivity(propensity));
        }
        if arm.iter().any(|&a| a > 1) {
            return Err(Error::InvalidData("arm indicators must be 0 or 1".into()));
        }
        if covariates
            .iter()
            .chain(outcomes.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidData("missing or non-finite entries".into()));
        }
        let treated = arm.iter().filter(|&&a| a == 1).count();
        if treated < 2 || n - treated < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 subjects per arm (treated {treated}, control {})",
                n - treated
            )));
        }
        Ok(Self {
            covariates,
            arm,
            outcomes,
            propensity,
        })
    }

    pub fn n(&self) -> usize {
        self.arm.len()
    }

    /// Number of endpoints.
    pub fn k(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Number of covariate columns.
    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn arm(&self) -> &[u8] {
        &self.arm
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    /// Known `P(A = 1 | W)`.
    pub fn propensity(&self) -> f64 {
        self.propensity
    }

    pub fn n_treated(&self) -> usize {
        self.arm.iter().filter(|&&a| a == 1).count()
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let covariates = self.covariates.select_rows(idx);
        let outcomes = self.outcomes.select_rows(idx);
        let arm = idx.iter().map(|&i| self.arm[i]).collect();
        Self::new(covariates, arm, outcomes, self.propensity)
    }

    /// Same covariates and arms with a replaced outcome matrix.
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.arm.clone(),
            outcomes,
            self.propensity,
        )
    }

    /// Same covariates and outcomes with a replaced arm vector.
    pub fn with_arm(&self, arm: Vec<u8>, propensity: f64) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            arm,
            self.outcomes.clone(),
            propensity,
        )
    }

    /// One CSV row per subject: `w1..wd,a,y1..yK`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("w{j}")).collect();
        header.push("a".into());
        header.extend((1..=self.k()).map(|k| format!("y{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self
                .covariates
                .row(i)
                .iter()
                .map(|x| x.to_string())
                .collect();
            row.push(self.arm[i].to_string());
            row.extend(self.outcomes.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses the layout produced by [`TrialDataset::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R, propensity: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let a_col = header
            .iter()
            .position(|h| h == "a")
            .ok_or_else(|| Error::InvalidData("missing arm column `a`".into()))?;
        let k = header.len() - a_col - 1;
        let mut w = Vec::new();
        let mut y = Vec::new();
        let mut arm = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("bad number `{s}`")))
            };
            for j in 0..a_col {
                w.push(parse(&rec[j])?);
            }
            arm.push(match &rec[a_col] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::InvalidData(format!("bad arm `{other}`"))),
            });
            for j in 0..k {
                y.push(parse(&rec[a_col + 1 + j])?);
            }
        }
        let n = arm.len();
        Self::new(
            DMatrix::from_row_slice(n, a_col, &w),
            arm,
            DMatrix::from_row_slice(n, k, &y),
            propensity,
        )
    }
}
