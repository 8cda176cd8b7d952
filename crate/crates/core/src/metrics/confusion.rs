use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_to_string, write_file};

const CORNER: &str = "true\\predicted";

/// K×K classification counts; rows are true accents, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Result<Self> {
        let k = labels.len();
        Self::from_counts(labels, vec![vec![0; k]; k])
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let distinct: BTreeSet<&String> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::MalformedConfusion("duplicate labels".into()));
        }
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::MalformedConfusion(format!(
                "counts must be {0}×{0}",
                labels.len()
            )));
        }
        Ok(Self { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// N_i: utterances whose true accent is `labels[i]`.
    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let i = self
            .index_of(truth)
            .ok_or_else(|| Error::UnknownAccent(truth.to_owned()))?;
        let j = self
            .index_of(predicted)
            .ok_or_else(|| Error::UnknownAccent(predicted.to_owned()))?;
        self.counts[i][j] += 1;
        Ok(())
    }

    /// Element-wise sum of two matrices with identical labels.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::MalformedConfusion("label sets differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CORNER);
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::MalformedConfusion(why.to_owned());
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split(',').collect();
        if header.first() != Some(&CORNER) {
            return Err(bad("missing header corner cell"));
        }
        let labels: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != labels.len() + 1 || cells[0] != labels.get(i).map(String::as_str).unwrap_or("") {
                return Err(bad(&format!("row {} does not match the header", i + 1)));
            }
            counts.push(
                cells[1..]
                    .iter()
                    .map(|c| c.parse::<u64>().map_err(|_| bad(&format!("bad count `{c}`"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::from_counts(labels, counts)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut cm = ConfusionMatrix::zeros(vec!["ENG".into(), "US".into()]).unwrap();
        cm.add("ENG", "US").unwrap();
        cm.add("US", "US").unwrap();
        cm.add("US", "US").unwrap();
        let csv = cm.to_csv();
        assert_eq!(csv, "true\\predicted,ENG,US\nENG,0,1\nUS,0,2\n");
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), cm);
        assert!(matches!(cm.add("X", "US"), Err(Error::UnknownAccent(_))));
    }

    #[test]
    fn shape_checks() {
        assert!(ConfusionMatrix::from_counts(vec!["a".into(), "a".into()], vec![vec![0; 2]; 2]).is_err());
        assert!(ConfusionMatrix::from_counts(vec!["a".into()], vec![vec![0; 2]]).is_err());
        assert!(ConfusionMatrix::from_csv("true\\predicted,a\nb,1\n").is_err());
    }
}
