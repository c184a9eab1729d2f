//! Word vectors, soft-label targets and the auxiliary losses.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var, LOG_EPS};

/// Token → fixed-dimension vector, loaded from a GloVe-style text file.
#[derive(Clone, Debug)]
pub struct WordVectorTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl WordVectorTable {
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (token, v) in entries {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Format(format!(
                        "vector for {token:?} has {} values, expected {d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            vectors.insert(token, v);
        }
        let dim = dim.ok_or_else(|| Error::Format("word vector table is empty".into()))?;
        if dim == 0 {
            return Err(Error::Format("word vectors have zero dimension".into()));
        }
        Ok(Self { vectors, dim })
    }

    /// Parse lines of `token v₁ … v_d`. The first line fixes `d`.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| Error::Format(format!("line {lineno}: cannot parse {p:?} as a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::Format(format!(
                    "line {lineno}: expected {d} values, found {}",
                    values.len()
                )));
            }
            entries.push((token, values));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Write vectors in the same text format [`WordVectorTable::load`] reads.
pub fn write_word_vectors(path: &Path, entries: &[(String, Vec<f64>)]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for (token, v) in entries {
        text.push_str(token);
        for x in v {
            text.push(' ');
            text.push_str(&format!("{x:.6}"));
        }
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Lowercase and split on spaces, underscores and hyphens.
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .to_lowercase()
        .split([' ', '_', '-'])
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// A probability distribution over word-vector dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
    pub label: String,
}

impl SoftLabel {
    pub fn new(probs: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("soft label does not sum to 1 (sum {total})")));
        }
        Ok(Self {
            probs,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }
}

fn softmax_f64(v: &[f64], tau: f64) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| ((x - max) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean vector of the label's in-table words.
pub fn label_vector(label: &str, table: &WordVectorTable) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for word in tokenize(label) {
        match table.get(&word) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                found += 1;
            }
            None => log::warn!("label {label:?}: word {word:?} has no vector, skipped"),
        }
    }
    if found == 0 {
        return Err(Error::MissingToken {
            label: label.to_string(),
        });
    }
    Ok(sum.into_iter().map(|s| s / found as f64).collect())
}

/// `softmax(mean word vector / τ_t)` for a class label.
pub fn soft_target(label: &str, table: &WordVectorTable, tau_t: f64) -> Result<SoftLabel> {
    if !(tau_t > 0.0) {
        return Err(Error::Parameter(format!("target temperature must be > 0, got {tau_t}")));
    }
    let v = label_vector(label, table)?;
    Ok(SoftLabel {
        probs: softmax_f64(&v, tau_t),
        label: label.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AuxLossKind {
    /// `Σ t_i (log t_i − log p_i)`: the target measured against the prediction.
    Kl,
    /// `(1/l_out) Σ (p_i − t_i)²`.
    Mse,
}

impl fmt::Display for AuxLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxLossKind::Kl => "kl",
            AuxLossKind::Mse => "mse",
        })
    }
}

impl FromStr for AuxLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(AuxLossKind::Kl),
            "mse" => Ok(AuxLossKind::Mse),
            other => Err(Error::Config(format!("unknown auxiliary loss {other:?} (expected kl or mse)"))),
        }
    }
}

/// Scalar auxiliary loss between two distributions.
pub fn aux_loss(pred: &SoftLabel, target: &SoftLabel, kind: AuxLossKind) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::dim(format!(
            "prediction has {} entries, target has {}",
            pred.dim(),
            target.dim()
        )));
    }
    let pairs = pred.probs.iter().zip(&target.probs);
    Ok(match kind {
        AuxLossKind::Kl => pairs
            .map(|(&p, &t)| t * ((t + LOG_EPS).ln() - (p + LOG_EPS).ln()))
            .sum(),
        AuxLossKind::Mse => pairs.map(|(&p, &t)| (p - t) * (p - t)).sum::<f64>() / pred.dim() as f64,
    })
}

/// Batched auxiliary loss on the graph: `pred` is `B×l_out` (rows are
/// distributions), `target` the matching constant. Averaged over rows.
pub fn aux_loss_graph<T: Real>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>, kind: AuxLossKind) -> Result<Var> {
    if g.shape(pred) != target.shape() || target.rank() != 2 {
        return Err(Error::dim(format!(
            "aux loss: prediction {:?} and target {:?} disagree",
            g.shape(pred),
            target.shape()
        )));
    }
    let t = g.constant(target.clone());
    match kind {
        AuxLossKind::Kl => {
            let eps = T::of(LOG_EPS);
            let log_t = g.constant(target.map(|v| (v + eps).ln()));
            let log_p = g.log(pred);
            let diff = g.sub(log_t, log_p)?;
            let weighted = g.mul(t, diff)?;
            let per_row = g.sum_axis(weighted, 1)?;
            Ok(g.mean(per_row))
        }
        AuxLossKind::Mse => {
            let diff = g.sub(pred, t)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.mean(sq))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<WordVectorTable> {
        WordVectorTable::from_reader(text.as_bytes())
    }

    #[test]
    fn loads_two_lines() {
        let t = table("cat 0.1 0.2 0.3\ndog -1 0 1\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("dog").unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(table(""), Err(Error::Format(_))));
    }

    #[test]
    fn short_line_names_line_number() {
        let first: String = std::iter::once("a".to_string())
            .chain((0..300).map(|i| format!("{}", i as f64 / 300.0)))
            .collect::<Vec<_>>()
            .join(" ");
        let second: String = std::iter::once("b".to_string())
            .chain((0..299).map(|_| "0.5".to_string()))
            .collect::<Vec<_>>()
            .join(" ");
        let err = table(&format!("{first}\n{second}\n")).unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_float_is_format_error() {
        assert!(matches!(table("a 1.0 x\n"), Err(Error::Format(_))));
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("crossword_puzzle"), vec!["crossword", "puzzle"]);
        assert_eq!(tokenize("Snow-Leopard cub"), vec!["snow", "leopard", "cub"]);
    }

    #[test]
    fn two_word_label_averages() {
        let t = table("crossword 1 3\npuzzle 3 -1\n").unwrap();
        let s = soft_target("crossword_puzzle", &t, 1.0).unwrap();
        let expected = softmax_f64(&[2.0, 1.0], 1.0);
        for (a, b) in s.probs.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn partially_missing_label_skips_and_fully_missing_errors() {
        let t = table("leopard 1 2\n").unwrap();
        let s = soft_target("snow_leopard", &t, 1.0).unwrap();
        assert_eq!(s.probs, softmax_f64(&[1.0, 2.0], 1.0));
        assert!(matches!(soft_target("zebra", &t, 1.0), Err(Error::MissingToken { .. })));
    }

    #[test]
    fn kl_reference_value() {
        let target = SoftLabel::new(vec![0.5, 0.5], "t").unwrap();
        let pred = SoftLabel::new(vec![0.9, 0.1], "p").unwrap();
        let kl = aux_loss(&pred, &target, AuxLossKind::Kl).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - expected).abs() < 1e-10);
        assert!((kl - 0.51083).abs() < 1e-5);
    }

    #[test]
    fn self_losses_vanish() {
        let p = SoftLabel::new(vec![0.2, 0.3, 0.5], "p").unwrap();
        assert!(aux_loss(&p, &p, AuxLossKind::Kl).unwrap().abs() < 1e-9);
        assert_eq!(aux_loss(&p, &p, AuxLossKind::Mse).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = SoftLabel::new(vec![0.5, 0.5], "p").unwrap();
        let q = SoftLabel::new(vec![1.0], "q").unwrap();
        assert!(matches!(aux_loss(&p, &q, AuxLossKind::Mse), Err(Error::Dimension(_))));
    }
}
