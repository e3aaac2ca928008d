use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::lstm::INIT_SCALE;
use crate::tensor::Tensor;

/// A `vocab × dim` matrix built from a word2vec text file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEmbeddings {
    pub matrix: Tensor,
    /// Vocabulary words (reserved id excluded) found in the file.
    pub found: usize,
    /// `found / (vocab.len() - 1)`.
    pub coverage: f64,
}

/// Reads the word2vec text format: a `count dim` header, then `word v1 … v_dim`
/// per line. Words missing from the file get `U[-0.1, 0.1]` rows; row 0 stays
/// zero.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    expected_dim: Option<usize>,
    rng: &mut impl Rng,
) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing `count dim` header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [count, dim] = fields[..] else {
        return Err(parse_err(1, format!("header {header:?} is not `count dim`")));
    };
    let count: usize = count
        .parse()
        .map_err(|_| parse_err(1, format!("bad word count {count:?}")))?;
    let dim: usize = dim.parse().map_err(|_| parse_err(1, format!("bad dimension {dim:?}")))?;
    if let Some(want) = expected_dim {
        if want != dim {
            return Err(Error::Config(format!(
                "{} has {dim}-dimensional vectors but the model expects {want}",
                path.display()
            )));
        }
    }

    let mut data: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
        .collect();
    let n = dim.min(data.len());
    data[..n].fill(0.0);
    let mut filled = vec![false; vocab.len()];
    let mut rows = 0;
    for (i, line) in lines {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("line is not blank");
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(line_no, format!("bad value: {e}")))?;
        if values.len() != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        rows += 1;
        let id = vocab.id(word);
        if id == 0 || filled[id] {
            continue;
        }
        filled[id] = true;
        data[id * dim..(id + 1) * dim].copy_from_slice(&values);
    }
    if rows != count {
        return Err(parse_err(1, format!("header announces {count} rows, file has {rows}")));
    }
    let found = filled.iter().filter(|&&f| f).count();
    let coverage = if vocab.len() > 1 {
        found as f64 / (vocab.len() - 1) as f64
    } else {
        0.0
    };
    Ok(LoadedEmbeddings {
        matrix: Tensor::matrix(vocab.len(), dim, data)?,
        found,
        coverage,
    })
}

/// Writes every non-reserved row in the format [`load_embeddings`] reads.
/// Values use the shortest representation that parses back exactly.
pub fn write_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, matrix: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (rows, dim) = matrix.shape().as_matrix();
    if rows != vocab.len() {
        return Err(Error::Input(format!(
            "matrix has {rows} rows for a vocabulary of {}",
            vocab.len()
        )));
    }
    let mut out = format!("{} {dim}\n", rows.saturating_sub(1));
    for id in 1..rows {
        out.push_str(vocab.token(id).expect("id in range"));
        for v in matrix.row(id) {
            write!(out, " {v}").expect("writing to a String");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
