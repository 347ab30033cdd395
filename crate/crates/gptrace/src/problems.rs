//! Benchmark problems, dataset generation, and dataset file I/O.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exprtree::DataMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemId {
    Vladislavleva8,
    Poly10,
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemId::Vladislavleva8 => write!(f, "vladislavleva8"),
            ProblemId::Poly10 => write!(f, "poly10"),
        }
    }
}

impl FromStr for ProblemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vladislavleva8" | "vlad8" => Ok(ProblemId::Vladislavleva8),
            "poly10" => Ok(ProblemId::Poly10),
            other => Err(format!("unknown problem `{other}` (expected vladislavleva8 or poly10)")),
        }
    }
}

/// A benchmark problem: target function plus sampling conventions.
#[derive(Clone, Debug)]
pub struct Problem {
    pub id: ProblemId,
    pub dimension: usize,
    pub rows: usize,
    pub domain: (f64, f64),
}

impl Problem {
    pub fn standard(id: ProblemId) -> Self {
        match id {
            ProblemId::Vladislavleva8 => {
                Problem { id, dimension: 2, rows: 50, domain: (0.05, 6.05) }
            }
            ProblemId::Poly10 => Problem { id, dimension: 10, rows: 250, domain: (-1.0, 1.0) },
        }
    }

    pub fn target(&self, row: &[f64]) -> f64 {
        match self.id {
            ProblemId::Vladislavleva8 => vlad8(row[0], row[1]),
            ProblemId::Poly10 => poly10(row),
        }
    }

    pub fn variable_names(&self) -> Vec<String> {
        (1..=self.dimension).map(|i| format!("x{i}")).collect()
    }
}

/// `F8(x1, x2) = ((x1-3)^4 + (x2-3)^3 - (x2-3)) / ((x2-2)^4 + 10)`.
/// The denominator is at least 10, so the value is always finite.
pub fn vlad8(x1: f64, x2: f64) -> f64 {
    ((x1 - 3.0).powi(4) + (x2 - 3.0).powi(3) - (x2 - 3.0)) / ((x2 - 2.0).powi(4) + 10.0)
}

/// `F(x) = x1 x2 + x3 x4 + x5 x6 + x1 x7 x9 + x3 x6 x10` (1-based indices).
pub fn poly10(x: &[f64]) -> f64 {
    assert_eq!(x.len(), 10, "poly10 takes exactly 10 components");
    x[0] * x[1] + x[2] * x[3] + x[4] * x[5] + x[0] * x[6] * x[8] + x[2] * x[5] * x[9]
}

/// Training data: input matrix plus target vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub matrix: DataMatrix,
    pub target: Vec<f64>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.target.len()
    }
}

/// Samples the problem's training set uniformly over its domain,
/// deterministically for a given seed.
pub fn generate_dataset(problem: &Problem, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(problem.rows * problem.dimension);
    let mut target = Vec::with_capacity(problem.rows);
    let mut row = vec![0.0; problem.dimension];
    for _ in 0..problem.rows {
        for v in row.iter_mut() {
            *v = rng.gen_range(problem.domain.0..problem.domain.1);
        }
        values.extend_from_slice(&row);
        target.push(problem.target(&row));
    }
    Dataset { matrix: DataMatrix::new(problem.dimension, values), target }
}

/// Writes the dataset as CSV with a `x1,...,xD,y` header and full
/// round-trip precision.
pub fn write_dataset_csv<W: Write>(problem: &Problem, data: &Dataset, mut w: W) -> io::Result<()> {
    writeln!(w, "{},y", problem.variable_names().join(","))?;
    for r in 0..data.rows() {
        for c in 0..data.matrix.cols() {
            write!(w, "{:?},", data.matrix.get(r, c))?;
        }
        writeln!(w, "{:?}", data.target[r])?;
    }
    Ok(())
}
