//! Evaluation metrics over the per-task accuracy matrix.

use crate::error::{Error, Result};

/// Lower-triangular grid of top-1 accuracies: `entry(l, j)` is the accuracy
/// on task j's test set after training task l (0-indexed, j <= l), plus the
/// test-set sizes used for sample weighting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
    test_sizes: Vec<usize>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self { rows: Vec::new(), test_sizes: Vec::new() }
    }

    /// Append the row recorded after training one more task. The row must
    /// cover exactly the tasks seen so far; entries must be in [0, 1].
    pub fn push_row(&mut self, accuracies: Vec<f64>, test_sizes: Vec<usize>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if accuracies.len() != expected || test_sizes.len() != expected {
            return Err(Error::invalid(format!(
                "row after task {} must have {expected} entries, got {}",
                self.rows.len(),
                accuracies.len()
            )));
        }
        if accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("accuracies must lie in [0, 1]"));
        }
        if !self.test_sizes.is_empty() && self.test_sizes[..] != test_sizes[..self.rows.len()] {
            return Err(Error::invalid("test-set sizes changed between rows"));
        }
        self.rows.push(accuracies);
        self.test_sizes = test_sizes;
        Ok(())
    }

    /// Build from explicit rows (row l has l+1 entries).
    pub fn from_rows(rows: Vec<Vec<f64>>, test_sizes: Vec<usize>) -> Result<Self> {
        if test_sizes.len() != rows.len() {
            return Err(Error::invalid("need one test size per task"));
        }
        let mut m = Self::new();
        for (l, row) in rows.into_iter().enumerate() {
            m.push_row(row, test_sizes[..=l].to_vec())?;
        }
        Ok(m)
    }

    pub fn task_count(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, after_task: usize, task: usize) -> f64 {
        self.rows[after_task][task]
    }

    pub fn row(&self, after_task: usize) -> &[f64] {
        &self.rows[after_task]
    }

    pub fn test_sizes(&self) -> &[usize] {
        &self.test_sizes
    }
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        Self::new()
    }
}

/// Sample-weighted top-1 accuracy over the union of all test sets seen
/// through `after_task` (weights are the test-set sizes).
pub fn average_accuracy(m: &AccuracyMatrix, after_task: usize) -> Result<f64> {
    if after_task >= m.task_count() {
        return Err(Error::invalid(format!(
            "after_task {after_task} out of range for {} tasks",
            m.task_count()
        )));
    }
    let mut weighted = 0.0;
    let mut total = 0usize;
    for j in 0..=after_task {
        let n = m.test_sizes[j];
        weighted += m.rows[after_task][j] * n as f64;
        total += n;
    }
    if total == 0 {
        return Err(Error::invalid("no test samples recorded"));
    }
    Ok(weighted / total as f64)
}

/// Average forgetting after `after_task` (0-indexed, >= 1): the mean over
/// past tasks of the gap between the best accuracy the task ever reached
/// and its final accuracy. The maximum includes the current row, which pins
/// every per-task term (and hence the mean) into [0, 1].
pub fn average_forgetting(m: &AccuracyMatrix, after_task: usize) -> Result<f64> {
    if after_task >= m.task_count() {
        return Err(Error::invalid(format!(
            "after_task {after_task} out of range for {} tasks",
            m.task_count()
        )));
    }
    if after_task < 1 {
        return Err(Error::invalid("forgetting needs at least two trained tasks"));
    }
    let mut sum = 0.0;
    for j in 0..after_task {
        let mut best = f64::NEG_INFINITY;
        for l in j..=after_task {
            best = best.max(m.rows[l][j]);
        }
        sum += best - m.rows[after_task][j];
    }
    Ok(sum / after_task as f64)
}

/// CSV rendering: one row per after_task with per-task accuracies, the
/// pooled average accuracy, and average forgetting (blank after task 0).
/// Values use Rust's shortest round-trip float formatting, so re-parsing
/// recovers the matrix exactly.
pub fn to_csv(m: &AccuracyMatrix) -> String {
    let t = m.task_count();
    let mut out = String::from("after_task");
    for j in 0..t {
        out.push_str(&format!(",acc_task_{j}"));
    }
    out.push_str(",avg_accuracy,avg_forgetting\n");
    for l in 0..t {
        out.push_str(&l.to_string());
        for j in 0..t {
            if j <= l {
                out.push_str(&format!(",{}", m.rows[l][j]));
            } else {
                out.push(',');
            }
        }
        let avg = average_accuracy(m, l).unwrap_or(0.0);
        out.push_str(&format!(",{avg}"));
        if l >= 1 {
            out.push_str(&format!(",{}", average_forgetting(m, l).unwrap_or(0.0)));
        } else {
            out.push(',');
        }
        out.push('\n');
    }
    out
}

/// Parse the CSV produced by [`to_csv`] back into a matrix. `test_sizes`
/// are not stored in the CSV; pass the sizes recorded alongside.
pub fn from_csv(text: &str, test_sizes: Vec<usize>) -> Result<AccuracyMatrix> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Parse { line: i + 1, message: "too few fields".into() });
        }
        let after: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: i + 1, message: "bad task index".into() })?;
        let mut row = Vec::with_capacity(after + 1);
        for j in 0..=after {
            let v: f64 = fields[1 + j].parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad accuracy in column {}", 1 + j),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    let t = rows.len();
    if test_sizes.len() != t {
        return Err(Error::invalid(format!("expected {t} test sizes, got {}", test_sizes.len())));
    }
    AccuracyMatrix::from_rows(rows, test_sizes)
}
