use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{HarnessError, Result};

pub const SUMMARY_HEADER: &str =
    "step,n,eval_return_mean,eval_return_std,eval_return_median,success_rate_mean,success_rate_std,success_rate_median";

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub step: u64,
    pub n: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub eval_return_median: f64,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
    pub success_rate_median: f64,
}

/// Mean, population standard deviation and median.
fn stats(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    };
    (mean, var.sqrt(), median)
}

/// Per-step statistics across learning-curve CSVs. Every file must carry
/// the header of the first one.
pub fn aggregate_report<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<SummaryRow>> {
    let first = paths
        .first()
        .ok_or_else(|| HarnessError::InvalidConfig("no input CSVs".into()))?;
    let mut expected: Option<csv::StringRecord> = None;
    let mut by_step: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for path in paths {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        match &expected {
            None => expected = Some(header.clone()),
            Some(e) if *e != header => {
                return Err(HarnessError::HeaderMismatch {
                    path: path.to_path_buf(),
                    expected: e.iter().collect::<Vec<_>>().join(","),
                    got: header.iter().collect::<Vec<_>>().join(","),
                })
            }
            Some(_) => {}
        }
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| HarnessError::BadCsv {
                path: path.to_path_buf(),
                reason: format!("missing column {name}"),
            })
        };
        let (c_step, c_ret, c_succ) = (col("step")?, col("eval_return")?, col("success_rate")?);
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let field = |c: usize| -> Result<f64> {
                record.get(c).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| HarnessError::BadCsv {
                    path: path.to_path_buf(),
                    reason: format!("row {}: unreadable column {c}", line + 1),
                })
            };
            let step = field(c_step)? as u64;
            let entry = by_step.entry(step).or_default();
            entry.0.push(field(c_ret)?);
            entry.1.push(field(c_succ)?);
        }
    }
    if by_step.is_empty() {
        return Err(HarnessError::BadCsv {
            path: first.as_ref().to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    Ok(by_step
        .into_iter()
        .map(|(step, (ret, succ))| {
            let (rm, rs, rmed) = stats(&ret);
            let (sm, ss, smed) = stats(&succ);
            SummaryRow {
                step,
                n: ret.len(),
                eval_return_mean: rm,
                eval_return_std: rs,
                eval_return_median: rmed,
                success_rate_mean: sm,
                success_rate_std: ss,
                success_rate_median: smed,
            }
        })
        .collect())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.n,
            r.eval_return_mean,
            r.eval_return_std,
            r.eval_return_median,
            r.success_rate_mean,
            r.success_rate_std,
            r.success_rate_median
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guided_sac::CURVE_HEADER;
    use std::fs;

    fn write(dir: &Path, name: &str, rows: &[(u64, f64, f64)]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut s = format!("{CURVE_HEADER}\n");
        for (step, r, succ) in rows {
            s += &format!("{step},0,{r},{succ},0,0,0,1,0\n");
        }
        fs::write(&p, s).unwrap();
        p
    }

    #[test]
    fn single_file_has_zero_spread() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", &[(1000, 5.5, 0.2)]);
        let r = aggregate_report(&[p]).unwrap();
        assert_eq!(r[0].eval_return_mean, 5.5);
        assert_eq!(r[0].eval_return_std, 0.0);
        assert_eq!(r[0].n, 1);
    }

    #[test]
    fn two_values_population_std() {
        let d = tempfile::tempdir().unwrap();
        let a = write(d.path(), "a.csv", &[(1000, 2.0, 0.0)]);
        let b = write(d.path(), "b.csv", &[(1000, 4.0, 1.0)]);
        let r = aggregate_report(&[a, b]).unwrap();
        assert_eq!((r[0].eval_return_mean, r[0].eval_return_std), (3.0, 1.0));
        assert_eq!(r[0].success_rate_median, 0.5);
    }

    #[test]
    fn four_files_match_spreadsheet_oracle() {
        let d = tempfile::tempdir().unwrap();
        let data = [
            [(1000, 1.25, 0.0), (2000, 10.0, 0.5)],
            [(1000, -3.5, 0.1), (2000, 12.5, 0.6)],
            [(1000, 7.0, 0.2), (2000, 9.0, 0.9)],
            [(1000, 0.5, 0.3), (2000, 20.0, 1.0)],
        ];
        let paths: Vec<_> = data.iter().enumerate().map(|(i, rows)| write(d.path(), &format!("{i}.csv"), rows)).collect();
        let r = aggregate_report(&paths).unwrap();
        // Step 1000 returns: 1.25, -3.5, 7, 0.5 -> mean 1.3125.
        let m: f64 = 1.3125;
        let var = [(1.25f64 - m).powi(2), (-3.5f64 - m).powi(2), (7.0f64 - m).powi(2), (0.5f64 - m).powi(2)].iter().sum::<f64>() / 4.0;
        assert!((r[0].eval_return_mean - m).abs() < 1e-12);
        assert!((r[0].eval_return_std - var.sqrt()).abs() < 1e-12);
        assert!((r[0].eval_return_median - 0.875).abs() < 1e-12);
        assert!((r[1].eval_return_median - 11.25).abs() < 1e-12);
        assert!((r[1].success_rate_mean - 0.75).abs() < 1e-12);
    }

    #[test]
    fn header_mismatch_names_the_file() {
        let d = tempfile::tempdir().unwrap();
        let a = write(d.path(), "a.csv", &[(1000, 1.0, 0.0)]);
        let b = d.path().join("odd.csv");
        fs::write(&b, "step,eval_return,success_rate\n1000,1,0\n").unwrap();
        let err = aggregate_report(&[a, b.clone()]).unwrap_err();
        assert!(matches!(&err, HarnessError::HeaderMismatch { path, .. } if *path == b));
        assert!(err.to_string().contains("odd.csv"));
    }
}
