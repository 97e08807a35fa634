pub mod latency;
pub mod recon;
pub mod rd;

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Prefixes each header line with `# ` and appends the CSV body.
pub fn csv_with_headers(headers: &[String], body: &str) -> String {
    let mut out = String::new();
    for h in headers {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    out.push_str(body);
    out
}

/// Writes `name` under `out_dir`, creating the directory, and returns the
/// full path.
pub fn write_out(out_dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io_at(out_dir, e))?;
    let path = out_dir.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::io_at(&path, e))?;
    Ok(path)
}

/// Lower median of an unordered sample; the experiment contract is a
/// deterministic rank statistic, not an interpolated one.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timing values"));
    sorted[(sorted.len() - 1) / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_render_as_comment_lines() {
        let text = csv_with_headers(
            &["seed=42".to_string(), "subset=200".to_string()],
            "a,b\n1,2\n",
        );
        assert_eq!(text, "# seed=42\n# subset=200\na,b\n1,2\n");
    }

    #[test]
    fn median_is_the_lower_middle_rank() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(median(&[7.5]), 7.5);
    }
}
