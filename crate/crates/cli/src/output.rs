//! Rendering of reports for the terminal or as JSON / CSV.

use ttrnn::evalbench::{emit_report, Field, Format, Report};

use crate::OutputFormat;

/// `9570560` as `9,570,560`.
pub fn group_digits(v: i64) -> String {
    let digits = v.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if v < 0 {
        format!("-{out}")
    } else {
        out
    }
}

fn cell_text(f: &Field) -> String {
    match f {
        Field::Int(v) => group_digits(*v),
        Field::Float(v) if v.abs() < 1e-2 && *v != 0.0 => format!("{v:.3e}"),
        Field::Float(v) => format!("{v:.4}"),
        Field::Text(s) => s.clone(),
    }
}

/// Left-aligned text columns separated by two spaces.
pub fn text_table(r: &Report) -> String {
    let cells: Vec<Vec<String>> = r.rows.iter().map(|row| row.iter().map(cell_text).collect()).collect();
    let widths: Vec<usize> = (0..r.columns.len())
        .map(|k| cells.iter().map(|row| row[k].len()).chain([r.columns[k].len()]).max().unwrap_or(0))
        .collect();
    let line = |items: &[String]| {
        let padded: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&r.columns);
    for row in &cells {
        out.push_str(&line(row));
    }
    out
}

pub fn render(r: &Report, format: Option<OutputFormat>) -> ttrnn::Result<String> {
    match format {
        None => Ok(text_table(r)),
        Some(OutputFormat::Json) => emit_report(r, Format::Json),
        Some(OutputFormat::Csv) => emit_report(r, Format::Csv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_grouping() {
        assert_eq!(group_digits(9_570_560), "9,570,560");
        assert_eq!(group_digits(266_762), "266,762");
        assert_eq!(group_digits(8), "8");
        assert_eq!(group_digits(-1000), "-1,000");
    }

    #[test]
    fn table_layout() {
        let mut r = Report::new(["model", "params"]);
        r.push(vec!["dense".into(), 266_762usize.into()]).unwrap();
        assert_eq!(text_table(&r), "model  params\ndense  266,762\n");
    }
}
