//! Correlation heatmap rendering: reorder by frequency, mask the diagonal,
//! keep the strongest cells per row, and emit deterministic SVG and CSV.
//! Output bytes depend only on the inputs, never on time or environment.

use crate::error::{Error, Result};
use ndarray::Array2;

#[derive(Debug, Clone, Default)]
pub struct HeatmapOptions {
    /// Keep only the n largest off-diagonal cells per row.
    pub top_n: Option<usize>,
    /// Clip displayed values at this ceiling.
    pub truncate: Option<f64>,
}

/// A display-ready matrix: `None` cells are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub names: Vec<String>,
    pub cells: Array2<Option<f64>>,
}

/// Apply ordering, masking and clipping.
///
/// Rows and columns are permuted together, descending by `frequency` (ties
/// by original position) when given. The diagonal, self-correlation, is
/// always masked. With `top_n`, each row keeps its n largest off-diagonal
/// cells (ties toward the leftmost column); `truncate` then clips what
/// remains.
pub fn prepare(
    matrix: &Array2<f64>,
    names: &[String],
    frequency: Option<&[u64]>,
    options: &HeatmapOptions,
) -> Result<MaskedMatrix> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::data(format!(
            "heatmap needs a square matrix, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    if names.len() != n {
        return Err(Error::data(format!(
            "{} names for a {n}x{n} matrix",
            names.len()
        )));
    }
    if let Some(freq) = frequency {
        if freq.len() != n {
            return Err(Error::data(format!(
                "{} frequencies for {n} relations",
                freq.len()
            )));
        }
    }
    if let Some(t) = options.truncate {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::data("truncate ceiling must be positive"));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    if let Some(freq) = frequency {
        order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    }

    let mut cells: Array2<Option<f64>> = Array2::from_elem((n, n), None);
    for (ri, &i) in order.iter().enumerate() {
        for (rj, &j) in order.iter().enumerate() {
            if i != j {
                cells[[ri, rj]] = Some(matrix[[i, j]]);
            }
        }
    }

    if let Some(top_n) = options.top_n {
        for mut row in cells.rows_mut() {
            let mut candidates: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter_map(|(j, c)| c.map(|v| (j, v)))
                .collect();
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(j, _) in candidates.iter().skip(top_n) {
                row[j] = None;
            }
        }
    }

    if let Some(ceiling) = options.truncate {
        cells.mapv_inplace(|c| c.map(|v| v.min(ceiling)));
    }

    Ok(MaskedMatrix {
        names: order.iter().map(|&i| names[i].clone()).collect(),
        cells,
    })
}

/// CSV rendering; masked cells are empty fields.
pub fn to_csv(masked: &MaskedMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["relation".to_string()];
    header.extend_from_slice(&masked.names);
    w.write_record(&header)
        .map_err(|e| Error::data(format!("csv: {e}")))?;
    for (i, name) in masked.names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(masked.cells.row(i).iter().map(|c| match c {
            Some(v) => format!("{v}"),
            None => String::new(),
        }));
        w.write_record(&row)
            .map_err(|e| Error::data(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::data(format!("csv: {e}")))
}

const CELL: usize = 26;
const LABEL_SPACE: usize = 90;

fn color(v: f64, max: f64) -> String {
    let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    let other = (255.0 * (1.0 - t)).round() as u8;
    format!("rgb(255,{other},{other})")
}

/// Self-contained SVG rendering: white-to-red cells, gray mask, labels on
/// both axes, a hover title per cell.
pub fn to_svg(masked: &MaskedMatrix) -> String {
    let n = masked.names.len();
    let width = LABEL_SPACE + n * CELL + 1;
    let height = LABEL_SPACE + n * CELL + 1;
    let max = masked
        .cells
        .iter()
        .filter_map(|c| *c)
        .fold(0.0f64, |acc, v| acc.max(v));
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (j, name) in masked.names.iter().enumerate() {
        let x = LABEL_SPACE + j * CELL + CELL / 2;
        let y = LABEL_SPACE - 6;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"start\" transform=\"rotate(-60 {x} {y})\">{}</text>\n",
            escape(name)
        ));
    }
    for (i, name) in masked.names.iter().enumerate() {
        let y = LABEL_SPACE + i * CELL + CELL / 2 + 4;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{}</text>\n",
            LABEL_SPACE - 6,
            escape(name)
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let x = LABEL_SPACE + j * CELL;
            let y = LABEL_SPACE + i * CELL;
            match masked.cells[[i, j]] {
                Some(v) => {
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"{}\" stroke=\"#ccc\"><title>{} / {}: {v:.4}</title></rect>\n",
                        color(v, max),
                        escape(&masked.names[i]),
                        escape(&masked.names[j]),
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"#eeeeee\" stroke=\"#ccc\"/>\n"
                    ));
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("R{i}")).collect()
    }

    #[test]
    fn diagonal_is_always_masked() {
        let m = array![[9.0, 1.0], [2.0, 9.0]];
        let masked = prepare(&m, &names(2), None, &HeatmapOptions::default()).unwrap();
        assert_eq!(masked.cells[[0, 0]], None);
        assert_eq!(masked.cells[[1, 1]], None);
        assert_eq!(masked.cells[[0, 1]], Some(1.0));
        assert_eq!(masked.cells[[1, 0]], Some(2.0));
    }

    #[test]
    fn frequency_orders_rows_and_columns_together() {
        let m = array![[0.0, 1.0, 2.0], [3.0, 0.0, 4.0], [5.0, 6.0, 0.0]];
        let freq = [5u64, 50, 20];
        let masked = prepare(&m, &names(3), Some(&freq), &HeatmapOptions::default()).unwrap();
        assert_eq!(masked.names, vec!["R1", "R2", "R0"]);
        // cell (R1, R2) holds the original m[1][2]
        assert_eq!(masked.cells[[0, 1]], Some(4.0));
        assert_eq!(masked.cells[[2, 0]], Some(1.0)); // (R0, R1)
    }

    #[test]
    fn frequency_ties_keep_schema_order() {
        let m = Array2::zeros((3, 3));
        let freq = [7u64, 7, 7];
        let masked = prepare(&m, &names(3), Some(&freq), &HeatmapOptions::default()).unwrap();
        assert_eq!(masked.names, vec!["R0", "R1", "R2"]);
    }

    #[test]
    fn top_n_keeps_exactly_n_cells_per_row() {
        let m = array![
            [0.0, 5.0, 3.0, 1.0],
            [2.0, 0.0, 2.0, 2.0],
            [9.0, 8.0, 0.0, 7.0],
            [1.0, 1.0, 1.0, 0.0]
        ];
        let opts = HeatmapOptions {
            top_n: Some(2),
            truncate: None,
        };
        let masked = prepare(&m, &names(4), None, &opts).unwrap();
        for i in 0..4 {
            let kept = masked.cells.row(i).iter().filter(|c| c.is_some()).count();
            assert_eq!(kept, 2, "row {i}");
        }
        // row 0 keeps its two largest
        assert_eq!(masked.cells[[0, 1]], Some(5.0));
        assert_eq!(masked.cells[[0, 2]], Some(3.0));
        assert_eq!(masked.cells[[0, 3]], None);
        // row 1 ties resolve toward the leftmost columns
        assert_eq!(masked.cells[[1, 0]], Some(2.0));
        assert_eq!(masked.cells[[1, 2]], Some(2.0));
        assert_eq!(masked.cells[[1, 3]], None);
    }

    #[test]
    fn truncate_clips_survivors() {
        let m = array![[0.0, 4.0], [0.5, 0.0]];
        let opts = HeatmapOptions {
            top_n: None,
            truncate: Some(1.5),
        };
        let masked = prepare(&m, &names(2), None, &opts).unwrap();
        assert_eq!(masked.cells[[0, 1]], Some(1.5));
        assert_eq!(masked.cells[[1, 0]], Some(0.5));
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = Array2::zeros((2, 3));
        assert!(prepare(&m, &names(2), None, &HeatmapOptions::default()).is_err());
        let sq = Array2::zeros((2, 2));
        assert!(prepare(&sq, &names(3), None, &HeatmapOptions::default()).is_err());
        assert!(prepare(&sq, &names(2), Some(&[1]), &HeatmapOptions::default()).is_err());
    }

    #[test]
    fn csv_uses_empty_fields_for_masked_cells() {
        let m = array![[9.0, 0.25], [1.0, 9.0]];
        let masked = prepare(&m, &names(2), None, &HeatmapOptions::default()).unwrap();
        let csv = to_csv(&masked).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "relation,R0,R1");
        assert_eq!(lines[1], "R0,,0.25");
        assert_eq!(lines[2], "R1,1,");
    }

    #[test]
    fn svg_output_is_deterministic_and_self_contained() {
        let m = array![[0.0, 2.0], [1.0, 0.0]];
        let masked = prepare(&m, &names(2), None, &HeatmapOptions::default()).unwrap();
        let a = to_svg(&masked);
        let b = to_svg(&masked);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.contains("rgb(255,0,0)"), "strongest cell is full red");
        assert!(a.contains("#eeeeee"), "masked cells are gray");
        assert!(!a.contains("date"), "no timestamps");
    }
}
