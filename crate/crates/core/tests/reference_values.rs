//! The reference constants are checked against the published tables kept in
//! the repository root.

use tse_core::reference::*;

/// `None` in checkouts that do not carry the source document.
fn source() -> Option<String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.md");
    let text = std::fs::read_to_string(path).ok();
    if text.is_none() {
        eprintln!("skipping: {path} not present");
    }
    text
}

/// Table rows as trimmed cells with LaTeX markup removed and `Name (32D)`
/// folded to `Name(32D)`.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| l.contains('&'))
        .map(|l| {
            let mut clean = l.to_string();
            for m in ["\\underline{", "\\textbf{", "}", "\\\\", "\\hline", "\\%"] {
                clean = clean.replace(m, "");
            }
            clean
                .split('&')
                .map(|c| {
                    let c = c.split("\\cline").next().unwrap_or("");
                    c.trim().replace(" (", "(")
                })
                .collect()
        })
        .collect()
}

fn num(cell: &str) -> f64 {
    cell.parse().unwrap_or_else(|_| panic!("not a number: {cell:?}"))
}

fn find<'a>(rows: &'a [Vec<String>], name: &str, after: usize) -> Vec<&'a Vec<String>> {
    rows.iter().filter(|r| r.len() > after && r.iter().any(|c| c == name)).collect()
}

#[test]
fn embedding_results_match_source() {
    let Some(text) = source() else { return };
    let rows = rows(&text);
    for r in EMBEDDING_RESULTS {
        let hit = find(&rows, r.embedding, 3);
        assert_eq!(hit.len(), 1, "{}", r.embedding);
        let row = hit[0];
        assert_eq!(num(&row[1]) as usize, r.dimension);
        assert_eq!(num(&row[2]), r.eer_percent);
        assert_eq!(num(&row[3]), r.min_dcf);
    }
}

#[test]
fn system_results_match_source() {
    let Some(text) = source() else { return };
    let rows = rows(&text);
    for r in SYSTEM_RESULTS {
        let row = find(&rows, r.system, 5).into_iter().find(|row| row.len() == 6 && row[2].parse::<f64>().is_ok());
        let row = row.unwrap_or_else(|| panic!("no row for {}", r.system));
        assert_eq!(num(&row[2]), r.si_sdri_db, "{}", r.system);
        assert_eq!(num(&row[3]), r.pesq, "{}", r.system);
        assert_eq!(num(&row[4]), r.min_dcf, "{}", r.system);
        assert_eq!(num(&row[5]), r.eer_percent, "{}", r.system);
    }
}

#[test]
fn extraction_results_match_source() {
    let Some(text) = source() else { return };
    let rows = rows(&text);
    for r in EXTRACTION_RESULTS {
        let row = rows
            .iter()
            .find(|row| {
                row.len() == 6 && if r.system == "mixture" { row[0] == "mixture" } else { row[1] == r.system && row[2].starts_with("\\usym") }
            })
            .unwrap_or_else(|| panic!("no row for {}", r.system));
        assert_eq!(num(&row[3]), r.sdri_db, "{}", r.system);
        assert_eq!(num(&row[4]), r.si_sdri_db, "{}", r.system);
        assert_eq!(num(&row[5]), r.pesq, "{}", r.system);
    }
}

#[test]
fn headline_numbers_match_source() {
    let Some(text) = source() else { return };
    assert!(text.contains("around 82\\%"));
    assert_eq!(LDA_32D_EXPLAINED_VARIANCE, 0.82);
    assert!(text.contains("up to 9.9\\% relative improvement in SI-SDRi"));
    assert!(text.contains("SI-SDRi of 19.4 dB and PESQ of 3.78"));
    let best = EXTRACTION_RESULTS.iter().map(|r| r.si_sdri_db).fold(f64::MIN, f64::max);
    assert_eq!(best, 19.4);
}

#[test]
fn relative_gain_recomputed_from_system_rows() {
    let best = relative_gains().into_iter().map(|(_, g)| g).fold(f64::MIN, f64::max);
    assert!((best - (18.8 - 17.1) / 17.1).abs() < 1e-12);
    assert_eq!((best * 1000.0).round() / 1000.0, MAX_RELATIVE_SI_SDRI_GAIN);
}
