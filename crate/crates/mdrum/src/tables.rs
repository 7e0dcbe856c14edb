//! CSV emitters for loss curves, metric tables and rating files.

use std::path::Path;

use mdrum_core::eval::HumanRating;
use mdrum_core::train::LossCurve;

use crate::error::{AppError, AppResult};
use crate::fsio::{atomic_write, read};

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| AppError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| AppError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| AppError::Data(e.to_string()))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> AppResult<()> {
    atomic_write(path, &csv_bytes(header, rows)?)
}

pub fn loss_header() -> Vec<String> {
    ["step", "L_CE", "L_LLM", "L_bbox", "L_GIoU", "L_total"].map(String::from).to_vec()
}

pub fn loss_rows(curve: &LossCurve) -> Vec<Vec<String>> {
    curve
        .rows
        .iter()
        .map(|(step, r)| {
            vec![
                step.to_string(),
                r.ce.to_string(),
                r.llm.to_string(),
                r.bbox.to_string(),
                r.giou.to_string(),
                r.total.to_string(),
            ]
        })
        .collect()
}

/// Ratings CSV with header `rater,sample,exactness,certainty,detail`.
pub fn read_ratings(path: &Path) -> AppResult<Vec<HumanRating>> {
    let bytes = read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let want = ["rater", "sample", "exactness", "certainty", "detail"];
    if header.iter().map(str::trim).ne(want) {
        return Err(AppError::Data(format!(
            "{}: header must be {}",
            path.display(),
            want.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| AppError::Data(format!("{}: row {i}: {e}", path.display())))?;
        let score = |k: usize| -> AppResult<u8> {
            rec[k].trim().parse().map_err(|_| {
                AppError::Data(format!("{}: row {i}: {} is not an integer score", path.display(), want[k]))
            })
        };
        let rating = HumanRating {
            rater: rec[0].trim().to_string(),
            sample: rec[1].trim().to_string(),
            exactness: score(2)?,
            certainty: score(3)?,
            detail: score(4)?,
        };
        rating
            .validate()
            .map_err(|e| AppError::Data(format!("{}: row {i}: {e}", path.display())))?;
        out.push(rating);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratings_parse_and_reject_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "rater,sample,exactness,certainty,detail\na,s1,9,8,7\nb,s1,10,9,8\n").unwrap();
        let r = read_ratings(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].exactness, 10);
        std::fs::write(&p, "rater,sample,exactness,certainty,detail\na,s1,0,8,7\n").unwrap();
        assert!(read_ratings(&p).is_err());
        std::fs::write(&p, "who,sample,exactness,certainty,detail\n").unwrap();
        assert!(read_ratings(&p).is_err());
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let b = csv_bytes(&["a".into()], &[vec!["x,y".into()]]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "a\n\"x,y\"\n");
    }
}
