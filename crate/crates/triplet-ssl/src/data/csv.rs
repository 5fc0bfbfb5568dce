//! CSV serialization for flat-feature datasets: one row per example,
//! feature columns then a label column (-1 when the dataset is unlabeled).

use std::io::{Read, Write};

use ndarray::Array2;

use crate::{Error, Result};

use super::{Dataset, Features};

pub fn dataset_to_csv(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let feats = match dataset.features() {
        Features::Flat(a) => a,
        Features::Images(_) => {
            return Err(Error::Argument(
                "CSV serialization covers flat-feature datasets only".into(),
            ))
        }
    };
    let mut w = csv::Writer::from_writer(writer);
    for (i, row) in feats.outer_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let label = dataset
            .labels()
            .map(|y| y[i] as i64)
            .unwrap_or(-1);
        record.push(label.to_string());
        w.write_record(&record)
            .map_err(|e| Error::Format(format!("csv write: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_from_csv(reader: impl Read) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut feats: Vec<f32> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut dim: Option<usize> = None;

    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("csv row {}: {e}", line + 1)))?;
        if record.len() < 2 {
            return Err(Error::Format(format!(
                "csv row {}: need at least one feature column plus a label",
                line + 1
            )));
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(Error::Format(format!(
                    "csv row {}: {d} feature columns, expected {expect}",
                    line + 1
                )))
            }
            _ => {}
        }
        for field in record.iter().take(d) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("csv row {}: bad feature {field:?}", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "csv row {}: non-finite feature",
                    line + 1
                )));
            }
            feats.push(v);
        }
        let label_field = record.get(d).unwrap_or_default();
        let label: i64 = label_field.trim().parse().map_err(|_| {
            Error::Format(format!("csv row {}: bad label {label_field:?}", line + 1))
        })?;
        if label < -1 {
            return Err(Error::Format(format!(
                "csv row {}: label {label} out of range",
                line + 1
            )));
        }
        labels.push(label);
    }

    let dim = dim.ok_or_else(|| Error::Format("empty csv dataset".into()))?;
    let n = labels.len();
    let array = Array2::from_shape_vec((n, dim), feats)
        .map_err(|e| Error::Format(format!("csv feature shape: {e}")))?;

    let unlabeled = labels.iter().all(|&l| l == -1);
    let fully_labeled = labels.iter().all(|&l| l >= 0);
    if !unlabeled && !fully_labeled {
        return Err(Error::Format(
            "csv mixes labeled and unlabeled rows; label every row or none".into(),
        ));
    }
    if unlabeled {
        // Class count of the source dataset is not recoverable; default 1.
        Dataset::new(Features::Flat(array), None, 1)
    } else {
        let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let c = y.iter().copied().max().unwrap() + 1;
        Dataset::new(Features::Flat(array), Some(y), c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_round_trip() {
        let ds = super::super::make_blobs(4, &[vec![0.0, 1.0], vec![3.0, -2.0]], 0.7, 5).unwrap();
        let mut buf = Vec::new();
        dataset_to_csv(&ds, &mut buf).unwrap();
        let back = dataset_from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.labels(), ds.labels());
        match (ds.features(), back.features()) {
            (Features::Flat(a), Features::Flat(b)) => assert_eq!(a, b),
            _ => panic!(),
        }
    }

    #[test]
    fn unlabeled_rows_use_minus_one() {
        let csv = "0.5,1.25,-1\n-3,0.25,-1\n";
        let ds = dataset_from_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn mixed_labels_rejected() {
        let csv = "0.5,1.0,0\n1.5,2.0,-1\n";
        assert!(matches!(
            dataset_from_csv(csv.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn ragged_rows_rejected() {
        let csv = "0.5,1.0,0\n1.5,0\n";
        assert!(matches!(
            dataset_from_csv(csv.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn garbage_fields_rejected() {
        assert!(dataset_from_csv("a,b,c\n".as_bytes()).is_err());
        assert!(dataset_from_csv("1.0,nan,0\n".as_bytes()).is_err());
        assert!(dataset_from_csv("".as_bytes()).is_err());
    }
}
