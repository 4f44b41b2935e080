//! FER-2013 CSV ingestion.
//!
//! The file starts with the header `emotion,pixels,Usage`. Each row holds
//! an emotion index, 2304 space-separated grey levels of a 48x48 image in
//! row-major order, and a usage tag.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use thiserror::Error;
use vitse_core::data::{Dataset, Sample, Split};
use vitse_core::Tensor;

pub const FER_SIZE: usize = 48;
pub const FER_PIXELS: usize = FER_SIZE * FER_SIZE;
pub const FER_HEADER: [&str; 3] = ["emotion", "pixels", "Usage"];
pub const FER_CLASSES: [&str; 7] = ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"];

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct FerError {
    pub line: u64,
    pub kind: FerErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FerErrorKind {
    #[error("cannot read input: {0}")]
    Io(String),
    #[error("expected header `emotion,pixels,Usage`, found `{0}`")]
    Header(String),
    #[error("expected 3 fields, found {0}")]
    FieldCount(usize),
    #[error("emotion `{0}` is not an integer in 0..=6")]
    Emotion(String),
    #[error("expected {FER_PIXELS} pixels, found {0}")]
    PixelCount(usize),
    #[error("pixel `{0}` is not an integer in 0..=255")]
    Pixel(String),
    #[error("unknown usage tag `{0}`")]
    Usage(String),
}

fn fail(line: u64, kind: FerErrorKind) -> FerError {
    FerError { line, kind }
}

/// Maps the usage column to a split.
pub fn usage_split(tag: &str) -> Option<Split> {
    match tag {
        "Training" => Some(Split::Train),
        "PublicTest" => Some(Split::Valid),
        "PrivateTest" => Some(Split::Test),
        _ => None,
    }
}

/// Parses a whole FER-2013 CSV stream. Images come out as `[1 x 48 x 48]`
/// tensors scaled to `[0, 1]`.
pub fn parse_fer2013_csv<R: Read>(reader: R) -> Result<Dataset, FerError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = csv.records();
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| p.line());

    let header = match records.next() {
        None => return Err(fail(1, FerErrorKind::Header(String::new()))),
        Some(Err(e)) => return Err(fail(line_of(&e).max(1), FerErrorKind::Io(e.to_string()))),
        Some(Ok(r)) => r,
    };
    if header.iter().ne(FER_HEADER) {
        let found = header.iter().collect::<Vec<_>>().join(",");
        return Err(fail(1, FerErrorKind::Header(found)));
    }

    let mut samples = Vec::new();
    for record in records {
        let record = record.map_err(|e| fail(line_of(&e), FerErrorKind::Io(e.to_string())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(fail(line, FerErrorKind::FieldCount(record.len())));
        }
        let emotion = &record[0];
        let label = emotion
            .parse::<usize>()
            .ok()
            .filter(|&l| l < FER_CLASSES.len())
            .ok_or_else(|| fail(line, FerErrorKind::Emotion(emotion.to_string())))?;
        let mut pixels = Vec::with_capacity(FER_PIXELS);
        for tok in record[1].split_ascii_whitespace() {
            let v: u8 = tok
                .parse()
                .map_err(|_| fail(line, FerErrorKind::Pixel(tok.to_string())))?;
            pixels.push(v as f32 / 255.0);
        }
        if pixels.len() != FER_PIXELS {
            return Err(fail(line, FerErrorKind::PixelCount(pixels.len())));
        }
        let split = usage_split(&record[2]).ok_or_else(|| fail(line, FerErrorKind::Usage(record[2].to_string())))?;
        let image = Tensor::new(&[1, FER_SIZE, FER_SIZE], pixels).expect("pixel count checked");
        samples.push(Sample { image, label, split });
    }
    Ok(Dataset::new(samples, FER_CLASSES.len()).expect("rows share shape and label range"))
}

pub fn read_fer2013(path: &Path) -> Result<Dataset, FerError> {
    let file = File::open(path).map_err(|e| fail(0, FerErrorKind::Io(format!("{}: {e}", path.display()))))?;
    parse_fer2013_csv(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, value: &str, count: usize, usage: &str) -> String {
        format!("{label},{},{usage}\n", vec![value; count].join(" "))
    }

    fn parse(body: &str) -> Result<Dataset, FerError> {
        parse_fer2013_csv(format!("emotion,pixels,Usage\n{body}").as_bytes())
    }

    #[test]
    fn zero_row_and_saturated_row() {
        let d = parse(&(row("0", "0", 2304, "Training") + &row("3", "255", 2304, "PublicTest"))).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples[0].image, Tensor::zeros(&[1, 48, 48]));
        assert_eq!((d.samples[0].label, d.samples[0].split), (0, Split::Train));
        assert_eq!(d.samples[1].image, Tensor::ones(&[1, 48, 48]));
        assert_eq!((d.samples[1].label, d.samples[1].split), (3, Split::Valid));
    }

    #[test]
    fn short_row_names_its_line() {
        let body = row("1", "7", 2304, "PrivateTest") + &row("1", "7", 2303, "Training");
        let err = parse(&body).unwrap_err();
        assert_eq!(err, fail(3, FerErrorKind::PixelCount(2303)));
        assert!(err.to_string().starts_with("line 3:"));
    }

    #[test]
    fn malformed_fields_are_rejected() {
        let cases = [
            (row("7", "0", 2304, "Training"), FerErrorKind::Emotion("7".into())),
            (row("x", "0", 2304, "Training"), FerErrorKind::Emotion("x".into())),
            (row("1", "256", 2304, "Training"), FerErrorKind::Pixel("256".into())),
            (row("1", "1.5", 2304, "Training"), FerErrorKind::Pixel("1.5".into())),
            (row("1", "0", 2304, "Validation"), FerErrorKind::Usage("Validation".into())),
            ("1,0 0\n".to_string(), FerErrorKind::FieldCount(2)),
        ];
        for (body, kind) in cases {
            assert_eq!(parse(&body).unwrap_err(), fail(2, kind));
        }
    }

    #[test]
    fn header_is_required() {
        let err = parse_fer2013_csv(row("0", "0", 2304, "Training").as_bytes()).unwrap_err();
        assert_eq!(err.line, 1);
        assert!(matches!(err.kind, FerErrorKind::Header(_)));
        assert!(parse_fer2013_csv(&b""[..]).is_err());
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }
}
