//! Dataset manifests: one CSV row per (reference, distorted) pair.
//!
//! Required columns are `pair_id, ref_path, dist_path, dist_fps,
//! content_id, mos`; any further columns are kept verbatim in `extra`.
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::video::Fps;

pub const REQUIRED_COLUMNS: [&str; 6] = ["pair_id", "ref_path", "dist_path", "dist_fps", "content_id", "mos"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub pair_id: String,
    pub ref_path: PathBuf,
    pub dist_path: PathBuf,
    pub dist_fps: Fps,
    pub content_id: String,
    pub mos: f64,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: PathBuf::from("<csv>"),
            source,
        },
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.pair_id.as_str()) {
                return Err(Error::Data(format!("duplicate pair_id {}", r.pair_id)));
            }
        }
        Ok(DatasetManifest { rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        DatasetManifest::parse(&text, base)
    }

    /// Parses CSV text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let col = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column {name}"),
            })
        };
        let idx: Vec<usize> = REQUIRED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| Error::Parse { line, message };
            let get = |i: usize| rec.get(idx[i]).unwrap_or("");
            let pair_id = get(0).to_string();
            if pair_id.is_empty() {
                return Err(bad("empty pair_id".into()));
            }
            if !seen.insert(pair_id.clone()) {
                return Err(bad(format!("duplicate pair_id {pair_id}")));
            }
            let dist_fps: Fps = get(3).parse().map_err(|e: Error| bad(format!("dist_fps: {e}")))?;
            let mos: f64 = get(5).parse().map_err(|_| bad(format!("mos {:?} is not a number", get(5))))?;
            if !mos.is_finite() {
                return Err(bad("mos is not finite".into()));
            }
            let content_id = get(4).to_string();
            if content_id.is_empty() {
                return Err(bad("empty content_id".into()));
            }
            let extra = headers
                .iter()
                .zip(rec.iter())
                .filter(|(h, _)| !REQUIRED_COLUMNS.contains(h))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect();
            rows.push(ManifestRow {
                pair_id,
                ref_path: base.join(get(1)),
                dist_path: base.join(get(2)),
                dist_fps,
                content_id,
                mos,
                extra,
            });
        }
        Ok(DatasetManifest { rows })
    }

    pub fn to_csv(&self) -> Result<String> {
        let extra_cols: Vec<String> = {
            let mut c: Vec<String> = self.rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
            c.sort();
            c.dedup();
            c
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        header.extend(extra_cols.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![
                r.pair_id.clone(),
                r.ref_path.display().to_string(),
                r.dist_path.display().to_string(),
                r.dist_fps.to_string(),
                r.content_id.clone(),
                format!("{:?}", r.mos),
            ];
            rec.extend(extra_cols.iter().map(|c| r.extra.get(c).cloned().unwrap_or_default()));
            w.write_record(&rec).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct content ids in first-appearance order.
    pub fn contents(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(|r| r.content_id.as_str())
            .filter(|c| seen.insert(*c))
            .collect()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mos).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "pair_id,ref_path,dist_path,dist_fps,content_id,mos,vmaf\n\
                        a,r/a.y4m,d/a60.y4m,60,c1,71.5,90\n\
                        b,/abs/b.y4m,d/b30.y4m,30000/1001,c1,40,\n\
                        c,r/c.y4m,d/c.y4m,120,c2,12.25,3\n";

    #[test]
    fn parses_rows_and_extras() {
        let m = DatasetManifest::parse(TEXT, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 3);
        let a = &m.rows[0];
        assert_eq!(a.ref_path, PathBuf::from("/data/r/a.y4m"));
        assert_eq!(a.dist_fps, Fps::integer(60).unwrap());
        assert_eq!(a.mos, 71.5);
        assert_eq!(a.extra["vmaf"], "90");
        assert_eq!(m.rows[1].ref_path, PathBuf::from("/abs/b.y4m"));
        assert_eq!(m.rows[1].dist_fps, Fps::new(30000, 1001).unwrap());
        assert_eq!(m.contents(), vec!["c1", "c2"]);
    }

    #[test]
    fn round_trips_through_csv() {
        let m = DatasetManifest::parse(TEXT, Path::new("")).unwrap();
        let back = DatasetManifest::parse(&m.to_csv().unwrap(), Path::new("")).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = "pair_id,ref_path,dist_path,dist_fps,content_id,mos\na,r,d,60,c,1\na,r,d,60,c,2\n";
        assert!(matches!(DatasetManifest::parse(dup, Path::new("")), Err(Error::Parse { line: 3, .. })));
        let bad_mos = "pair_id,ref_path,dist_path,dist_fps,content_id,mos\na,r,d,60,c,1\nb,r,d,60,c,high\n";
        assert!(matches!(DatasetManifest::parse(bad_mos, Path::new("")), Err(Error::Parse { line: 3, .. })));
        let ragged = "pair_id,ref_path,dist_path,dist_fps,content_id,mos\na,r,d,60,c\n";
        assert!(matches!(DatasetManifest::parse(ragged, Path::new("")), Err(Error::Parse { line: 2, .. })));
        let missing = "pair_id,ref_path,dist_path,content_id,mos\n";
        assert!(matches!(DatasetManifest::parse(missing, Path::new("")), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_rejected_in_constructor() {
        let m = DatasetManifest::parse(TEXT, Path::new("")).unwrap();
        let mut rows = m.rows.clone();
        rows.push(m.rows[0].clone());
        assert!(matches!(DatasetManifest::new(rows), Err(Error::Data(_))));
    }
}
