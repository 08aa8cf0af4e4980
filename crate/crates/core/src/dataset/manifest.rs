//! Manifest reading and writing.
//!
//! Two encodings are accepted:
//!
//! * delimited text, one record per line:
//!   `image_id, path, label, boxes, group_id` where `boxes` is a sequence of
//!   `[x_min,y_min,x_max,y_max]` groups (optionally wrapped in an outer
//!   bracket) and the last two columns may be omitted. A header line starting
//!   with `image_id` and `#` comments are skipped. Commas inside brackets do
//!   not split fields.
//! * a JSON array of record objects (detected by a leading `[` or `{`).

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{class_counts, BoundingBox, ClassCounts, DatasetError, ImageRecord, Result, SeverityClass};

#[derive(Debug, Deserialize)]
struct JsonRecord {
    image_id: String,
    path: PathBuf,
    label: String,
    #[serde(default)]
    boxes: Vec<[i64; 4]>,
    group_id: Option<String>,
}

pub fn parse_manifest(source: &str) -> Result<Vec<ImageRecord>> {
    let trimmed = source.trim_start();
    let records = if trimmed.starts_with('[') || trimmed.starts_with('{') {
        parse_json(source)?
    } else {
        parse_delimited(source)?
    };
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.image_id.as_str()) {
            return Err(DatasetError::DuplicateId(r.image_id.clone()));
        }
    }
    Ok(records)
}

fn parse_json(source: &str) -> Result<Vec<ImageRecord>> {
    let rows: Vec<JsonRecord> = serde_json::from_str(source).map_err(|e| DatasetError::MalformedManifest {
        line: e.line(),
        message: e.to_string(),
    })?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 1;
            let label = parse_label(&row.label, line)?;
            let boxes = row
                .boxes
                .iter()
                .map(|b| with_line(BoundingBox::new(b[0], b[1], b[2], b[3]), line))
                .collect::<Result<Vec<_>>>()?;
            build_record(row.image_id, row.path, label, boxes, row.group_id, line)
        })
        .collect()
}

fn parse_delimited(source: &str) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields = split_fields(text, line)?;
        if fields[0].eq_ignore_ascii_case("image_id") {
            continue;
        }
        if fields.len() < 3 || fields.len() > 5 {
            return Err(DatasetError::MalformedManifest {
                line,
                message: format!("expected 3 to 5 columns, found {}", fields.len()),
            });
        }
        let label = parse_label(&fields[2], line)?;
        let boxes = match fields.get(3) {
            Some(f) => parse_boxes(f, line)?,
            None => Vec::new(),
        };
        let group = fields.get(4).filter(|g| !g.is_empty()).cloned();
        records.push(build_record(
            fields[0].clone(),
            PathBuf::from(&fields[1]),
            label,
            boxes,
            group,
            line,
        )?);
    }
    Ok(records)
}

fn build_record(
    image_id: String,
    path: PathBuf,
    label: SeverityClass,
    boxes: Vec<BoundingBox>,
    group_id: Option<String>,
    line: usize,
) -> Result<ImageRecord> {
    if image_id.is_empty() {
        return Err(DatasetError::MalformedManifest { line, message: "empty image_id".into() });
    }
    if path.as_os_str().is_empty() {
        return Err(DatasetError::MalformedManifest { line, message: "empty path".into() });
    }
    Ok(ImageRecord {
        group_id: group_id.unwrap_or_else(|| image_id.clone()),
        image_id,
        path,
        label,
        boxes,
    })
}

fn parse_label(text: &str, line: usize) -> Result<SeverityClass> {
    text.parse().map_err(|label| DatasetError::UnknownLabel { line, label })
}

fn with_line<T>(res: Result<T>, line: usize) -> Result<T> {
    res.map_err(|e| match e {
        DatasetError::InvalidBox { message, .. } => DatasetError::InvalidBox { line: Some(line), message },
        other => other,
    })
}

/// Splits on commas that are not inside brackets.
fn split_fields(text: &str, line: usize) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut depth = 0i32;
    for ch in text.chars() {
        match ch {
            '[' => {
                depth += 1;
                current.push(ch);
            }
            ']' => {
                depth -= 1;
                if depth < 0 {
                    return Err(DatasetError::MalformedManifest { line, message: "unbalanced ']'".into() });
                }
                current.push(ch);
            }
            ',' if depth == 0 => fields.push(std::mem::take(&mut current).trim().to_string()),
            _ => current.push(ch),
        }
    }
    if depth != 0 {
        return Err(DatasetError::MalformedManifest { line, message: "unbalanced '['".into() });
    }
    fields.push(current.trim().to_string());
    Ok(fields)
}

/// Collects every innermost `[a,b,c,d]` group.
fn parse_boxes(field: &str, line: usize) -> Result<Vec<BoundingBox>> {
    let malformed = |message: String| DatasetError::MalformedManifest { line, message };
    let mut boxes = Vec::new();
    let mut current: Option<String> = None;
    for ch in field.chars() {
        match ch {
            '[' => current = Some(String::new()),
            ']' => {
                if let Some(body) = current.take() {
                    if body.trim().is_empty() {
                        continue;
                    }
                    let coords = body
                        .split(',')
                        .map(|t| t.trim().parse::<i64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| malformed(format!("bad box coordinate in [{body}]: {e}")))?;
                    if coords.len() != 4 {
                        return Err(malformed(format!("box [{body}] needs 4 coordinates")));
                    }
                    boxes.push(with_line(BoundingBox::new(coords[0], coords[1], coords[2], coords[3]), line)?);
                }
            }
            c if current.is_some() => current.as_mut().unwrap().push(c),
            c if c.is_whitespace() || c == ',' || c == ';' => {}
            c => return Err(malformed(format!("unexpected {c:?} in boxes column"))),
        }
    }
    Ok(boxes)
}

/// Writes records in the delimited encoding.
///
/// Fails when an identifier or path holds a character the encoding cannot
/// carry (comma, bracket, newline), since the output would not parse back.
pub fn serialize_manifest(records: &[ImageRecord]) -> Result<String> {
    let mut out = String::from("image_id,path,label,boxes,group_id\n");
    for (i, r) in records.iter().enumerate() {
        let path = r.path.to_string_lossy();
        for field in [r.image_id.as_str(), path.as_ref(), r.group_id.as_str()] {
            if field.is_empty()
                || field.trim() != field
                || field.contains([',', '[', ']', '\n', '\r'])
                || field.starts_with('#')
            {
                return Err(DatasetError::MalformedManifest {
                    line: i + 2,
                    message: format!("field {field:?} cannot be written to a delimited manifest"),
                });
            }
        }
        let boxes: Vec<String> = r.boxes.iter().map(|b| b.to_string()).collect();
        out.push_str(&format!("{},{},{},{},{}\n", r.image_id, path, r.label, boxes.join(" "), r.group_id));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub records: usize,
    pub rois: usize,
    pub class_counts: ClassCounts,
    /// Per-class ROI totals (differs from `class_counts` for multi-box images).
    pub roi_counts: ClassCounts,
}

pub fn summarize(records: &[ImageRecord]) -> Result<ManifestSummary> {
    let class_counts = class_counts(records)?;
    let mut roi_counts = ClassCounts::default();
    for r in records {
        roi_counts.add(r.label, r.roi_count());
    }
    Ok(ManifestSummary {
        records: records.len(),
        rois: roi_counts.total(),
        class_counts,
        roi_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row() {
        let recs = parse_manifest("img001, photos/img001.png, green, [10,10,90,90]").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.image_id, "img001");
        assert_eq!(r.path, PathBuf::from("photos/img001.png"));
        assert_eq!(r.label, SeverityClass::Green);
        assert_eq!(r.boxes, vec![BoundingBox::new(10, 10, 90, 90).unwrap()]);
        assert_eq!(r.group_id, "img001");
    }

    #[test]
    fn inverted_box_is_rejected() {
        let err = parse_manifest("img001, a.png, green, [50,50,40,90]").unwrap_err();
        assert!(matches!(err, DatasetError::InvalidBox { line: Some(1), .. }), "{err}");
    }

    #[test]
    fn unknown_label_and_duplicates() {
        assert!(matches!(
            parse_manifest("a, a.png, blue, [0,0,1,1]"),
            Err(DatasetError::UnknownLabel { line: 1, .. })
        ));
        assert!(matches!(
            parse_manifest("a, a.png, red\na, b.png, red"),
            Err(DatasetError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn malformed_syntax() {
        for bad in ["a, a.png", "a, a.png, red, [0,0,1,1", "a, a.png, red, [0,0,x,1]", "a,b,red,[1,1,2,2],g,extra", "a, a.png, red, [0,0,1]"] {
            assert!(matches!(parse_manifest(bad), Err(DatasetError::MalformedManifest { .. })), "{bad}");
        }
    }

    #[test]
    fn multi_box_header_group_and_roi_rows() {
        let src = "# comment\nimage_id,path,label,boxes,group_id\n\
                   p1, a.png, red, [[0,0,10,10],[5,5,20,20]], patient1\n\
                   p2, b.png, yellow, [0,0,4,4] [1,1,3,3]\n\
                   roi3, c.png, green, ,\n\
                   roi4, d.png, green\n";
        let recs = parse_manifest(src).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].boxes.len(), 2);
        assert_eq!(recs[0].group_id, "patient1");
        assert_eq!(recs[1].boxes.len(), 2);
        assert!(recs[2].boxes.is_empty());
        assert_eq!(recs[3].roi_count(), 1);
        let s = summarize(&recs).unwrap();
        assert_eq!(s.rois, 6);
        assert_eq!(s.records, 4);
    }

    #[test]
    fn json_manifest() {
        let src = r#"[{"image_id":"a","path":"a.png","label":"Red","boxes":[[1,2,3,4]]},
                      {"image_id":"b","path":"b.png","label":"green","group_id":"g"}]"#;
        let recs = parse_manifest(src).unwrap();
        assert_eq!(recs[0].label, SeverityClass::Red);
        assert_eq!(recs[1].group_id, "g");
        assert!(matches!(
            parse_manifest(r#"[{"image_id":"a","path":"a.png","label":"red","boxes":[[3,2,1,4]]}]"#),
            Err(DatasetError::InvalidBox { .. })
        ));
    }

    #[test]
    fn roi_level_table1_manifest() {
        let mut src = String::new();
        let mut n = 0;
        for (label, count) in [("green", 193), ("red", 297), ("yellow", 233)] {
            for _ in 0..count {
                src.push_str(&format!("roi{n:04}, rois/roi{n:04}.png, {label}\n"));
                n += 1;
            }
        }
        let recs = parse_manifest(&src).unwrap();
        assert_eq!(recs.len(), 723);
        let s = summarize(&recs).unwrap();
        assert_eq!(s.rois, 723);
        assert_eq!(
            s.class_counts,
            ClassCounts { green: 193, yellow: 233, red: 297 }
        );
    }

    #[test]
    fn serialize_refuses_unrepresentable_fields() {
        let r = ImageRecord::new("a,b", "x.png", SeverityClass::Red);
        assert!(serialize_manifest(&[r]).is_err());
    }

    fn arb_record() -> impl Strategy<Value = ImageRecord> {
        let ident = "[a-zA-Z0-9_][a-zA-Z0-9_./-]{0,11}";
        (
            ident,
            ident,
            prop::sample::select(SeverityClass::ALL.to_vec()),
            prop::collection::vec((0u32..500, 0u32..500, 1u32..300, 1u32..300), 0..4),
            prop::option::of(ident),
        )
            .prop_map(|(id, path, label, boxes, group)| {
                let boxes = boxes
                    .into_iter()
                    .map(|(x, y, w, h)| BoundingBox { x_min: x, y_min: y, x_max: x + w, y_max: y + h })
                    .collect();
                let mut r = ImageRecord::new(id, path, label).with_boxes(boxes);
                if let Some(g) = group {
                    r.group_id = g;
                }
                r
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trip(records in prop::collection::vec(arb_record(), 0..20)) {
            let mut seen = HashSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert(r.image_id.clone())).collect();
            let text = serialize_manifest(&records).unwrap();
            prop_assert_eq!(parse_manifest(&text).unwrap(), records);
        }
    }
}
