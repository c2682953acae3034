use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde_json::{Map, Value};

use super::{Dataset, Event, Sequence};
use crate::{Error, Result};

/// On-disk event formats.
///
/// CSV has a required header `seq_id,time,mark` with optional `x,y`,
/// `region` and `imputed` columns. JSONL holds one object per event with
/// keys `seq_id`, `time`, `mark` and optional `loc: [x, y]`, `region`,
/// `imputed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension (`.jsonl`/`.json` vs anything else).
    pub fn from_path(path: &std::path::Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

struct Row {
    line: usize,
    seq_id: String,
    time: f64,
    mark: String,
    location: Option<[f64; 2]>,
    region: Option<String>,
    imputed: bool,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn read_csv<R: Read>(source: R) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let mut col: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        match h {
            "seq_id" | "time" | "mark" | "x" | "y" | "region" | "imputed" => {
                if col.insert(h, i).is_some() {
                    return Err(parse_err(1, format!("duplicate column `{h}`")));
                }
            }
            other => return Err(parse_err(1, format!("unknown column `{other}`"))),
        }
    }
    for required in ["seq_id", "time", "mark"] {
        if !col.contains_key(required) {
            return Err(parse_err(1, format!("missing required column `{required}`")));
        }
    }
    if col.contains_key("x") != col.contains_key("y") {
        return Err(parse_err(1, "columns `x` and `y` must appear together"));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |name: &str| col.get(name).and_then(|&i| record.get(i)).unwrap_or("");
        let seq_id = field("seq_id").to_string();
        if seq_id.is_empty() {
            return Err(parse_err(line, "empty seq_id"));
        }
        let time: f64 = field("time").parse().map_err(|_| parse_err(line, format!("bad time `{}`", field("time"))))?;
        let mark = field("mark").to_string();
        if mark.is_empty() {
            return Err(parse_err(line, "empty mark"));
        }
        let location = if col.contains_key("x") {
            let (xs, ys) = (field("x"), field("y"));
            match (xs.is_empty(), ys.is_empty()) {
                (true, true) => None,
                (false, false) => {
                    let x = xs.parse().map_err(|_| parse_err(line, format!("bad x `{xs}`")))?;
                    let y = ys.parse().map_err(|_| parse_err(line, format!("bad y `{ys}`")))?;
                    Some([x, y])
                }
                _ => return Err(parse_err(line, "x and y must both be present or both empty")),
            }
        } else {
            None
        };
        let region = Some(field("region").to_string()).filter(|r| !r.is_empty());
        let imputed = match field("imputed") {
            "" | "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(parse_err(line, format!("bad imputed flag `{other}`"))),
        };
        rows.push(Row { line, seq_id, time, mark, location, region, imputed });
    }
    Ok(rows)
}

fn read_jsonl<R: Read>(source: R) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let lineno = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&text).map_err(|e| parse_err(lineno, e.to_string()))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "seq_id" | "time" | "mark" | "loc" | "region" | "imputed") {
                return Err(parse_err(lineno, format!("unknown key `{key}`")));
            }
        }
        let as_label = |key: &str| -> Result<String> {
            match obj.get(key) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                _ => Err(parse_err(lineno, format!("missing or invalid `{key}`"))),
            }
        };
        let seq_id = as_label("seq_id")?;
        let mark = as_label("mark")?;
        let time = obj
            .get("time")
            .and_then(Value::as_f64)
            .ok_or_else(|| parse_err(lineno, "missing or invalid `time`"))?;
        let location = match obj.get("loc") {
            None | Some(Value::Null) => None,
            Some(Value::Array(a)) if a.len() == 2 => match (a[0].as_f64(), a[1].as_f64()) {
                (Some(x), Some(y)) => Some([x, y]),
                _ => return Err(parse_err(lineno, "`loc` must hold two numbers")),
            },
            Some(_) => return Err(parse_err(lineno, "`loc` must be [x, y]")),
        };
        let region = match obj.get("region") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(parse_err(lineno, "`region` must be a string")),
        };
        let imputed = match obj.get("imputed") {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(Value::Number(n)) if n.as_u64() == Some(0) => false,
            Some(Value::Number(n)) if n.as_u64() == Some(1) => true,
            Some(_) => return Err(parse_err(lineno, "`imputed` must be 0/1 or a boolean")),
        };
        rows.push(Row { line: lineno, seq_id, time, mark, location, region, imputed });
    }
    Ok(rows)
}

/// Reads events, groups them by `seq_id` (in order of first appearance),
/// sorts each sequence by time and builds the vocabulary from distinct mark
/// strings in order of first appearance.
pub fn parse_dataset<R: Read>(source: R, format: Format) -> Result<Dataset> {
    let rows = match format {
        Format::Csv => read_csv(source)?,
        Format::Jsonl => read_jsonl(source)?,
    };
    let mut vocab: Vec<String> = Vec::new();
    let mut vocab_index: HashMap<String, usize> = HashMap::new();
    let mut seq_index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Option<String>, Vec<(usize, Event)>)> = Vec::new();
    let mut has_locations: Option<bool> = None;

    for row in rows {
        if !(row.time.is_finite() && row.time >= 0.0) {
            return Err(parse_err(row.line, format!("time {} must be finite and non-negative", row.time)));
        }
        let spatial = row.location.is_some();
        match has_locations {
            None => has_locations = Some(spatial),
            Some(h) if h != spatial => {
                return Err(parse_err(row.line, "locations must be present on all events or none"))
            }
            _ => {}
        }
        let mark = *vocab_index.entry(row.mark.clone()).or_insert_with(|| {
            vocab.push(row.mark.clone());
            vocab.len() - 1
        });
        let gi = *seq_index.entry(row.seq_id.clone()).or_insert_with(|| {
            groups.push((row.seq_id.clone(), None, Vec::new()));
            groups.len() - 1
        });
        let group = &mut groups[gi];
        if let Some(r) = row.region {
            match &group.1 {
                Some(existing) if *existing != r => {
                    return Err(parse_err(row.line, format!("sequence `{}` has conflicting regions", row.seq_id)))
                }
                _ => group.1 = Some(r),
            }
        }
        let event = Event { mark, time: row.time, location: row.location, imputed: row.imputed };
        group.2.push((row.line, event));
    }

    let mut sequences = Vec::with_capacity(groups.len());
    for (id, region, mut events) in groups {
        events.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
        for w in events.windows(2) {
            if w[0].1.time == w[1].1.time {
                let index = events.iter().position(|e| e.0 == w[1].0).unwrap_or(0);
                return Err(Error::MalformedSequence {
                    seq: id,
                    index,
                    reason: format!("duplicate timestamp {} (line {})", w[1].1.time, w[1].0),
                });
            }
        }
        sequences.push(Sequence { id, events: events.into_iter().map(|(_, e)| e).collect(), region });
    }
    Ok(Dataset { sequences, vocab, has_locations: has_locations.unwrap_or(false) })
}

fn any_imputed(ds: &Dataset) -> bool {
    ds.sequences.iter().any(|s| s.events.iter().any(|e| e.imputed))
}

/// Writes a dataset in the given format. The `imputed` column/key is only
/// emitted when some event is flagged; `region` only when some sequence has one.
pub fn write_dataset<W: Write>(ds: &Dataset, format: Format, mut out: W) -> Result<()> {
    let imputed = any_imputed(ds);
    let regions = ds.sequences.iter().any(|s| s.region.is_some());
    match format {
        Format::Csv => {
            let mut header = vec!["seq_id", "time", "mark"];
            if ds.has_locations {
                header.extend(["x", "y"]);
            }
            if regions {
                header.push("region");
            }
            if imputed {
                header.push("imputed");
            }
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
            for s in &ds.sequences {
                for e in &s.events {
                    let mut rec = vec![s.id.clone(), format!("{}", e.time), ds.vocab[e.mark].clone()];
                    if ds.has_locations {
                        let [x, y] = e.location.unwrap_or([0.0, 0.0]);
                        rec.push(format!("{x}"));
                        rec.push(format!("{y}"));
                    }
                    if regions {
                        rec.push(s.region.clone().unwrap_or_default());
                    }
                    if imputed {
                        rec.push(if e.imputed { "1".into() } else { "0".into() });
                    }
                    w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
                }
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for s in &ds.sequences {
                for e in &s.events {
                    let mut obj = Map::new();
                    obj.insert("seq_id".into(), Value::String(s.id.clone()));
                    obj.insert("time".into(), serde_json::json!(e.time));
                    obj.insert("mark".into(), Value::String(ds.vocab[e.mark].clone()));
                    if let Some([x, y]) = e.location {
                        obj.insert("loc".into(), serde_json::json!([x, y]));
                    }
                    if let Some(r) = &s.region {
                        obj.insert("region".into(), Value::String(r.clone()));
                    }
                    if imputed {
                        obj.insert("imputed".into(), serde_json::json!(u8::from(e.imputed)));
                    }
                    writeln!(out, "{}", Value::Object(obj))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rows_one_sequence() {
        let csv = "seq_id,time,mark\na,1.0,click\na,2.5,buy\n";
        let ds = parse_dataset(csv.as_bytes(), Format::Csv).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sequences[0].len(), 2);
        assert_eq!(ds.vocab, vec!["click", "buy"]);
        assert!(!ds.has_locations);
    }

    #[test]
    fn empty_stream_is_empty_dataset() {
        assert!(parse_dataset("".as_bytes(), Format::Csv).unwrap().is_empty());
        assert!(parse_dataset("".as_bytes(), Format::Jsonl).unwrap().is_empty());
        assert!(parse_dataset("seq_id,time,mark\n".as_bytes(), Format::Csv).unwrap().is_empty());
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let sorted = "seq_id,time,mark\na,1,x\na,2,y\na,3,x\n";
        let shuffled = "seq_id,time,mark\na,1,x\na,3,x\na,2,y\n";
        let a = parse_dataset(sorted.as_bytes(), Format::Csv).unwrap();
        let b = parse_dataset(shuffled.as_bytes(), Format::Csv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_timestamp_is_malformed() {
        let csv = "seq_id,time,mark\na,1,x\na,1,y\n";
        assert!(matches!(
            parse_dataset(csv.as_bytes(), Format::Csv),
            Err(Error::MalformedSequence { .. })
        ));
    }

    #[test]
    fn unparsable_row_reports_line_number() {
        let csv = "seq_id,time,mark\na,1,x\na,oops,y\n";
        match parse_dataset(csv.as_bytes(), Format::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let jsonl = "{\"seq_id\":\"a\",\"time\":1,\"mark\":\"x\"}\n{\"seq_id\":\"a\",\"time\":\"x\"}\n";
        match parse_dataset(jsonl.as_bytes(), Format::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn locations_and_flags_parse() {
        let csv = "seq_id,time,mark,x,y,imputed\na,1,x,0,0,0\na,2,x,3,4,1\n";
        let ds = parse_dataset(csv.as_bytes(), Format::Csv).unwrap();
        assert!(ds.has_locations);
        assert!(ds.sequences[0].events[1].imputed);
        assert_eq!(ds.sequences[0].events[1].location, Some([3.0, 4.0]));
        let jsonl = "{\"seq_id\":\"a\",\"time\":1,\"mark\":\"x\",\"loc\":[0,0]}\n{\"seq_id\":\"a\",\"time\":2,\"mark\":\"x\",\"loc\":[3,4],\"imputed\":1}\n";
        let dj = parse_dataset(jsonl.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(ds, dj);
    }

    #[test]
    fn unknown_columns_rejected() {
        let csv = "seq_id,time,mark,colour\na,1,x,red\n";
        assert!(parse_dataset(csv.as_bytes(), Format::Csv).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let seq = (prop::collection::vec((0usize..4, 1e-3f64..10.0), 1..8), any::<bool>());
        (prop::collection::vec(seq, 0..5), any::<bool>()).prop_map(|(seqs, spatial)| {
            let sequences: Vec<Sequence> = seqs
                .into_iter()
                .enumerate()
                .map(|(i, (evs, _))| {
                    let mut t = 0.0;
                    let events = evs
                        .into_iter()
                        .map(|(m, g)| {
                            t += g;
                            let loc = spatial.then_some([t * 0.5, -t]);
                            Event { mark: m, time: t, location: loc, imputed: m == 3 }
                        })
                        .collect();
                    Sequence { id: format!("s{i}"), events, region: None }
                })
                .collect();
            let ds = Dataset { sequences, vocab: Dataset::numbered_vocab(4), has_locations: spatial };
            // normalize through a parse so vocabulary order is first-appearance
            let mut buf = Vec::new();
            write_dataset(&ds, Format::Csv, &mut buf).unwrap();
            parse_dataset(buf.as_slice(), Format::Csv).unwrap()
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_round_trips(ds in arb_dataset(), jsonl in any::<bool>()) {
            let fmt = if jsonl { Format::Jsonl } else { Format::Csv };
            let mut buf = Vec::new();
            write_dataset(&ds, fmt, &mut buf).unwrap();
            let back = parse_dataset(buf.as_slice(), fmt).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
