use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifact::Counters;
use crate::corpus::{CorpusHandle, Record};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::miner::{PairCandidate, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPair {
    pub x: Record,
    pub y: Record,
    pub cosine: f64,
    pub margin: f64,
    pub cross_score: Option<f64>,
    pub stage: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub counters: BTreeMap<String, Counters>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageSummary>,
}

/// Final mined pairs in crossencoder order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedDataset {
    pub pairs: Vec<MinedPair>,
    pub manifest: Manifest,
}

impl MinedDataset {
    pub fn from_candidates(
        candidates: &[PairCandidate],
        inputs: &CorpusHandle,
        outputs: &CorpusHandle,
        manifest: Manifest,
    ) -> Result<Self> {
        let pairs = candidates
            .iter()
            .map(|c| {
                Ok(MinedPair {
                    x: inputs.get(c.x_id).ok_or(Error::UnknownId(c.x_id))?.clone(),
                    y: outputs.get(c.y_id).ok_or(Error::UnknownId(c.y_id))?.clone(),
                    cosine: c.cosine,
                    margin: c.margin,
                    cross_score: c.cross_score,
                    stage: c.stage,
                })
            })
            .collect::<Result<_>>()?;
        Ok(MinedDataset { pairs, manifest })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    Jsonl,
}

/// One exported example. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportLine {
    pub x_text: String,
    pub y_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<[usize; 2]>,
    pub cosine: f64,
    pub margin: f64,
    pub cross_score: Option<f64>,
    pub mined: bool,
    pub rank: usize,
}

pub fn export_lines(ds: &MinedDataset) -> Vec<ExportLine> {
    ds.pairs
        .iter()
        .enumerate()
        .map(|(i, p)| ExportLine {
            x_text: p.x.text.clone(),
            y_text: p.y.text.clone(),
            answer_span: p.y.answer_span().map(|(b, e)| [b, e]),
            cosine: p.cosine,
            margin: p.margin,
            cross_score: p.cross_score,
            mined: true,
            rank: i + 1,
        })
        .collect()
}

pub fn render_jsonl(lines: &[ExportLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("export line serializes"));
        out.push('\n');
    }
    out
}

pub fn export(ds: &MinedDataset, path: &Path, fmt: ExportFormat) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("refusing to export an empty dataset".into()));
    }
    match fmt {
        ExportFormat::Jsonl => fsutil::write_atomic(path, render_jsonl(&export_lines(ds)).as_bytes()),
    }
}

pub fn parse_export(path: &Path) -> Result<Vec<ExportLine>> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Side;

    fn dataset() -> MinedDataset {
        let xs = CorpusHandle::new(
            Side::Input,
            vec![
                Record::new(0, "who wrote \"it\"?", Side::Input),
                Record::new(1, "second question", Side::Input),
            ],
        )
        .unwrap();
        let mut y = Record::new(5, "Alice wrote it in 1990.", Side::Output);
        y.set_answer_span(0, 5);
        let ys = CorpusHandle::new(Side::Output, vec![y, Record::new(6, "plain sentence", Side::Output)]).unwrap();
        let c = |x, y, cos: f64, m: f64, s: f64| PairCandidate {
            x_id: x,
            y_id: y,
            cosine: cos,
            margin: m,
            cross_score: Some(s),
            stage: Stage::Crossencoder,
        };
        let cands = [c(0, 5, 0.1 + 0.2, 1.0 / 3.0, 2.5), c(1, 6, 0.5, 1.25, -0.75), c(1, 5, 0.25, 1.1, -1e-300)];
        MinedDataset::from_candidates(&cands, &xs, &ys, Manifest::default()).unwrap()
    }

    #[test]
    fn three_pairs_three_ranked_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        export(&dataset(), &p, ExportFormat::Jsonl).unwrap();
        let lines = parse_export(&p).unwrap();
        assert_eq!(lines.iter().map(|l| l.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(lines.iter().all(|l| l.mined));
        assert_eq!(lines[0].answer_span, Some([0, 5]));
        assert_eq!(lines[1].answer_span, None);
    }

    #[test]
    fn field_order_is_stable() {
        let text = render_jsonl(&export_lines(&dataset()));
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"x_text":"who wrote \"it\"?","y_text":"Alice wrote it in 1990.","answer_span":[0,5],"cosine":0.30000000000000004,"margin":0.3333333333333333,"cross_score":2.5,"mined":true,"rank":1}"#
        );
    }

    #[test]
    fn export_parse_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        export(&dataset(), &p, ExportFormat::Jsonl).unwrap();
        let first = std::fs::read(&p).unwrap();
        let again = render_jsonl(&parse_export(&p).unwrap());
        assert_eq!(first, again.as_bytes());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = export(&MinedDataset::default(), &dir.path().join("e.jsonl"), ExportFormat::Jsonl);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let r = export(&dataset(), &blocker.join("out.jsonl"), ExportFormat::Jsonl);
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
