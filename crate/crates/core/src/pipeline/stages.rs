//! Stage bodies. Each reads its upstream outputs from disk, writes its own
//! outputs atomically and reports counters.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifact::{Counters, PipelineStage, Workdir};
use super::config::PipelineConfig;
use super::evaluate::evaluate;
use super::export::{export, ExportFormat, Manifest, MinedDataset, StageSummary};
use crate::corpus::{
    decompose, filter_min_sentences, ingest_jsonl, load_seeds, normalize_for_match, normalize_stored,
    shard_by_date, verbatim_overlap, CorpusHandle, Record, SeedExample, Side, SpanSpotter, Task, UNKEYED_SHARD,
};
use crate::crossfilter::{
    apply_external_scores, interaction_features, read_external_scores, rerank, sample_binary_negatives, train_binary,
    train_pairwise, CrossMode, CrossModel, InteractionFeatures, PairResolver, RankTriple,
};
use crate::encoder::{
    embed, featurize, load_checkpoint, load_meta, prefilter_side, save_checkpoint, save_meta, train, BiencoderModel,
    CheckpointMeta, PrefilterModel, TrainData, UnitVector, BIENCODER_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::evalharness::{abstractiveness_report, GoldPairs, RougeInput};
use crate::fsutil;
use crate::knn::{build, Index, IndexKind, VectorStore};
use crate::miner::{mine, read_candidates, write_candidates, MarginConfig, MineStats, PairCandidate};

pub const INGEST_INPUTS: &str = "ingest/inputs.jsonl";
pub const INGEST_OUTPUTS: &str = "ingest/outputs.jsonl";
pub const INGEST_SEEDS: &str = "ingest/seeds.jsonl";
pub const BIENCODER_MODEL: &str = "train_biencoder/model.pmbi";
pub const BIENCODER_META: &str = "train_biencoder/model.json";
pub const EMBED_INPUTS: &str = "embed/inputs.pmv";
pub const EMBED_OUTPUTS: &str = "embed/outputs.pmv";
pub const INDEX_SHARDS: &str = "index/shards.json";
pub const MINE_CANDIDATES: &str = "mine/candidates.jsonl";
pub const CROSS_MODEL: &str = "train_cross/model.pmcx";
pub const CROSS_LOSS: &str = "train_cross/loss.json";
pub const FILTER_RANKED: &str = "filter/ranked.jsonl";
pub const EXPORT_MINED: &str = "export/mined.jsonl";
pub const EXPORT_MANIFEST: &str = "export/manifest.json";
pub const EVAL_METRICS: &str = "evaluate/metrics.json";
pub const EVAL_ROUGE: &str = "evaluate/abstractiveness.json";

/// What a stage body hands back to the orchestrator.
#[derive(Debug, Default)]
pub(crate) struct StageResult {
    pub outputs: Vec<String>,
    pub sources: Vec<std::path::PathBuf>,
    pub counters: BTreeMap<String, Counters>,
    pub details: BTreeMap<String, u64>,
}

impl StageResult {
    fn counter(&mut self, name: &str, c: Counters) {
        self.counters.insert(name.to_owned(), c);
    }

    fn detail(&mut self, name: &str, v: usize) {
        self.details.insert(name.to_owned(), v as u64);
    }
}

pub(crate) struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub work: &'a Workdir,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    fsutil::write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fsutil::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn pipeline_seed(cfg: &PipelineConfig, salt: u64) -> u64 {
    cfg.rng_seed ^ salt
}

pub(crate) struct Ingested {
    pub inputs: CorpusHandle,
    pub outputs: CorpusHandle,
    pub seeds: Vec<SeedExample>,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> std::path::PathBuf {
        self.work.path(rel)
    }

    pub(crate) fn ingested(&self) -> Result<Ingested> {
        Ok(Ingested {
            inputs: ingest_jsonl(&self.path(INGEST_INPUTS), Side::Input, 0)?,
            outputs: ingest_jsonl(&self.path(INGEST_OUTPUTS), Side::Output, 0)?,
            seeds: load_seeds(&self.path(INGEST_SEEDS), self.cfg.task)?,
        })
    }

    fn biencoder(&self) -> Result<(BiencoderModel, PrefilterModel)> {
        let meta = load_meta(&self.path(BIENCODER_META))?;
        load_checkpoint(&self.path(BIENCODER_MODEL), meta.rng_seed)
    }

    fn stores(&self) -> Result<(VectorStore, VectorStore)> {
        Ok((
            VectorStore::load(&self.path(EMBED_INPUTS))?,
            VectorStore::load(&self.path(EMBED_OUTPUTS))?,
        ))
    }

    pub(crate) fn run(&self, stage: PipelineStage) -> Result<StageResult> {
        match stage {
            PipelineStage::Ingest => self.ingest(),
            PipelineStage::TrainBiencoder => self.train_biencoder(),
            PipelineStage::Embed => self.embed(),
            PipelineStage::Index => self.index(),
            PipelineStage::Mine => self.mine(),
            PipelineStage::TrainCross => self.train_cross(),
            PipelineStage::Filter => self.filter(),
            PipelineStage::Export => self.export(),
            PipelineStage::Evaluate => self.evaluate(),
        }
    }

    fn ingest(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let mut res = StageResult::default();
        let raw_inputs = ingest_jsonl(&cfg.inputs, Side::Input, 0)?;
        let read = raw_inputs.len() + raw_inputs.skipped;
        let (inputs, short) = if cfg.task == Task::Summarization && cfg.min_input_sentences > 0 {
            filter_min_sentences(&raw_inputs, cfg.min_input_sentences)
        } else {
            (raw_inputs.clone(), 0)
        };
        res.counter("inputs", Counters::new(read, inputs.len(), raw_inputs.skipped + short, 0));
        res.detail("inputs_too_short", short);

        let spotter = SpanSpotter::default();
        let outputs = if cfg.decompose_outputs {
            let sources = ingest_jsonl(&cfg.outputs, Side::Input, 0)?;
            let outputs = decompose(&sources, cfg.task, &spotter, 0)?;
            let productive: HashSet<&str> = outputs
                .iter()
                .filter_map(|r| r.meta.get(crate::corpus::META_SOURCE_DOC).map(String::as_str))
                .collect();
            let barren = sources.len() - productive.len();
            res.counter(
                "output_sources",
                Counters::new(sources.len() + sources.skipped, productive.len(), sources.skipped + barren, 0),
            );
            outputs
        } else {
            let outputs = ingest_jsonl(&cfg.outputs, Side::Output, 0)?;
            if cfg.task == Task::ReadingComprehension {
                if let Some(r) = outputs.iter().find(|r| r.answer().is_none()) {
                    return Err(Error::InvalidInput(format!(
                        "output {} has no answer; pre-split reading-comprehension outputs need one",
                        r.id
                    )));
                }
            }
            res.counter(
                "output_sources",
                Counters::new(outputs.len() + outputs.skipped, outputs.len(), outputs.skipped, 0),
            );
            outputs
        };
        res.detail("outputs", outputs.len());

        let seeds = load_seeds(&cfg.seeds, cfg.task)?;
        res.counter("seeds", Counters::passthrough(seeds.len()));
        if inputs.is_empty() || outputs.is_empty() {
            return Err(Error::InvalidInput("ingest left an empty input or output corpus".into()));
        }

        inputs.write_jsonl(&self.path(INGEST_INPUTS))?;
        outputs.write_jsonl(&self.path(INGEST_OUTPUTS))?;
        let mut seed_lines = String::new();
        for s in &seeds {
            let line = serde_json::json!({ "x": s.x.text, "y": s.y.text, "x_meta": s.x.meta, "y_meta": s.y.meta });
            seed_lines.push_str(&line.to_string());
            seed_lines.push('\n');
        }
        fsutil::write_atomic(&self.path(INGEST_SEEDS), seed_lines.as_bytes())?;
        res.outputs = vec![INGEST_INPUTS.into(), INGEST_OUTPUTS.into(), INGEST_SEEDS.into()];
        res.sources = vec![cfg.inputs.clone(), cfg.outputs.clone(), cfg.seeds.clone()];
        Ok(res)
    }

    fn train_biencoder(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let pool = match prefilter_side(cfg.task) {
            Side::Input => &data.inputs,
            Side::Output => &data.outputs,
        };
        let spotter = SpanSpotter::default();
        let train_cfg = cfg.biencoder.train_config(cfg.rng_seed);
        let trained = train(
            TrainData {
                seeds: &data.seeds,
                output_corpus: &data.outputs,
                prefilter_pool: pool,
                spotter: &spotter,
            },
            cfg.biencoder.shape(),
            &train_cfg,
        )?;
        if let (Some(first), Some(last)) = (trained.loss_trace.first(), trained.loss_trace.last()) {
            log::info!("biencoder loss {:.4} -> {:.4}", first.total, last.total);
        }
        save_checkpoint(&self.path(BIENCODER_MODEL), &trained.model, &trained.prefilter)?;
        save_meta(
            &self.path(BIENCODER_META),
            &CheckpointMeta {
                format_version: BIENCODER_FORMAT_VERSION,
                num_buckets: trained.model.num_buckets,
                dim: trained.model.dim,
                rng_seed: trained.model.rng_seed,
                train_config: train_cfg,
                loss_trace: trained.loss_trace,
            },
        )?;
        let mut res = StageResult::default();
        res.counter("seeds", Counters::passthrough(data.seeds.len()));
        res.detail("synthetic_warnings", trained.synthetic_warnings);
        res.outputs = vec![BIENCODER_MODEL.into(), BIENCODER_META.into()];
        Ok(res)
    }

    fn embed(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let (model, pre) = self.biencoder()?;
        let screened = prefilter_side(cfg.task);
        let mut res = StageResult::default();
        for (corpus, rel, name) in [
            (&data.inputs, EMBED_INPUTS, "inputs"),
            (&data.outputs, EMBED_OUTPUTS, "outputs"),
        ] {
            let (store, counters) = embed_corpus(&model, &pre, corpus, (corpus.side() == screened).then_some(cfg.retention))?;
            if store.is_empty() {
                return Err(Error::InvalidInput(format!("no {name} survived embedding")));
            }
            store.save(&self.path(rel))?;
            res.counter(name, counters);
        }
        res.outputs = vec![EMBED_INPUTS.into(), EMBED_OUTPUTS.into()];
        Ok(res)
    }

    fn index(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let (xs, ys) = self.stores()?;
        let x_present: HashSet<u64> = xs.ids().iter().copied().collect();
        let y_present: HashSet<u64> = ys.ids().iter().copied().collect();
        let mut groups: BTreeMap<String, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
        match cfg.effective_shard_key() {
            Some(key) => {
                for s in shard_by_date(&data.inputs, key, cfg.date_granularity) {
                    let ids = s.record_ids.into_iter().filter(|i| x_present.contains(i));
                    groups.entry(s.key_value).or_default().0.extend(ids);
                }
                for s in shard_by_date(&data.outputs, key, cfg.date_granularity) {
                    let ids = s.record_ids.into_iter().filter(|i| y_present.contains(i));
                    groups.entry(s.key_value).or_default().1.extend(ids);
                }
            }
            None => {
                groups.insert(UNKEYED_SHARD.to_owned(), (xs.ids().to_vec(), ys.ids().to_vec()));
            }
        }

        let mut shards = Vec::new();
        let mut res = StageResult::default();
        res.outputs.push(INDEX_SHARDS.into());
        let (mut x_idx, mut y_idx) = (0, 0);
        for (i, (key_value, (x_ids, y_ids))) in groups.into_iter().enumerate() {
            let indexed = !x_ids.is_empty() && !y_ids.is_empty();
            let mut entry = ShardEntry {
                key_value,
                x_ids,
                y_ids,
                x_index: None,
                y_index: None,
            };
            if indexed {
                let xr = format!("index/shard-{i:04}-x.pmix");
                let yr = format!("index/shard-{i:04}-y.pmix");
                build_index(cfg, &xs.subset(&entry.x_ids))?.save(&self.path(&xr))?;
                build_index(cfg, &ys.subset(&entry.y_ids))?.save(&self.path(&yr))?;
                x_idx += entry.x_ids.len();
                y_idx += entry.y_ids.len();
                res.outputs.push(xr.clone());
                res.outputs.push(yr.clone());
                entry.x_index = Some(xr);
                entry.y_index = Some(yr);
            }
            shards.push(entry);
        }
        let indexed = shards.iter().filter(|s| s.x_index.is_some()).count();
        res.counter("shards", Counters::new(shards.len(), indexed, shards.len() - indexed, 0));
        res.counter("inputs", Counters::new(xs.len(), x_idx, xs.len() - x_idx, 0));
        res.counter("outputs", Counters::new(ys.len(), y_idx, ys.len() - y_idx, 0));
        write_json(&self.path(INDEX_SHARDS), &shards)?;
        Ok(res)
    }

    fn mine(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let (xs, ys) = self.stores()?;
        let shards: Vec<ShardEntry> = read_json(&self.path(INDEX_SHARDS))?;
        let per_shard = MarginConfig {
            max_candidates: None,
            ..cfg.margin.clone()
        };
        let drop = |x: u64, y: u64| overlap_rejects(cfg.task, data.inputs.get(x), data.outputs.get(y));
        let mut all = Vec::new();
        let mut stats = MineStats::default();
        for s in &shards {
            let (Some(xr), Some(yr)) = (&s.x_index, &s.y_index) else {
                continue;
            };
            let x_store = xs.subset(&s.x_ids);
            let x_index = Index::load(&self.path(xr), x_store.clone())?;
            let y_index = Index::load(&self.path(yr), ys.subset(&s.y_ids))?;
            let out = mine(&x_store, &x_index, &y_index, &per_shard, drop)?;
            stats.merge(&out.stats);
            all.extend(out.candidates);
        }
        all.sort_by(crate::miner::margin_order);
        if let Some(cap) = cfg.margin.max_candidates {
            let cut = all.len().saturating_sub(cap);
            all.truncate(cap);
            stats.cap_truncated += cut;
            stats.emitted -= cut;
        }
        debug_assert!(stats.is_conserved());
        write_candidates(&self.path(MINE_CANDIDATES), &all)?;
        let mut res = StageResult::default();
        res.counter(
            "pairs",
            Counters::new(
                stats.forward_candidates,
                stats.emitted,
                stats.overlap_filtered + stats.non_positive + stats.fanout_truncated + stats.cap_truncated,
                stats.degenerate,
            ),
        );
        res.detail("inputs", stats.inputs);
        res.detail("overlap_filtered", stats.overlap_filtered);
        res.detail("non_positive", stats.non_positive);
        res.detail("fanout_truncated", stats.fanout_truncated);
        res.detail("cap_truncated", stats.cap_truncated);
        res.outputs = vec![MINE_CANDIDATES.into()];
        Ok(res)
    }

    fn train_cross(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let (model, _) = self.biencoder()?;
        let (_, ys) = self.stores()?;
        let y_index = build_index(cfg, &ys)?;
        let mut res = StageResult::default();

        // Seed vectors, skipping seeds either side of which cannot be embedded.
        let mut seeds = Vec::new();
        let mut x_rows = Vec::new();
        let mut y_rows = Vec::new();
        for s in &data.seeds {
            let xv = embed(&model, &featurize(&s.x.encoding_text(), model.num_buckets));
            let yv = embed(&model, &featurize(&s.y.encoding_text(), model.num_buckets));
            match (xv, yv) {
                (Ok(xv), Ok(yv)) => {
                    seeds.push(s);
                    x_rows.push(xv.to_f32());
                    y_rows.push(yv.to_f32());
                }
                (Err(e), _) | (_, Err(e)) if e.is_numeric() => {}
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        let degenerate = data.seeds.len() - seeds.len();
        if seeds.is_empty() {
            return Err(Error::InvalidInput("no seed pair could be embedded".into()));
        }
        let gold_keys: Vec<String> = seeds.iter().map(|s| normalize_for_match(&s.y.encoding_text())).collect();
        let is_gold = |seed: usize, y: &Record| normalize_for_match(&y.encoding_text()) == gold_keys[seed];
        let positive = |i: usize| interaction_features(&seeds[i].x, &seeds[i].y, &x_rows[i], &y_rows[i]);
        let y_record = |id: u64| data.outputs.get(id).ok_or(Error::UnknownId(id));
        let y_vector = |id: u64| ys.vector(id).ok_or(Error::UnknownId(id));
        let train_cfg = cfg.cross.train_config(cfg.rng_seed);

        let (trained, used) = match cfg.cross.mode_for(cfg.task) {
            CrossMode::Pairwise => {
                let want = cfg.cross.hard_negatives;
                let mut pairs: Vec<(InteractionFeatures, InteractionFeatures)> = Vec::new();
                let mut used = 0;
                for i in 0..seeds.len() {
                    let nb = y_index.search_vector(i as u64, &x_rows[i], 2 * want + 1, cfg.margin.nprobe)?;
                    let mut triples = Vec::new();
                    for &y_id in &nb.neighbor_ids {
                        let y = y_record(y_id)?;
                        if triples.len() == want || is_gold(i, y) {
                            continue;
                        }
                        triples.push(RankTriple::new(seeds[i].x.clone(), seeds[i].y.clone(), y.clone())?);
                    }
                    if triples.is_empty() {
                        log::warn!("seed {} has no retrievable negative; skipped", seeds[i].x.id);
                        continue;
                    }
                    used += 1;
                    let pos = positive(i);
                    for t in triples {
                        let neg = interaction_features(&t.x, &t.y_neg, &x_rows[i], y_vector(t.y_neg.id)?);
                        pairs.push((pos, neg));
                    }
                }
                res.detail("triples", pairs.len());
                (train_pairwise(&pairs, cfg.cross.hidden, &train_cfg)?, used)
            }
            CrossMode::Binary => {
                let ids: Vec<u64> = (0..seeds.len() as u64).collect();
                let seed_store = VectorStore::from_rows(ids, &x_rows)?;
                let seed_index = build(&seed_store, IndexKind::Exact, 0, 0)?;
                let margin = MarginConfig {
                    max_candidates: None,
                    ..cfg.margin.clone()
                };
                let cands = mine(&seed_store, &seed_index, &y_index, &margin, |_, _| false)?.candidates;
                let mut rng = ChaCha8Rng::seed_from_u64(pipeline_seed(cfg, 0x6e65_6761_7469_7665));
                let exclude = |c: &PairCandidate| data.outputs.get(c.y_id).map_or(true, |y| is_gold(c.x_id as usize, y));
                let negs = sample_binary_negatives(&cands, exclude, seeds.len(), cfg.cross.sampling(), &mut rng);
                let positives: Vec<InteractionFeatures> = (0..seeds.len()).map(positive).collect();
                let negatives = negs
                    .iter()
                    .map(|c| {
                        let i = c.x_id as usize;
                        Ok(interaction_features(&seeds[i].x, y_record(c.y_id)?, &x_rows[i], y_vector(c.y_id)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                res.detail("negatives", negatives.len());
                (train_binary(&positives, &negatives, cfg.cross.hidden, &train_cfg)?, seeds.len())
            }
        };
        trained.model.save(&self.path(CROSS_MODEL))?;
        write_json(&self.path(CROSS_LOSS), &trained.loss_trace)?;
        res.counter("seeds", Counters::new(data.seeds.len(), used, seeds.len() - used, degenerate));
        res.outputs = vec![CROSS_MODEL.into(), CROSS_LOSS.into()];
        Ok(res)
    }

    fn filter(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let data = self.ingested()?;
        let (xs, ys) = self.stores()?;
        let cands = read_candidates(&self.path(MINE_CANDIDATES))?;
        let mut res = StageResult::default();
        let ranked = match &cfg.external_scores {
            Some(path) => {
                res.sources.push(path.clone());
                apply_external_scores(&cands, &read_external_scores(path)?, cfg.final_top_n)?
            }
            None => {
                let model = CrossModel::load(&self.path(CROSS_MODEL), cfg.rng_seed)?;
                let resolver = PairResolver {
                    inputs: &data.inputs,
                    outputs: &data.outputs,
                    x_vectors: &xs,
                    y_vectors: &ys,
                };
                rerank(&model, &cands, &resolver, cfg.final_top_n)?
            }
        };
        write_candidates(&self.path(FILTER_RANKED), &ranked)?;
        res.counter("pairs", Counters::new(cands.len(), ranked.len(), cands.len() - ranked.len(), 0));
        res.outputs = vec![FILTER_RANKED.into()];
        Ok(res)
    }

    fn export(&self) -> Result<StageResult> {
        let data = self.ingested()?;
        let ranked = read_candidates(&self.path(FILTER_RANKED))?;
        let mut manifest = Manifest {
            config_hash: PipelineStage::Export.config_hash(self.cfg),
            stages: BTreeMap::new(),
        };
        for stage in PipelineStage::ALL.into_iter().filter(|s| *s < PipelineStage::Export) {
            let art = self.work.load_artifact(stage)?;
            manifest.stages.insert(
                stage.name().to_owned(),
                StageSummary {
                    counters: art.counters,
                    details: art.details,
                },
            );
        }
        let ds = MinedDataset::from_candidates(&ranked, &data.inputs, &data.outputs, manifest)?;
        export(&ds, &self.path(EXPORT_MINED), ExportFormat::Jsonl)?;
        write_json(&self.path(EXPORT_MANIFEST), &ds.manifest)?;
        let mut res = StageResult::default();
        res.counter("pairs", Counters::passthrough(ds.len()));
        res.outputs = vec![EXPORT_MINED.into(), EXPORT_MANIFEST.into()];
        Ok(res)
    }

    fn evaluate(&self) -> Result<StageResult> {
        let cfg = self.cfg;
        let gold_path = cfg
            .gold
            .as_ref()
            .ok_or_else(|| Error::Config("evaluate needs `gold` in the config".into()))?;
        let data = self.ingested()?;
        let (gold, lines) = load_gold(gold_path, &data.inputs, &data.outputs)?;
        let mined = read_candidates(&self.path(MINE_CANDIDATES))?;
        let ranked = read_candidates(&self.path(FILTER_RANKED))?;
        let bi = evaluate(&mined, &gold, &cfg.eval_ks, &cfg.eval_precision_at)?;
        let cross = evaluate(&ranked, &gold, &cfg.eval_ks, &cfg.eval_precision_at)?;
        write_json(
            &self.path(EVAL_METRICS),
            &serde_json::json!({ "biencoder": bi, "crossencoder": cross }),
        )?;

        let top_bi = &mined[..cfg.final_top_n.min(mined.len())];
        let rouge_pairs = top_bi
            .iter()
            .chain(&ranked)
            .map(|c| {
                Ok(RougeInput {
                    x_text: &data.inputs.get(c.x_id).ok_or(Error::UnknownId(c.x_id))?.text,
                    y_text: &data.outputs.get(c.y_id).ok_or(Error::UnknownId(c.y_id))?.text,
                    stage: c.stage,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = abstractiveness_report(&rouge_pairs);
        fsutil::write_atomic(&self.path(EVAL_ROUGE), (report.to_json() + "\n").as_bytes())?;

        let mut res = StageResult::default();
        res.counter("gold", Counters::new(lines, gold.len(), lines - gold.len(), 0));
        res.outputs = vec![EVAL_METRICS.into(), EVAL_ROUGE.into()];
        res.sources = vec![gold_path.clone()];
        Ok(res)
    }
}

/// One shard's membership and index files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub key_value: String,
    pub x_ids: Vec<u64>,
    pub y_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_index: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_index: Option<String>,
}

fn build_index(cfg: &PipelineConfig, store: &VectorStore) -> Result<Index> {
    build(store, cfg.index_kind, cfg.nlist.min(store.len()), cfg.rng_seed)
}

/// Embeds a corpus, optionally keeping only the top `retention` fraction by
/// prefilter score. Unembeddable records are counted as degenerate.
fn embed_corpus(
    model: &BiencoderModel,
    pre: &PrefilterModel,
    corpus: &CorpusHandle,
    retention: Option<f64>,
) -> Result<(VectorStore, Counters)> {
    let embedded: Vec<Result<UnitVector>> = corpus
        .records()
        .par_iter()
        .map(|r| embed(model, &featurize(&r.encoding_text(), model.num_buckets)))
        .collect();
    let mut ok: Vec<(u64, UnitVector)> = Vec::with_capacity(embedded.len());
    for (r, e) in corpus.iter().zip(embedded) {
        match e {
            Ok(v) => ok.push((r.id, v)),
            Err(e) if e.is_numeric() => {}
            Err(e) => return Err(e),
        }
    }
    let degenerate = corpus.len() - ok.len();
    let kept: Vec<usize> = match retention {
        Some(f) => {
            let scores: Vec<f64> = ok.iter().map(|(_, v)| pre.logit(v)).collect();
            crate::encoder::retain_top_fraction(&scores, f)
        }
        None => (0..ok.len()).collect(),
    };
    let ids: Vec<u64> = kept.iter().map(|&i| ok[i].0).collect();
    let mut flat = Vec::with_capacity(kept.len() * model.dim as usize);
    for &i in &kept {
        flat.extend(ok[i].1.to_f32());
    }
    let store = VectorStore::new(model.dim as usize, ids, flat)?;
    let counters = Counters::new(corpus.len(), kept.len(), ok.len() - kept.len(), degenerate);
    Ok((store, counters))
}

/// The verbatim-overlap filter: answers found in the question (reading
/// comprehension) or sentences found in the document (summarization).
fn overlap_rejects(task: Task, x: Option<&Record>, y: Option<&Record>) -> bool {
    let (Some(x), Some(y)) = (x, y) else {
        return true;
    };
    match task {
        Task::ReadingComprehension => y.answer().is_some_and(|a| verbatim_overlap(&a, &x.text)),
        Task::Summarization => verbatim_overlap(&y.text, &x.text),
    }
}

#[derive(Deserialize)]
struct GoldLine {
    x: String,
    y: String,
    #[serde(default)]
    answer: Option<String>,
}

/// Reads `{x, y, answer?}` text pairs and maps them to corpus ids. Returns
/// the resolved pairs and the number of lines read.
pub(crate) fn load_gold(path: &Path, inputs: &CorpusHandle, outputs: &CorpusHandle) -> Result<(GoldPairs, usize)> {
    let mut x_by_text: BTreeMap<&str, u64> = BTreeMap::new();
    for r in inputs.iter() {
        x_by_text.entry(r.text.as_str()).or_insert(r.id);
    }
    let mut y_by_text: BTreeMap<(&str, Option<String>), u64> = BTreeMap::new();
    for r in outputs.iter() {
        y_by_text.entry((r.text.as_str(), None)).or_insert(r.id);
        if let Some(a) = r.answer() {
            y_by_text.entry((r.text.as_str(), Some(a))).or_insert(r.id);
        }
    }
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))?;
    let mut gold = GoldPairs::default();
    let mut lines = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        lines += 1;
        let g: GoldLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let y_text = normalize_stored(&g.y);
        let x = x_by_text.get(normalize_stored(&g.x).as_str()).copied();
        let y = y_by_text.get(&(y_text.as_str(), g.answer.map(|a| normalize_stored(&a)))).copied();
        if let (Some(x), Some(y)) = (x, y) {
            gold.0.insert(x, y);
        }
    }
    Ok((gold, lines))
}
