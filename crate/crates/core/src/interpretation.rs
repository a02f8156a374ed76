//! Human-readable artifacts: utterances grouped by latent action,
//! interpolation walks between two sentences, and the per-run report bundle.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::laed::{generate, policy_top, ActionProb, GenerationMode};
use crate::latent::{flip_path, LatentAssignment};
use crate::metrics::Recognizer;
use crate::networks::{Generation, SentenceModel};
use crate::training::{evaluate, items_for, load_run, AnyModel, Dataset, SweepTable, TrainItems, BEST_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBlock {
    pub action: String,
    pub count: usize,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    pub utterances: usize,
    /// Empty utterances have no code and are left out.
    pub skipped_empty: usize,
    pub blocks: Vec<ActionBlock>,
}

impl ActionTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# {} utterances, {} actions, {} empty skipped\n",
            self.utterances,
            self.blocks.len(),
            self.skipped_empty
        );
        for b in &self.blocks {
            s += &format!("\nACTION {} (n={})\n", b.action, b.count);
            for u in &b.samples {
                s += u;
                s.push('\n');
            }
        }
        s
    }
}

/// Groups utterances by greedy code and keeps a seeded reservoir sample of
/// `samples_per_action` per group; blocks are ordered by size, then code.
pub fn action_table<R: Recognizer + ?Sized>(
    model: &R,
    utterances: &[Utterance],
    vocab: &Vocabulary,
    samples_per_action: usize,
    seed: u64,
) -> Result<ActionTable> {
    let nonempty: Vec<&Utterance> = utterances.iter().filter(|u| !u.is_empty()).collect();
    let seqs: Vec<&[usize]> = nonempty.iter().map(|u| u.tokens.as_slice()).collect();
    let codes = model.greedy_codes(&seqs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<String, (usize, Vec<&Utterance>)> = BTreeMap::new();
    for (u, code) in nonempty.iter().zip(&codes) {
        let (count, reservoir) = groups.entry(code.to_string()).or_default();
        *count += 1;
        if reservoir.len() < samples_per_action {
            reservoir.push(u);
        } else {
            let j = rng.gen_range(0..*count);
            if j < samples_per_action {
                reservoir[j] = u;
            }
        }
    }
    let mut blocks: Vec<ActionBlock> = groups
        .into_iter()
        .map(|(action, (count, reservoir))| ActionBlock {
            action,
            count,
            samples: reservoir.iter().map(|u| vocab.decode(&u.tokens)).collect(),
        })
        .collect();
    blocks.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.action.cmp(&b.action)));
    Ok(ActionTable {
        utterances: nonempty.len(),
        skipped_empty: utterances.len() - nonempty.len(),
        blocks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationStep {
    pub action: String,
    pub tokens: Vec<usize>,
}

/// Walks from the greedy code of `x1` to that of `x2`, flipping one
/// differing variable per step in ascending index order, and decodes every
/// code on the way.
pub fn interpolate(
    model: &SentenceModel,
    x1: &Utterance,
    x2: &Utterance,
    max_len: usize,
) -> Result<Vec<InterpolationStep>> {
    if model.generation != Generation::Reconstruct {
        return Err(Error::NotAutoencoder);
    }
    let codes = model.greedy_codes(&[x1.tokens.as_slice(), x2.tokens.as_slice()])?;
    let path = flip_path(&codes[0], &codes[1], &model.spec)?;
    let decoded = model.decode_codes(&path, max_len)?;
    Ok(path
        .iter()
        .zip(decoded)
        .map(|(code, tokens)| InterpolationStep {
            action: code.to_string(),
            tokens,
        })
        .collect())
}

pub fn interpolation_text(source: &str, target: &str, steps: &[InterpolationStep], vocab: &Vocabulary) -> String {
    let mut s = format!("source: {source}\n");
    for step in steps {
        s += &format!("{:<20} {}\n", step.action, vocab.decode(&step.tokens));
    }
    s += &format!("target: {target}\n");
    s
}

/// One generated response, in the shape of a context / action / response row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub context: Vec<String>,
    pub action: String,
    pub policy_top: Vec<ActionProb>,
    pub response: String,
}

/// Greedy responses for `contexts`, with the code from π's argmax or forced.
pub fn generation_records(
    model: &crate::laed::LaedModel,
    contexts: &[Vec<Utterance>],
    vocab: &Vocabulary,
    forced: Option<&LatentAssignment>,
    max_len: usize,
    top: usize,
) -> Result<Vec<GenerationRecord>> {
    let mode = match forced {
        Some(code) => GenerationMode::ForcedCode(code.clone()),
        None => GenerationMode::PolicyArgmax,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    contexts
        .iter()
        .map(|c| {
            let g = generate(model, c, &mode, max_len, &mut rng)?;
            Ok(GenerationRecord {
                context: c.iter().map(|u| vocab.decode(&u.tokens)).collect(),
                action: g.assignment.to_string(),
                policy_top: policy_top(&g.policy, top),
                response: vocab.decode(&g.tokens),
            })
        })
        .collect()
}

pub const REPORT_DIR: &str = "report";
pub const SWEEP_PREFIX: &str = "sweep-";
const REPORT_SAMPLES: usize = 5;
const REPORT_GENERATIONS: usize = 20;

/// The files written by [`emit_report`], relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<String>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    files.push(format!("{REPORT_DIR}/{name}"));
    Ok(())
}

/// Writes `<run>/report/`: test metrics (JSON and text), the action table
/// (text and JSON), generation records for LAED runs and any sweep tables
/// found in the run directory. Deterministic for a fixed run.
pub fn emit_report(run_dir: &Path) -> Result<ReportBundle> {
    let mut sweeps: Vec<PathBuf> = match fs::read_dir(run_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(SWEEP_PREFIX) && n.ends_with(".json"))
            })
            .collect(),
        Err(_) => return Err(Error::MissingArtifact(run_dir.to_path_buf())),
    };
    sweeps.sort();
    let has_model = run_dir.join(BEST_FILE).exists();
    if !has_model && sweeps.is_empty() {
        return Err(Error::MissingArtifact(run_dir.join(BEST_FILE)));
    }
    let out = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    let mut files = Vec::new();

    if has_model {
        let run = load_run(run_dir)?;
        let data = Dataset::load(&run.config, Some(run.vocab.clone()))?;
        let report = evaluate(&run.model, &data, "test", &run.config)?;
        write(&out, "metrics.json", &(report.to_json()? + "\n"), &mut files)?;
        write(&out, "metrics.txt", &report.to_table(), &mut files)?;

        let items = items_for(run.config.variant, &data.test, data.dialogic, run.config.context_window)?;
        let utterances: Vec<Utterance> = match &items {
            TrainItems::Sentences(v) => v.clone(),
            TrainItems::Triples(v) => v.iter().map(|t| t.current.clone()).collect(),
            TrainItems::Pairs(v) => v.iter().map(|p| p.response.clone()).collect(),
        };
        let table = match &run.model {
            AnyModel::Sentence(m) => action_table(m, &utterances, &run.vocab, REPORT_SAMPLES, run.config.seed)?,
            AnyModel::Laed(m) => action_table(m, &utterances, &run.vocab, REPORT_SAMPLES, run.config.seed)?,
        };
        write(&out, "actions.txt", &table.to_text(), &mut files)?;
        write(&out, "actions.json", &(serde_json::to_string_pretty(&table)? + "\n"), &mut files)?;

        if let (AnyModel::Laed(m), TrainItems::Pairs(pairs)) = (&run.model, &items) {
            let contexts: Vec<Vec<Utterance>> = pairs
                .iter()
                .take(REPORT_GENERATIONS)
                .map(|p| p.context.clone())
                .collect();
            let records = generation_records(m, &contexts, &run.vocab, None, run.config.max_len, 3)?;
            let mut lines = String::new();
            for r in &records {
                lines += &serde_json::to_string(r)?;
                lines.push('\n');
            }
            write(&out, "generations.jsonl", &lines, &mut files)?;
        }
    }

    for path in sweeps {
        let table: SweepTable = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep").to_string();
        write(&out, &format!("{stem}.json"), &(serde_json::to_string_pretty(&table)? + "\n"), &mut files)?;
        write(&out, &format!("{stem}.txt"), &table.to_text(), &mut files)?;
    }
    Ok(ReportBundle { dir: out, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentSpec;
    use crate::networks::NetworkDims;

    /// Code = (first token mod K, length mod K).
    struct Fixed(LatentSpec);

    impl Recognizer for Fixed {
        fn latent_spec(&self) -> LatentSpec {
            self.0
        }
        fn greedy_codes(&self, seqs: &[&[usize]]) -> Result<Vec<LatentAssignment>> {
            let k = self.0.num_classes;
            Ok(seqs
                .iter()
                .map(|s| LatentAssignment::from_codes(vec![s[0] % k, s.len() % k]))
                .collect())
        }
    }

    fn vocab() -> Vocabulary {
        let words: Vec<Vec<String>> = vec![(0..20).map(|i| format!("w{i}")).collect()];
        Vocabulary::build(words.iter().map(Vec::as_slice), 100).unwrap()
    }

    #[test]
    fn table_partitions_and_clamps() {
        let spec = LatentSpec::new(2, 5, 1.0).unwrap();
        let utts: Vec<Utterance> = (0..40)
            .map(|i| Utterance::new((0..1 + i % 3).map(|j| 4 + (i + j) % 7).collect()))
            .chain(std::iter::once(Utterance::new(vec![])))
            .collect();
        let t = action_table(&Fixed(spec), &utts, &vocab(), 5, 1).unwrap();
        assert_eq!(t.skipped_empty, 1);
        assert_eq!(t.blocks.iter().map(|b| b.count).sum::<usize>(), 40);
        assert!(t.blocks.len() <= 25);
        assert!(t.blocks.iter().all(|b| b.samples.len() == b.count.min(5)));
        assert!(t.blocks.windows(2).all(|w| w[0].count >= w[1].count));
        assert_eq!(t, action_table(&Fixed(spec), &utts, &vocab(), 5, 1).unwrap());
        let text = t.to_text();
        assert!(text.contains(&format!("ACTION {} (n={})", t.blocks[0].action, t.blocks[0].count)));

        let one = action_table(&Fixed(spec), &utts[..1], &vocab(), 5, 1).unwrap();
        assert_eq!(one.blocks.len(), 1);
        assert_eq!(one.blocks[0].samples.len(), 1);
    }

    fn tiny(generation: Generation) -> SentenceModel {
        let dims = NetworkDims {
            embed_dim: 3,
            recognizer_hidden: 4,
            decoder_hidden: 4,
            utterance_hidden: 2,
            context_hidden: 4,
            policy_hidden: 3,
        };
        let spec = LatentSpec::new(3, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        SentenceModel::new(spec, dims, generation, 24, false, &mut rng)
    }

    #[test]
    fn interpolation_walks_between_codes() {
        let m = tiny(Generation::Reconstruct);
        let a = Utterance::new(vec![4, 5, 6]);
        let b = Utterance::new(vec![9, 10]);
        let same = interpolate(&m, &a, &a, 5).unwrap();
        assert_eq!(same.len(), 1);
        let walk = interpolate(&m, &a, &b, 5).unwrap();
        let codes = m.greedy_codes(&[&a.tokens, &b.tokens]).unwrap();
        assert_eq!(walk.len(), codes[0].hamming(&codes[1]) + 1);
        assert_eq!(walk[0].action, codes[0].to_string());
        assert_eq!(walk.last().unwrap().action, codes[1].to_string());
        assert!(walk.iter().all(|s| s.tokens.len() <= 5));
        let st = tiny(Generation::SkipThought);
        let err = interpolate(&st, &a, &b, 5).unwrap_err();
        assert_eq!(err.to_string(), "interpolation requires reconstruction-trained model");
    }

    #[test]
    fn report_requires_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(dir.path()).unwrap_err(), Error::MissingArtifact(_)));
        assert!(emit_report(&dir.path().join("absent")).is_err());
    }
}
