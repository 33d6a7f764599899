//! Line-delimited JSON ingestion of prompts, image manifests and validation
//! pools. One object per line; blank lines are ignored; line numbers in
//! errors are 1-based.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{
    sequential_id, ImageAsset, ImageId, ModelId, ModelRef, Prompt, PromptId, PromptSource, Side,
    ValidationId, ValidationItem,
};

use super::StoreError;

/// One line of a prompts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFileEntry {
    pub text: String,
    #[serde(default)]
    pub source: PromptSource,
    #[serde(default)]
    pub categories: Vec<String>,
}

/// One line of an image manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model_id: ModelId,
    pub prompt_id: PromptId,
    pub replicate_index: u32,
    pub content_ref: String,
}

/// One line of a validation pool file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationPoolEntry {
    pub left_ref: String,
    pub right_ref: String,
    pub correct_side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
}

fn read_records<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, StoreError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push((k + 1, record));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>, StoreError> {
    Ok(BufReader::new(File::open(path)?))
}

/// Parses a prompts file. Ids continue after `existing`; text already present
/// in `existing` or earlier in the file is rejected.
pub fn parse_prompts<R: BufRead>(reader: R, existing: &[Prompt]) -> Result<Vec<Prompt>, StoreError> {
    let mut seen: HashMap<String, Option<usize>> = existing.iter().map(|p| (p.text.clone(), None)).collect();
    let mut prompts = Vec::new();
    for (line, entry) in read_records::<PromptFileEntry, _>(reader)? {
        if entry.text.trim().is_empty() {
            return Err(StoreError::EmptyPrompt { line });
        }
        if let Some(first_line) = seen.get(&entry.text) {
            return Err(StoreError::DuplicatePrompt {
                line,
                first_line: *first_line,
            });
        }
        seen.insert(entry.text.clone(), Some(line));
        let n = (existing.len() + prompts.len() + 1) as u64;
        prompts.push(Prompt {
            prompt_id: PromptId::from(sequential_id("prm", n)),
            text: entry.text,
            source: entry.source,
            categories: entry.categories.into_iter().collect::<BTreeSet<_>>(),
        });
    }
    Ok(prompts)
}

pub fn ingest_prompts(path: impl AsRef<Path>) -> Result<Vec<Prompt>, StoreError> {
    parse_prompts(open(path.as_ref())?, &[])
}

/// A (model, prompt) cell holding fewer images than required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub model_id: ModelId,
    pub prompt_id: PromptId,
    pub found: u32,
    pub expected: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestReport {
    /// Newly registered assets, in file order.
    pub assets: Vec<ImageAsset>,
    /// Assets registered for the benchmark after this ingest.
    pub asset_count: usize,
    pub missing_cells: Vec<MissingCell>,
}

/// Parses a manifest against the registered models and prompts.
pub fn parse_manifest<R: BufRead>(
    reader: R,
    models: &[ModelRef],
    prompts: &[Prompt],
    images_per_model: u32,
    existing: &[ImageAsset],
) -> Result<ManifestReport, StoreError> {
    let model_ids: HashSet<&ModelId> = models.iter().map(|m| &m.model_id).collect();
    let prompt_ids: HashSet<&PromptId> = prompts.iter().map(|p| &p.prompt_id).collect();
    let mut keys: HashSet<(ModelId, PromptId, u32)> = existing
        .iter()
        .map(|a| (a.model_id.clone(), a.prompt_id.clone(), a.replicate_index))
        .collect();
    let mut cells: BTreeMap<(ModelId, PromptId), u32> = BTreeMap::new();
    for a in existing {
        *cells.entry((a.model_id.clone(), a.prompt_id.clone())).or_default() += 1;
    }

    let mut assets = Vec::new();
    for (line, entry) in read_records::<ManifestEntry, _>(reader)? {
        if !model_ids.contains(&entry.model_id) {
            return Err(StoreError::UnknownModel {
                line,
                model_id: entry.model_id,
            });
        }
        if !prompt_ids.contains(&entry.prompt_id) {
            return Err(StoreError::UnknownPrompt {
                line,
                prompt_id: entry.prompt_id,
            });
        }
        if entry.replicate_index == 0 || entry.replicate_index > images_per_model {
            return Err(StoreError::InvalidReplicate {
                line,
                replicate_index: entry.replicate_index,
                max: images_per_model,
            });
        }
        if !keys.insert((entry.model_id.clone(), entry.prompt_id.clone(), entry.replicate_index)) {
            return Err(StoreError::DuplicateAsset { line });
        }
        let count = cells
            .entry((entry.model_id.clone(), entry.prompt_id.clone()))
            .or_default();
        *count += 1;
        if *count > images_per_model {
            return Err(StoreError::ExcessReplicates {
                line,
                model_id: entry.model_id,
                prompt_id: entry.prompt_id,
                expected: images_per_model,
            });
        }
        let n = (existing.len() + assets.len() + 1) as u64;
        assets.push(ImageAsset {
            image_id: ImageId::from(sequential_id("img", n)),
            model_id: entry.model_id,
            prompt_id: entry.prompt_id,
            replicate_index: entry.replicate_index,
            content_ref: entry.content_ref,
        });
    }

    let mut missing_cells = Vec::new();
    for prompt in prompts {
        for model in models {
            let found = cells
                .get(&(model.model_id.clone(), prompt.prompt_id.clone()))
                .copied()
                .unwrap_or(0);
            if found != images_per_model {
                missing_cells.push(MissingCell {
                    model_id: model.model_id.clone(),
                    prompt_id: prompt.prompt_id.clone(),
                    found,
                    expected: images_per_model,
                });
            }
        }
    }
    Ok(ManifestReport {
        asset_count: existing.len() + assets.len(),
        assets,
        missing_cells,
    })
}

pub fn ingest_image_manifest(
    path: impl AsRef<Path>,
    models: &[ModelRef],
    prompts: &[Prompt],
    images_per_model: u32,
) -> Result<ManifestReport, StoreError> {
    parse_manifest(open(path.as_ref())?, models, prompts, images_per_model, &[])
}

pub fn parse_validation_pool<R: BufRead>(
    reader: R,
    existing: &[ValidationItem],
) -> Result<Vec<ValidationItem>, StoreError> {
    let mut items = Vec::new();
    for (line, entry) in read_records::<ValidationPoolEntry, _>(reader)? {
        if entry.left_ref == entry.right_ref {
            return Err(StoreError::Parse {
                line,
                message: "validation pair shows the same image twice".into(),
            });
        }
        let n = (existing.len() + items.len() + 1) as u64;
        items.push(ValidationItem {
            validation_id: ValidationId::from(sequential_id("val", n)),
            left_ref: entry.left_ref,
            right_ref: entry.right_ref,
            correct_side: entry.correct_side,
            prompt_text: entry.prompt_text,
        });
    }
    Ok(items)
}

pub fn ingest_validation_pool(path: impl AsRef<Path>) -> Result<Vec<ValidationItem>, StoreError> {
    parse_validation_pool(open(path.as_ref())?, &[])
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn models() -> Vec<ModelRef> {
        vec![ModelRef::new("flux", "Flux.1"), ModelRef::new("sd", "Stable Diffusion")]
    }

    fn prompts_jsonl(n: usize) -> String {
        (0..n)
            .map(|k| {
                serde_json::to_string(&PromptFileEntry {
                    text: format!("prompt number {k}"),
                    source: PromptSource::DrawBench,
                    categories: vec!["counting".into()],
                })
                .unwrap()
                    + "\n"
            })
            .collect()
    }

    fn manifest_line(model: &str, prompt: &str, r: u32) -> String {
        format!(
            "{{\"model_id\":\"{model}\",\"prompt_id\":\"{prompt}\",\"replicate_index\":{r},\"content_ref\":\"s3://{model}/{prompt}/{r}.png\"}}\n"
        )
    }

    #[test]
    fn full_scale_prompt_file() {
        let prompts = parse_prompts(prompts_jsonl(282).as_bytes(), &[]).unwrap();
        assert_eq!(prompts.len(), 282);
        assert_eq!(prompts[0].prompt_id.as_str(), "prm-000000000001");
        assert_eq!(prompts[281].text, "prompt number 281");
    }

    #[test]
    fn prompt_file_from_disk() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(prompts_jsonl(3).as_bytes()).unwrap();
        assert_eq!(ingest_prompts(file.path()).unwrap().len(), 3);
        let empty = tempfile::NamedTempFile::new().unwrap();
        assert_eq!(ingest_prompts(empty.path()).unwrap().len(), 0);
    }

    #[test]
    fn duplicate_prompt_lines() {
        let text = "{\"text\":\"a cat\"}\n{\"text\":\"a dog\"}\n{\"text\":\"a cat\"}\n";
        match parse_prompts(text.as_bytes(), &[]) {
            Err(StoreError::DuplicatePrompt { line, first_line }) => {
                assert_eq!(line, 3);
                assert_eq!(first_line, Some(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_parse_errors_carry_line() {
        let text = "{\"text\":\"ok\"}\nnot json\n";
        assert!(matches!(parse_prompts(text.as_bytes(), &[]), Err(StoreError::Parse { line: 2, .. })));
        let blank = "{\"text\":\"  \"}\n";
        assert!(matches!(parse_prompts(blank.as_bytes(), &[]), Err(StoreError::EmptyPrompt { line: 1 })));
    }

    #[test]
    fn manifest_cells() {
        let prompts = parse_prompts(prompts_jsonl(2).as_bytes(), &[]).unwrap();
        let p1 = prompts[0].prompt_id.as_str();
        let p2 = prompts[1].prompt_id.as_str();
        let mut text = String::new();
        for m in ["flux", "sd"] {
            for p in [p1, p2] {
                for r in 1..=4 {
                    if !(m == "sd" && p == p2 && r == 4) {
                        text += &manifest_line(m, p, r);
                    }
                }
            }
        }
        let report = parse_manifest(text.as_bytes(), &models(), &prompts, 4, &[]).unwrap();
        assert_eq!(report.asset_count, 15);
        assert_eq!(
            report.missing_cells,
            vec![MissingCell {
                model_id: "sd".into(),
                prompt_id: p2.into(),
                found: 3,
                expected: 4
            }]
        );

        // completing the cell in a second ingest
        let more = manifest_line("sd", p2, 4);
        let report2 = parse_manifest(more.as_bytes(), &models(), &prompts, 4, &report.assets).unwrap();
        assert!(report2.missing_cells.is_empty());
        assert_eq!(report2.asset_count, 16);
        assert_eq!(report2.assets[0].image_id.as_str(), "img-000000000016");

        // re-ingesting is rejected
        assert!(matches!(
            parse_manifest(text.as_bytes(), &models(), &prompts, 4, &report.assets),
            Err(StoreError::DuplicateAsset { line: 1 })
        ));
    }

    #[test]
    fn manifest_errors() {
        let prompts = parse_prompts(prompts_jsonl(1).as_bytes(), &[]).unwrap();
        let p = prompts[0].prompt_id.as_str();
        let unknown_model = manifest_line("dalle", p, 1);
        assert!(matches!(
            parse_manifest(unknown_model.as_bytes(), &models(), &prompts, 4, &[]),
            Err(StoreError::UnknownModel { line: 1, .. })
        ));
        let unknown_prompt = manifest_line("flux", "prm-999", 1);
        assert!(matches!(
            parse_manifest(unknown_prompt.as_bytes(), &models(), &prompts, 4, &[]),
            Err(StoreError::UnknownPrompt { line: 1, .. })
        ));
        let fifth = manifest_line("flux", p, 5);
        assert!(matches!(
            parse_manifest(fifth.as_bytes(), &models(), &prompts, 4, &[]),
            Err(StoreError::InvalidReplicate { .. })
        ));
    }

    #[test]
    fn excess_replicates_in_a_cell() {
        // Five images in a cell can only happen with distinct indices when K is
        // larger than the plan allows; exercise via K = 2 and indices 1, 2, 1.
        let prompts = parse_prompts(prompts_jsonl(1).as_bytes(), &[]).unwrap();
        let p = prompts[0].prompt_id.as_str();
        let text = manifest_line("flux", p, 1) + &manifest_line("flux", p, 2) + &manifest_line("flux", p, 3);
        assert!(matches!(
            parse_manifest(text.as_bytes(), &models(), &prompts, 2, &[]),
            Err(StoreError::InvalidReplicate { line: 3, .. })
        ));
        let mut existing = parse_manifest(
            (manifest_line("flux", p, 1) + &manifest_line("flux", p, 2)).as_bytes(),
            &models(),
            &prompts,
            2,
            &[],
        )
        .unwrap()
        .assets;
        // an asset registered under a replicate index the key check cannot see
        existing[1].replicate_index = 7;
        assert!(matches!(
            parse_manifest(manifest_line("flux", p, 2).as_bytes(), &models(), &prompts, 2, &existing),
            Err(StoreError::ExcessReplicates { .. })
        ));
    }

    #[test]
    fn validation_pool() {
        let text = "{\"left_ref\":\"a.png\",\"right_ref\":\"b.png\",\"correct_side\":\"right\",\"prompt_text\":\"a red ball\"}\n\
                    {\"left_ref\":\"c.png\",\"right_ref\":\"d.png\",\"correct_side\":\"left\"}\n";
        let pool = parse_validation_pool(text.as_bytes(), &[]).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[0].correct_side, Side::Right);
        assert_eq!(pool[1].prompt_text, None);
        let same = "{\"left_ref\":\"a\",\"right_ref\":\"a\",\"correct_side\":\"left\"}\n";
        assert!(parse_validation_pool(same.as_bytes(), &[]).is_err());
    }
}
