//! The pair-classification bench harness and the shared analysis pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::compare::{match_graphs, CompareParams, MatchReport, Verdict};
use crate::diag::Diagnostic;
use crate::ingest::{parse_bundle, validate_cfg, Program};
use crate::keyir::{build_key_graph, KeyGraph};
use crate::lift::lift_function;
use crate::report::{BenchDoc, BenchRowDoc, ConfusionDoc, SCHEMA_VERSION};
use crate::symexec::{execute, ExecConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: crate::ingest::ParseError,
    },
    #[error("{path}: no function named `{name}`")]
    UnknownFunction { path: PathBuf, name: String },
    #[error("{path}: function `{name}` is invalid: {first_error}")]
    InvalidFunction {
        path: PathBuf,
        name: String,
        first_error: String,
    },
    #[error("bench line {line}: {message}")]
    BadPairLine { line: usize, message: String },
}

/// Parsed bundles cached by path so bench runs load each file once.
#[derive(Default)]
pub struct BundleCache {
    programs: BTreeMap<PathBuf, Program>,
}

impl BundleCache {
    pub fn new() -> BundleCache {
        BundleCache::default()
    }

    pub fn load(&mut self, path: &Path) -> Result<&Program, PipelineError> {
        use std::collections::btree_map::Entry;
        match self.programs.entry(path.to_path_buf()) {
            Entry::Occupied(entry) => Ok(entry.into_mut()),
            Entry::Vacant(slot) => {
                let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let program = parse_bundle(&text).map_err(|source| PipelineError::Parse {
                    path: path.to_path_buf(),
                    source,
                })?;
                Ok(slot.insert(program))
            }
        }
    }
}

/// Ingest, validate, lift, execute, and build the key graph for one
/// function of one bundle.
pub fn analyze(
    cache: &mut BundleCache,
    path: &Path,
    function: &str,
    config: &ExecConfig,
) -> Result<(KeyGraph, Vec<Diagnostic>), PipelineError> {
    let program = cache.load(path)?;
    let f = program
        .function(function)
        .ok_or_else(|| PipelineError::UnknownFunction {
            path: path.to_path_buf(),
            name: function.to_string(),
        })?;
    let diags = validate_cfg(f);
    if let Some(first) = diags.iter().find(|d| d.is_error()) {
        return Err(PipelineError::InvalidFunction {
            path: path.to_path_buf(),
            name: function.to_string(),
            first_error: first.to_string(),
        });
    }
    let mut all_diags = diags;
    let (lifted, lift_diags) = lift_function(f);
    all_diags.extend(lift_diags);
    let result = execute(&lifted, config);
    all_diags.extend(result.diagnostics);
    let (graph, graph_diags) = build_key_graph(&lifted, &result.value_sets);
    all_diags.extend(graph_diags);
    Ok((graph, all_diags))
}

/// One labelled row of a pairs file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPair {
    pub left_bundle: PathBuf,
    pub left_function: String,
    pub right_bundle: PathBuf,
    pub right_function: String,
    pub label: bool,
}

/// Parse a pairs file: whitespace-separated
/// `bundleA functionA bundleB functionB label(1|0)` rows, `#` comments.
/// Relative bundle paths resolve against the pairs file's directory.
pub fn parse_pairs(text: &str, base_dir: &Path) -> Result<Vec<BenchPair>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(PipelineError::BadPairLine {
                line: i + 1,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let label = match fields[4] {
            "1" => true,
            "0" => false,
            other => {
                return Err(PipelineError::BadPairLine {
                    line: i + 1,
                    message: format!("label must be 1 or 0, got `{other}`"),
                })
            }
        };
        out.push(BenchPair {
            left_bundle: base_dir.join(fields[0]),
            left_function: fields[1].to_string(),
            right_bundle: base_dir.join(fields[2]),
            right_function: fields[3].to_string(),
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<(BenchPair, MatchReport)>,
    pub accuracy: f64,
    pub confusion: ConfusionDoc,
}

impl BenchOutcome {
    pub fn to_doc(&self, params: &CompareParams, config: &ExecConfig) -> BenchDoc {
        BenchDoc {
            schema_version: SCHEMA_VERSION,
            params: *params,
            runs: config.runs,
            seed: config.seed,
            pairs: self
                .rows
                .iter()
                .map(|(pair, report)| BenchRowDoc {
                    left_bundle: pair.left_bundle.display().to_string(),
                    left_function: pair.left_function.clone(),
                    right_bundle: pair.right_bundle.display().to_string(),
                    right_function: pair.right_function.clone(),
                    label: pair.label as u8,
                    aggregate: report.aggregate,
                    verdict: report.verdict,
                    correct: (report.verdict == Verdict::Similar) == pair.label,
                })
                .collect(),
            accuracy: self.accuracy,
            confusion: self.confusion.clone(),
        }
    }
}

/// Classify every pair and tally accuracy: (TP+TN)/total.
pub fn run_bench(
    pairs: &[BenchPair],
    params: &CompareParams,
    config: &ExecConfig,
) -> Result<BenchOutcome, PipelineError> {
    let mut cache = BundleCache::new();
    let mut graphs: BTreeMap<(PathBuf, String), KeyGraph> = BTreeMap::new();
    for pair in pairs {
        for (path, func) in [
            (&pair.left_bundle, &pair.left_function),
            (&pair.right_bundle, &pair.right_function),
        ] {
            let key = (path.clone(), func.clone());
            if let std::collections::btree_map::Entry::Vacant(e) = graphs.entry(key) {
                let (graph, _) = analyze(&mut cache, path, func, config)?;
                e.insert(graph);
            }
        }
    }
    let mut rows = Vec::new();
    let mut confusion = ConfusionDoc {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for pair in pairs {
        let ga = &graphs[&(pair.left_bundle.clone(), pair.left_function.clone())];
        let gb = &graphs[&(pair.right_bundle.clone(), pair.right_function.clone())];
        let report = match_graphs(ga, gb, params);
        let predicted = report.verdict == Verdict::Similar;
        match (pair.label, predicted) {
            (true, true) => confusion.tp += 1,
            (true, false) => confusion.fn_ += 1,
            (false, true) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
        }
        rows.push((pair.clone(), report));
    }
    let total = rows.len().max(1) as f64;
    let accuracy = (confusion.tp + confusion.tn) as f64 / total;
    Ok(BenchOutcome {
        rows,
        accuracy,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_file_parses_and_resolves_paths() {
        let text = "# corpus\na.bundle f b.bundle g 1\na.bundle f c.bundle h 0\n";
        let pairs = parse_pairs(text, Path::new("/tmp/fixtures")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].left_bundle, Path::new("/tmp/fixtures/a.bundle"));
        assert!(pairs[0].label);
        assert!(!pairs[1].label);
    }

    #[test]
    fn bad_label_is_rejected() {
        let err = parse_pairs("a f b g 2\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("label"));
    }
}
