//! Synthetic classification tasks with a ground-truth complexity label per
//! sample. Each input carries a one-hot complexity selector `k` followed by a
//! payload; the target is a function of the first `k` payload elements, so
//! harder samples genuinely require consuming more of the payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Parity of the first k bits. 2 classes.
    PrefixParity,
    /// Sum of the first k digits mod 10. 10 classes.
    ChainArith,
    /// Index reached after k pointer hops from position 0 through a
    /// permutation. One class per position.
    NestedLookup,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PrefixParity => "prefix_parity",
            TaskKind::ChainArith => "chain_arith",
            TaskKind::NestedLookup => "nested_lookup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub payload_len: usize,
    pub k_max: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, payload_len: usize, k_max: usize, seed: u64) -> Result<TaskSpec> {
        if payload_len == 0 || k_max == 0 {
            return Err(Error::invalid("payload length and k_max must be >= 1"));
        }
        if k_max > payload_len {
            return Err(Error::invalid(format!(
                "k_max {k_max} exceeds payload length {payload_len}"
            )));
        }
        let n_classes = match kind {
            TaskKind::PrefixParity => 2,
            TaskKind::ChainArith => 10,
            TaskKind::NestedLookup => payload_len,
        };
        Ok(TaskSpec {
            kind,
            payload_len,
            k_max,
            n_classes,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = TaskSpec::new(self.kind, self.payload_len, self.k_max, self.seed)?;
        if fresh.n_classes != self.n_classes {
            return Err(Error::invalid(format!(
                "{} implies {} classes, spec claims {}",
                self.kind.name(),
                fresh.n_classes,
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Flat input width: one-hot selector plus the encoded payload.
    pub fn input_dim(&self) -> usize {
        self.k_max
            + match self.kind {
                TaskKind::PrefixParity => self.payload_len,
                TaskKind::ChainArith => self.payload_len * 10,
                TaskKind::NestedLookup => self.payload_len * self.payload_len,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: usize,
    pub complexity: usize,
}

fn parity_target(bits: &[u8], k: usize) -> usize {
    bits[..k].iter().fold(0u8, |acc, b| acc ^ b) as usize
}

fn chain_target(digits: &[u8], k: usize) -> usize {
    digits[..k].iter().map(|d| *d as usize).sum::<usize>() % 10
}

fn lookup_target(perm: &[usize], k: usize) -> usize {
    let mut pos = 0;
    for _ in 0..k {
        pos = perm[pos];
    }
    pos
}

fn encode(spec: &TaskSpec, k: usize, payload: &Payload) -> Vec<f64> {
    let mut input = vec![0.0; spec.input_dim()];
    input[k - 1] = 1.0;
    let base = spec.k_max;
    match payload {
        Payload::Bits(bits) => {
            for (i, b) in bits.iter().enumerate() {
                input[base + i] = *b as f64;
            }
        }
        Payload::Digits(digits) => {
            for (i, d) in digits.iter().enumerate() {
                input[base + i * 10 + *d as usize] = 1.0;
            }
        }
        Payload::Pointers(perm) => {
            let l = perm.len();
            for (i, p) in perm.iter().enumerate() {
                input[base + i * l + p] = 1.0;
            }
        }
    }
    input
}

enum Payload {
    Bits(Vec<u8>),
    Digits(Vec<u8>),
    Pointers(Vec<usize>),
}

/// Decodes a sample's payload back out of its input vector and recomputes the
/// target by direct evaluation. This is the independent check that every
/// emitted target is consistent with its own encoding.
pub fn rederive_target(spec: &TaskSpec, input: &[f64]) -> Result<(usize, usize)> {
    if input.len() != spec.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} entries, spec implies {}",
            input.len(),
            spec.input_dim()
        )));
    }
    let k = input[..spec.k_max]
        .iter()
        .position(|v| *v == 1.0)
        .ok_or_else(|| Error::invalid("missing complexity selector"))?
        + 1;
    let base = spec.k_max;
    let l = spec.payload_len;
    let target = match spec.kind {
        TaskKind::PrefixParity => {
            let bits: Vec<u8> = input[base..base + l].iter().map(|v| *v as u8).collect();
            parity_target(&bits, k)
        }
        TaskKind::ChainArith => {
            let mut digits = Vec::with_capacity(l);
            for i in 0..l {
                let block = &input[base + i * 10..base + (i + 1) * 10];
                let d = block
                    .iter()
                    .position(|v| *v == 1.0)
                    .ok_or_else(|| Error::invalid(format!("digit block {i} not one-hot")))?;
                digits.push(d as u8);
            }
            chain_target(&digits, k)
        }
        TaskKind::NestedLookup => {
            let mut perm = Vec::with_capacity(l);
            for i in 0..l {
                let block = &input[base + i * l..base + (i + 1) * l];
                let p = block
                    .iter()
                    .position(|v| *v == 1.0)
                    .ok_or_else(|| Error::invalid(format!("pointer block {i} not one-hot")))?;
                perm.push(p);
            }
            lookup_target(&perm, k)
        }
    };
    Ok((target, k))
}

/// Deterministic sample generation: complexity uniform on 1..=k_max, payloads
/// uniform over their domain, targets by direct evaluation.
pub fn generate(spec: &TaskSpec, n_samples: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let k = rng.gen_range(1..=spec.k_max);
        let (payload, target) = match spec.kind {
            TaskKind::PrefixParity => {
                let bits: Vec<u8> = (0..spec.payload_len).map(|_| rng.gen_range(0..2u8)).collect();
                let target = parity_target(&bits, k);
                (Payload::Bits(bits), target)
            }
            TaskKind::ChainArith => {
                let digits: Vec<u8> =
                    (0..spec.payload_len).map(|_| rng.gen_range(0..10u8)).collect();
                let target = chain_target(&digits, k);
                (Payload::Digits(digits), target)
            }
            TaskKind::NestedLookup => {
                let mut perm: Vec<usize> = (0..spec.payload_len).collect();
                perm.shuffle(&mut rng);
                let target = lookup_target(&perm, k);
                (Payload::Pointers(perm), target)
            }
        };
        samples.push(Sample {
            input: encode(spec, k, &payload),
            target,
            complexity: k,
        });
    }
    Ok(samples)
}

/// Deterministic stratified split: shuffle within each complexity group,
/// allocate per-group counts by largest remainder so the total is exact and
/// every group lands within one sample of its proportional share.
pub fn split(
    samples: &[Sample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_k: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match by_k.binary_search_by_key(&s.complexity, |(k, _)| *k) {
            Ok(pos) => by_k[pos].1.push(i),
            Err(pos) => by_k.insert(pos, (s.complexity, vec![i])),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, group) in by_k.iter_mut() {
        group.shuffle(&mut rng);
    }

    let total_train = (train_fraction * samples.len() as f64).round() as usize;
    let mut counts: Vec<usize> = Vec::with_capacity(by_k.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(by_k.len());
    let mut allocated = 0;
    for (gi, (_, group)) in by_k.iter().enumerate() {
        let exact = train_fraction * group.len() as f64;
        let base = exact.floor() as usize;
        counts.push(base.min(group.len()));
        allocated += counts[gi];
        remainders.push((gi, exact - base as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = total_train.saturating_sub(allocated);
    for (gi, _) in remainders {
        if short == 0 {
            break;
        }
        if counts[gi] < by_k[gi].1.len() {
            counts[gi] += 1;
            short -= 1;
        }
    }

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for ((_, group), count) in by_k.iter().zip(&counts) {
        for (j, idx) in group.iter().enumerate() {
            if j < *count {
                train.push(samples[*idx].clone());
            } else {
                eval.push(samples[*idx].clone());
            }
        }
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::invalid(format!(
            "split left an empty side ({} train / {} eval)",
            train.len(),
            eval.len()
        )));
    }
    Ok((train, eval))
}

// ── Dataset files ────────────────────────────────────────────────────────

/// Writes the spec as a header line, then one JSON object per sample.
pub fn write_dataset(path: &Path, spec: &TaskSpec, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, spec)?;
    w.write_all(b"\n")?;
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(TaskSpec, Vec<Sample>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::DatasetFormat("empty dataset file".into()))??;
    let spec: TaskSpec = serde_json::from_str(&header)
        .map_err(|e| Error::DatasetFormat(format!("bad header line: {e}")))?;
    spec.validate()?;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::DatasetFormat(format!("sample line {}: {e}", i + 1)))?;
        if s.input.len() != spec.input_dim() {
            return Err(Error::DatasetFormat(format!(
                "sample line {} has {} inputs, spec implies {}",
                i + 1,
                s.input.len(),
                spec.input_dim()
            )));
        }
        samples.push(s);
    }
    Ok((spec, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_hand_cases() {
        assert_eq!(parity_target(&[1, 0, 1, 1], 3), 0);
        assert_eq!(parity_target(&[1, 0, 1, 1], 1), 1);
        assert_eq!(parity_target(&[0, 1], 1), 0);
    }

    #[test]
    fn chain_hand_case() {
        assert_eq!(chain_target(&[3, 4, 2], 2), 7);
        assert_eq!(chain_target(&[9, 9, 9], 3), 7);
    }

    #[test]
    fn lookup_follows_pointers() {
        // 0 -> 2 -> 1 -> 3
        let perm = vec![2, 3, 1, 0];
        assert_eq!(lookup_target(&perm, 1), 2);
        assert_eq!(lookup_target(&perm, 2), 1);
        assert_eq!(lookup_target(&perm, 3), 3);
    }

    #[test]
    fn spec_rejects_k_max_above_payload() {
        assert!(TaskSpec::new(TaskKind::PrefixParity, 4, 5, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = TaskSpec::new(TaskKind::ChainArith, 6, 4, 11).unwrap();
        let a = generate(&spec, 50).unwrap();
        let b = generate(&spec, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_target_rederives_for_all_kinds() {
        for kind in [TaskKind::PrefixParity, TaskKind::ChainArith, TaskKind::NestedLookup] {
            let spec = TaskSpec::new(kind, 6, 5, 7).unwrap();
            for s in generate(&spec, 300).unwrap() {
                let (target, k) = rederive_target(&spec, &s.input).unwrap();
                assert_eq!(target, s.target, "{kind:?}");
                assert_eq!(k, s.complexity, "{kind:?}");
                assert!(s.target < spec.n_classes);
            }
        }
    }

    #[test]
    fn complexity_roughly_uniform() {
        let spec = TaskSpec::new(TaskKind::PrefixParity, 8, 8, 3).unwrap();
        let samples = generate(&spec, 8000).unwrap();
        let mut counts = vec![0usize; 8];
        for s in &samples {
            counts[s.complexity - 1] += 1;
        }
        // Chi-square against uniform with 7 dof; 40 is far beyond the 99.9%
        // quantile (24.3), so this only catches real generator defects.
        let expected = 1000.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| {
                let d = *c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 40.0, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn split_is_exact_and_stratified() {
        let spec = TaskSpec::new(TaskKind::PrefixParity, 8, 4, 5).unwrap();
        let samples = generate(&spec, 100).unwrap();
        let (train, eval) = split(&samples, 0.5, 1).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(eval.len(), 50);

        let (train2, eval2) = split(&samples, 0.5, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);

        for k in 1..=4 {
            let in_train = train.iter().filter(|s| s.complexity == k).count() as i64;
            let in_eval = eval.iter().filter(|s| s.complexity == k).count() as i64;
            assert!((in_train - in_eval).abs() <= 1, "k = {k}");
        }
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let spec = TaskSpec::new(TaskKind::PrefixParity, 4, 2, 5).unwrap();
        let samples = generate(&spec, 10).unwrap();
        assert!(split(&samples, 0.0, 1).is_err());
        assert!(split(&samples, 1.0, 1).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let spec = TaskSpec::new(TaskKind::NestedLookup, 5, 3, 9).unwrap();
        let samples = generate(&spec, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&path, &spec, &samples).unwrap();
        let (spec2, samples2) = read_dataset(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(samples, samples2);
    }
}
