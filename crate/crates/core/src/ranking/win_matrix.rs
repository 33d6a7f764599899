use std::collections::HashMap;
use std::io::{Read, Write};

use crate::domain::{
    AnnotatorId, Comparison, ComparisonId, CriterionKind, ImageId, ModelId, Vote,
};

use super::RankingError;

/// Pairwise win counts: `get(i, j)` is the number of accepted votes in which
/// model `i`'s image beat model `j`'s image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinMatrix {
    models: Vec<ModelId>,
    counts: Vec<u64>,
}

/// One resolved vote: indices into the model list of a [`WinMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Duel {
    pub winner: usize,
    pub loser: usize,
}

impl WinMatrix {
    /// All-zero matrix over `models`.
    pub fn new(models: Vec<ModelId>) -> Result<Self, RankingError> {
        if models.len() < 2 {
            return Err(RankingError::TooFewModels(models.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &models {
            if !seen.insert(m) {
                return Err(RankingError::DuplicateModel(m.clone()));
            }
        }
        let n = models.len();
        Ok(WinMatrix {
            models,
            counts: vec![0; n * n],
        })
    }

    pub fn from_rows(models: Vec<ModelId>, rows: &[Vec<u64>]) -> Result<Self, RankingError> {
        let mut matrix = WinMatrix::new(models)?;
        let n = matrix.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(RankingError::LengthMismatch {
                expected: n,
                found: rows.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i == j && c != 0 {
                    return Err(RankingError::NonZeroDiagonal(i));
                }
                matrix.counts[i * n + j] = c;
            }
        }
        Ok(matrix)
    }

    pub fn from_duels(models: Vec<ModelId>, duels: &[Duel]) -> Result<Self, RankingError> {
        let mut matrix = WinMatrix::new(models)?;
        for d in duels {
            matrix.add_win(d.winner, d.loser)?;
        }
        Ok(matrix)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn index_of(&self, model: &ModelId) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn get(&self, winner: usize, loser: usize) -> u64 {
        self.counts[winner * self.len() + loser]
    }

    pub fn add_win(&mut self, winner: usize, loser: usize) -> Result<(), RankingError> {
        let n = self.len();
        if winner >= n || loser >= n {
            return Err(RankingError::IndexOutOfRange(winner.max(loser)));
        }
        if winner == loser {
            return Err(RankingError::NonZeroDiagonal(winner));
        }
        self.counts[winner * n + loser] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn wins_of(&self, i: usize) -> u64 {
        (0..self.len()).map(|j| self.get(i, j)).sum()
    }

    pub fn losses_of(&self, i: usize) -> u64 {
        (0..self.len()).map(|j| self.get(j, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.len()).map(|r| r.to_vec()).collect()
    }

    /// Reorders models so that new position `k` holds old model `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<WinMatrix, RankingError> {
        let n = self.len();
        let mut check = order.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(RankingError::LengthMismatch {
                expected: n,
                found: order.len(),
            });
        }
        let models = order.iter().map(|&k| self.models[k].clone()).collect();
        let mut out = WinMatrix::new(models)?;
        for a in 0..n {
            for b in 0..n {
                out.counts[a * n + b] = self.get(order[a], order[b]);
            }
        }
        Ok(out)
    }

    /// Directed graph with an edge `i -> j` whenever `i` has beaten `j`
    /// is strongly connected.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.len();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for u in 0..n {
                    let edge = if forward { self.get(v, u) } else { self.get(u, v) };
                    if edge > 0 && !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Writes the header row of model ids followed by one row of counts per
    /// model.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), RankingError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.models.iter().map(|m| m.as_str()))?;
        for row in self.rows() {
            out.write_record(row.iter().map(|c| c.to_string()))?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<WinMatrix, RankingError> {
        let mut input = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let models: Vec<ModelId> = input.headers()?.iter().map(ModelId::from).collect();
        let mut rows = Vec::with_capacity(models.len());
        for record in input.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| {
                    cell.trim()
                        .parse::<u64>()
                        .map_err(|_| RankingError::InvalidCount(cell.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        WinMatrix::from_rows(models, &rows)
    }
}

/// Resolves votes of one criterion to model-level duels, dropping votes whose
/// annotator fails `eligible`.
pub fn tally_duels(
    models: &[ModelId],
    criterion: CriterionKind,
    votes: &[Vote],
    comparisons: &HashMap<ComparisonId, Comparison>,
    image_models: &HashMap<ImageId, ModelId>,
    eligible: impl Fn(&AnnotatorId) -> bool,
) -> Result<Vec<Duel>, RankingError> {
    let index: HashMap<&ModelId, usize> = models.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let model_index = |image: &ImageId| -> Result<usize, RankingError> {
        let model = image_models
            .get(image)
            .ok_or_else(|| RankingError::UnknownReference(format!("image {image}")))?;
        index
            .get(model)
            .copied()
            .ok_or_else(|| RankingError::UnknownReference(format!("model {model}")))
    };

    let mut duels = Vec::new();
    for vote in votes {
        let comparison = comparisons.get(&vote.comparison_id).ok_or_else(|| {
            RankingError::UnknownReference(format!("comparison {}", vote.comparison_id))
        })?;
        if comparison.criterion != criterion {
            continue;
        }
        let loser = comparison.loser(&vote.winner).ok_or_else(|| {
            RankingError::UnknownReference(format!(
                "winner {} is not part of {}",
                vote.winner, comparison.comparison_id
            ))
        })?;
        if !eligible(&vote.annotator_id) {
            continue;
        }
        duels.push(Duel {
            winner: model_index(&vote.winner)?,
            loser: model_index(loser)?,
        });
    }
    Ok(duels)
}

/// Counts each eligible vote once: the winning image's model gains one win
/// over the losing image's model.
pub fn build_win_matrix(
    models: &[ModelId],
    criterion: CriterionKind,
    votes: &[Vote],
    comparisons: &HashMap<ComparisonId, Comparison>,
    image_models: &HashMap<ImageId, ModelId>,
    eligible: impl Fn(&AnnotatorId) -> bool,
) -> Result<WinMatrix, RankingError> {
    let duels = tally_duels(models, criterion, votes, comparisons, image_models, eligible)?;
    WinMatrix::from_duels(models.to_vec(), &duels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models(names: &[&str]) -> Vec<ModelId> {
        names.iter().map(|n| ModelId::from(*n)).collect()
    }

    fn fixture() -> (HashMap<ComparisonId, Comparison>, HashMap<ImageId, ModelId>) {
        let cmp = Comparison {
            comparison_id: "cmp-1".into(),
            criterion: CriterionKind::Preference,
            prompt_id: "prm-1".into(),
            image_a: "img-a".into(),
            image_b: "img-b".into(),
            quota: 26,
            votes_recorded: 0,
            outstanding_assignments: 0,
        };
        let comparisons = HashMap::from([(cmp.comparison_id.clone(), cmp)]);
        let images = HashMap::from([
            (ImageId::from("img-a"), ModelId::from("A")),
            (ImageId::from("img-b"), ModelId::from("B")),
        ]);
        (comparisons, images)
    }

    fn vote(n: usize, annotator: &str, winner: &str) -> Vote {
        Vote {
            vote_id: format!("vote-{n}").into(),
            comparison_id: "cmp-1".into(),
            annotator_id: annotator.into(),
            winner: winner.into(),
            response_time_ms: 4000,
            session_id: "ses-1".into(),
            recorded_at: 0,
            timing_flagged: false,
        }
    }

    #[test]
    fn empty_votes_give_zero_matrix() {
        let (cmps, imgs) = fixture();
        let w = build_win_matrix(&models(&["A", "B"]), CriterionKind::Preference, &[], &cmps, &imgs, |_| true)
            .unwrap();
        assert_eq!(w.total(), 0);
    }

    #[test]
    fn tally_matches_independent_count() {
        let (cmps, imgs) = fixture();
        let votes: Vec<Vote> = (0..26)
            .map(|n| vote(n, &format!("ann-{n}"), if n < 14 { "img-a" } else { "img-b" }))
            .collect();
        let w = build_win_matrix(&models(&["A", "B"]), CriterionKind::Preference, &votes, &cmps, &imgs, |_| true)
            .unwrap();
        // second tally, straight from the winner field
        let a_wins = votes.iter().filter(|v| v.winner.as_str() == "img-a").count() as u64;
        assert_eq!(a_wins, 14);
        assert_eq!(w.get(0, 1), a_wins);
        assert_eq!(w.get(1, 0), 26 - a_wins);
    }

    #[test]
    fn ineligible_annotators_are_dropped() {
        let (cmps, imgs) = fixture();
        let votes = vec![vote(0, "good", "img-a"), vote(1, "banned", "img-a")];
        let w = build_win_matrix(&models(&["A", "B"]), CriterionKind::Preference, &votes, &cmps, &imgs, |a| {
            a.as_str() != "banned"
        })
        .unwrap();
        assert_eq!(w.get(0, 1), 1);
    }

    #[test]
    fn other_criteria_are_skipped() {
        let (cmps, imgs) = fixture();
        let w = build_win_matrix(
            &models(&["A", "B"]),
            CriterionKind::Coherence,
            &[vote(0, "x", "img-a")],
            &cmps,
            &imgs,
            |_| true,
        )
        .unwrap();
        assert_eq!(w.total(), 0);
    }

    #[test]
    fn foreign_winner_is_unknown_reference() {
        let (cmps, imgs) = fixture();
        let err = build_win_matrix(
            &models(&["A", "B"]),
            CriterionKind::Preference,
            &[vote(0, "x", "img-zzz")],
            &cmps,
            &imgs,
            |_| true,
        )
        .unwrap_err();
        assert!(matches!(err, RankingError::UnknownReference(_)));
    }

    #[test]
    fn csv_round_trip() {
        let w = WinMatrix::from_rows(models(&["flux", "sd"]), &[vec![0, 3], vec![1, 0]]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "flux,sd\n0,3\n1,0\n");
        assert_eq!(WinMatrix::read_csv(buf.as_slice()).unwrap(), w);
    }

    #[test]
    fn csv_rejects_bad_shapes() {
        assert!(WinMatrix::read_csv("a,b\n0,1\n".as_bytes()).is_err());
        assert!(WinMatrix::read_csv("a,b\n1,1\n1,0\n".as_bytes()).is_err());
        assert!(WinMatrix::read_csv("a,b\n0,x\n1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn strong_connectivity() {
        let m = models(&["a", "b", "c"]);
        let cycle = WinMatrix::from_rows(m.clone(), &[vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]]).unwrap();
        assert!(cycle.is_strongly_connected());
        let chain = WinMatrix::from_rows(m, &[vec![0, 1, 0], vec![1, 0, 1], vec![0, 0, 0]]).unwrap();
        assert!(!chain.is_strongly_connected());
    }
}
