use serde::{Deserialize, Serialize};

/// Mean length-normalized log-probability of the hypothesis at `rank` in
/// the expanded set at `step` (1-based), over the decodes that reached it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStat {
    pub step: usize,
    pub rank: usize,
    pub mean_score: f64,
    pub count: usize,
}

/// Aggregates rank-score traces across decodes. Rows come ordered by step,
/// then rank; ranks at or beyond `beam_size` and empty cells are skipped.
pub fn collect_rank_stats<'a, I>(traces: I, beam_size: usize) -> Vec<RankStat>
where
    I: IntoIterator<Item = &'a [Vec<f64>]>,
{
    let mut sums: Vec<Vec<(f64, usize)>> = Vec::new();
    for trace in traces {
        if sums.len() < trace.len() {
            sums.resize(trace.len(), vec![(0.0, 0); beam_size]);
        }
        for (t, row) in trace.iter().enumerate() {
            for (r, &v) in row.iter().take(beam_size).enumerate() {
                sums[t][r].0 += v;
                sums[t][r].1 += 1;
            }
        }
    }
    sums.iter()
        .enumerate()
        .flat_map(|(t, row)| {
            row.iter().enumerate().filter(|(_, c)| c.1 > 0).map(move |(r, &(sum, count))| RankStat {
                step: t + 1,
                rank: r,
                mean_score: sum / count as f64,
                count,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trace_echoes() {
        let trace = vec![vec![-0.5, -1.5]];
        let stats = collect_rank_stats([trace.as_slice()], 2);
        assert_eq!(stats.len(), 2);
        assert_eq!((stats[0].rank, stats[0].mean_score), (0, -0.5));
        assert_eq!((stats[1].rank, stats[1].mean_score), (1, -1.5));
    }

    #[test]
    fn averages_across_traces_and_skips_missing() {
        let a = vec![vec![-1.0], vec![-2.0, -4.0]];
        let b = vec![vec![-3.0]];
        let stats = collect_rank_stats([a.as_slice(), b.as_slice()], 2);
        assert_eq!(stats[0], RankStat { step: 1, rank: 0, mean_score: -2.0, count: 2 });
        assert_eq!(stats[1], RankStat { step: 2, rank: 0, mean_score: -2.0, count: 1 });
        assert_eq!(stats[2], RankStat { step: 2, rank: 1, mean_score: -4.0, count: 1 });
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn ranks_beyond_beam_are_ignored() {
        let a = vec![vec![-1.0, -2.0, -3.0]];
        assert_eq!(collect_rank_stats([a.as_slice()], 2).len(), 2);
    }
}
