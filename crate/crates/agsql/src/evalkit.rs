//! Benchmark-style evaluation: binary execution accuracy, majority voting
//! over repeated samples, and turn-distribution reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent_env::TrajectoryRecord;
use crate::datasets::DatasetManifest;
use crate::result_model::{dedup_rows, is_perfect_match, ResultTable};
use crate::sql_exec::{execute, DbHandle, ExecConfig, ExecError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("trajectory references unknown task {0}")]
    UnknownTask(String),
    #[error("gold SQL of task {task_id} failed: {reason}")]
    GoldFailed { task_id: String, reason: String },
}

/// Verdict for one evaluated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVerdict {
    pub task_id: String,
    pub correct: bool,
    pub turn_count: Option<usize>,
}

/// Aggregate evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub verdicts: Vec<TaskVerdict>,
    /// Fraction of evaluated trajectories per turn count; empty when no
    /// turn information was available, otherwise sums to 1.
    pub turn_histogram: BTreeMap<usize, f64>,
}

fn build_report(verdicts: Vec<TaskVerdict>) -> EvalReport {
    let n_tasks = verdicts.len();
    let n_correct = verdicts.iter().filter(|v| v.correct).count();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut with_turns = 0usize;
    for v in &verdicts {
        if let Some(t) = v.turn_count {
            *counts.entry(t).or_default() += 1;
            with_turns += 1;
        }
    }
    let turn_histogram = counts
        .into_iter()
        .map(|(turns, count)| (turns, count as f64 / with_turns as f64))
        .collect();
    EvalReport {
        n_tasks,
        n_correct,
        accuracy: if n_tasks == 0 {
            0.0
        } else {
            n_correct as f64 / n_tasks as f64
        },
        verdicts,
        turn_histogram,
    }
}

/// Binary execution accuracy over (gold, predicted) table pairs: a pair is
/// correct iff the results match exactly as row sets.
pub fn execution_accuracy(pairs: &[(ResultTable, ResultTable)]) -> EvalReport {
    let verdicts = pairs
        .iter()
        .enumerate()
        .map(|(index, (gold, pred))| TaskVerdict {
            task_id: index.to_string(),
            correct: is_perfect_match(gold, pred),
            turn_count: None,
        })
        .collect();
    build_report(verdicts)
}

fn gold_table(
    manifest: &DatasetManifest,
    task_id: &str,
    cfg: &ExecConfig,
) -> Result<ResultTable, EvalError> {
    let task = manifest
        .task_by_id(task_id)
        .ok_or_else(|| EvalError::UnknownTask(task_id.to_string()))?;
    let db = DbHandle::open(&manifest.db_root, &task.db_id)?;
    let outcome = execute(&db, &task.gold_sql, cfg);
    outcome
        .table()
        .cloned()
        .ok_or_else(|| EvalError::GoldFailed {
            task_id: task_id.to_string(),
            reason: crate::sql_exec::render_observation(&outcome, cfg),
        })
}

fn final_table(
    manifest: &DatasetManifest,
    record: &TrajectoryRecord,
    cfg: &ExecConfig,
) -> Result<Option<ResultTable>, EvalError> {
    let Some(final_sql) = &record.final_sql else {
        return Ok(None);
    };
    let task = manifest
        .task_by_id(&record.task_id)
        .ok_or_else(|| EvalError::UnknownTask(record.task_id.clone()))?;
    let db = DbHandle::open(&manifest.db_root, &task.db_id)?;
    Ok(execute(&db, final_sql, cfg).table().cloned())
}

/// Score each trajectory's final answer against its task's gold result.
/// One verdict per trajectory; the turn histogram comes from the records.
pub fn evaluate_trajectories(
    manifest: &DatasetManifest,
    records: &[TrajectoryRecord],
    cfg: &ExecConfig,
) -> Result<EvalReport, EvalError> {
    let mut verdicts = Vec::with_capacity(records.len());
    for record in records {
        let gold = gold_table(manifest, &record.task_id, cfg)?;
        let correct = match final_table(manifest, record, cfg)? {
            Some(pred) => is_perfect_match(&gold, &pred),
            None => false,
        };
        verdicts.push(TaskVerdict {
            task_id: record.task_id.clone(),
            correct,
            turn_count: Some(record.turn_count),
        });
    }
    Ok(build_report(verdicts))
}

/// Pick the most common result among `samples`, comparing tables by
/// canonical (set-of-rows) equality so formatting differences pool.
/// Ties go to the group containing the earliest sample; the returned
/// reference is that group's earliest member. `None` only for no samples.
pub fn majority_vote(samples: &[ResultTable]) -> Option<&ResultTable> {
    if samples.is_empty() {
        return None;
    }
    // Group indices by canonical form, keeping first-seen order.
    let mut groups: Vec<(crate::result_model::CanonicalTable, Vec<usize>)> = Vec::new();
    for (index, sample) in samples.iter().enumerate() {
        let canon = dedup_rows(sample);
        match groups.iter_mut().find(|(key, _)| *key == canon) {
            Some((_, members)) => members.push(index),
            None => groups.push((canon, vec![index])),
        }
    }
    let winner = groups
        .iter()
        .max_by(|(_, a), (_, b)| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .expect("samples is non-empty");
    Some(&samples[winner.1[0]])
}

/// Majority-vote evaluation: group trajectories by task, vote over the
/// executed final answers of the first `vote_k` samples per task, and judge
/// the winning table. Samples whose final answer fails to execute vote as a
/// shared "no result" bucket, which loses a verdict if it wins.
pub fn evaluate_with_vote(
    manifest: &DatasetManifest,
    records: &[TrajectoryRecord],
    vote_k: usize,
    cfg: &ExecConfig,
) -> Result<EvalReport, EvalError> {
    let mut by_task: Vec<(String, Vec<&TrajectoryRecord>)> = Vec::new();
    for record in records {
        match by_task.iter_mut().find(|(id, _)| *id == record.task_id) {
            Some((_, group)) => group.push(record),
            None => by_task.push((record.task_id.clone(), vec![record])),
        }
    }

    let mut verdicts = Vec::with_capacity(by_task.len());
    for (task_id, group) in &by_task {
        let gold = gold_table(manifest, task_id, cfg)?;
        let mut tables: Vec<Option<ResultTable>> = Vec::new();
        for record in group.iter().take(vote_k.max(1)) {
            tables.push(final_table(manifest, record, cfg)?);
        }
        let executed: Vec<ResultTable> = tables.iter().flatten().cloned().collect();
        let no_result_votes = tables.iter().filter(|t| t.is_none()).count();
        let correct = match majority_vote(&executed) {
            None => false,
            Some(winner) => {
                let winner_size = executed
                    .iter()
                    .filter(|t| dedup_rows(t) == dedup_rows(winner))
                    .count();
                // The no-result bucket must strictly outnumber the best
                // table group to take the vote.
                if no_result_votes > winner_size {
                    false
                } else {
                    is_perfect_match(&gold, winner)
                }
            }
        };
        let mean_turns = group.iter().map(|r| r.turn_count).sum::<usize>() / group.len().max(1);
        verdicts.push(TaskVerdict {
            task_id: task_id.clone(),
            correct,
            turn_count: Some(mean_turns),
        });
    }
    Ok(build_report(verdicts))
}

/// Write per-task verdicts as CSV (`task_id,correct,turn_count`).
pub fn verdicts_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("task_id,correct,turn_count\n");
    for v in &report.verdicts {
        out.push_str(&format!(
            "{},{},{}\n",
            v.task_id,
            v.correct,
            v.turn_count.map_or(String::new(), |t| t.to_string())
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::result_model::CellValue;

    fn table(values: &[i64]) -> ResultTable {
        ResultTable::from_rows(
            values
                .iter()
                .map(|v| vec![CellValue::Integer(*v)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn accuracy_counts_exact_matches() {
        let pairs = vec![
            (table(&[1, 2]), table(&[2, 1])),
            (table(&[1]), table(&[2])),
            (table(&[3]), table(&[3])),
        ];
        let report = execution_accuracy(&pairs);
        assert_eq!(report.n_tasks, 3);
        assert_eq!(report.n_correct, 2);
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pseudo_perfect_pair_is_wrong() {
        let g = ResultTable::from_rows(vec![
            vec![CellValue::text("a1"), CellValue::text("b1")],
            vec![CellValue::text("a2"), CellValue::text("b2")],
        ])
        .unwrap();
        let p = ResultTable::from_rows(vec![
            vec![CellValue::text("a1"), CellValue::text("b2")],
            vec![CellValue::text("a2"), CellValue::text("b1")],
        ])
        .unwrap();
        let report = execution_accuracy(&[(g, p)]);
        assert_eq!(report.n_correct, 0);
    }

    #[test]
    fn majority_vote_strict_majority() {
        let samples = vec![
            table(&[1]),
            table(&[2]),
            table(&[1]),
            table(&[3]),
            table(&[1]),
        ];
        assert_eq!(majority_vote(&samples).unwrap(), &table(&[1]));
    }

    #[test]
    fn majority_vote_single_sample() {
        let samples = vec![table(&[9])];
        assert_eq!(majority_vote(&samples).unwrap(), &table(&[9]));
    }

    #[test]
    fn majority_vote_tie_goes_to_earlier_group() {
        let samples = vec![table(&[2]), table(&[1]), table(&[1]), table(&[2])];
        // Both groups have two votes; group of sample 0 wins.
        assert_eq!(majority_vote(&samples).unwrap(), &table(&[2]));
    }

    #[test]
    fn majority_vote_pools_formatting_differences() {
        // Duplicated rows and different row order are the same answer.
        let a = table(&[1, 2]);
        let b = table(&[2, 1, 1]);
        let c = table(&[7]);
        let samples = [c, a.clone(), b];
        let winner = majority_vote(&samples).unwrap();
        assert_eq!(dedup_rows(winner), dedup_rows(&a));
    }

    #[test]
    fn seven_of_ten_scripted_answers_score_point_seven() {
        use crate::agent_env::{rollout, EnvConfig, RolloutContext, ScriptedPolicy};
        use crate::atr::AtrPreset;
        use crate::csmr::CsmrConfig;
        use crate::datasets::mini_corpus::{self, write_mini_corpus};
        use crate::sql_exec::validate_gold;

        let dir = tempfile::tempdir().unwrap();
        let manifest = write_mini_corpus(dir.path()).unwrap();
        let env_cfg = EnvConfig::default();
        let kept = validate_gold(&manifest.tasks, &manifest.db_root, &env_cfg.exec).kept;
        assert_eq!(kept.len(), 10);

        let csmr_cfg = CsmrConfig::default();
        let atr_cfg = AtrPreset::Eq2.config();
        let ctx = RolloutContext {
            db_root: &manifest.db_root,
            env: &env_cfg,
            csmr: &csmr_cfg,
            atr: &atr_cfg,
        };
        // The first seven answer with gold, the last three with wrong SQL.
        let mut records = Vec::new();
        for (i, task) in kept.iter().enumerate() {
            let sql = if i < 7 {
                task.gold_sql.clone()
            } else {
                mini_corpus::wrong_sql(task).unwrap().to_string()
            };
            let policy = ScriptedPolicy::new(vec![format!("```sql\n{sql}\n```")]);
            records.push(rollout(&policy, task, &ctx, 0).unwrap());
        }
        let report = evaluate_trajectories(&manifest, &records, &env_cfg.exec).unwrap();
        assert_eq!(report.n_correct, 7);
        assert!((report.accuracy - 0.7).abs() < 1e-12);
    }

    #[test]
    fn histogram_fractions_sum_to_one() {
        let verdicts = vec![
            TaskVerdict {
                task_id: "a".into(),
                correct: true,
                turn_count: Some(1),
            },
            TaskVerdict {
                task_id: "b".into(),
                correct: false,
                turn_count: Some(2),
            },
            TaskVerdict {
                task_id: "c".into(),
                correct: true,
                turn_count: Some(2),
            },
        ];
        let report = build_report(verdicts);
        let sum: f64 = report.turn_histogram.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((report.turn_histogram[&2] - 2.0 / 3.0).abs() < 1e-12);
    }
}
