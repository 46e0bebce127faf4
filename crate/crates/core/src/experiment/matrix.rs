use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{io_err, store_coverage, temporal_split, ExperimentError, ExperimentPlan, Result, Splits};
use crate::baseline::baseline_members;
use crate::datastore::{write_atomic, Store, VariableId};
use crate::grid::{region, RegionId};
use crate::hours::EpochHour;
use crate::model::{score_checkpoint, train, Checkpoint, TrainSplit};
use crate::preprocess::{compute_stats, NormStats, StatsScope};
use crate::verify::{aggregate, score_region, RegionalScore, ScoreGrid};

pub const JOURNAL_FILE: &str = "journal.jsonl";
/// Cells scoring worse than this multiple of the baseline are failures.
pub const FAILURE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { cause: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// `None` when no finite score was produced.
    pub crps: Option<f64>,
    pub status: CellStatus,
}

impl Cell {
    pub fn is_failed(&self) -> bool {
        matches!(self.status, CellStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Entry {
    Baseline {
        eval_region: RegionId,
        crps: f64,
    },
    Trained {
        variant: String,
        train_region: RegionId,
        /// Relative to the results directory.
        checkpoint: PathBuf,
        val_crps: Option<f64>,
    },
    Cell {
        variant: String,
        train_region: RegionId,
        eval_region: RegionId,
        crps: Option<f64>,
        #[serde(flatten)]
        status: CellStatus,
    },
}

/// Append-only JSON-lines log of finished work.
struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

/// Complete entries of a journal. A final line without its newline is an
/// interrupted write and is dropped; any other unreadable line is an error.
fn read_journal(path: &Path) -> Result<(Vec<Entry>, u64)> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    let mut entries = Vec::new();
    for (i, line) in text[..complete].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(line).map_err(|e| ExperimentError::Journal {
            path: path.into(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok((entries, complete as u64))
}

impl Journal {
    fn open(path: &Path) -> Result<(Self, Vec<Entry>)> {
        let (entries, valid) = read_journal(path)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(valid).map_err(io_err(path))?;
        let journal = Journal {
            path: path.into(),
            file: Mutex::new(file),
        };
        Ok((journal, entries))
    }

    fn append(&self, e: &Entry) -> Result<()> {
        let mut line = serde_json::to_string(e).expect("journal entry serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("journal lock");
        use std::io::Seek;
        f.seek(std::io::SeekFrom::End(0)).map_err(io_err(&self.path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.sync_data().map_err(io_err(&self.path))
    }
}

/// Rows are training regions, columns evaluation regions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub variant: String,
    pub train_regions: Vec<RegionId>,
    pub eval_regions: Vec<RegionId>,
    /// Bilinear baseline CRPS per evaluation region.
    pub baseline: BTreeMap<RegionId, f64>,
    pub cells: BTreeMap<(RegionId, RegionId), Cell>,
}

impl TransferMatrix {
    fn assemble(variant: &str, train_regions: Vec<RegionId>, eval_regions: Vec<RegionId>, entries: &[Entry]) -> Self {
        let mut baseline = BTreeMap::new();
        let mut cells = BTreeMap::new();
        for e in entries {
            match e {
                Entry::Baseline { eval_region, crps } if eval_regions.contains(eval_region) => {
                    baseline.insert(*eval_region, *crps);
                }
                Entry::Cell {
                    variant: v,
                    train_region,
                    eval_region,
                    crps,
                    status,
                } if v == variant && train_regions.contains(train_region) && eval_regions.contains(eval_region) => {
                    cells.insert(
                        (*train_region, *eval_region),
                        Cell {
                            crps: *crps,
                            status: status.clone(),
                        },
                    );
                }
                _ => {}
            }
        }
        Self {
            variant: variant.into(),
            train_regions,
            eval_regions,
            baseline,
            cells,
        }
    }

    pub fn cell(&self, train: RegionId, eval: RegionId) -> Option<&Cell> {
        self.cells.get(&(train, eval))
    }

    pub fn crps(&self, train: RegionId, eval: RegionId) -> Option<f64> {
        self.cell(train, eval).and_then(|c| c.crps)
    }

    /// Whether every (train, eval) cell has a recorded result.
    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.train_regions.len() * self.eval_regions.len()
    }

    pub fn failures(&self) -> Vec<(RegionId, RegionId, &str)> {
        self.cells
            .iter()
            .filter_map(|(&(t, e), c)| match &c.status {
                CellStatus::Failed { cause } => Some((t, e, cause.as_str())),
                CellStatus::Ok => None,
            })
            .collect()
    }

    /// Scored cells in row-major order, with the diagonal cell of the
    /// evaluation region as the direct reference when it exists.
    pub fn scores(&self) -> Result<Vec<RegionalScore>> {
        let mut out = Vec::new();
        for &t in &self.train_regions {
            for &e in &self.eval_regions {
                let (Some(crps), Some(&base)) = (self.crps(t, e), self.baseline.get(&e)) else {
                    continue;
                };
                out.push(RegionalScore::new(t.as_str(), e.as_str(), crps, base, self.crps(e, e))?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many newly scored cells (the journal keeps them).
    pub max_new_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub matrix: TransferMatrix,
    pub splits: Splits,
    pub new_cells: usize,
}

impl MatrixRun {
    pub fn is_complete(&self) -> bool {
        self.matrix.is_complete()
    }

    pub fn has_failures(&self) -> bool {
        !self.matrix.failures().is_empty()
    }
}

struct Context<'a> {
    store: &'a Store,
    plan: &'a ExperimentPlan,
    out: &'a Path,
    splits: Splits,
    journal: Journal,
    baseline: BTreeMap<RegionId, f64>,
    done: BTreeSet<(RegionId, RegionId)>,
    trained: BTreeMap<RegionId, PathBuf>,
    global_stats: Option<NormStats>,
    budget: AtomicUsize,
    new_cells: AtomicUsize,
}

fn grid_path(out: &Path, name: &str) -> PathBuf {
    out.join("grids").join(format!("{name}.json"))
}

fn save_grid(out: &Path, name: &str, grid: &ScoreGrid) -> Result<()> {
    let path = grid_path(out, name);
    let text = serde_json::to_vec(grid).expect("score grid serializes");
    Ok(write_atomic(&path, &text)?)
}

/// File stem of a per-cell output.
pub(crate) fn cell_name(train: &str, eval: &str, variant: &str) -> String {
    format!("{train}_{eval}_{variant}")
}

impl Context<'_> {
    fn variant(&self) -> &'static str {
        self.plan.ablation.variant()
    }

    fn claim(&self) -> bool {
        self.budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1))
            .is_ok()
    }

    fn stats(&self, train_id: RegionId) -> Result<NormStats> {
        match &self.global_stats {
            Some(s) => Ok(s.clone()),
            None => Ok(compute_stats(
                self.store,
                &region(train_id),
                self.splits.train,
                self.plan.stats_scope,
            )?),
        }
    }

    fn checkpoint(&self, train_id: RegionId) -> Result<Checkpoint> {
        if let Some(rel) = self.trained.get(&train_id) {
            let path = self.out.join(rel);
            if path.exists() {
                return Ok(Checkpoint::load(&path)?);
            }
            warn!("journaled checkpoint {} is missing; retraining", path.display());
        }
        let stem = format!("{train_id}_{}", self.variant());
        let dir = self.out.join("checkpoints").join(&stem);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let split = TrainSplit {
            train: self.splits.train,
            val: self.splits.val,
        };
        let config = self.plan.model_config();
        let outcome = train(
            self.store,
            &region(train_id),
            self.stats(train_id)?,
            &config,
            split,
            Some(&dir),
        )?;
        let rel = PathBuf::from("checkpoints").join(&stem).join("best.ckpt");
        outcome.best.save(&self.out.join(&rel))?;
        self.journal.append(&Entry::Trained {
            variant: self.variant().into(),
            train_region: train_id,
            checkpoint: rel,
            val_crps: outcome.best.val_crps,
        })?;
        Ok(outcome.best)
    }

    fn record(&self, train_id: RegionId, eval: RegionId, crps: Option<f64>, status: CellStatus) -> Result<()> {
        if let CellStatus::Failed { cause } = &status {
            warn!("cell {train_id} -> {eval} failed: {cause}");
        }
        self.new_cells.fetch_add(1, Ordering::SeqCst);
        self.journal.append(&Entry::Cell {
            variant: self.variant().into(),
            train_region: train_id,
            eval_region: eval,
            crps,
            status,
        })
    }

    fn score_cell(&self, ck: &Checkpoint, train_id: RegionId, eval: RegionId) -> Result<()> {
        let times: Vec<EpochHour> = (self.splits.test.start..self.splits.test.end).collect();
        let base = self.baseline[&eval];
        let scored = score_checkpoint(self.store, ck, &region(eval), &times, self.plan.members, self.plan.seed)
            .map_err(ExperimentError::from)
            .and_then(|g| Ok((aggregate(&g, false)?, g)));
        let (crps, status) = match scored {
            Ok((crps, grid)) => {
                save_grid(
                    self.out,
                    &cell_name(train_id.as_str(), eval.as_str(), self.variant()),
                    &grid,
                )?;
                if !crps.is_finite() {
                    (
                        None,
                        CellStatus::Failed {
                            cause: "non-finite CRPS".into(),
                        },
                    )
                } else if crps > FAILURE_FACTOR * base {
                    let cause = format!("CRPS {crps:.6} exceeds {FAILURE_FACTOR}x baseline {base:.6}");
                    (Some(crps), CellStatus::Failed { cause })
                } else {
                    (Some(crps), CellStatus::Ok)
                }
            }
            Err(e) => (None, CellStatus::Failed { cause: e.to_string() }),
        };
        self.record(train_id, eval, crps, status)
    }

    fn run_row(&self, train_id: RegionId) -> Result<()> {
        let pending: Vec<RegionId> = self
            .plan
            .eval_regions
            .iter()
            .copied()
            .filter(|&e| !self.done.contains(&(train_id, e)))
            .collect();
        if pending.is_empty() || self.budget.load(Ordering::SeqCst) == 0 {
            return Ok(());
        }
        info!("row {train_id} ({}): {} cells pending", self.variant(), pending.len());
        let ck = match self.checkpoint(train_id) {
            Ok(ck) => ck,
            Err(e) => {
                let cause = format!("training failed: {e}");
                for &eval in &pending {
                    if !self.claim() {
                        break;
                    }
                    self.record(train_id, eval, None, CellStatus::Failed { cause: cause.clone() })?;
                }
                return Ok(());
            }
        };
        for &eval in &pending {
            if !self.claim() {
                break;
            }
            self.score_cell(&ck, train_id, eval)?;
        }
        Ok(())
    }
}

fn ensure_baselines(
    store: &Store,
    plan: &ExperimentPlan,
    splits: &Splits,
    out: &Path,
    journal: &Journal,
    entries: &[Entry],
) -> Result<BTreeMap<RegionId, f64>> {
    let mut have: BTreeMap<RegionId, f64> = entries
        .iter()
        .filter_map(|e| match e {
            Entry::Baseline { eval_region, crps } => Some((*eval_region, *crps)),
            _ => None,
        })
        .collect();
    for &eval in &plan.eval_regions {
        if have.contains_key(&eval) {
            continue;
        }
        let r = region(eval);
        let members = baseline_members(store, &r, splits.test)?;
        let hr = store.grid(VariableId::TargetPrecip)?;
        let obs = store.read_window(VariableId::TargetPrecip, 0, splits.test, &hr.window_for(&r.bbox)?)?;
        let grid = score_region(&members, &obs, eval.as_str())?;
        let crps = aggregate(&grid, false)?;
        save_grid(out, &cell_name("baseline", eval.as_str(), "bilinear"), &grid)?;
        journal.append(&Entry::Baseline {
            eval_region: eval,
            crps,
        })?;
        have.insert(eval, crps);
    }
    Ok(have)
}

/// Trains (or reloads) one model per training region, scores it on every
/// evaluation region over the test split and journals each cell under
/// `out`. Completed cells are skipped, so an interrupted run resumes where
/// it stopped. Cell failures are recorded, not raised.
pub fn run_matrix(store: &Store, plan: &ExperimentPlan, out: &Path, opts: RunOptions) -> Result<MatrixRun> {
    plan.validate()?;
    let coverage =
        store_coverage(store).ok_or_else(|| ExperimentError::Plan("store has no complete coverage".into()))?;
    let splits = temporal_split(&plan.split, coverage)?;
    fs::create_dir_all(out.join("grids")).map_err(io_err(out))?;
    let (journal, entries) = Journal::open(&out.join(JOURNAL_FILE))?;
    let variant = plan.ablation.variant();
    let baseline = ensure_baselines(store, plan, &splits, out, &journal, &entries)?;
    let mut done = BTreeSet::new();
    let mut trained = BTreeMap::new();
    for e in &entries {
        match e {
            Entry::Cell {
                variant: v,
                train_region,
                eval_region,
                ..
            } if v == variant => {
                done.insert((*train_region, *eval_region));
            }
            Entry::Trained {
                variant: v,
                train_region,
                checkpoint,
                ..
            } if v == variant => {
                trained.insert(*train_region, checkpoint.clone());
            }
            _ => {}
        }
    }
    let global_stats = match plan.stats_scope {
        StatsScope::FullDomain => Some(compute_stats(
            store,
            &region(plan.train_regions[0]),
            splits.train,
            StatsScope::FullDomain,
        )?),
        StatsScope::TrainRegion => None,
    };
    let ctx = Context {
        store,
        plan,
        out,
        splits,
        journal,
        baseline,
        done,
        trained,
        global_stats,
        budget: AtomicUsize::new(opts.max_new_cells.unwrap_or(usize::MAX)),
        new_cells: AtomicUsize::new(0),
    };
    let next = AtomicUsize::new(0);
    let errors: Mutex<Vec<ExperimentError>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..plan.workers.min(plan.train_regions.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&train_id) = plan.train_regions.get(i) else {
                    break;
                };
                if let Err(e) = ctx.run_row(train_id) {
                    errors.lock().expect("error lock").push(e);
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().expect("error lock").into_iter().next() {
        return Err(e);
    }
    let (entries, _) = read_journal(&out.join(JOURNAL_FILE))?;
    let matrix = TransferMatrix::assemble(variant, plan.train_regions.clone(), plan.eval_regions.clone(), &entries);
    Ok(MatrixRun {
        matrix,
        splits,
        new_cells: ctx.new_cells.load(Ordering::SeqCst),
    })
}

/// Rebuilds every matrix recorded in a results directory, one per variant,
/// with regions in canonical order.
pub fn load_results(dir: &Path) -> Result<Vec<TransferMatrix>> {
    let (entries, _) = read_journal(&dir.join(JOURNAL_FILE))?;
    let mut rows: BTreeMap<&str, (BTreeSet<RegionId>, BTreeSet<RegionId>)> = BTreeMap::new();
    for e in &entries {
        if let Entry::Cell {
            variant,
            train_region,
            eval_region,
            ..
        } = e
        {
            let (t, v) = rows.entry(variant.as_str()).or_default();
            t.insert(*train_region);
            v.insert(*eval_region);
        }
    }
    Ok(rows
        .into_iter()
        .map(|(variant, (t, e))| {
            TransferMatrix::assemble(variant, t.into_iter().collect(), e.into_iter().collect(), &entries)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Geo,
    NoGeo,
    Tie,
    /// Neither variant produced a usable score.
    Undecided,
}

impl Winner {
    /// Failed cells lose to usable ones; otherwise the lower CRPS wins.
    pub fn between(geo: Option<&Cell>, nogeo: Option<&Cell>) -> Self {
        let usable = |c: Option<&Cell>| c.filter(|c| !c.is_failed()).and_then(|c| c.crps);
        match (usable(geo), usable(nogeo)) {
            (Some(a), Some(b)) if a < b => Winner::Geo,
            (Some(a), Some(b)) if b < a => Winner::NoGeo,
            (Some(_), Some(_)) => Winner::Tie,
            (Some(_), None) => Winner::Geo,
            (None, Some(_)) => Winner::NoGeo,
            (None, None) => Winner::Undecided,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub geo: MatrixRun,
    pub nogeo: MatrixRun,
    pub winners: Vec<(RegionId, RegionId, Winner)>,
}

/// The plan's matrix with and without static inputs, sharing one results
/// directory, plus the per-cell winner.
pub fn run_ablation(store: &Store, plan: &ExperimentPlan, out: &Path, opts: RunOptions) -> Result<AblationRun> {
    let with = |on: bool| ExperimentPlan {
        ablation: super::Ablation::geo(on),
        ..plan.clone()
    };
    let geo = run_matrix(store, &with(true), out, opts)?;
    let rest = RunOptions {
        max_new_cells: opts.max_new_cells.map(|m| m.saturating_sub(geo.new_cells)),
    };
    let nogeo = run_matrix(store, &with(false), out, rest)?;
    let winners = plan
        .train_regions
        .iter()
        .flat_map(|&t| plan.eval_regions.iter().map(move |&e| (t, e)))
        .map(|(t, e)| (t, e, Winner::between(geo.matrix.cell(t, e), nogeo.matrix.cell(t, e))))
        .collect();
    Ok(AblationRun { geo, nogeo, winners })
}

/// Counts for the diagonal and superset properties over CRPS averaged
/// across `matrices` (e.g. one per seed).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransferProperties {
    /// Atomic regions whose own model beats every other atomic model there.
    pub diagonal_wins: usize,
    pub diagonal_checked: usize,
    /// (composite, member) pairs where the composite model is no worse than
    /// the worst atomic model trained outside the composite.
    pub superset_pass: usize,
    pub superset_checked: usize,
    pub diagonal_losers: Vec<RegionId>,
    pub superset_failures: Vec<(RegionId, RegionId)>,
}

pub fn transfer_properties(matrices: &[TransferMatrix]) -> TransferProperties {
    let mean = |t: RegionId, e: RegionId| -> Option<f64> {
        let v: Option<Vec<f64>> = matrices.iter().map(|m| m.crps(t, e)).collect();
        v.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut props = TransferProperties::default();
    let Some(first) = matrices.first() else {
        return props;
    };
    let atomic_rows: Vec<RegionId> = first
        .train_regions
        .iter()
        .copied()
        .filter(RegionId::is_atomic)
        .collect();
    for &r in &first.eval_regions {
        let Some(own) = mean(r, r) else { continue };
        let others: Option<Vec<f64>> = atomic_rows.iter().filter(|&&a| a != r).map(|&a| mean(a, r)).collect();
        let Some(others) = others.filter(|o| !o.is_empty()) else {
            continue;
        };
        props.diagonal_checked += 1;
        if others.iter().all(|&o| own <= o) {
            props.diagonal_wins += 1;
        } else {
            props.diagonal_losers.push(r);
        }
    }
    for &c in first.train_regions.iter().filter(|r| !r.is_atomic()) {
        let members = c.members();
        for &r in members.iter().filter(|r| first.eval_regions.contains(r)) {
            let Some(composite) = mean(c, r) else { continue };
            let disjoint: Option<Vec<f64>> = atomic_rows
                .iter()
                .filter(|a| !members.contains(a))
                .map(|&a| mean(a, r))
                .collect();
            let Some(worst) = disjoint.and_then(|d| d.into_iter().reduce(f64::max)) else {
                continue;
            };
            props.superset_checked += 1;
            if composite <= worst {
                props.superset_pass += 1;
            } else {
                props.superset_failures.push((c, r));
            }
        }
    }
    props
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(crps: f64) -> Cell {
        Cell {
            crps: Some(crps),
            status: CellStatus::Ok,
        }
    }

    #[test]
    fn journal_drops_only_a_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(JOURNAL_FILE);
        let (j, e) = Journal::open(&p).unwrap();
        assert!(e.is_empty());
        let entry = Entry::Baseline {
            eval_region: RegionId::SM,
            crps: 0.25,
        };
        j.append(&entry).unwrap();
        drop(j);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"event\":\"cell\",\"vari");
        fs::write(&p, &text).unwrap();
        let (j, e) = Journal::open(&p).unwrap();
        assert_eq!(e, vec![entry.clone()]);
        j.append(&entry).unwrap();
        assert_eq!(read_journal(&p).unwrap().0.len(), 2);
        fs::write(&p, "garbage\n").unwrap();
        assert!(matches!(
            read_journal(&p),
            Err(ExperimentError::Journal { line: 1, .. })
        ));
    }

    #[test]
    fn failed_cells_lose_the_ablation() {
        let failed = Cell {
            crps: Some(0.1),
            status: CellStatus::Failed { cause: "x".into() },
        };
        assert_eq!(Winner::between(Some(&ok(0.2)), Some(&ok(0.3))), Winner::Geo);
        assert_eq!(Winner::between(Some(&ok(0.2)), Some(&ok(0.2))), Winner::Tie);
        assert_eq!(Winner::between(Some(&failed), Some(&ok(0.3))), Winner::NoGeo);
        assert_eq!(Winner::between(None, None), Winner::Undecided);
    }

    #[test]
    fn properties_on_a_hand_built_matrix() {
        use RegionId::*;
        let rows = vec![NW, NM, NE, N];
        let evals = vec![NW, NM, NE];
        let mut m = TransferMatrix {
            variant: "geo".into(),
            train_regions: rows.clone(),
            eval_regions: evals.clone(),
            baseline: evals.iter().map(|&e| (e, 1.0)).collect(),
            cells: BTreeMap::new(),
        };
        for &t in &rows {
            for &e in &evals {
                let v = if t == e {
                    0.1
                } else if t == N {
                    0.2
                } else {
                    0.5
                };
                m.cells.insert((t, e), ok(v));
            }
        }
        m.cells.insert((NM, NE), ok(0.05));
        let p = transfer_properties(&[m.clone()]);
        assert_eq!((p.diagonal_wins, p.diagonal_checked), (2, 3));
        assert_eq!(p.diagonal_losers, vec![NE]);
        // Every atomic row lies inside N, so no disjoint reference exists.
        assert_eq!(p.superset_checked, 0);
        assert!(m.is_complete());
        let s = m.scores().unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0].drop, Some(0.0));
    }
}
