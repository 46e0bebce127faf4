mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use common::{quick_plan, synth_store};
use precip_downscale::experiment::{emit_report, load_results, run_matrix, RunOptions, JOURNAL_FILE};
use precip_downscale::grid::RegionId;

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn interrupted_matrix_resumes_to_an_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = synth_store(&dir.path().join("store"), 300, 9);
    let plan = quick_plan(
        &[RegionId::NE, RegionId::E],
        &[RegionId::NE, RegionId::TE, RegionId::SM],
    );

    let whole = dir.path().join("whole");
    let run = run_matrix(&store, &plan, &whole, RunOptions::default()).unwrap();
    assert!(run.is_complete());
    assert_eq!(run.matrix.cells.len(), 6);

    let parts = dir.path().join("parts");
    let first = run_matrix(&store, &plan, &parts, RunOptions { max_new_cells: Some(2) }).unwrap();
    assert_eq!(first.new_cells, 2);
    assert!(!first.is_complete());
    let mut j = fs::OpenOptions::new()
        .append(true)
        .open(parts.join(JOURNAL_FILE))
        .unwrap();
    j.write_all(b"{\"event\":\"cell\",\"variant\":\"geo\",\"train_re")
        .unwrap();
    drop(j);
    let second = run_matrix(&store, &plan, &parts, RunOptions { max_new_cells: Some(3) }).unwrap();
    assert_eq!(second.new_cells, 3);
    let last = run_matrix(&store, &plan, &parts, RunOptions::default()).unwrap();
    assert_eq!(last.new_cells, 1);
    assert_eq!(last.matrix, run.matrix);

    let (ra, rb) = (dir.path().join("ra"), dir.path().join("rb"));
    emit_report(&load_results(&whole).unwrap(), &whole, &ra).unwrap();
    emit_report(&load_results(&parts).unwrap(), &parts, &rb).unwrap();
    let (a, b) = (read_tree(&ra), read_tree(&rb));
    assert!(a.keys().any(|k| k.ends_with(".png")));
    assert_eq!(a, b);
}
