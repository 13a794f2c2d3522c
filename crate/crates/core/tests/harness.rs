mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use semcom::harness::sweep::{median, sweep_prepared, RUNS_CSV, SUMMARY_CSV};
use semcom::harness::{run_cell, ExperimentConfig, Framework, Prepared};

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        frames: 2,
        snr_db: vec![5.0, f64::INFINITY],
        seeds: vec![0, 1],
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn small_sweep_rows_summary_and_determinism() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let prep = Prepared::new(&small_config(d1.path())).unwrap();
    let first = sweep_prepared(&prep).unwrap();
    assert_eq!(first.rows.len(), 3 * 2 * 2 * 2);
    assert_eq!(first.failures, 0);

    // summary medians against the CSV read back from disk
    let mut reader = csv::Reader::from_path(d1.path().join(RUNS_CSV)).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for s in &first.summary {
        let cell: Vec<&csv::StringRecord> = rows
            .iter()
            .filter(|r| r[col("framework")] == *s.framework && r[col("snr_db")].parse::<f64>().unwrap() == s.snr_db)
            .collect();
        let values = |name: &str| cell.iter().map(|r| r[col(name)].parse::<f64>().unwrap()).collect::<Vec<_>>();
        assert_eq!(cell.len(), s.rows);
        let kpe = values("kpe_mean");
        let mut sorted = kpe.clone();
        sorted.sort_by(f64::total_cmp);
        let by_hand = (sorted[1] + sorted[2]) / 2.0;
        assert_eq!(s.kpe_median, by_hand);
        assert_eq!(s.p2p_median, median(&values("p2p_rms")));
        assert_eq!(s.td_median, median(&values("td_total")));
    }

    // a second sweep in the same process, from a fresh preparation
    let mut cfg2 = small_config(d2.path());
    cfg2.output_dir = d2.path().to_path_buf();
    sweep_prepared(&Prepared::new(&cfg2).unwrap()).unwrap();
    let (a, b) = (snapshot(d1.path()), snapshot(d2.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert!(a.contains_key(SUMMARY_CSV));
    assert!(a.keys().any(|k| k.ends_with(".ply")) && a.keys().any(|k| k.ends_with(".ppm")));
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs");
    }
}

#[test]
fn noiseless_floors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.frames = 4;
    let prep = Prepared::new(&cfg).unwrap();
    let kpe = |fw| {
        let out = run_cell(&prep, fw, f64::INFINITY, 0, false).unwrap();
        out.records.iter().map(|r| r.kpe.as_ref().unwrap().mean_px).collect::<Vec<_>>()
    };
    // color matcher floor at 300×150, pinned from the build
    let image = kpe(Framework::ImageCom);
    assert!((median(&image) - 0.0606).abs() < 1e-3, "{image:?}");
    assert!(image.iter().all(|k| *k < 0.11));
    // codec step plus fit tolerance
    for fw in [Framework::MGscm, Framework::SGscm] {
        assert!(kpe(fw).iter().all(|k| *k <= 1.0 / 16.0), "{fw}");
    }
}

#[test]
fn modes_share_everything_upstream_of_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let prep = Prepared::new(&small_config(dir.path())).unwrap();
    let m = run_cell(&prep, Framework::MGscm, 3.0, 7, false).unwrap();
    let s = run_cell(&prep, Framework::SGscm, 3.0, 7, false).unwrap();
    for (a, b) in m.records.iter().zip(&s.records) {
        assert_eq!((a.bits_sent, a.bit_errors), (b.bits_sent, b.bit_errors));
        assert_eq!(a.bits_sent, 2392);
    }
    assert_eq!(m.records.len(), 2);
}

fn semcom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semcom"))
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "frames = 0\n").unwrap();
    let status = semcom().args(["run", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let good = dir.path().join("good.toml");
    fs::write(&good, "frames = 1\nseeds = [0]\n[rig]\ncount = 4\nresolution = [120, 60]\n").unwrap();
    let out = dir.path().join("out");
    let status = semcom()
        .args(["run", "--framework", "m-gscm", "--snr-list", "10", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let runs = fs::read_to_string(out.join(RUNS_CSV)).unwrap();
    assert_eq!(runs.lines().count(), 2);

    let env_out = dir.path().join("env");
    let status = semcom()
        .env(semcom::harness::OUT_DIR_ENV, &env_out)
        .args(["run", "--framework", "s-gscm", "--snr-list", "inf", "--config"])
        .arg(&good)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_out.join(SUMMARY_CSV).exists());

    let base = dir.path().join("base.bin");
    assert!(semcom().args(["baseknow", "--config"]).arg(&good).arg("--out").arg(&base).status().unwrap().success());
    assert!(semcom::reconstruct::BaseKnowledge::from_bytes(&fs::read(&base).unwrap()).is_ok());

    let ppm = dir.path().join("view.ppm");
    let status = semcom()
        .args(["render", "--frame", "1", "--camera", "2", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&ppm)
        .status()
        .unwrap();
    assert!(status.success());
    let img = semcom::io::read_ppm(fs::File::open(&ppm).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (120, 60));
}
