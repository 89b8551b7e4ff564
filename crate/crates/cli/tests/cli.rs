use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stemeval::audio::{save_wav, AudioBuffer, SampleFormat, StemKind};
use stemeval::fad::{write_embeddings, EmbeddingMatrix};

const RATE: u32 = 8000;
const LEN: usize = 12000;

fn stemeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stemeval")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(o.stderr.trim_ascii()).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}, stderr {}", o.status, String::from_utf8_lossy(&o.stderr));
}

// Small deterministic generator so fixtures need no RNG crate.
fn tone(seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..LEN)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn wav(path: &Path, channels: Vec<Vec<f64>>, rate: u32) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    save_wav(path, &AudioBuffer::new(channels, rate).unwrap(), SampleFormat::Float32).unwrap();
}

/// (system, interference gain, noise gain)
const SYSTEMS: [(&str, f64, f64); 3] = [("sysA", 0.05, 0.02), ("sysB", 0.3, 0.05), ("sysC", 0.1, 0.4)];

/// Two tracks, four stereo stems each, three systems.
fn dataset(root: &Path) {
    for (t, track) in ["t1", "t2"].iter().enumerate() {
        let refs: Vec<Vec<f64>> = (0..4).map(|k| tone(100 * t as u64 + k)).collect();
        for (k, stem) in StemKind::ALL.iter().enumerate() {
            let r = &refs[k];
            let right: Vec<f64> = r.iter().map(|v| 0.8 * v).collect();
            wav(&root.join(track).join("references").join(format!("{stem}.wav")), vec![r.clone(), right], RATE);
            for (s, (name, gi, gn)) in SYSTEMS.iter().enumerate() {
                let other = &refs[(k + 1) % 4];
                let noise = tone(1000 + 10 * t as u64 + 3 * k as u64 + s as u64);
                let est: Vec<f64> = (0..LEN).map(|i| r[i] + gi * other[i] + gn * noise[i]).collect();
                let right: Vec<f64> = est.iter().map(|v| 0.8 * v).collect();
                wav(&root.join(track).join("systems").join(name).join(format!("{stem}.wav")), vec![est, right], RATE);
            }
        }
    }
}

fn eval(root: &Path, metrics: &str, extra: &[&str]) -> Output {
    let mut args = vec!["eval", "--root", root.to_str().unwrap(), "--metrics", metrics, "--filter-len", "32"];
    args.extend_from_slice(extra);
    stemeval(&args)
}

#[test]
fn eval_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root);
    let out = eval(&root, "SI-SDR", &[]);
    assert_ok(&out);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "track_id,stem,condition,metric,value");
    // 2 tracks x 4 stems x 3 systems.
    assert_eq!(lines.len(), 1 + 24);
    assert!(lines[1].starts_with("t1,vocals,sysA,SI-SDR,"));

    let all = eval(&root, "SDR,ISR,SIR,SAR,SI-SDR,SI-SIR,SI-SAR,SD-SDR,RW-SISDR(0.5)", &[]);
    assert_ok(&all);
    let again = stemeval(&[
        "--workers", "1", "eval", "--root", root.to_str().unwrap(), "--metrics",
        "SDR,ISR,SIR,SAR,SI-SDR,SI-SIR,SI-SAR,SD-SDR,RW-SISDR(0.5)", "--filter-len", "32",
    ]);
    assert_ok(&again);
    assert_eq!(all.stdout, again.stdout);
    assert_eq!(stdout(&all).lines().count(), 1 + 24 * 9);
}

#[test]
fn one_system_one_track_gives_a_row_per_stem() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (k, stem) in StemKind::ALL.iter().enumerate() {
        let r = tone(k as u64);
        wav(&root.join("song/references").join(format!("{stem}.wav")), vec![r.clone()], RATE);
        wav(&root.join("song/systems/same").join(format!("{stem}.wav")), vec![r], RATE);
    }
    let out = eval(root, "SI-SDR,SDR", &[]);
    assert_ok(&out);
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.contains(",SI-SDR,")).count(), 4);
    for line in text.lines().skip(1) {
        assert!(line.ends_with(",inf"), "{line}");
    }
}

#[test]
fn missing_files_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let r = tone(1);
    wav(&root.join("a/references/vocals.wav"), vec![r.clone()], RATE);
    wav(&root.join("a/systems/x/vocals.wav"), vec![r.clone()], RATE);
    wav(&root.join("a/systems/x/bass.wav"), vec![r.clone()], RATE);
    wav(&root.join("b/references/drums.wav"), vec![r.clone()], RATE);
    wav(&root.join("b/systems/y/drums.wav"), vec![r], RATE);
    let out = eval(root, "SI-SDR,FAD-clap", &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "missing_files");
    let missing: Vec<String> = err["missing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned()).collect();
    assert!(missing.iter().any(|m| m == "a: reference bass"), "{missing:?}");
    // reference and system embeddings for three (track, system, stem) triples
    assert_eq!(missing.iter().filter(|m| m.ends_with(".emb")).count(), 6, "{missing:?}");
    assert!(out.stdout.is_empty());
}

#[test]
fn sample_rate_mismatch_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    wav(&root.join("a/references/vocals.wav"), vec![tone(1)], RATE);
    wav(&root.join("a/systems/x/vocals.wav"), vec![tone(2)], 16000);
    let out = eval(root, "SI-SDR", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "sample_rate_mismatch");
}

#[test]
fn dependent_references_exit_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let r = tone(3);
    wav(&root.join("a/references/vocals.wav"), vec![r.clone()], RATE);
    wav(&root.join("a/references/drums.wav"), vec![r.clone()], RATE);
    wav(&root.join("a/systems/x/vocals.wav"), vec![r], RATE);
    let out = eval(root, "SI-SDR", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "dependent_references");
}

#[test]
fn bad_metric_name() {
    let dir = tempfile::tempdir().unwrap();
    dataset(&dir.path().join("d"));
    let out = eval(&dir.path().join("d"), "SI-SDR,PESQ", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("PESQ"));
}

fn emb(path: &Path, rows: &[Vec<f32>]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_embeddings(path, &EmbeddingMatrix::from_rows(rows).unwrap()).unwrap();
}

#[test]
fn fad_scores_are_inverted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    wav(&root.join("a/references/bass.wav"), vec![tone(1)], RATE);
    wav(&root.join("a/systems/near/bass.wav"), vec![tone(2)], RATE);
    wav(&root.join("a/systems/far/bass.wav"), vec![tone(3)], RATE);
    let base = root.join("a/embeddings/vggish");
    emb(&base.join("reference/bass.emb"), &[vec![-1.0], vec![0.0], vec![1.0]]);
    emb(&base.join("near/bass.emb"), &[vec![-1.0], vec![0.0], vec![1.0]]);
    emb(&base.join("far/bass.emb"), &[vec![-1.0], vec![1.0], vec![3.0]]);
    // Plain FAD uses embeddings/<condition>/ directly.
    emb(&root.join("a/embeddings/reference/bass.emb"), &[vec![0.0, 1.0], vec![1.0, 0.0]]);
    emb(&root.join("a/embeddings/near/bass.emb"), &[vec![0.0, 1.0], vec![1.0, 0.0]]);
    emb(&root.join("a/embeddings/far/bass.emb"), &[vec![5.0, 1.0], vec![6.0, 0.0]]);
    let out = eval(root, "FAD-vggish,FAD", &[]);
    assert_ok(&out);
    let text = stdout(&out);
    let value = |cond: &str, metric: &str| -> f64 {
        let prefix = format!("a,bass,{cond},{metric},");
        text.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap().parse().unwrap()
    };
    assert!((value("far", "FAD-vggish") + 2.0).abs() < 1e-3);
    assert!(value("near", "FAD-vggish").abs() < 1e-9);
    assert!(value("far", "FAD") < -20.0);

    let direct = stemeval(&[
        "fad",
        base.join("reference/bass.emb").to_str().unwrap(),
        base.join("far/bass.emb").to_str().unwrap(),
    ]);
    assert_ok(&direct);
    let v: Value = serde_json::from_slice(&direct.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 2.0).abs() < 1e-3);
    assert_eq!(v["inverted"].as_f64().unwrap(), -v["distance"].as_f64().unwrap());
    assert_eq!(v["covariance_divisor"], "n-1");
}

#[test]
fn manifest_overrides_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    wav(&root.join("audio/ref_vox.wav"), vec![tone(1)], RATE);
    wav(&root.join("audio/est_vox.wav"), vec![tone(1)], RATE);
    let manifest = root.join("run.json");
    fs::write(
        &manifest,
        r#"{"tracks": [{"track_id": "song", "references": {"vocals": "audio/ref_vox.wav"},
                         "systems": {"copy": {"Vocals": "audio/est_vox.wav"}}}]}"#,
    )
    .unwrap();
    let out = stemeval(&["eval", "--manifest", manifest.to_str().unwrap(), "--metrics", "SI-SDR"]);
    assert_ok(&out);
    assert_eq!(stdout(&out), "track_id,stem,condition,metric,value\nsong,vocals,copy,SI-SDR,inf\n");
}

const RATINGS_HEADER: &str = "participant_id,batch,track_id,stem,condition,score,page_time_s\n";

/// Every listener ranks systems in the order given by `rank`, with a clean
/// reference and anchor.
fn ratings_csv(path: &Path, tracks: &[&str], rank: impl Fn(&str, &str, StemKind, usize) -> u8) {
    let mut text = String::from(RATINGS_HEADER);
    for user in ["u1", "u2", "u3"] {
        for track in tracks {
            for stem in StemKind::ALL {
                text += &format!("{user},b1,{track},{stem},reference,100,60\n");
                text += &format!("{user},b1,{track},{stem},anchor,5,60\n");
                for (i, (sys, _, _)) in SYSTEMS.iter().enumerate() {
                    text += &format!("{user},b1,{track},{stem},{sys},{},60\n", rank(user, track, stem, i));
                }
            }
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn analyze_perfect_agreement_and_qc_noop() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut scores = String::from("track_id,stem,condition,metric,value\n");
    for stem in StemKind::ALL {
        for (i, (sys, _, _)) in SYSTEMS.iter().enumerate() {
            scores += &format!("t1,{stem},{sys},M,{}\n", -(i as f64));
            scores += &format!("t1,{stem},{sys},Rev,{}\n", i as f64);
        }
    }
    fs::write(root.join("scores.csv"), scores).unwrap();
    ratings_csv(&root.join("ratings.csv"), &["t1"], |_, _, _, i| 90 - 30 * i as u8);
    let run = |max: &str, out: &str, extra: &[&str]| {
        let mut args = vec![
            "analyze", "--ratings", root.join("ratings.csv").to_str().unwrap().to_owned().leak(),
            "--scores", root.join("scores.csv").to_str().unwrap().to_owned().leak(),
            "--max-violations", max, "--out-dir", root.join(out).to_str().unwrap().to_owned().leak(),
        ];
        args.extend_from_slice(extra);
        let o = stemeval(&args);
        assert_ok(&o);
        fs::read_to_string(root.join(out).join("tables.csv")).unwrap()
    };
    let table = run("2", "out2", &["--strict-qc"]);
    assert_eq!(
        table,
        "stem,M,Rev\nVocals,1,-1\nDrums,1,-1\nBass,1,-1\nOther,1,-1\nAverage,1,-1\n"
    );
    assert_eq!(run("4", "out4", &[]), table);
    let strict = fs::read_to_string(root.join("out2/tables_strict.csv")).unwrap();
    assert_eq!(strict, table);
    let report: Value = serde_json::from_str(&fs::read_to_string(root.join("out2/report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["M"]["vocals"], 1.0);
    assert_eq!(report["metrics"]["M"]["average"], 1.0);
    assert_eq!(report["metadata"]["tau_variant"], "tau-b");
    assert_eq!(report["strict_qc"]["max_violations"], 0);
    assert_eq!(report["qc"]["histogram"], serde_json::json!([12, 0, 0, 0, 0]));
    assert!(root.join("out2/qc_violations.csv").is_file());
    assert!(root.join("out2/qc_summary.json").is_file());
}

#[test]
fn analyze_reports_missing_scores() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("scores.csv"), "track_id,stem,condition,metric,value\nt1,vocals,sysA,M,1\n").unwrap();
    ratings_csv(&root.join("ratings.csv"), &["t1"], |_, _, _, i| 90 - 30 * i as u8);
    let o = stemeval(&[
        "analyze", "--ratings", root.join("ratings.csv").to_str().unwrap(), "--scores",
        root.join("scores.csv").to_str().unwrap(), "--out-dir", root.join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "join");
    assert!(err["missing"].as_array().unwrap().iter().any(|m| m == "t1/vocals/sysB/M"));
}

fn table_cell(table: &str, stem: &str, metric: &str) -> f64 {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == metric).unwrap();
    let row = lines.find(|l| l.starts_with(stem)).unwrap();
    row.split(',').nth(col).unwrap().parse().unwrap()
}

#[test]
fn sweep_endpoints_match_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    dataset(&data);
    // Mixed listener orders so the two endpoints differ.
    let orders = [[80u8, 40, 20], [30, 90, 50], [70, 20, 95]];
    ratings_csv(&root.join("ratings.csv"), &["t1", "t2"], |user, track, stem, i| {
        let u = user[1..].parse::<usize>().unwrap() + track.len() + stem as usize;
        orders[u % 3][i]
    });
    let scores = eval(&data, "SI-SIR,SI-SAR", &[]);
    assert_ok(&scores);
    fs::write(root.join("scores.csv"), &scores.stdout).unwrap();
    let a = stemeval(&[
        "analyze", "--ratings", root.join("ratings.csv").to_str().unwrap(), "--scores",
        root.join("scores.csv").to_str().unwrap(), "--out-dir", root.join("o").to_str().unwrap(),
    ]);
    assert_ok(&a);
    let table = fs::read_to_string(root.join("o/tables.csv")).unwrap();

    let s = stemeval(&[
        "sweep", "--root", data.to_str().unwrap(), "--ratings", root.join("ratings.csv").to_str().unwrap(),
        "--grid-step", "0.5",
    ]);
    assert_ok(&s);
    let text = stdout(&s);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(text.lines().next().unwrap(), "w,stem,mean_tau");
    assert_eq!(rows.len(), 3 * 4);
    let ws: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(ws.into_iter().collect::<Vec<_>>(), vec!["0", "0.5", "1"]);
    for stem in StemKind::ALL {
        let at = |w: &str| -> f64 {
            rows.iter().find(|r| r[0] == w && r[1] == stem.as_str()).unwrap()[2].parse().unwrap()
        };
        assert_eq!(at("1"), table_cell(&table, stem.label(), "SI-SIR"), "{stem}");
        assert_eq!(at("0"), table_cell(&table, stem.label(), "SI-SAR"), "{stem}");
    }
}

#[test]
fn ratings_qc_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut text = String::from(RATINGS_HEADER);
    text += "u1,b,t,bass,reference,95,10\nu1,b,t,bass,anchor,90,10\nu1,b,t,bass,A,92,10\n";
    text += "u1,b,t,bass,B,not-a-number,10\n";
    fs::write(root.join("r.csv"), text).unwrap();
    let o = stemeval(&["ratings-qc", "--ratings", root.join("r.csv").to_str().unwrap(), "--out-dir", root.join("q").to_str().unwrap()]);
    assert_ok(&o);
    let summary: Value = serde_json::from_str(&fs::read_to_string(root.join("q/qc_summary.json")).unwrap()).unwrap();
    // gap 5, stddev < 20, time 10 s: three checks fail.
    assert_eq!(summary["histogram"], serde_json::json!([0, 0, 0, 1, 0]));
    assert_eq!(summary["dropped_fraction"], 1.0);
    assert_eq!(summary["skipped_rows"][0]["line"], 5);
    let violations = fs::read_to_string(root.join("q/qc_violations.csv")).unwrap();
    assert!(violations.contains("u1,t,bass,1,0,1,1,3"), "{violations}");
    assert_eq!(fs::read_to_string(root.join("q/kept_ratings.csv")).unwrap().lines().count(), 1);

    let strict = stemeval(&["--strict", "ratings-qc", "--ratings", root.join("r.csv").to_str().unwrap(), "--out-dir", root.join("q2").to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(1));
    assert_eq!(stderr_json(&strict)["error"], "row");

    let relaxed = stemeval(&[
        "ratings-qc", "--ratings", root.join("r.csv").to_str().unwrap(), "--out-dir", root.join("q3").to_str().unwrap(),
        "--max-violations", "4", "--min-page-time", "5",
    ]);
    assert_ok(&relaxed);
    let summary: Value = serde_json::from_str(&fs::read_to_string(root.join("q3/qc_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["histogram"], serde_json::json!([0, 0, 1, 0, 0]));
    assert_eq!(summary["dropped_pages"], 0);
}

#[test]
fn anchor_and_fragment_commands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let input: PathBuf = root.join("in.wav");
    let long: Vec<f64> = (0..3 * 8000).map(|i| (i as f64 * 0.01).sin()).collect();
    wav(&input, vec![long.clone()], 8000);
    let frag = root.join("frag.wav");
    let o = stemeval(&["fragment", input.to_str().unwrap(), frag.to_str().unwrap(), "--start", "1", "--duration", "1.5", "--format", "pcm16"]);
    assert_ok(&o);
    let buf = stemeval::audio::load_wav(&frag).unwrap();
    assert_eq!(buf.len(), 12000);
    assert!((buf.channel(0)[0] - long[8000]).abs() < 1e-4);

    let short = stemeval(&["fragment", input.to_str().unwrap(), frag.to_str().unwrap(), "--start", "2.5"]);
    assert_eq!(short.status.code(), Some(1));
    assert_eq!(stderr_json(&short)["error"], "short_fragment");

    let anchored = root.join("anchor.wav");
    let o = stemeval(&["anchor", input.to_str().unwrap(), anchored.to_str().unwrap(), "--stem", "Drums"]);
    assert_ok(&o);
    assert_eq!(stemeval::audio::load_wav(&anchored).unwrap().len(), long.len());
    let bad = stemeval(&["anchor", input.to_str().unwrap(), anchored.to_str().unwrap(), "--stem", "guitar"]);
    assert_ne!(bad.status.code(), Some(0));
}
