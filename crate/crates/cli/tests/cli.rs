use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dialektpipe::did::write_labeled_corpus;
use dialektpipe::model::{DialectRegion, Millis};
use dialektpipe::synth;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dialektpipe"));
    c.env_remove("DIALEKTPIPE_WORKSPACE").env_remove("DIALEKTPIPE_BACKEND_CONF");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const STUB_BACKENDS: &str = r#"
[diarizer]
transport = "stub"

[asr]
transport = "stub"

[phonemizer]
transport = "stub"

[embedder]
transport = "stub"

[tts]
transport = "stub"
"#;

/// Synthetic catalog, phoneme corpus, backend file and pipeline config.
fn fixture(root: &Path) -> PathBuf {
    let episodes = synth::random_corpus(2, Millis::from_secs(60), 11);
    synth::write_local_catalog(&root.join("catalog"), &episodes, 16_000).unwrap();
    write_labeled_corpus(
        &root.join("did.tsv"),
        &synth::dialect_corpus(&DialectRegion::ALL, 40, 60, 11),
    )
    .unwrap();
    fs::write(root.join("backends.toml"), STUB_BACKENDS).unwrap();
    let cfg = root.join("pipeline.toml");
    fs::write(
        &cfg,
        r#"
workspace = "ws"
created_at = "2024-01-01T00:00:00Z"

[ingest]
local = "catalog"
overrides = "catalog/overrides.tsv"

[did]
train_corpus = "did.tsv"
min_speaker_s = 10.0

[backends.diarizer]
transport = "stub"

[backends.asr]
transport = "stub"

[backends.phonemizer]
transport = "stub"
"#,
    )
    .unwrap();
    cfg
}

#[test]
fn pipeline_runs_and_reruns_as_noop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = run(&["pipeline", "--config", p(&cfg)]);
    let stats = ok(&out);
    assert!(stats.starts_with("Dialect"), "{stats}");
    assert!(stats.lines().any(|l| l.starts_with("Total")));
    assert!(dir.path().join("ws/manifest.jsonl").is_file());

    let again = run(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(ok(&again), stats);
    let err = String::from_utf8_lossy(&again.stderr);
    assert!(!err.contains("ran "), "{err}");
    assert_eq!(err.matches("skipped").count(), 6, "{err}");
}

#[test]
fn workspace_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let ws = dir.path().join("elsewhere");
    let out = bin()
        .args(["pipeline", "--config", p(&cfg), "--stop-after", "ingest"])
        .env("DIALEKTPIPE_WORKSPACE", &ws)
        .output()
        .unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("halted after stage ingest"));
    assert!(ws.join("ingest/episodes.jsonl").is_file());
    assert!(!dir.path().join("ws").exists());
}

#[test]
fn exit_codes_distinguish_config_data_and_backend_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "workspace = \"ws\"\nbogus = 1\n").unwrap();
    assert_eq!(run(&["pipeline", "--config", p(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["pipeline", "--no-such-flag"]).status.code(), Some(2));

    let manifest = dir.path().join("broken.jsonl");
    fs::write(&manifest, "not json\n").unwrap();
    assert_eq!(run(&["stats", "--manifest", p(&manifest)]).status.code(), Some(1));

    // a manifest of real segments, then an ASR whose command cannot start
    ok(&run(&["pipeline", "--config", p(&cfg), "--stop-after", "segment"]));
    let broken = dir.path().join("broken-backend.toml");
    fs::write(
        &broken,
        "[asr]\ntransport = \"subprocess\"\nendpoint_or_cmd = \"/nonexistent/asr-worker\"\n",
    )
    .unwrap();
    let out = run(&[
        "transcribe",
        "--manifest",
        p(&dir.path().join("ws/segments/manifest.jsonl")),
        "--out",
        p(&dir.path().join("tx")),
        "--backends",
        p(&broken),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stage_verbs_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = fixture(root);
    let pipeline_stats = ok(&run(&["pipeline", "--config", p(&cfg)]));

    let backends = root.join("backends.toml");
    let s = |x: &str| root.join(x);
    let counts = ok(&run(&[
        "ingest",
        "--local",
        p(&s("catalog")),
        "--overrides",
        p(&s("catalog/overrides.tsv")),
        "--dest",
        p(&s("cli/ingest")),
    ]));
    assert!(counts.contains("episodes\t2"), "{counts}");
    ok(&run(&[
        "diarize",
        "--episodes",
        p(&s("cli/ingest/episodes.jsonl")),
        "--out",
        p(&s("cli/diarize")),
        "--backends",
        p(&backends),
    ]));
    ok(&run(&[
        "segment",
        "--manifest",
        p(&s("cli/ingest/episodes.jsonl")),
        "--rttm-dir",
        p(&s("cli/diarize")),
        "--out",
        p(&s("cli/segments")),
    ]));
    let out = bin()
        .args([
            "transcribe",
            "--manifest",
            p(&s("cli/segments/manifest.jsonl")),
            "--out",
            p(&s("cli/transcribe")),
        ])
        .env("DIALEKTPIPE_BACKEND_CONF", &backends)
        .output()
        .unwrap();
    ok(&out);
    ok(&run(&["did", "train", "--model", p(&s("cli/model.json")), "--corpus", p(&s("did.tsv"))]));
    ok(&run(&[
        "did",
        "label",
        "--model",
        p(&s("cli/model.json")),
        "--manifest",
        p(&s("cli/transcribe/manifest.jsonl")),
        "--out",
        p(&s("cli/did")),
        "--min-speaker-s",
        "10",
        "--backends",
        p(&backends),
    ]));
    let stats = ok(&run(&["stats", "--manifest", p(&s("cli/did/manifest.jsonl")), "--csv", p(&s("cli/stats.csv"))]));
    assert_eq!(stats, pipeline_stats);
    assert_eq!(fs::read(s("cli/stats.csv")).unwrap(), fs::read(s("ws/stats/stats.csv")).unwrap());
    assert_eq!(
        fs::read(s("cli/did/speakers.tsv")).unwrap(),
        fs::read(s("ws/did/speakers.tsv")).unwrap()
    );

    // every relabeled segment's audio resolves from the output directory
    let manifest = dialektpipe::manifest::read_manifest(&s("cli/did/manifest.jsonl")).unwrap();
    assert!(!manifest.is_empty());
    for seg in manifest.segments() {
        assert!(s("cli/did").join(&seg.audio_path).is_file(), "{}", seg.audio_path.display());
    }
}

#[test]
fn subprocess_stub_matches_in_process_stub() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    ok(&run(&["pipeline", "--config", p(&cfg)]));

    let exe = env!("CARGO_BIN_EXE_dialektpipe");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("workspace = \"ws\"", "workspace = \"ws-sub\"")
        .replace(
            "[backends.asr]\ntransport = \"stub\"",
            &format!("[backends.asr]\ntransport = \"subprocess\"\nendpoint_or_cmd = \"{exe} backend-stub --kind asr\"\nmax_parallel = 2"),
        );
    let sub = dir.path().join("sub.toml");
    fs::write(&sub, text).unwrap();
    ok(&run(&["pipeline", "--config", p(&sub)]));

    let a = dialektpipe::manifest::read_manifest(&dir.path().join("ws/manifest.jsonl")).unwrap();
    let b = dialektpipe::manifest::read_manifest(&dir.path().join("ws-sub/manifest.jsonl")).unwrap();
    assert_ne!(a.header.config_hash, b.header.config_hash);
    assert_eq!(a.segments(), b.segments());
}

#[test]
fn backend_stub_speaks_the_line_protocol() {
    let mut child = bin()
        .args(["backend-stub", "--kind", "asr", "--fail-ids", "bad"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(stdin, r#"{{"id":"bad","kind":"asr","payload":{{"audio_path":"x.wav"}}}}"#).unwrap();
    writeln!(stdin, r#"{{"id":"t","kind":"tts","payload":{{}}}}"#).unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "bad");
    assert_eq!(lines[0]["ok"], false);
    assert_eq!(lines[1]["ok"], false);
}

#[test]
fn did_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let dialects = [DialectRegion::Bern, DialectRegion::Valais];
    write_labeled_corpus(&root.join("train.tsv"), &synth::dialect_corpus(&dialects, 50, 60, 1)).unwrap();
    write_labeled_corpus(&root.join("test.tsv"), &synth::dialect_corpus(&dialects, 20, 60, 2)).unwrap();
    let model = root.join("m.json");
    ok(&run(&["did", "train", "--model", p(&model), "--corpus", p(&root.join("train.tsv")), "--orders", "1,2"]));

    let report = ok(&run(&["did", "eval", "--model", p(&model), "--corpus", p(&root.join("test.tsv"))]));
    let f1: f64 = report.lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(f1 > 0.9, "{report}");

    let test = fs::read_to_string(root.join("test.tsv")).unwrap();
    let (label, phonemes) = test.lines().next().unwrap().split_once('\t').unwrap();
    let mut child = bin()
        .args(["did", "predict", "--model", p(&model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    writeln!(child.stdin.take().unwrap(), "{phonemes}").unwrap();
    let out = child.wait_with_output().unwrap();
    let line = ok(&out);
    assert_eq!(line.split('\t').next().unwrap(), label);
}

#[test]
fn audio_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let tone = dialektpipe::audio::tone(440.0, 1.0, 16_000, 0.5);
    let silence = dialektpipe::audio::AudioBuffer::silence(16_000, 16_000).unwrap();
    dialektpipe::audio::write_wav(&tone, &root.join("tone.wav")).unwrap();
    dialektpipe::audio::write_wav(&silence, &root.join("silence.wav")).unwrap();

    ok(&run(&["audio", "concat", "--out", p(&root.join("both.wav")), p(&root.join("silence.wav")), p(&root.join("tone.wav"))]));
    ok(&run(&["audio", "resample", "--in", p(&root.join("both.wav")), "--out", p(&root.join("r.wav")), "--rate", "22050"]));
    let r = dialektpipe::audio::read_wav(&root.join("r.wav")).unwrap();
    assert_eq!(r.sample_rate_hz(), 22_050);
    assert!((r.duration_s() - 2.0).abs() < 1e-3);

    let vad = ok(&run(&["audio", "vad", "--in", p(&root.join("r.wav"))]));
    let intervals: Vec<(f64, f64)> = vad
        .lines()
        .map(|l| {
            let (a, b) = l.split_once('\t').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(intervals.len(), 1, "{vad}");
    assert!((intervals[0].0 - 1.0).abs() <= 0.03 && (intervals[0].1 - 2.0).abs() <= 0.03, "{vad}");

    ok(&run(&["audio", "slice", "--in", p(&root.join("both.wav")), "--out", p(&root.join("s.wav")), "--start", "0.5", "--end", "1.25"]));
    assert_eq!(dialektpipe::audio::read_wav(&root.join("s.wav")).unwrap().len(), 12_000);
}

fn fill_sheet(path: &Path, smos: i32, cmos: i32, intel: i32) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let mut out = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        out += &format!("{},{smos},{cmos},{intel}\n", cols[..cols.len() - 3].join(","));
    }
    fs::write(path, out).unwrap();
}

#[test]
fn eval_auto_then_human_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let speakers = synth::write_reference_speakers(&root.join("refs"), &DialectRegion::ALL, 4, 5).unwrap();
    let mut table = String::new();
    for sp in &speakers {
        for c in &sp.clips {
            table += &format!("{}\t{}\t{}\n", sp.dialect, sp.speaker_id, c.display());
        }
    }
    fs::write(root.join("speakers.tsv"), table).unwrap();
    fs::write(root.join("texts.txt"), synth::sentences(60, 3).join("\n")).unwrap();
    fs::write(root.join("backends.toml"), STUB_BACKENDS).unwrap();
    write_labeled_corpus(&root.join("did.tsv"), &synth::dialect_corpus(&DialectRegion::ALL, 40, 60, 3)).unwrap();
    ok(&run(&["did", "train", "--model", p(&root.join("m.json")), "--corpus", p(&root.join("did.tsv"))]));

    let report = ok(&run(&[
        "eval",
        "auto",
        "--scenario",
        "short",
        "--seed",
        "5",
        "--texts",
        p(&root.join("texts.txt")),
        "--speakers",
        p(&root.join("speakers.tsv")),
        "--did-model",
        p(&root.join("m.json")),
        "--model",
        "base",
        "--model",
        "srg",
        "--out",
        p(&root.join("auto")),
        "--backends",
        p(&root.join("backends.toml")),
    ]));
    let csv = fs::read_to_string(root.join("auto/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 9, "{report}");
    assert!(csv.lines().skip(1).all(|l| l.contains(",0.000,1.000,1.000,")), "{csv}");

    let prep = ok(&run(&[
        "eval",
        "human-prepare",
        "--scenario",
        "short",
        "--seed",
        "5",
        "--items",
        p(&root.join("auto/items.jsonl")),
        "--raters",
        "r1,r2,r3,r4,r5",
        "--out",
        p(&root.join("sheets")),
    ]));
    assert_eq!(prep.lines().count(), 2, "{prep}");
    assert!(prep.lines().all(|l| l.contains("84 slots") && l.ends_with("16-17 per rater")), "{prep}");

    for r in ["r1", "r2", "r3", "r4", "r5"] {
        fill_sheet(&root.join(format!("sheets/short/base/{r}.csv")), 2, -1, 3);
        fill_sheet(&root.join(format!("sheets/short/srg/{r}.csv")), 4, 1, 4);
    }
    let table = ok(&run(&[
        "eval",
        "human-aggregate",
        "--scenario",
        "short",
        "--sheets",
        p(&root.join("sheets")),
        "--baseline",
        "base",
        "--csv",
        p(&root.join("mos.csv")),
    ]));
    let srg = table.lines().find(|l| l.starts_with("srg")).unwrap();
    assert!(srg.contains("4.00±0.00*") && srg.contains("1.00±0.00*"), "{table}");
    let base = table.lines().find(|l| l.starts_with("base")).unwrap();
    assert!(base.contains("2.00±0.00") && !base.contains('*'), "{table}");
}

#[test]
fn resume_after_kill_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let slow = fs::read_to_string(&cfg).unwrap().replace(
        "[backends.asr]\ntransport = \"stub\"",
        "[backends.asr]\ntransport = \"stub\"\nstub = { delay_ms = 40 }",
    );
    fs::write(&cfg, slow).unwrap();
    let clean = dir.path().join("clean");
    let killed = dir.path().join("killed");
    ok(&run(&["pipeline", "--config", p(&cfg), "--workspace", p(&clean)]));

    let mut child = bin()
        .args(["pipeline", "--config", p(&cfg), "--workspace", p(&killed)])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let started = std::time::Instant::now();
    let log_has_entries = || {
        fs::read_dir(killed.join("transcribe")).ok().is_some_and(|entries| {
            entries
                .flatten()
                .any(|e| e.file_name().to_string_lossy().starts_with("log-") && e.metadata().unwrap().len() > 0)
        })
    };
    while !log_has_entries() {
        assert!(started.elapsed().as_secs() < 60, "transcription never started");
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(!killed.join("manifest.jsonl").exists(), "run finished before the kill");
    assert!(killed.join(".lock").exists());

    ok(&run(&["pipeline", "--config", p(&cfg), "--workspace", p(&killed)]));
    for f in ["manifest.jsonl", "stats/stats.txt", "stats/stats.csv"] {
        assert_eq!(fs::read(clean.join(f)).unwrap(), fs::read(killed.join(f)).unwrap(), "{f}");
    }
}
