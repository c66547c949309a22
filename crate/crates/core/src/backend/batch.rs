use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use super::{Backend, ItemResult, Request, Response};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Append-only completion log; completed ids are skipped on restart.
    pub log: Option<PathBuf>,
    /// Halt with [`Error::Halted`] after this many new requests.
    pub stop_after: Option<usize>,
}

impl BatchOptions {
    pub fn with_log(path: impl Into<PathBuf>) -> Self {
        BatchOptions {
            log: Some(path.into()),
            stop_after: None,
        }
    }
}

/// Reads a completion log. A trailing line without a newline is the
/// remnant of an interrupted write and is ignored; the returned length is
/// the byte offset where valid content ends.
pub fn load_completion_log(path: &Path) -> Result<(BTreeMap<String, ItemResult>, u64)> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok((done, 0));
    }
    let bytes = fs::read(path).at(path)?;
    let name = path.display().to_string();
    let mut valid = 0usize;
    for (i, line) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        if !line.ends_with(b"\n") {
            break;
        }
        valid += line.len();
        let text = std::str::from_utf8(line)
            .map_err(|e| Error::parse(&name, i + 1, e.to_string()))?
            .trim();
        if text.is_empty() {
            continue;
        }
        let resp: Response =
            serde_json::from_str(text).map_err(|e| Error::parse(&name, i + 1, e.to_string()))?;
        let id = resp.id.clone();
        let item = resp
            .into_item(&id)
            .map_err(|e| Error::parse(&name, i + 1, e.to_string()))?;
        done.insert(id, item);
    }
    Ok((done, valid as u64))
}

/// Runs `requests` through `backend` with up to `max_parallel` in flight.
/// Results come back in request order regardless of completion order.
pub fn run_batch(backend: &dyn Backend, requests: &[Request], opts: &BatchOptions) -> Result<Vec<ItemResult>> {
    let mut seen = HashSet::with_capacity(requests.len());
    for r in requests {
        if r.kind != backend.kind() {
            return Err(Error::Precondition(format!(
                "{} request {} sent to {} backend",
                r.kind,
                r.id,
                backend.kind()
            )));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Precondition(format!("duplicate request id {}", r.id)));
        }
    }

    let (done, log) = match &opts.log {
        Some(path) => {
            let (done, valid) = load_completion_log(path)?;
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).at(dir)?;
            }
            let mut f = OpenOptions::new().create(true).write(true).truncate(false).open(path).at(path)?;
            f.set_len(valid).at(path)?;
            f.seek(SeekFrom::End(0)).at(path)?;
            (done, Some((Mutex::new(f), path.clone())))
        }
        None => (BTreeMap::new(), None),
    };

    let pending: Vec<usize> = (0..requests.len())
        .filter(|i| !done.contains_key(&requests[*i].id))
        .collect();
    let results: Mutex<Vec<Option<ItemResult>>> = Mutex::new(vec![None; requests.len()]);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = backend.spec().max_parallel.min(pending.len());

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= pending.len() || opts.stop_after.is_some_and(|n| k >= n) {
                    break;
                }
                let req = &requests[pending[k]];
                let outcome = backend.call(req).and_then(|item| {
                    if let Some((file, path)) = &log {
                        let mut line = serde_json::to_string(&Response::from_item(req.id.clone(), item.clone()))
                            .expect("response serializes");
                        line.push('\n');
                        let mut f = file.lock().expect("log lock");
                        f.write_all(line.as_bytes()).and_then(|_| f.flush()).at(path)?;
                    }
                    Ok(item)
                });
                match outcome {
                    Ok(item) => results.lock().expect("results lock")[pending[k]] = Some(item),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        failure.lock().expect("failure lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let results = results.into_inner().expect("results lock");
    if let Some(n) = opts.stop_after {
        if n < pending.len() {
            return Err(Error::Halted(format!(
                "stopped after {n} of {} pending requests",
                pending.len()
            )));
        }
    }
    Ok(results
        .into_iter()
        .zip(requests)
        .map(|(r, req)| r.unwrap_or_else(|| done[&req.id].clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendKind, BackendSpec, StubBackend};
    use serde_json::json;
    use std::sync::atomic::AtomicUsize;

    /// Counts calls and echoes the id, failing ids that start with "f".
    struct Counting {
        spec: BackendSpec,
        calls: AtomicUsize,
    }

    impl Backend for Counting {
        fn spec(&self) -> &BackendSpec {
            &self.spec
        }
        fn call(&self, r: &Request) -> Result<ItemResult> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            // finish out of order
            let n: u64 = r.id[1..].parse().unwrap();
            thread::sleep(std::time::Duration::from_millis((7 - n % 7) * 2));
            Ok(if r.id.starts_with('f') { Err("nope".into()) } else { Ok(json!(r.id)) })
        }
    }

    fn counting(par: usize) -> Counting {
        let mut spec = BackendSpec::stub(BackendKind::Asr);
        spec.max_parallel = par;
        Counting { spec, calls: AtomicUsize::new(0) }
    }

    fn reqs(n: usize) -> Vec<Request> {
        (0..n)
            .map(|i| Request {
                id: format!("{}{i}", if i % 5 == 4 { 'f' } else { 's' }),
                kind: BackendKind::Asr,
                payload: json!({}),
            })
            .collect()
    }

    #[test]
    fn order_is_preserved_under_parallelism() {
        let b = counting(4);
        let rs = reqs(30);
        let out = run_batch(&b, &rs, &BatchOptions::default()).unwrap();
        for (r, o) in rs.iter().zip(&out) {
            match o {
                Ok(v) => assert_eq!(v, &json!(r.id)),
                Err(_) => assert!(r.id.starts_with('f')),
            }
        }
    }

    #[test]
    fn restart_skips_completed_items() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.jsonl");
        let rs = reqs(20);
        let b = counting(3);
        let opts = BatchOptions { log: Some(log.clone()), stop_after: Some(7) };
        assert!(matches!(run_batch(&b, &rs, &opts), Err(Error::Halted(_))));
        assert_eq!(b.calls.load(Ordering::SeqCst), 7);

        // simulate a kill in the middle of a log write
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"id\":\"s19\",\"ok\":tr").unwrap();
        drop(f);

        let b2 = counting(3);
        let out = run_batch(&b2, &rs, &BatchOptions::with_log(&log)).unwrap();
        assert_eq!(b2.calls.load(Ordering::SeqCst), 13);
        let reference = run_batch(&counting(1), &rs, &BatchOptions::default()).unwrap();
        assert_eq!(out, reference);
        let (done, _) = load_completion_log(&log).unwrap();
        assert_eq!(done.len(), 20);

        let b3 = counting(2);
        assert_eq!(run_batch(&b3, &rs, &BatchOptions::with_log(&log)).unwrap(), reference);
        assert_eq!(b3.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn duplicate_ids_and_wrong_kind_are_rejected() {
        let b = counting(1);
        let mut rs = reqs(2);
        rs[1].id = rs[0].id.clone();
        assert!(run_batch(&b, &rs, &BatchOptions::default()).is_err());
        let mut rs = reqs(1);
        rs[0].kind = BackendKind::Tts;
        assert!(run_batch(&b, &rs, &BatchOptions::default()).is_err());
    }

    #[test]
    fn stub_timeout_is_an_item_failure() {
        let mut spec = BackendSpec::stub(BackendKind::Asr);
        spec.timeout_s = 0.01;
        spec.stub.delay_ms = 1_000;
        let b = StubBackend::new(spec);
        let out = run_batch(&b, &reqs(1), &BatchOptions::default()).unwrap();
        assert!(out[0].as_ref().unwrap_err().contains("timeout"));
    }
}
