use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;

use flate2::{write::GzEncoder, Compression};
use sha2::{Digest, Sha256};

use symstdp::dataio::{
    fetch_dataset, CacheRecord, DatasetManifest, DatasetName, IdxData, ManifestFile, Source, Split,
};
use symstdp::SnnError;

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

struct Fixture {
    files: Vec<(String, Vec<u8>)>,
    manifest: DatasetManifest,
}

fn fixture(pin: bool) -> Fixture {
    let images = |n: usize, salt: usize| {
        IdxData::Images {
            count: n,
            rows: 28,
            cols: 28,
            pixels: (0..n * 784).map(|i| ((i * 31 + salt) % 256) as u8).collect(),
        }
        .to_bytes()
    };
    let labels = |n: usize| IdxData::Labels((0..n).map(|i| (i % 10) as u8).collect()).to_bytes();
    let files = vec![
        ("train-images-idx3-ubyte".to_string(), images(12, 1)),
        ("train-labels-idx1-ubyte".to_string(), labels(12)),
        ("t10k-images-idx3-ubyte".to_string(), images(5, 2)),
        ("t10k-labels-idx1-ubyte".to_string(), labels(5)),
    ];
    let mf = |i: usize| ManifestFile {
        filename: files[i].0.clone(),
        sha256: pin.then(|| hex(&files[i].1)),
    };
    let manifest = DatasetManifest {
        name: DatasetName::Mnist,
        mirrors: vec!["http://127.0.0.1:9/".into()],
        train_images: mf(0),
        train_labels: mf(1),
        test_images: mf(2),
        test_labels: mf(3),
        train_size: 12,
        test_size: 5,
    };
    Fixture { files, manifest }
}

fn write_source(dir: &Path, f: &Fixture, compress: bool) {
    for (name, bytes) in &f.files {
        if compress {
            std::fs::write(dir.join(format!("{name}.gz")), gz(bytes)).unwrap();
        } else {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }
}

#[test]
fn import_from_gzipped_directory_then_warm_cache() {
    let f = fixture(true);
    let src = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    write_source(src.path(), &f, true);

    let h = fetch_dataset(&f.manifest, cache.path(), Source::LocalDir(src.path())).unwrap();
    assert_eq!(h.dir, cache.path().join("mnist"));
    let train = h.load(Split::Train).unwrap();
    assert_eq!(train.len(), 12);
    assert_eq!(train[3].label, 3);
    assert_eq!(train[0].pixels[1], 32.0);

    // Cached files are raw IDX whose digests match the manifest.
    let raw = std::fs::read(h.dir.join(&f.files[0].0)).unwrap();
    assert_eq!(raw, f.files[0].1);
    let record = CacheRecord::load(&h.dir).unwrap();
    assert_eq!(record.sha256[&f.files[2].0], hex(&f.files[2].1));

    // A warm cache needs no source at all.
    drop(src);
    let again = fetch_dataset(&f.manifest, cache.path(), Source::CacheOnly).unwrap();
    assert_eq!(again.load(Split::Test).unwrap().len(), 5);
}

#[test]
fn tampered_cache_is_rejected_with_both_digests() {
    let f = fixture(true);
    let src = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    write_source(src.path(), &f, false);
    let h = fetch_dataset(&f.manifest, cache.path(), Source::LocalDir(src.path())).unwrap();

    let target = h.dir.join(&f.files[1].0);
    let mut bytes = std::fs::read(&target).unwrap();
    bytes[9] ^= 0xff;
    std::fs::write(&target, &bytes).unwrap();
    match fetch_dataset(&f.manifest, cache.path(), Source::CacheOnly) {
        Err(SnnError::Digest {
            path,
            expected,
            actual,
        }) => {
            assert_eq!(path, target);
            assert_eq!(expected, hex(&f.files[1].1));
            assert_eq!(actual, hex(&bytes));
        }
        other => panic!("expected a digest error, got {other:?}"),
    }
}

#[test]
fn unpinned_digests_are_recorded_then_enforced() {
    let f = fixture(false);
    let src = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    write_source(src.path(), &f, false);
    let h = fetch_dataset(&f.manifest, cache.path(), Source::LocalDir(src.path())).unwrap();
    let record = CacheRecord::load(&h.dir).unwrap();
    assert_eq!(record.sha256.len(), 4);

    let target = h.dir.join(&f.files[2].0);
    let mut bytes = std::fs::read(&target).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&target, &bytes).unwrap();
    assert!(matches!(
        fetch_dataset(&f.manifest, cache.path(), Source::CacheOnly),
        Err(SnnError::Digest { .. })
    ));
}

#[test]
fn corrupt_source_is_not_cached() {
    let f = fixture(false);
    let src = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    write_source(src.path(), &f, false);
    let bad = src.path().join(&f.files[0].0);
    let bytes = std::fs::read(&bad).unwrap();
    std::fs::write(&bad, &bytes[..bytes.len() - 1]).unwrap();

    let e = fetch_dataset(&f.manifest, cache.path(), Source::LocalDir(src.path())).unwrap_err();
    assert!(matches!(e, SnnError::Idx { .. }), "{e}");
    assert!(!cache.path().join("mnist").join(&f.files[0].0).exists());
}

#[test]
fn unreachable_mirror_names_the_attempts() {
    let f = fixture(true);
    let cache = tempfile::tempdir().unwrap();
    let e = fetch_dataset(&f.manifest, cache.path(), Source::Mirrors).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, SnnError::Data(_)), "{msg}");
    assert!(msg.contains("127.0.0.1:9"), "{msg}");
    assert!(msg.contains("train-images-idx3-ubyte.gz"), "{msg}");

    let e = fetch_dataset(&f.manifest, cache.path(), Source::CacheOnly).unwrap_err();
    assert!(e.to_string().contains("symstdp fetch"), "{e}");
}

/// Serves `<name>.gz` for every fixture file and 404 otherwise.
fn serve(f: &Fixture, requests: usize) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/mirror/", listener.local_addr().unwrap());
    let files: Vec<(String, Vec<u8>)> = f
        .files
        .iter()
        .map(|(n, b)| (format!("/mirror/{n}.gz"), gz(b)))
        .collect();
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap() == 0 || h == "\r\n" {
                    break;
                }
            }
            match files.iter().find(|(p, _)| *p == path) {
                Some((_, body)) => {
                    write!(
                        stream,
                        "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        body.len()
                    )
                    .unwrap();
                    stream.write_all(body).unwrap();
                }
                None => {
                    write!(stream, "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").unwrap();
                }
            }
        }
    });
    (base, handle)
}

#[test]
fn falls_through_to_a_working_mirror() {
    let mut f = fixture(true);
    let (base, server) = serve(&f, 4);
    f.manifest.mirrors = vec!["http://127.0.0.1:9/".into(), base];
    let cache = tempfile::tempdir().unwrap();
    let h = fetch_dataset(&f.manifest, cache.path(), Source::Mirrors).unwrap();
    server.join().unwrap();
    assert_eq!(h.load(Split::Train).unwrap().len(), 12);
    for (name, bytes) in &f.files {
        assert_eq!(&std::fs::read(h.dir.join(name)).unwrap(), bytes);
    }
}
