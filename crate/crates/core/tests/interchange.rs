use std::fs;
use std::path::PathBuf;

use recall_core::encoder::{load_embedding_file, write_embedding_file, Embedding, EmbeddingFile, Encoder, StdioEncoder};
use recall_core::raster::ImageBuffer;
use recall_core::Error;

/// Answers each request with the byte size of the named file, in order.
const PLAIN: &str = r#"
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/')
  path=$(printf '%s' "$line" | sed 's/.*"path":"\([^"]*\)".*/\1/')
  printf '{"id":"%s","dim":2,"values":[%s,1.5]}\n' "$id" "$(wc -c < "$path")"
done
"#;

/// Like [`PLAIN`] but answers each pair of requests in reverse, so it only
/// suits batches of even size.
const SWAPPING: &str = r#"
held=""
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/')
  path=$(printf '%s' "$line" | sed 's/.*"path":"\([^"]*\)".*/\1/')
  size=$(wc -c < "$path")
  out=$(printf '{"id":"%s","dim":2,"values":[%s,1.5]}' "$id" "$size")
  if [ -z "$held" ]; then
    held="$out"
  else
    printf '%s\n%s\n' "$out" "$held"
    held=""
  fi
done
[ -n "$held" ] && printf '%s\n' "$held"
"#;

fn peer(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

fn files(dir: &std::path::Path, n: usize) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let p = dir.join(format!("f{i:03}.bin"));
            fs::write(&p, vec![0u8; i + 1]).unwrap();
            p
        })
        .collect()
}

#[test]
fn child_process_passes_conformance_with_64_pipelined_requests() {
    let dir = tempfile::tempdir().unwrap();
    let paths = files(dir.path(), 64);
    let encoder = StdioEncoder::spawn("sizes", 2, &peer(SWAPPING)).unwrap();
    let report = encoder.conformance(&paths).unwrap();
    assert_eq!(report.requests, 64);
    assert_eq!(report.responses, 64);
    assert!(report.bijective);
    assert_eq!(report.reordered, 64);
    assert_eq!(report.dim, 2);

    let embeddings = encoder.stdio_encode(&paths).unwrap();
    for (i, e) in embeddings.iter().enumerate() {
        assert_eq!(e.values(), &[(i + 1) as f32, 1.5]);
    }
}

#[test]
fn encoder_trait_goes_through_scratch_pngs() {
    let encoder = StdioEncoder::spawn("sizes", 2, &peer(PLAIN)).unwrap();
    let a = ImageBuffer::filled(8, 8, 3, 10).unwrap();
    let b = ImageBuffer::from_fn(8, 8, 3, |x, y, c| (x * 31 + y * 17 + c * 5) as u8).unwrap();
    let ea = encoder.encode(&a).unwrap();
    let eb = encoder.encode(&b).unwrap();
    assert_eq!(ea.values()[0] as usize, a.encode_png().unwrap().len());
    assert_eq!(eb.values()[0] as usize, b.encode_png().unwrap().len());
    assert_eq!(encoder.encode_batch(&[&b, &a]).unwrap(), vec![eb, ea]);
}

#[test]
fn declared_dim_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let paths = files(dir.path(), 3);
    let encoder = StdioEncoder::spawn("sizes", 5, &peer(PLAIN)).unwrap();
    assert!(matches!(
        encoder.stdio_encode(&paths),
        Err(Error::DimensionMismatch { expected: 5, found: 2 })
    ));
}

#[test]
fn emb1_files_written_here_load_with_exact_bits() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<(String, Embedding)> = (0..3)
        .map(|i| {
            let v: Vec<f32> = (0..768).map(|j| ((i * 768 + j) as f32).sin() * 1e-3).collect();
            (format!("img{i}"), Embedding::new(v).unwrap())
        })
        .collect();
    let file = EmbeddingFile { dim: 768, records };
    let path = dir.path().join("clip.emb1");
    write_embedding_file(&path, &file).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"EMB1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 768);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    assert_eq!(bytes.len(), 16 + 3 * (2 + 4 + 768 * 4));

    assert_eq!(load_embedding_file(&path, Some(768)).unwrap(), file);
    assert!(matches!(
        load_embedding_file(&path, Some(1000)),
        Err(Error::DimensionMismatch { expected: 1000, found: 768 })
    ));
}

/// A file as an exporter would write it, assembled by hand.
#[test]
fn hand_assembled_file_loads() {
    let mut bytes = b"EMB1".to_vec();
    bytes.extend(1000u32.to_le_bytes());
    bytes.extend(2u64.to_le_bytes());
    for (id, v) in [("n01", 0.25f32), ("t02", -2.0)] {
        bytes.extend((id.len() as u16).to_le_bytes());
        bytes.extend(id.as_bytes());
        for _ in 0..1000 {
            bytes.extend(v.to_le_bytes());
        }
    }
    let file = EmbeddingFile::decode(&bytes, Some(1000)).unwrap();
    assert_eq!(file.records.len(), 2);
    assert_eq!(file.records[1].0, "t02");
    assert!(file.records[1].1.values().iter().all(|&v| v == -2.0));
    assert!(matches!(
        EmbeddingFile::decode(&bytes[..bytes.len() - 1], None),
        Err(Error::TruncatedFile(_))
    ));
}
