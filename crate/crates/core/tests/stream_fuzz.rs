use std::io::Cursor;

use dart_core::stream_io::{FeatureBatch, GroundTruth, Matrix, StreamHeader, StreamReader, StreamWriter};
use proptest::prelude::*;

fn arb_stream() -> impl Strategy<Value = (StreamHeader, Vec<FeatureBatch>)> {
    (
        prop::collection::vec(1u32..6, 1..4),
        prop_oneof![Just(0u32), 2u32..5],
        any::<bool>(),
    )
        .prop_flat_map(|(dims, classes, labeled)| {
            let header = StreamHeader::new(dims.clone(), classes, labeled).unwrap();
            let batch = (1usize..5).prop_flat_map(move |n| {
                let layers: Vec<_> = dims
                    .iter()
                    .map(|&d| prop::collection::vec(-1e6f32..1e6, n * d as usize))
                    .collect();
                let logits = prop::collection::vec(-50f32..50.0, n * classes as usize);
                let labels = prop::collection::vec(prop_oneof![Just(0u8), Just(1u8), Just(255u8)], n);
                let dims = dims.clone();
                (layers, logits, labels).prop_map(move |(layers, logits, labels)| FeatureBatch {
                    index: 0,
                    layers: layers
                        .into_iter()
                        .zip(&dims)
                        .map(|(data, &d)| Matrix::new(n, d as usize, data))
                        .collect(),
                    logits: (classes > 0).then(|| Matrix::new(n, classes as usize, logits)),
                    labels: labeled.then(|| labels.into_iter().map(|b| GroundTruth::from_byte(b).unwrap()).collect()),
                })
            });
            (Just(header), prop::collection::vec(batch, 1..5))
        })
        .prop_map(|(header, mut batches)| {
            for (t, b) in batches.iter_mut().enumerate() {
                b.index = t as u32 * 3;
            }
            (header, batches)
        })
}

fn encode(header: &StreamHeader, batches: &[FeatureBatch]) -> Vec<u8> {
    let mut w = StreamWriter::new(Vec::new(), header.clone()).unwrap();
    for b in batches {
        w.write_batch(b).unwrap();
    }
    w.finish().unwrap().0
}

proptest! {
    #[test]
    fn read_after_write_is_identity((header, batches) in arb_stream()) {
        let bytes = encode(&header, &batches);
        let expected_len = header.byte_len() + batches.iter().map(|b| b.byte_len()).sum::<usize>();
        prop_assert_eq!(bytes.len(), expected_len);
        let reader = StreamReader::new(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(reader.header(), &header);
        let read: Vec<FeatureBatch> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(read, batches);
    }

    #[test]
    fn truncation_is_an_error_not_a_panic((header, batches) in arb_stream(), cut in 0.0f64..1.0) {
        let bytes = encode(&header, &batches);
        let at = ((bytes.len() - 1) as f64 * cut) as usize;
        let prefix = &bytes[..at];
        let outcome = StreamReader::new(Cursor::new(prefix))
            .and_then(|r| r.collect::<Result<Vec<_>, _>>());
        // a cut on a batch boundary is a shorter valid stream
        if let Ok(read) = outcome {
            prop_assert!(read.len() < batches.len());
            prop_assert_eq!(&read[..], &batches[..read.len()]);
        }
    }
}
