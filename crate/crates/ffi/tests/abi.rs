//! Exercises the C ABI exactly as a foreign caller would: through raw
//! pointers, status codes, and the thread-local error message.

use std::ffi::{CStr, CString};
use std::ptr;

use idol_ffi::*;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(idol_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

fn gen_stream() -> *mut IdolStream {
    let mut stream: *mut IdolStream = ptr::null_mut();
    let status = unsafe {
        idol_stream_gen_rotated_gaussians(2, 30, 4, 60.0, 0.2, 7, &mut stream)
    };
    assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());
    assert!(!stream.is_null());
    stream
}

#[test]
fn full_pipeline_through_the_abi() {
    unsafe {
        let stream = gen_stream();
        assert_eq!(idol_stream_pool_len(stream), 90);

        let mut classifier: *mut IdolClassifier = ptr::null_mut();
        let status =
            idol_classifier_train_source(stream, 16, 0.1, 15, 32, 7, &mut classifier);
        assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());

        let mut sequence: *mut IdolSequence = ptr::null_mut();
        let scorer = CString::new("discriminator").unwrap();
        let status = idol_discover_sequence(
            stream,
            classifier,
            scorer.as_ptr(),
            3,
            false,
            7,
            &mut sequence,
        );
        assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());
        assert_eq!(idol_sequence_num_domains(sequence), 3);

        // The three domains partition the 90-example pool without overlap.
        let mut seen = vec![false; 90];
        for m in 0..3 {
            let mut ids: *const usize = ptr::null();
            let mut len = 0usize;
            let status = idol_sequence_domain(sequence, m, &mut ids, &mut len);
            assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());
            assert_eq!(len, 30);
            for k in 0..len {
                let id = *ids.add(k);
                assert!(!seen[id], "example {id} listed twice");
                seen[id] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));

        let status = idol_sequence_domain(sequence, 3, &mut ptr::null(), &mut 0usize);
        assert_eq!(status, IdolStatus::IdolErrContract);
        assert!(last_error().contains("out of range"));

        let mut adapted: *mut IdolClassifier = ptr::null_mut();
        let mut accuracy = f64::NAN;
        let status = idol_gda_walk(
            classifier,
            stream,
            sequence,
            0.9,
            0.1,
            10,
            32,
            7,
            &mut adapted,
            &mut accuracy,
        );
        assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());
        assert!(accuracy.is_finite() && (0.0..=1.0).contains(&accuracy));

        let mut direct = f64::NAN;
        let status = idol_classifier_target_accuracy(adapted, stream, &mut direct);
        assert_eq!(status, IdolStatus::IdolOk, "{}", last_error());
        assert_eq!(direct, accuracy);

        idol_classifier_free(adapted);
        idol_sequence_free(sequence);
        idol_classifier_free(classifier);
        idol_stream_free(stream);
    }
}

#[test]
fn files_round_trip_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let stream_path = CString::new(dir.path().join("s.csv").to_str().unwrap()).unwrap();
    let model_path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    let seq_path = CString::new(dir.path().join("seq.txt").to_str().unwrap()).unwrap();
    unsafe {
        let stream = gen_stream();
        assert_eq!(
            idol_stream_save_csv(stream, stream_path.as_ptr()),
            IdolStatus::IdolOk
        );
        let mut loaded: *mut IdolStream = ptr::null_mut();
        assert_eq!(
            idol_stream_load_csv(stream_path.as_ptr(), &mut loaded),
            IdolStatus::IdolOk
        );
        assert_eq!(idol_stream_pool_len(loaded), idol_stream_pool_len(stream));

        let mut classifier: *mut IdolClassifier = ptr::null_mut();
        assert_eq!(
            idol_classifier_train_source(stream, 0, 0.1, 5, 32, 1, &mut classifier),
            IdolStatus::IdolOk
        );
        assert_eq!(
            idol_classifier_save(classifier, model_path.as_ptr()),
            IdolStatus::IdolOk
        );
        let mut reloaded: *mut IdolClassifier = ptr::null_mut();
        assert_eq!(
            idol_classifier_load(model_path.as_ptr(), &mut reloaded),
            IdolStatus::IdolOk
        );
        let (mut a, mut b) = (0.0f64, 0.0f64);
        idol_classifier_target_accuracy(classifier, stream, &mut a);
        idol_classifier_target_accuracy(reloaded, stream, &mut b);
        assert_eq!(a, b);

        let mut sequence: *mut IdolSequence = ptr::null_mut();
        let scorer = CString::new("confidence").unwrap();
        assert_eq!(
            idol_discover_sequence(stream, classifier, scorer.as_ptr(), 2, false, 1, &mut sequence),
            IdolStatus::IdolOk,
            "{}",
            last_error()
        );
        assert_eq!(
            idol_sequence_save(sequence, seq_path.as_ptr()),
            IdolStatus::IdolOk
        );
        let mut seq_loaded: *mut IdolSequence = ptr::null_mut();
        assert_eq!(
            idol_sequence_load(seq_path.as_ptr(), 90, &mut seq_loaded),
            IdolStatus::IdolOk
        );
        assert_eq!(idol_sequence_num_domains(seq_loaded), 2);

        idol_sequence_free(seq_loaded);
        idol_sequence_free(sequence);
        idol_classifier_free(reloaded);
        idol_classifier_free(classifier);
        idol_stream_free(loaded);
        idol_stream_free(stream);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    unsafe {
        // Null arguments.
        let mut stream: *mut IdolStream = ptr::null_mut();
        assert_eq!(
            idol_stream_load_csv(ptr::null(), &mut stream),
            IdolStatus::IdolErrNullArgument
        );
        assert!(last_error().contains("null"));
        assert_eq!(
            idol_stream_gen_rotated_gaussians(2, 30, 4, 60.0, 0.2, 7, ptr::null_mut()),
            IdolStatus::IdolErrNullArgument
        );

        // Contract violations from the library surface as IDOL_ERR_CONTRACT.
        assert_eq!(
            idol_stream_gen_rotated_gaussians(1, 30, 4, 60.0, 0.2, 7, &mut stream),
            IdolStatus::IdolErrContract
        );
        assert!(last_error().contains("classes"));

        // Missing file.
        let missing = CString::new("/nonexistent/stream.csv").unwrap();
        let status = idol_stream_load_csv(missing.as_ptr(), &mut stream);
        assert_eq!(status, IdolStatus::IdolErrIo);

        // Invalid scorer name.
        let real = gen_stream();
        let mut classifier: *mut IdolClassifier = ptr::null_mut();
        assert_eq!(
            idol_classifier_train_source(real, 0, 0.1, 2, 32, 1, &mut classifier),
            IdolStatus::IdolOk
        );
        let mut sequence: *mut IdolSequence = ptr::null_mut();
        let bad = CString::new("nearest-neighbor").unwrap();
        assert_eq!(
            idol_discover_sequence(real, classifier, bad.as_ptr(), 2, false, 1, &mut sequence),
            IdolStatus::IdolErrContract
        );
        assert!(last_error().contains("scorer"));

        // Bound assumption violation.
        let mut bound = 0.0f64;
        assert_eq!(
            idol_theory_bound(0.0, 1.0, 2.0, 0.5, 3, 10, 0.05, &mut bound),
            IdolStatus::IdolErrAssumption
        );
        assert!(last_error().contains("gradual shift assumption violated"));

        // Happy-path bound for contrast.
        assert_eq!(
            idol_theory_bound(0.0, 1.0, 1.0, 0.0, 1, 100, 0.05, &mut bound),
            IdolStatus::IdolOk
        );
        assert!(bound > 0.0);

        idol_classifier_free(classifier);
        idol_stream_free(real);
    }
}
