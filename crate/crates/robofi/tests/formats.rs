//! Round-trip properties of the on-disk window encoding.

use std::path::Path;

use proptest::prelude::*;
use robofi::container::{decode_window, encode_window, ContainerError};
use robofi_core::AmplitudeWindow;

fn window() -> impl Strategy<Value = AmplitudeWindow> {
    (1usize..40, 1usize..40, prop::sample::select(vec![30u32, 25, 20, 15, 10])).prop_flat_map(|(r, c, hz)| {
        prop::collection::vec(0.0f64..1e4, r * c).prop_map(move |d| AmplitudeWindow::new(r, c, d, hz).unwrap())
    })
}

proptest! {
    #[test]
    fn stored_windows_decode_bit_exactly(w in window()) {
        let stored = w.to_storage_precision();
        let bytes = encode_window(&stored);
        prop_assert_eq!(bytes.len(), 12 + 4 * stored.rows() * stored.cols());
        let back = decode_window(&bytes, stored.rate_hz(), Path::new("w")).unwrap();
        prop_assert_eq!(&back, &stored);
        // quantization is idempotent
        prop_assert_eq!(back.clone().to_storage_precision(), back);
    }

    #[test]
    fn short_payloads_are_rejected(w in window(), cut in 1usize..64) {
        let bytes = encode_window(&w);
        let keep = bytes.len().saturating_sub(cut).max(12);
        prop_assume!(keep < bytes.len());
        let err = decode_window(&bytes[..keep], w.rate_hz(), Path::new("w")).unwrap_err();
        let truncated = matches!(err, ContainerError::Truncated { .. });
        prop_assert!(truncated, "{}", err);
    }
}
