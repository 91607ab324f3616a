#![no_main]

use libfuzzer_sys::fuzz_target;
use vnas_core::qnet::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&store);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
    }
});
