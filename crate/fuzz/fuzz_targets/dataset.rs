#![no_main]

use libfuzzer_sys::fuzz_target;
use vnas_core::rl::ReplayBuffer;

fuzz_target!(|data: &[u8]| {
    if let Ok(buffer) = ReplayBuffer::from_bytes(data) {
        assert_eq!(buffer.to_bytes(), data);
    }
});
