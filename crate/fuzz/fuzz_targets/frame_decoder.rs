#![no_main]

use crl_core::wire::{decode_message, encode_message, FrameDecoder};
use libfuzzer_sys::fuzz_target;

// The first byte picks the chunk size used to feed the rest.
fuzz_target!(|data: &[u8]| {
    let Some((&chunk, stream)) = data.split_first() else { return };
    let chunk = usize::from(chunk).max(1);
    let mut dec = FrameDecoder::new();
    let mut consumed = 0;
    for piece in stream.chunks(chunk) {
        dec.feed(piece);
        loop {
            match dec.next_message() {
                Ok(Some(msg)) => {
                    let bytes = encode_message(&msg);
                    assert_eq!(decode_message(&bytes).map(|m| encode_message(&m)).ok(), Some(bytes.clone()));
                    consumed += bytes.len();
                }
                Ok(None) => break,
                Err(_) => return,
            }
        }
    }
    assert_eq!(consumed + dec.pending(), stream.len());
});
