//! Splitting of large requests into independently dispatched pieces.

use super::IoRequest;

/// Splits `req` into `ceil(size / chunk)` pieces that share `req.id` as
/// their parent. Requests no larger than `chunk` come back unchanged.
pub fn fragment(req: &IoRequest, chunk: u64, mut next_id: impl FnMut() -> u64) -> Vec<IoRequest> {
    assert!(chunk > 0, "chunk must be positive");
    if req.shape.size <= chunk {
        return vec![req.clone()];
    }
    let count = req.shape.size.div_ceil(chunk);
    let blocks_per_chunk = chunk / crate::cache::BLOCK_SIZE;
    (0..count)
        .map(|i| {
            let mut f = req.clone();
            f.id = next_id();
            f.parent = Some(req.id);
            f.shape.size = chunk.min(req.shape.size - i * chunk);
            f.addr.block += i * blocks_per_chunk;
            f
        })
        .collect()
}
