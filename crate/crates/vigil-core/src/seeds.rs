//! Seed derivation.
//!
//! Every randomized stage derives its own stream from one master seed plus a
//! stable tag path, so reordering or parallelizing work items never changes
//! what any item draws.

/// splitmix64 finalizer; full-period bijection on u64.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and an ordered tag path.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base);
    for &t in tags {
        state = mix(state ^ t.wrapping_mul(0xd1342543de82ef95).wrapping_add(1));
    }
    state
}
