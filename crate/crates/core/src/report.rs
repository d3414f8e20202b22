//! Placeholder module; implemented later in the build sequence.
