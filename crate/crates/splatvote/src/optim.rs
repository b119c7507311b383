//! Offset and appearance training on the composite loss.
