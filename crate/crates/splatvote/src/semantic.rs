//! Instance-feature association and similarity queries.
