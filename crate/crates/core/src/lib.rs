//! Desk-scale embedding-based retrieval: a dual-encoder training pipeline
//! (prompt construction, contrastive objectives, nested-prefix embeddings,
//! mixed negative mining), a member-level Recall@k evaluation protocol, and an
//! online-serving simulation (filtered kNN index fed by a nearline
//! embedding-refresh pipeline), all deterministic given config + seed.

pub mod ids;
pub mod matrix;
pub mod tape;
pub mod text;
