//! Certified top-K robustness for text rankers by random masking.
//!
//! A ranker is smoothed by averaging its score over randomly masked copies
//! of each document. The smoothed ranker admits a certificate: a radius `R`
//! such that no substitution of at most `R` words can lift a document from
//! outside the top K into it.
//!
//! ```
//! use maskcert::{smoothing::SmoothingConfig, scorer::LexicalScorer, sampling::RngStream};
//! use maskcert::text::tokenize;
//!
//! let query = tokenize("apple pie").unwrap();
//! let doc = tokenize("apple pie recipe with fresh apples").unwrap();
//! let cfg = SmoothingConfig { mask_ratio: 0.3, ..SmoothingConfig::default() };
//! let mut rng = RngStream::named(cfg.seed, "example");
//! let g = maskcert::smoothing::smoothed_score(&LexicalScorer, &query, &doc, &cfg, &mut rng).unwrap();
//! assert!(g.mean > 0.0 && g.mean < 1.0);
//! ```

pub mod attacks;
pub mod certify;
pub mod error;
pub mod eval;
pub mod harness;
pub mod sampling;
pub mod scorer;
pub mod smoothing;
pub mod synth;
pub mod text;

pub use certify::{certify_pair, certify_query, BoundVariant, Certificate, CertifyConfig};
pub use error::{BridgeError, Error, Result};
pub use scorer::{LexicalScorer, Scorer, ScorerHandle};
pub use smoothing::{Ranker, SmoothingConfig};
pub use text::{tokenize, IndexSet, TokenSeq};
