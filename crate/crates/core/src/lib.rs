//! Contrastive image-caption fine-tuning of a dual encoder, and a medical
//! visual-question-answering backbone that consumes its visual tower.
//!
//! Module map:
//! - [`data`]: caption manifests, VQA datasets, answer vocabularies, split checks
//! - [`tokenizer`]: byte-level BPE for the text tower
//! - [`clip`]: image/text encoders, similarity logits, symmetric contrastive loss, pretraining
//! - [`vqa`]: autoencoder branch, question encoder, bilinear attention fusion, classifier, joint loss
//! - [`harness`]: training schedules, repeated runs, accuracy decomposition, prediction dumps
//! - [`cli`]: configuration files, overrides and subcommand dispatch

pub mod checkpoint;
pub mod cli;
pub mod clip;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod tokenizer;
pub mod vqa;

pub use error::{Error, Result};
