//! Segmentation benchmark comparing no augmentation, traditional
//! augmentation, and traditional plus GAN-synthesized samples.

mod augment;
mod experiment;
mod unet;

pub use augment::{apply_trad, gan_augment, random_edit, synthesize_at, traditional_augment, EditRanges, TradOp, TradRanges};
pub use experiment::{run_seg_experiment, AugMode, AugPolicy, AuditEntry, SegConfig, SegItem, SegRunReport, Split};
pub use unet::UNet;
