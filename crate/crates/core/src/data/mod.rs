//! Image codecs, datasets with deterministic batching, and procedural
//! datasets. Images are `[1, 3, H, W]` in `[-1, 1]`; masks are exact one-hot.

mod codec;
mod dataset;
mod synthetic;

pub use codec::{
    byte_to_unit, decode_image, decode_labels, encode_image, encode_labels, nearest_index, read_image, read_labels,
    resize_labels, resize_nearest, resize_nearest_tensor, unit_to_byte, write_image, write_labels, ImageFormat,
    ImageRecord, LabelMap,
};
pub use dataset::{epoch_order, list_images, one_hot, Batch, BatchCursor, DataMode, DataSource, DataSpec, Dataset};
pub use synthetic::{make_synthetic_dataset, random_layout, render, Palette, CONTENT_LEVELS, SYNTHETIC_CLASSES};
