//! Label parsing, mask rasterization, dataset statistics, splitting,
//! augmentation and file I/O.

mod augment;
mod io;
mod labels;
mod mask;
mod raster;
mod split;
mod stats;

pub use augment::{augment_sample, Transform};
pub use io::{
    load_sample, read_image, read_mask, sample_paths, save_sample, write_gray, write_image, write_mask,
    DatasetManifest, Sample, SamplePaths, Split,
};
pub use labels::{labels_to_json, parse_labels, parse_wkt, BuildingPolygon, Point, Subtype};
pub use mask::{pixel_agreement, Mask, MaskKind, MaskPair};
pub use raster::{contains, rasterize_mask, rasterize_mask_pip};
pub use split::{split_dataset, SplitManifest};
pub use stats::{dataset_stats, DatasetStats};
