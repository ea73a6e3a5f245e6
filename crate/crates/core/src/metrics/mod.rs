//! Layout distances and distribution metrics.

mod chamfer;
mod docsim;
mod fid;
mod stats;

pub use chamfer::{chamfer_distance, element_feature, mean_pairwise_chamfer, LAMBDA_MISS};
pub use docsim::{docsim, docsim_weight, max_weight_assignment};
pub use fid::{fid, fid_from_features, FeatureGaussian};
pub use stats::{class_distribution, mean, pearson, ranks, skewness, spearman, std_dev, ClassDistribution};
