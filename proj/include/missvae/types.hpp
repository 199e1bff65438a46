#pragma once

#include <Eigen/Core>

namespace missvae {

using Eigen::Index;

/// Observedness of one data point: true = observed.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
/// Observedness of a dataset, one column per data point.
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Read-only view of one incomplete data point. Entries of `values` at
/// unobserved positions carry no meaning.
struct RowRef {
  Eigen::Ref<const Eigen::VectorXd> values;
  Eigen::Ref<const Mask> mask;
};

} // namespace missvae
