#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sane {

using UserId = std::int32_t;
using ItemId = std::int32_t;
using Category = std::int32_t;

// Dense row-major storage; rows are nodes, columns are embedding dimensions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-item hard category map; index is the dense item id.
using CategoryMap = std::vector<Category>;

}  // namespace sane
