#pragma once

#include <otmil/common.hpp>

#include <string>
#include <vector>

namespace otmil {

// One patient's instance-feature matrix plus its survival label.
struct Bag {
  Matrix features;  // N x D
  double time = 0.0;
  bool event = false;
  std::string bag_id;
  std::vector<std::string> instance_ids;

  int n_instances() const { return static_cast<int>(features.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }

  void validate() const {
    require(features.rows() >= 1, "bag must contain at least one instance");
    require(features.allFinite(), "bag features must be finite");
    require(time > 0.0, "bag time must be positive");
    require(instance_ids.empty() ||
                instance_ids.size() == static_cast<std::size_t>(features.rows()),
            "instance_ids must be empty or match the instance count");
  }
};

}  // namespace otmil
