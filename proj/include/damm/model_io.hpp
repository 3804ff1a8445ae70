#pragma once

// Serialized learned model: mixing components, LTI matrices, per-sample
// assignments and the hyperparameters needed to continue learning
// incrementally. JSON, schema version 1.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "damm/evalkit.hpp"

namespace damm {

struct ModelFile {
  static constexpr int kSchemaVersion = 1;

  std::string method = "damm";
  Eigen::VectorXd attractor;
  std::vector<DammComponent> components;  // parameters over the clustered features
  std::vector<Eigen::MatrixXd> a;
  std::vector<int> assignments;  // per demo sample; -1 for samples without a direction
  NiwPrior prior;
  std::uint64_t seed = 0;
  int iterations = 0;
  int launch_scans = 0;
  double velocity_floor = -1.0;
  double objective = 0.0;
  int fit_iterations = 0;

  Eigen::Index dim() const noexcept { return attractor.size(); }
  int num_components() const noexcept { return static_cast<int>(components.size()); }

  LpvDsModel model() const;

  // Sampler state over the samples with assignment >= 0.
  MixtureState partition() const;

  // Throws UsageError on any violated invariant.
  void validate() const;
};

ModelFile make_model_file(const LearnResult& result, const Demonstration& demo, const LearnConfig& config);

std::string serialize_model(const ModelFile& file);
// Throws ParseError on malformed JSON or unknown schema_version, UsageError on invalid contents.
ModelFile deserialize_model(const std::string& text);

void save_model(const ModelFile& file, const std::string& path);
ModelFile load_model(const std::string& path);

}  // namespace damm
