#include "damm/model_io.hpp"

#include <cmath>

#include "json.hpp"

#include "damm/error.hpp"

namespace damm {

namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw ParseError(std::string("model file: missing field '") + name + "'", 0);
  return j.at(name);
}

double number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) throw ParseError(std::string("model file: '") + name + "' must be a number", 0);
  return v.get<double>();
}

long integer(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer()) throw ParseError(std::string("model file: '") + name + "' must be an integer", 0);
  return v.get<long>();
}

Eigen::VectorXd read_vector(const json& j, const char* name, Eigen::Index size) {
  const json& v = field(j, name);
  if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != size)
    throw ParseError(std::string("model file: '") + name + "' must have " + std::to_string(size) + " entries", 0);
  Eigen::VectorXd out(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const json& e = v[static_cast<std::size_t>(i)];
    if (!e.is_number()) throw ParseError(std::string("model file: '") + name + "' entries must be numbers", 0);
    out[i] = e.get<double>();
  }
  return out;
}

Eigen::MatrixXd read_matrix(const json& j, const char* name, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::VectorXd flat = read_vector(j, name, rows * cols);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = flat[r * cols + c];
  return out;
}

}  // namespace

LpvDsModel ModelFile::model() const {
  MixtureState state;
  state.components = components;
  return LpvDsModel(mixing_from_state(state, dim()), a, attractor);
}

MixtureState ModelFile::partition() const {
  MixtureState state;
  state.components = components;
  for (int z : assignments)
    if (z >= 0) state.assignments.push_back(z);
  state.seed = seed;
  state.iteration = iterations;
  return state;
}

void ModelFile::validate() const {
  const Eigen::Index d = dim();
  if (d < 2) throw UsageError("model file: dimension must be at least 2");
  if (components.empty()) throw UsageError("model file: no components");
  if (a.size() != components.size()) throw UsageError("model file: one A matrix per component required");
  prior.validate();
  const Eigen::Index feat = prior.dim();
  if (feat < d) throw UsageError("model file: prior dimension smaller than the state dimension");
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    const std::string id = "model file: component " + std::to_string(k);
    if (c.mean_pos.size() != feat || c.cov_pos.rows() != feat || c.cov_pos.cols() != feat)
      throw UsageError(id + " has the wrong dimension");
    if (!c.mean_pos.allFinite() || !c.cov_pos.allFinite()) throw UsageError(id + " is not finite");
    Eigen::LLT<Eigen::MatrixXd> llt(c.cov_pos);
    if (llt.info() != Eigen::Success || c.cov_pos != c.cov_pos.transpose())
      throw UsageError(id + " covariance is not symmetric positive definite");
    if (c.dir_mean && (c.dir_mean->dim() != d || !(c.dir_var > 0.0) || !std::isfinite(c.dir_var)))
      throw UsageError(id + " has an invalid directional block");
    if (c.count < 1) throw UsageError(id + " has no members");
  }
  const MixtureState state = partition();
  state.validate(state.assignments.size());
  for (int z : assignments)
    if (z < -1) throw UsageError("model file: invalid assignment label");
  model();  // checks stability and the mixing parameters
}

ModelFile make_model_file(const LearnResult& result, const Demonstration& demo, const LearnConfig& config) {
  ModelFile f;
  f.method = method_name(config.method);
  f.attractor = result.model.attractor();
  f.components = result.partition.components;
  f.a = result.model.a();
  f.assignments = result.sample_assignments(demo.size());
  f.prior = result.prior;
  f.seed = config.sampler.seed;
  f.iterations = config.sampler.iterations;
  f.launch_scans = config.sampler.launch_scans;
  f.velocity_floor = config.velocity_floor >= 0.0 ? config.velocity_floor : default_velocity_floor(demo);
  f.objective = result.fit.objective;
  f.fit_iterations = result.fit.iterations;
  return f;
}

std::string serialize_model(const ModelFile& file) {
  json j;
  j["schema_version"] = ModelFile::kSchemaVersion;
  j["method"] = file.method;
  j["d"] = file.dim();
  j["K"] = file.num_components();
  j["attractor"] = vector_json(file.attractor);
  json comps = json::array();
  for (std::size_t k = 0; k < file.components.size(); ++k) {
    const auto& c = file.components[k];
    json jc;
    jc["weight"] = c.weight;
    jc["count"] = c.count;
    jc["mean_pos"] = vector_json(c.mean_pos);
    jc["cov_pos"] = matrix_json(c.cov_pos);
    jc["dir_mean"] = c.dir_mean ? vector_json(c.dir_mean->coords()) : json(nullptr);
    jc["dir_var"] = c.dir_mean ? json(c.dir_var) : json(nullptr);
    jc["A"] = matrix_json(file.a[k]);
    jc["b"] = vector_json(-file.a[k] * file.attractor);
    comps.push_back(std::move(jc));
  }
  j["components"] = std::move(comps);
  j["assignments"] = file.assignments;
  json prior;
  prior["alpha"] = file.prior.alpha;
  prior["kappa"] = file.prior.kappa;
  prior["nu"] = file.prior.nu;
  prior["mu0"] = vector_json(file.prior.mu0);
  prior["psi"] = matrix_json(file.prior.psi);
  prior["dir_var_shape"] = file.prior.dir_var_shape;
  prior["dir_var_scale"] = file.prior.dir_var_scale;
  json prov;
  prov["seed"] = file.seed;
  prov["iterations"] = file.iterations;
  prov["launch_scans"] = file.launch_scans;
  prov["velocity_floor"] = file.velocity_floor;
  prov["objective"] = file.objective;
  prov["fit_iterations"] = file.fit_iterations;
  prov["prior"] = std::move(prior);
  j["provenance"] = std::move(prov);
  return j.dump(1) + "\n";
}

ModelFile deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file: invalid JSON: ") + e.what(), 0);
  }
  const long version = integer(j, "schema_version");
  if (version != ModelFile::kSchemaVersion)
    throw ParseError("model file: unsupported schema_version " + std::to_string(version), 0);
  ModelFile f;
  const json& method = field(j, "method");
  if (!method.is_string()) throw ParseError("model file: 'method' must be a string", 0);
  f.method = method.get<std::string>();
  parse_method(f.method);
  const long d = integer(j, "d");
  const long k_count = integer(j, "K");
  if (d < 2 || k_count < 1) throw ParseError("model file: invalid d or K", 0);
  f.attractor = read_vector(j, "attractor", d);

  const json& prov = field(j, "provenance");
  const json& pj = field(prov, "prior");
  const json& mu0 = field(pj, "mu0");
  if (!mu0.is_array()) throw ParseError("model file: prior mu0 must be an array", 0);
  const auto feat = static_cast<Eigen::Index>(mu0.size());
  f.prior.alpha = number(pj, "alpha");
  f.prior.kappa = number(pj, "kappa");
  f.prior.nu = number(pj, "nu");
  f.prior.mu0 = read_vector(pj, "mu0", feat);
  f.prior.psi = read_matrix(pj, "psi", feat, feat);
  f.prior.dir_var_shape = number(pj, "dir_var_shape");
  f.prior.dir_var_scale = number(pj, "dir_var_scale");
  if (!field(prov, "seed").is_number_unsigned()) throw ParseError("model file: 'seed' must be a nonnegative integer", 0);
  f.seed = prov.at("seed").get<std::uint64_t>();
  f.iterations = static_cast<int>(integer(prov, "iterations"));
  f.launch_scans = static_cast<int>(integer(prov, "launch_scans"));
  f.velocity_floor = number(prov, "velocity_floor");
  f.objective = number(prov, "objective");
  f.fit_iterations = static_cast<int>(integer(prov, "fit_iterations"));

  const json& comps = field(j, "components");
  if (!comps.is_array() || static_cast<long>(comps.size()) != k_count)
    throw ParseError("model file: component count does not match K", 0);
  for (const auto& jc : comps) {
    DammComponent c;
    c.weight = number(jc, "weight");
    c.count = integer(jc, "count");
    c.mean_pos = read_vector(jc, "mean_pos", feat);
    c.cov_pos = read_matrix(jc, "cov_pos", feat, feat);
    if (!field(jc, "dir_mean").is_null()) {
      try {
        c.dir_mean = sphere::UnitVector(read_vector(jc, "dir_mean", d));
      } catch (const UsageError& e) {
        throw UsageError(std::string("model file: ") + e.what());
      }
      c.dir_var = number(jc, "dir_var");
    }
    Eigen::MatrixXd a = read_matrix(jc, "A", d, d);
    const Eigen::VectorXd b = read_vector(jc, "b", d);
    const Eigen::VectorXd expected = -a * f.attractor;
    if ((b - expected).norm() > 1e-9 * (1.0 + expected.norm()))
      throw UsageError("model file: b is inconsistent with A and the attractor");
    f.components.push_back(std::move(c));
    f.a.push_back(std::move(a));
  }
  const json& asg = field(j, "assignments");
  if (!asg.is_array()) throw ParseError("model file: 'assignments' must be an array", 0);
  for (const auto& z : asg) {
    if (!z.is_number_integer()) throw ParseError("model file: assignments must be integers", 0);
    f.assignments.push_back(z.get<int>());
  }
  f.validate();
  return f;
}

void save_model(const ModelFile& file, const std::string& path) {
  file.validate();
  write_file_atomic(path, serialize_model(file));
}

ModelFile load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace damm
